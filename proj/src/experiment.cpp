#include "skdan/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <thread>

#include "skdan/io_util.hpp"

namespace skdan {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const std::exception& e) {
        throw SchemaError("'" + path + "': invalid JSON: " + e.what());
    }
}

void require_path(const std::string& path, const char* what) {
    if (!fs::exists(path))
        throw ConfigError(std::string(what) + " path '" + path + "' does not exist");
}

// A dataset reference: either a serialized dataset file or raw CSV inputs.
// Relative paths resolve against the experiment file's directory.
struct DatasetRef {
    std::string skds;
    std::vector<std::string> csvs;
    std::vector<std::string> labels;
    std::string meta;
    bool split_by_battery = false;

    bool from_files() const { return skds.empty(); }
};

std::string resolve_path(const fs::path& base, const std::string& p) {
    const fs::path fp(p);
    return fp.is_absolute() || base.empty() ? p : (base / fp).string();
}

DatasetRef parse_ref(const nlohmann::json& j, const std::string& role, const fs::path& base) {
    DatasetRef ref;
    if (j.is_string()) {
        ref.skds = resolve_path(base, j.get<std::string>());
        require_path(ref.skds, role.c_str());
        return ref;
    }
    if (!j.is_object())
        throw SchemaError("experiment: '" + role + "' must be a dataset path or an object");
    if (!j.contains("csvs") || !j.contains("meta"))
        throw SchemaError("experiment: '" + role + "' object needs 'csvs' and 'meta'");
    for (const auto& p : j.at("csvs").get<std::vector<std::string>>())
        ref.csvs.push_back(resolve_path(base, p));
    if (j.contains("labels"))
        for (const auto& p : j.at("labels").get<std::vector<std::string>>())
            ref.labels.push_back(resolve_path(base, p));
    ref.meta = resolve_path(base, j.at("meta").get<std::string>());
    ref.split_by_battery = j.value("split_by_battery", false);
    for (const auto& p : ref.csvs) require_path(p, role.c_str());
    for (const auto& p : ref.labels) require_path(p, role.c_str());
    require_path(ref.meta, role.c_str());
    if (ref.csvs.empty()) throw ConfigError("experiment: '" + role + "' lists no csvs");
    return ref;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    return idx;
}

// Normalizes two same-domain datasets with shared statistics over their union.
void normalize_union(DomainDataset& a, DomainDataset& b) {
    DomainDataset merged = a;
    merged.samples.insert(merged.samples.end(), b.samples.begin(), b.samples.end());
    merged = normalize_domain(std::move(merged));
    const std::size_t na = a.samples.size();
    a.stats = b.stats = merged.stats;
    a.normalized = b.normalized = true;
    a.warnings = merged.warnings;
    std::copy(merged.samples.begin(), merged.samples.begin() + static_cast<std::ptrdiff_t>(na),
              a.samples.begin());
    std::copy(merged.samples.begin() + static_cast<std::ptrdiff_t>(na), merged.samples.end(),
              b.samples.begin());
}

double mean_of(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / static_cast<double>(v.size());
}

Aggregate aggregate_of(const std::vector<double>& v) {
    Aggregate a;
    a.mean = mean_of(v);
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - a.mean) * (x - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return a;
}

std::vector<double> pooled_values(const DomainDataset& ds, const std::string& channel,
                                  std::size_t cap = 100000) {
    std::vector<double> all;
    for (const auto& s : ds.samples) {
        const Eigen::VectorXd* ch = nullptr;
        if (channel == "v")
            ch = &s.v;
        else if (channel == "dv")
            ch = &s.dv;
        else if (channel == "dq")
            ch = &s.dq;
        else if (channel == "ic")
            ch = &s.ic;
        else
            throw ConfigError("kde export: unknown channel '" + channel +
                              "' (expected v, dv, dq, ic)");
        for (Index i = 0; i < ch->size(); ++i) all.push_back((*ch)[i]);
    }
    if (all.size() <= cap) return all;
    const std::size_t stride = (all.size() + cap - 1) / cap;
    std::vector<double> out;
    for (std::size_t i = 0; i < all.size(); i += stride) out.push_back(all[i]);
    return out;
}

void export_kde(const std::vector<double>& values, const std::string& path, int grid_points,
                double bandwidth) {
    if (grid_points < 64) throw ConfigError("kde export: need at least 64 grid points");
    double h = bandwidth;
    if (!(h > 0.0)) h = silverman_bandwidth(values);
    if (!(h > 0.0)) throw DataError("kde export: degenerate bandwidth (constant values)");
    // Keep at least three grid points per bandwidth so the trapezoid integral
    // of the export stays at 1; heavy-tailed channels (noisy IC) would
    // otherwise stretch the grid past the kernel width.
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    const double min_h = 3.0 * (*mx - *mn) / static_cast<double>(grid_points - 25);
    if (h < min_h) h = min_h;
    const auto grid = make_kde_grid(values, h, grid_points);
    write_kde_csv(path, grid, kde_density(values, grid, h));
}

}  // namespace

nlohmann::ordered_json hyper_to_json(const HyperConfig& hp) {
    ordered_json j;
    j["batch_size"] = hp.batch_size;
    j["learning_rate"] = hp.learning_rate;
    j["n_attention_layers"] = hp.n_attention_layers;
    j["d_model"] = hp.d_model;
    j["n_heads"] = hp.n_heads;
    j["kernel_size"] = hp.kernel_size;
    j["fnn_width"] = hp.fnn_width;
    j["dropout_rate"] = hp.dropout_rate;
    j["beta_smooth"] = hp.beta_smooth;
    j["lambda_mmd"] = hp.lambda_mmd;
    j["gamma_noise"] = hp.gamma_noise;
    j["max_epochs"] = hp.max_epochs;
    j["seed"] = hp.seed;
    j["conv1_channels"] = hp.conv1_channels;
    j["conv2_channels"] = hp.conv2_channels;
    j["pe_base_10000"] = hp.pe_base_10000;
    return j;
}

HyperConfig hyper_from_json(const nlohmann::json& j) {
    HyperConfig hp;
    hp.batch_size = j.value("batch_size", hp.batch_size);
    hp.learning_rate = j.value("learning_rate", hp.learning_rate);
    hp.n_attention_layers = j.value("n_attention_layers", hp.n_attention_layers);
    hp.d_model = j.value("d_model", hp.d_model);
    hp.n_heads = j.value("n_heads", hp.n_heads);
    hp.kernel_size = j.value("kernel_size", hp.kernel_size);
    hp.fnn_width = j.value("fnn_width", hp.fnn_width);
    hp.dropout_rate = j.value("dropout_rate", hp.dropout_rate);
    hp.beta_smooth = j.value("beta_smooth", hp.beta_smooth);
    hp.lambda_mmd = j.value("lambda_mmd", hp.lambda_mmd);
    hp.gamma_noise = j.value("gamma_noise", hp.gamma_noise);
    hp.max_epochs = j.value("max_epochs", hp.max_epochs);
    hp.seed = j.value("seed", hp.seed);
    hp.conv1_channels = j.value("conv1_channels", hp.conv1_channels);
    hp.conv2_channels = j.value("conv2_channels", hp.conv2_channels);
    hp.pe_base_10000 = j.value("pe_base_10000", hp.pe_base_10000);
    return hp;
}

nlohmann::ordered_json ablation_to_json(const AblationFlags& f) {
    ordered_json j;
    j["disable_attention"] = f.disable_attention;
    j["disable_distillation"] = f.disable_distillation;
    j["fnn_predictor"] = f.fnn_predictor;
    j["disable_smoothness"] = f.disable_smoothness;
    j["disable_adaptation"] = f.disable_adaptation;
    return j;
}

AblationFlags ablation_from_json(const nlohmann::json& j) {
    AblationFlags f;
    f.disable_attention = j.value("disable_attention", false);
    f.disable_distillation = j.value("disable_distillation", false);
    f.fnn_predictor = j.value("fnn_predictor", false);
    f.disable_smoothness = j.value("disable_smoothness", false);
    f.disable_adaptation = j.value("disable_adaptation", false);
    return f;
}

SearchSpace space_from_json(const nlohmann::json& j) {
    SearchSpace s;
    s.batch_sizes = j.value("batch_sizes", s.batch_sizes);
    s.lr_min = j.value("lr_min", s.lr_min);
    s.lr_max = j.value("lr_max", s.lr_max);
    s.attention_layers = j.value("attention_layers", s.attention_layers);
    s.d_models = j.value("d_models", s.d_models);
    s.heads = j.value("heads", s.heads);
    s.kernel_sizes = j.value("kernel_sizes", s.kernel_sizes);
    s.fnn_widths = j.value("fnn_widths", s.fnn_widths);
    s.dropout_min = j.value("dropout_min", s.dropout_min);
    s.dropout_max = j.value("dropout_max", s.dropout_max);
    s.beta_min = j.value("beta_min", s.beta_min);
    s.beta_max = j.value("beta_max", s.beta_max);
    s.lambda_min = j.value("lambda_min", s.lambda_min);
    s.lambda_max = j.value("lambda_max", s.lambda_max);
    s.gamma_min = j.value("gamma_min", s.gamma_min);
    s.gamma_max = j.value("gamma_max", s.gamma_max);
    s.max_epochs = j.value("max_epochs", s.max_epochs);
    return s;
}

ExperimentConfig load_experiment(const std::string& path) {
    const nlohmann::json j = read_json_file(path);
    const fs::path base = fs::path(path).parent_path();
    ExperimentConfig cfg;
    cfg.master_seed = j.value("master_seed", 0ULL);
    cfg.n_repeats = j.value("n_repeats", 10);
    if (cfg.n_repeats < 1) throw ConfigError("experiment: n_repeats must be >= 1");
    cfg.kde_channel = j.value("kde_channel", std::string("v"));
    cfg.out_dir = resolve_path(fs::path(path).parent_path(), j.value("out_dir", std::string("experiment_out")));
    cfg.flags = j.contains("ablation") ? ablation_from_json(j.at("ablation")) : AblationFlags{};

    if (j.contains("search")) {
        cfg.use_search = true;
        const auto& s = j.at("search");
        cfg.search_trials = s.value("n_trials", 100);
        cfg.space = s.contains("space") ? space_from_json(s.at("space")) : SearchSpace{};
        if (j.contains("hyper")) cfg.hyper = hyper_from_json(j.at("hyper"));
    } else if (j.contains("hyper")) {
        cfg.hyper = hyper_from_json(j.at("hyper"));
    } else {
        throw SchemaError("experiment: needs either 'hyper' or 'search'");
    }

    if (!j.contains("source") || !j.contains("target"))
        throw SchemaError("experiment: needs 'source' and 'target' datasets");
    const DatasetRef source_ref = parse_ref(j.at("source"), "source", base);
    const DatasetRef target_ref = parse_ref(j.at("target"), "target", base);

    const bool smooth_ic = j.value("smooth_ic", false);
    const double step = j.value("step", 10.0);
    const bool excludes_test = j.value("normalization_excludes_test", false);
    double window_dod = j.value("window_dod", -1.0);

    // Window defaults to the target DOD.
    DomainMeta target_meta;
    if (target_ref.from_files())
        target_meta = load_domain_meta(target_ref.meta);
    if (window_dod <= 0.0) {
        if (target_ref.from_files())
            window_dod = target_meta.soc_end - target_meta.soc_start;
        else
            window_dod = 100.0;
    }

    // --- source ---
    if (source_ref.from_files()) {
        if (source_ref.labels.empty())
            throw ConfigError("experiment: source needs labels (labeled domain)");
        DomainBuildOptions opt;
        opt.window_dod = window_dod;
        opt.step = step;
        opt.smooth_ic = smooth_ic;
        cfg.source = build_domain(source_ref.csvs, source_ref.labels, load_domain_meta(source_ref.meta), opt);
    } else {
        cfg.source = load_dataset(source_ref.skds);
        if (!cfg.source.normalized) cfg.source = normalize_domain(std::move(cfg.source));
    }
    if (!cfg.source.labeled) throw ConfigError("experiment: source dataset is not labeled");

    // --- target ---
    if (target_ref.from_files() && target_ref.split_by_battery) {
        if (target_ref.labels.size() != target_ref.csvs.size())
            throw ConfigError("experiment: split_by_battery needs labels for every target csv");
        if (target_ref.csvs.size() < 2)
            throw ConfigError("experiment: split_by_battery needs at least 2 target batteries");
        const auto idx = shuffled_indices(target_ref.csvs.size(),
                                          Rng(cfg.master_seed).split(hash_tag("battery-split")).next_u64());
        std::vector<std::string> adapt_csvs, test_csvs, test_labels;
        const std::size_t n_adapt = target_ref.csvs.size() / 2;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (i < n_adapt) {
                adapt_csvs.push_back(target_ref.csvs[idx[i]]);
            } else {
                test_csvs.push_back(target_ref.csvs[idx[i]]);
                test_labels.push_back(target_ref.labels[idx[i]]);
            }
        }
        DomainBuildOptions opt;
        opt.window_dod = window_dod;
        opt.step = step;
        opt.smooth_ic = smooth_ic;
        opt.normalize = false;
        cfg.target_adapt = build_domain(adapt_csvs, {}, target_meta, opt);
        cfg.target_test = build_domain(test_csvs, test_labels, target_meta, opt);
        if (excludes_test) {
            cfg.target_adapt = normalize_domain(std::move(cfg.target_adapt));
            cfg.target_test = apply_normalization(std::move(cfg.target_test),
                                                  cfg.target_adapt.stats);
        } else {
            normalize_union(cfg.target_adapt, cfg.target_test);
        }
    } else {
        if (target_ref.from_files()) {
            DomainBuildOptions opt;
            opt.window_dod = window_dod;
            opt.step = step;
            opt.smooth_ic = smooth_ic;
            cfg.target_adapt = build_domain(target_ref.csvs, {}, target_meta, opt);
        } else {
            cfg.target_adapt = load_dataset(target_ref.skds);
            if (!cfg.target_adapt.normalized)
                cfg.target_adapt = normalize_domain(std::move(cfg.target_adapt));
        }
        if (!j.contains("target_test"))
            throw SchemaError("experiment: needs 'target_test' when target is not split");
        const DatasetRef test_ref = parse_ref(j.at("target_test"), "target_test", base);
        if (test_ref.from_files()) {
            if (test_ref.labels.empty())
                throw ConfigError("experiment: target_test needs labels");
            DomainBuildOptions opt;
            opt.window_dod = window_dod;
            opt.step = step;
            opt.smooth_ic = smooth_ic;
            cfg.target_test =
                build_domain(test_ref.csvs, test_ref.labels, load_domain_meta(test_ref.meta), opt);
        } else {
            cfg.target_test = load_dataset(test_ref.skds);
            if (!cfg.target_test.normalized)
                cfg.target_test = normalize_domain(std::move(cfg.target_test));
        }
        if (!cfg.target_test.labeled)
            throw ConfigError("experiment: target_test dataset is not labeled");
    }
    return cfg;
}

ExperimentResult run_experiment(ExperimentConfig cfg, int n_threads) {
    if (cfg.source.samples.empty() || cfg.target_adapt.samples.empty() ||
        cfg.target_test.samples.empty())
        throw DataError("experiment: empty dataset");
    fs::create_directories(cfg.out_dir);
    Rng master(cfg.master_seed);

    ExperimentResult result;
    result.chosen = cfg.hyper;
    if (cfg.use_search) {
        const SearchResult sr =
            random_search(cfg.source, cfg.target_adapt, cfg.space, cfg.search_trials, cfg.flags,
                          master.split(hash_tag("search")).next_u64(), 0.2, n_threads);
        result.chosen = sr.best;
        ordered_json lj = ordered_json::array();
        for (const auto& t : sr.leaderboard) {
            ordered_json e;
            e["trial"] = t.trial_id;
            e["val_rmse"] = t.val_rmse;
            e["config"] = hyper_to_json(t.config);
            lj.push_back(e);
        }
        std::ofstream lout(fs::path(cfg.out_dir) / "leaderboard.json", std::ios::binary);
        lout << lj.dump(2) << '\n';
    }

    const std::uint64_t val_seed = master.split(hash_tag("valsplit")).next_u64();
    const auto [val, train] = split_samples(cfg.source, 0.2, val_seed);

    struct RepeatRun {
        RepeatOutcome outcome;
        FitResult fitres;
    };
    const auto run_repeat = [&](int r) {
        HyperConfig hp = result.chosen;
        hp.seed = master.split(hash_tag("repeat") + static_cast<std::uint64_t>(r)).next_u64();
        RepeatRun run;
        run.fitres = fit(train, cfg.target_adapt, hp, cfg.flags, &val);
        run.outcome.repeat = r;
        run.outcome.report = evaluate(run.fitres.model, cfg.target_test);
        run.outcome.best_val_rmse = run.fitres.best_val_rmse;
        run.outcome.best_epoch = run.fitres.best_epoch;
        return run;
    };

    const unsigned workers = n_threads > 0 ? static_cast<unsigned>(n_threads)
                                           : std::max(1u, std::thread::hardware_concurrency());
    std::vector<RepeatRun> runs(static_cast<std::size_t>(cfg.n_repeats));
    std::size_t next = 0;
    while (next < runs.size()) {
        std::vector<std::future<RepeatRun>> wave;
        for (unsigned w = 0; w < workers && next < runs.size(); ++w, ++next)
            wave.push_back(std::async(std::launch::async, run_repeat, static_cast<int>(next)));
        for (auto& f : wave) {
            RepeatRun run = f.get();
            const auto slot = static_cast<std::size_t>(run.outcome.repeat);
            runs[slot] = std::move(run);
        }
    }

    std::vector<double> rmses, maes, scores;
    for (const auto& run : runs) {
        result.repeats.push_back(run.outcome);
        rmses.push_back(run.outcome.report.rmse);
        maes.push_back(run.outcome.report.mae);
        scores.push_back(run.outcome.report.score);
        write_loss_trace_csv((fs::path(cfg.out_dir) /
                              ("loss_trace_rep" + std::to_string(run.outcome.repeat) + ".csv"))
                                 .string(),
                             run.fitres.trace);
    }
    result.rmse = aggregate_of(rmses);
    result.mae = aggregate_of(maes);
    result.score = aggregate_of(scores);

    // Save the repeat with the best validation RMSE (no target-label leakage).
    int best = 0;
    for (int r = 1; r < cfg.n_repeats; ++r)
        if (runs[static_cast<std::size_t>(r)].outcome.best_val_rmse <
            runs[static_cast<std::size_t>(best)].outcome.best_val_rmse)
            best = r;
    result.saved_model_repeat = best;
    result.model_path = (fs::path(cfg.out_dir) / "model.skdm").string();
    save_model(runs[static_cast<std::size_t>(best)].fitres.model, result.model_path);

    const SkdanModel& best_model = runs[static_cast<std::size_t>(best)].fitres.model;
    export_kde_channel(cfg.source, cfg.kde_channel,
                       (fs::path(cfg.out_dir) / ("kde_raw_" + cfg.kde_channel + "_source.csv"))
                           .string());
    export_kde_channel(cfg.target_adapt, cfg.kde_channel,
                       (fs::path(cfg.out_dir) / ("kde_raw_" + cfg.kde_channel + "_target.csv"))
                           .string());
    export_kde_features(best_model, cfg.source,
                        (fs::path(cfg.out_dir) / "kde_features_source.csv").string());
    export_kde_features(best_model, cfg.target_adapt,
                        (fs::path(cfg.out_dir) / "kde_features_target.csv").string());

    ordered_json report;
    report["config"] = hyper_to_json(result.chosen);
    report["ablation"] = ablation_to_json(cfg.flags);
    report["n_repeats"] = cfg.n_repeats;
    report["master_seed"] = cfg.master_seed;
    ordered_json reps = ordered_json::array();
    for (const auto& run : runs) {
        ordered_json e;
        e["repeat"] = run.outcome.repeat;
        e["rmse"] = run.outcome.report.rmse;
        e["mae"] = run.outcome.report.mae;
        e["score"] = run.outcome.report.score;
        e["score_sum"] = run.outcome.report.score_sum;
        e["n"] = run.outcome.report.n;
        e["best_val_rmse"] = run.outcome.best_val_rmse;
        e["best_epoch"] = run.outcome.best_epoch;
        e["residuals"] = run.outcome.report.residuals;
        reps.push_back(e);
    }
    report["repeats"] = reps;
    report["aggregate"] = {{"rmse", {{"mean", result.rmse.mean}, {"std", result.rmse.stddev}}},
                           {"mae", {{"mean", result.mae.mean}, {"std", result.mae.stddev}}},
                           {"score", {{"mean", result.score.mean}, {"std", result.score.stddev}}}};
    report["saved_model_repeat"] = result.saved_model_repeat;
    result.report_path = (fs::path(cfg.out_dir) / "report.json").string();
    std::ofstream rout(result.report_path, std::ios::binary);
    if (!rout) throw IoError("cannot write '" + result.report_path + "'");
    rout << report.dump(2) << '\n';
    return result;
}

ExperimentResult run_experiment_file(const std::string& path, const std::string& out_dir_override,
                                     int n_threads) {
    ExperimentConfig cfg = load_experiment(path);
    if (!out_dir_override.empty()) cfg.out_dir = out_dir_override;
    return run_experiment(std::move(cfg), n_threads);
}

void write_eval_report_json(const std::string& path, const EvalReport& rep) {
    ordered_json j;
    j["rmse"] = rep.rmse;
    j["mae"] = rep.mae;
    j["score"] = rep.score;
    j["score_sum"] = rep.score_sum;
    j["n"] = rep.n;
    j["residuals"] = rep.residuals;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

void export_kde_channel(const DomainDataset& ds, const std::string& channel,
                        const std::string& path, int grid_points, double bandwidth) {
    export_kde(pooled_values(ds, channel), path, grid_points, bandwidth);
}

void export_kde_features(const SkdanModel& model, const DomainDataset& ds, const std::string& path,
                         int grid_points, double bandwidth) {
    std::vector<double> values;
    for (const auto& seg : ds.samples) {
        const Eigen::VectorXd f = model_features(model, seg);
        for (Index i = 0; i < f.size(); ++i) values.push_back(f[i]);
    }
    constexpr std::size_t cap = 100000;
    if (values.size() > cap) {
        const std::size_t stride = (values.size() + cap - 1) / cap;
        std::vector<double> sub;
        for (std::size_t i = 0; i < values.size(); i += stride) sub.push_back(values[i]);
        values = std::move(sub);
    }
    export_kde(values, path, grid_points, bandwidth);
}

}  // namespace skdan
