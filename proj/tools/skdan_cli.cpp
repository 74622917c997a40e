#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "skdan/experiment.hpp"
#include "skdan/io_util.hpp"

namespace fs = std::filesystem;
using namespace skdan;

namespace {

nlohmann::json read_json(const std::string& path) {
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

int exit_code_for(const std::string& category) {
    if (category == "config") return 2;
    if (category == "schema") return 3;
    if (category == "data") return 4;
    if (category == "dimension") return 5;
    if (category == "length") return 6;
    if (category == "io") return 7;
    if (category == "numeric") return 8;
    return 9;
}

void report_error(const std::string& category, const std::string& message) {
    nlohmann::ordered_json j;
    j["error"] = {{"category", category}, {"message", message}};
    std::cerr << j.dump() << std::endl;
}

struct SimulateOptions {
    std::string out_dir;
    int source_batteries = 2;
    int target_batteries = 4;
    int source_cycles = 160;
    int target_cycles = 120;
    double target_soc_start = 20.0;
    double target_soc_end = 80.0;
    double source_fade_a = 5e-4;
    double source_fade_b = 1.0;
    double target_fade_a = 1e-3;
    double target_fade_b = 1.05;
    double source_resistance = 0.02;
    double target_resistance = 0.06;
    double noise_std = 5e-4;
    double nominal_capacity = 1.5;
    int n_repeats = 5;
    std::uint64_t seed = 1;
};

// Writes a battery corpus plus a ready-to-run experiment file.
void run_simulate(const SimulateOptions& o) {
    fs::create_directories(o.out_dir);
    const auto path = [&](const std::string& name) { return (fs::path(o.out_dir) / name).string(); };

    SynthSpec source;
    source.n_cycles = o.source_cycles;
    source.fade_a = o.source_fade_a;
    source.fade_b = o.source_fade_b;
    source.noise_std_v = o.noise_std;
    source.internal_resistance_ohm = o.source_resistance;
    source.nominal_capacity_ah = o.nominal_capacity;
    source.dataset_name = "synthetic-source";

    SynthSpec target = source;
    target.n_cycles = o.target_cycles;
    target.soc_start = o.target_soc_start;
    target.soc_end = o.target_soc_end;
    target.fade_a = o.target_fade_a;
    target.fade_b = o.target_fade_b;
    target.internal_resistance_ohm = o.target_resistance;
    target.dataset_name = "synthetic-target";

    Rng rng(o.seed);
    nlohmann::ordered_json src_csvs = nlohmann::ordered_json::array();
    nlohmann::ordered_json src_labels = nlohmann::ordered_json::array();
    Rng source_jitter = rng.split(hash_tag("source"));
    for (int b = 0; b < o.source_batteries; ++b) {
        SynthSpec spec = source;
        spec.seed = source_jitter.next_u64();
        spec.fade_a *= source_jitter.uniform(0.9, 1.1);
        char tag[16];
        std::snprintf(tag, sizeof(tag), "%02d", b);
        const std::string csv = "source_" + std::string(tag) + ".csv";
        const std::string labels = "source_" + std::string(tag) + "_labels.csv";
        write_synth_battery_csv(spec, path(csv), path(labels));
        src_csvs.push_back(csv);
        src_labels.push_back(labels);
    }
    write_domain_meta(source, path("source_meta.json"));

    nlohmann::ordered_json tgt_csvs = nlohmann::ordered_json::array();
    nlohmann::ordered_json tgt_labels = nlohmann::ordered_json::array();
    Rng target_jitter = rng.split(hash_tag("target"));
    for (int b = 0; b < o.target_batteries; ++b) {
        SynthSpec spec = target;
        spec.seed = target_jitter.next_u64();
        spec.fade_a *= target_jitter.uniform(0.9, 1.1);
        char tag[16];
        std::snprintf(tag, sizeof(tag), "%02d", b);
        const std::string csv = "target_" + std::string(tag) + ".csv";
        const std::string labels = "target_" + std::string(tag) + "_labels.csv";
        write_synth_battery_csv(spec, path(csv), path(labels));
        tgt_csvs.push_back(csv);
        tgt_labels.push_back(labels);
    }
    write_domain_meta(target, path("target_meta.json"));

    nlohmann::ordered_json exp;
    exp["source"] = {{"csvs", src_csvs}, {"labels", src_labels}, {"meta", "source_meta.json"}};
    exp["target"] = {{"csvs", tgt_csvs},
                     {"labels", tgt_labels},
                     {"meta", "target_meta.json"},
                     {"split_by_battery", true}};
    exp["window_dod"] = target.soc_span();
    exp["step"] = 10.0;
    exp["hyper"] = hyper_to_json([] {
        HyperConfig hp;
        hp.d_model = 32;
        hp.n_heads = 2;
        hp.n_attention_layers = 2;
        hp.batch_size = 16;
        hp.learning_rate = 2e-3;
        hp.fnn_width = 16;
        hp.conv1_channels = 8;
        hp.conv2_channels = 8;
        hp.dropout_rate = 0.1;
        hp.beta_smooth = 0.05;
        hp.lambda_mmd = 1.0;
        hp.max_epochs = 60;
        return hp;
    }());
    exp["ablation"] = ablation_to_json(AblationFlags{});
    exp["n_repeats"] = o.n_repeats;
    exp["master_seed"] = o.seed;
    exp["kde_channel"] = "v";
    exp["out_dir"] = "out";
    std::ofstream out(path("experiment.json"), std::ios::binary);
    out << exp.dump(2) << '\n';
    std::cout << "wrote corpus with " << o.source_batteries << " source and "
              << o.target_batteries << " target batteries under " << o.out_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Battery state-of-health estimation under shallow cycles via "
                 "self-attention feature extraction and MK-MMD domain adaptation"};
    app.require_subcommand(1);

    // --- simulate ---
    SimulateOptions sim;
    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic battery corpus");
    simulate->add_option("--out", sim.out_dir, "Output directory")->required();
    simulate->add_option("--source-batteries", sim.source_batteries);
    simulate->add_option("--target-batteries", sim.target_batteries);
    simulate->add_option("--source-cycles", sim.source_cycles);
    simulate->add_option("--target-cycles", sim.target_cycles);
    simulate->add_option("--target-soc-start", sim.target_soc_start);
    simulate->add_option("--target-soc-end", sim.target_soc_end);
    simulate->add_option("--source-fade-a", sim.source_fade_a);
    simulate->add_option("--source-fade-b", sim.source_fade_b);
    simulate->add_option("--target-fade-a", sim.target_fade_a);
    simulate->add_option("--target-fade-b", sim.target_fade_b);
    simulate->add_option("--source-resistance", sim.source_resistance);
    simulate->add_option("--target-resistance", sim.target_resistance);
    simulate->add_option("--noise", sim.noise_std);
    simulate->add_option("--nominal-capacity", sim.nominal_capacity);
    simulate->add_option("--repeats", sim.n_repeats);
    simulate->add_option("--seed", sim.seed);

    // --- preprocess ---
    std::vector<std::string> pp_csvs, pp_labels;
    std::string pp_meta, pp_out;
    double pp_window = 60.0, pp_step = 10.0;
    bool pp_smooth = false, pp_no_norm = false;
    auto* preprocess =
        app.add_subcommand("preprocess", "Ingest cycling CSVs into a serialized dataset");
    preprocess->add_option("--csv", pp_csvs, "Cycling CSV files (one per battery)")->required();
    preprocess->add_option("--labels", pp_labels, "Labels CSVs aligned with --csv");
    preprocess->add_option("--meta", pp_meta, "Domain metadata JSON")->required();
    preprocess->add_option("--out", pp_out, "Output dataset path (.skds)")->required();
    preprocess->add_option("--window-dod", pp_window, "SOC window width in percent");
    preprocess->add_option("--step", pp_step, "Window step in percent SOC");
    preprocess->add_flag("--smooth-ic", pp_smooth, "Apply width-5 moving average to the IC channel");
    preprocess->add_flag("--no-normalize", pp_no_norm, "Skip per-domain min-max normalization");

    // --- train ---
    std::string tr_source, tr_target, tr_config, tr_ablation, tr_model_out, tr_trace_out;
    double tr_val_fraction = 0.0;
    auto* train = app.add_subcommand("train", "Fit one configuration");
    train->add_option("--source", tr_source, "Labeled source dataset (.skds)")->required();
    train->add_option("--target", tr_target, "Unlabeled target dataset (.skds)");
    train->add_option("--config", tr_config, "HyperConfig JSON file");
    train->add_option("--ablation", tr_ablation, "Ablation flags JSON file");
    train->add_option("--out", tr_model_out, "Output model path (.skdm)")->required();
    train->add_option("--trace", tr_trace_out, "Loss trace CSV path");
    train->add_option("--val-fraction", tr_val_fraction,
                      "Held-out source fraction for checkpoint selection (0 = none)");

    // --- evaluate ---
    std::string ev_model, ev_data, ev_out;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a model on a labeled dataset");
    evaluate_cmd->add_option("--model", ev_model, "Model file (.skdm)")->required();
    evaluate_cmd->add_option("--data", ev_data, "Labeled dataset (.skds)")->required();
    evaluate_cmd->add_option("--out", ev_out, "Report JSON path")->required();

    // --- search ---
    std::string se_source, se_target, se_space, se_out, se_best;
    int se_trials = 100;
    std::uint64_t se_seed = 0;
    int se_threads = 0;
    auto* search = app.add_subcommand("search", "Random hyperparameter search");
    search->add_option("--source", se_source)->required();
    search->add_option("--target", se_target)->required();
    search->add_option("--space", se_space, "Search-space JSON (defaults used when omitted)");
    search->add_option("--trials", se_trials, "Number of configurations to draw");
    search->add_option("--out", se_out, "Leaderboard JSON path")->required();
    search->add_option("--best-out", se_best, "Best HyperConfig JSON path");
    search->add_option("--seed", se_seed, "Master seed");
    search->add_option("--threads", se_threads, "Worker threads (0 = hardware)");

    // --- experiment ---
    std::string ex_file, ex_out_dir;
    int ex_threads = 0;
    auto* experiment = app.add_subcommand("experiment", "Run a full experiment file");
    experiment->add_option("file", ex_file, "Experiment JSON file")->required();
    experiment->add_option("--out-dir", ex_out_dir, "Override the file's out_dir");
    experiment->add_option("--threads", ex_threads, "Worker threads (0 = hardware)");

    // --- export-kde ---
    std::string kde_data, kde_channel = "v", kde_out, kde_model;
    int kde_grid = 512;
    double kde_bandwidth = 0.0;
    bool kde_features = false;
    auto* export_kde = app.add_subcommand("export-kde", "Export a kernel density estimate CSV");
    export_kde->add_option("--data", kde_data, "Dataset (.skds)")->required();
    export_kde->add_option("--channel", kde_channel, "Raw channel: v, dv, dq, ic");
    export_kde->add_option("--out", kde_out, "Output CSV path")->required();
    export_kde->add_flag("--features", kde_features, "Export extracted-feature density instead");
    export_kde->add_option("--model", kde_model, "Model file (required with --features)");
    export_kde->add_option("--grid-points", kde_grid);
    export_kde->add_option("--bandwidth", kde_bandwidth, "0 = Silverman's rule");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*simulate) {
            run_simulate(sim);
        } else if (*preprocess) {
            DomainBuildOptions opt;
            opt.window_dod = pp_window;
            opt.step = pp_step;
            opt.smooth_ic = pp_smooth;
            opt.normalize = !pp_no_norm;
            const DomainDataset ds =
                build_domain(pp_csvs, pp_labels, load_domain_meta(pp_meta), opt);
            save_dataset(ds, pp_out);
            std::cout << "wrote " << ds.samples.size() << " segments ("
                      << (ds.labeled ? "labeled" : "unlabeled") << ") to " << pp_out << "\n";
            for (const auto& w : ds.warnings) std::cout << "warning: " << w << "\n";
        } else if (*train) {
            const DomainDataset source = load_dataset(tr_source);
            DomainDataset target;
            if (!tr_target.empty()) target = load_dataset(tr_target);
            HyperConfig hp;
            if (!tr_config.empty()) hp = hyper_from_json(read_json(tr_config));
            AblationFlags flags;
            if (!tr_ablation.empty()) flags = ablation_from_json(read_json(tr_ablation));
            std::optional<std::pair<DomainDataset, DomainDataset>> split;
            const DomainDataset* train_set = &source;
            const DomainDataset* val_set = nullptr;
            if (tr_val_fraction > 0.0) {
                split = split_samples(source, tr_val_fraction, hp.seed);
                val_set = &split->first;
                train_set = &split->second;
            }
            const FitResult fr = fit(*train_set, target, hp, flags, val_set);
            save_model(fr.model, tr_model_out);
            if (!tr_trace_out.empty()) write_loss_trace_csv(tr_trace_out, fr.trace);
            std::cout << "trained " << fr.trace.size() << " epochs; final L_pre "
                      << fmt_double(fr.trace.back().pre) << "; model written to " << tr_model_out
                      << "\n";
        } else if (*evaluate_cmd) {
            const SkdanModel model = load_model(ev_model);
            const EvalReport rep = evaluate(model, load_dataset(ev_data));
            write_eval_report_json(ev_out, rep);
            std::cout << "rmse " << fmt_double(rep.rmse) << " mae " << fmt_double(rep.mae)
                      << " score " << fmt_double(rep.score) << " over " << rep.n << " samples\n";
        } else if (*search) {
            const DomainDataset source = load_dataset(se_source);
            const DomainDataset target = load_dataset(se_target);
            SearchSpace space;
            if (!se_space.empty()) space = space_from_json(read_json(se_space));
            const SearchResult sr =
                random_search(source, target, space, se_trials, AblationFlags{}, se_seed, 0.2,
                              se_threads);
            nlohmann::ordered_json lj = nlohmann::ordered_json::array();
            for (const auto& t : sr.leaderboard) {
                nlohmann::ordered_json e;
                e["trial"] = t.trial_id;
                e["val_rmse"] = t.val_rmse;
                e["config"] = hyper_to_json(t.config);
                lj.push_back(e);
            }
            std::ofstream lout(se_out, std::ios::binary);
            if (!lout) throw IoError("cannot write '" + se_out + "'");
            lout << lj.dump(2) << '\n';
            if (!se_best.empty()) {
                std::ofstream bout(se_best, std::ios::binary);
                if (!bout) throw IoError("cannot write '" + se_best + "'");
                bout << hyper_to_json(sr.best).dump(2) << '\n';
            }
            std::cout << "best val rmse " << fmt_double(sr.leaderboard.front().val_rmse)
                      << " over " << se_trials << " trials\n";
        } else if (*experiment) {
            const ExperimentResult r = run_experiment_file(ex_file, ex_out_dir, ex_threads);
            std::cout << "rmse " << fmt_double(r.rmse.mean) << " +- " << fmt_double(r.rmse.stddev)
                      << ", mae " << fmt_double(r.mae.mean) << " +- " << fmt_double(r.mae.stddev)
                      << ", score " << fmt_double(r.score.mean) << " +- "
                      << fmt_double(r.score.stddev) << " over " << r.repeats.size()
                      << " repeats; report at " << r.report_path << "\n";
        } else if (*export_kde) {
            const DomainDataset ds = load_dataset(kde_data);
            if (kde_features) {
                if (kde_model.empty())
                    throw ConfigError("export-kde: --features requires --model");
                export_kde_features(load_model(kde_model), ds, kde_out, kde_grid, kde_bandwidth);
            } else {
                export_kde_channel(ds, kde_channel, kde_out, kde_grid, kde_bandwidth);
            }
            std::cout << "wrote " << kde_out << "\n";
        }
    } catch (const Error& e) {
        report_error(e.category(), e.what());
        return exit_code_for(e.category());
    } catch (const std::exception& e) {
        report_error("internal", e.what());
        return 9;
    }
    return 0;
}
