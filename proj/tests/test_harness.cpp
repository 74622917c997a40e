#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "skdan/experiment.hpp"
#include "skdan/harness.hpp"
#include "skdan/io_util.hpp"

using namespace skdan;

namespace {

HyperConfig tiny_hyper() {
    HyperConfig hp;
    hp.batch_size = 4;
    hp.learning_rate = 3e-3;
    hp.n_attention_layers = 2;
    hp.d_model = 8;
    hp.n_heads = 2;
    hp.kernel_size = 3;
    hp.fnn_width = 8;
    hp.dropout_rate = 0.0;
    hp.beta_smooth = 0.0;
    hp.lambda_mmd = 0.0;
    hp.conv1_channels = 4;
    hp.conv2_channels = 4;
    hp.max_epochs = 60;
    hp.seed = 11;
    return hp;
}

DomainDataset small_source(int cycles = 12, double fade_a = 8e-3) {
    SynthSpec spec;
    spec.n_cycles = cycles;
    spec.fade_a = fade_a;
    spec.seed = 3;
    return synth_domain(spec, true, 100, 10).dataset;
}

}  // namespace

TEST_CASE("fit overfits a small labeled source with supervision only") {
    const DomainDataset source = small_source();
    const FitResult fr = fit(source, DomainDataset{}, tiny_hyper(), AblationFlags{});
    REQUIRE(fr.trace.size() == 60);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : fr.trace) best = std::min(best, t.pre);
    CHECK(best < 1e-3);
    for (const auto& t : fr.trace) {
        CHECK(t.mmd == 0.0);
        CHECK(t.smooth == 0.0);
        CHECK(t.total == t.pre);
    }
}

TEST_CASE("fit is bitwise deterministic given the seed") {
    const DomainDataset source = small_source(8);
    HyperConfig hp = tiny_hyper();
    hp.max_epochs = 5;
    hp.beta_smooth = 0.1;
    const FitResult a = fit(source, DomainDataset{}, hp, AblationFlags{});
    const FitResult b = fit(source, DomainDataset{}, hp, AblationFlags{});
    const auto pa = model_parameters(const_cast<SkdanModel&>(a.model));
    const auto pb = model_parameters(const_cast<SkdanModel&>(b.model));
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK((pa[i]->flat() == pb[i]->flat()).all());
    for (std::size_t e = 0; e < a.trace.size(); ++e) {
        CHECK(a.trace[e].pre == b.trace[e].pre);
        CHECK(a.trace[e].total == b.trace[e].total);
    }
}

TEST_CASE("disable_adaptation zeroes the mmd column even with a target") {
    const DomainDataset source = small_source(8);
    SynthSpec tspec;
    tspec.n_cycles = 6;
    tspec.soc_start = 20;
    tspec.soc_end = 80;
    tspec.seed = 4;
    const DomainDataset target = synth_domain(tspec, false, 60, 10).dataset;

    HyperConfig hp = tiny_hyper();
    hp.max_epochs = 3;
    hp.lambda_mmd = 1.5;
    AblationFlags flags;
    flags.disable_adaptation = true;
    const FitResult fr = fit(source, target, hp, flags);
    for (const auto& t : fr.trace) CHECK(t.mmd == 0.0);

    // with adaptation on, the column is populated
    flags.disable_adaptation = false;
    const FitResult fr2 = fit(source, target, hp, flags);
    CHECK(fr2.trace[0].mmd > 0.0);
    CHECK(fr2.trace[0].total ==
          doctest::Approx(fr2.trace[0].pre + 1.5 * fr2.trace[0].mmd).epsilon(1e-15));
}

TEST_CASE("fit aborts with a diagnostic on non-finite loss") {
    DomainDataset source = small_source(8);
    source.samples[2].soh_label = std::numeric_limits<double>::quiet_NaN();
    HyperConfig hp = tiny_hyper();
    hp.max_epochs = 2;
    CHECK_THROWS_WITH_AS(fit(source, DomainDataset{}, hp, AblationFlags{}),
                         doctest::Contains("epoch"), NumericError);
}

TEST_CASE("fit validates inputs") {
    CHECK_THROWS_AS(fit(DomainDataset{}, DomainDataset{}, tiny_hyper(), AblationFlags{}),
                    DataError);
    DomainDataset unlabeled = small_source(6);
    unlabeled.labeled = false;
    CHECK_THROWS_AS(fit(unlabeled, DomainDataset{}, tiny_hyper(), AblationFlags{}), DataError);
    HyperConfig hp = tiny_hyper();
    hp.lambda_mmd = 1.0;
    CHECK_THROWS_AS(fit(small_source(6), DomainDataset{}, hp, AblationFlags{}), DataError);
}

TEST_CASE("evaluate on a constant model reproduces the metric examples") {
    SadConfig scfg;
    scfg.d_model = 8;
    scfg.n_heads = 2;
    scfg.n_layers = 2;
    PredictorConfig pcfg;
    pcfg.conv1_channels = 4;
    pcfg.conv2_channels = 4;
    pcfg.fnn_width = 8;
    SkdanModel model = init_model(scfg, pcfg, 1);
    for (Tensor* t : model_parameters(model)) t->flat().setZero();
    model.predictor.b2.flat()[0] = 0.9;  // constant prediction 0.9

    DomainDataset test = small_source(2);
    test.samples.resize(2);
    test.samples[0].soh_label = 0.8;  // residual +0.1
    test.samples[1].soh_label = 0.9;  // residual 0
    const EvalReport rep = evaluate(model, test);
    CHECK(rep.mae == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(rep.rmse == doctest::Approx(0.070710678).epsilon(1e-7));
    CHECK(rep.n == 2);
    CHECK(rep.rmse >= rep.mae);

    // perfect predictions
    test.samples[0].soh_label = 0.9;
    const EvalReport zero = evaluate(model, test);
    CHECK(zero.rmse == 0.0);
    CHECK(zero.mae == 0.0);
    CHECK(zero.score == 0.0);

    DomainDataset empty;
    empty.labeled = true;
    CHECK_THROWS_AS(evaluate(model, empty), DataError);
}

TEST_CASE("score function unit values and asymmetry") {
    CHECK(score_sum({0.0, 0.0, 0.0}) == 0.0);
    CHECK(score_sum({0.01}) == doctest::Approx(0.0100502).epsilon(1e-5));
    CHECK(score_sum({-0.013}) == doctest::Approx(std::expm1(0.01)).epsilon(1e-12));
    CHECK(score_sum({0.013}) == doctest::Approx(0.013085).epsilon(1e-4));
    CHECK(score_sum({0.013}) > score_sum({-0.013}));
    CHECK(score_mean({0.01, 0.01}) == doctest::Approx(score_sum({0.01})).epsilon(1e-12));

    for (double d = 0.001; d <= 0.1; d += 0.001) {
        CHECK(score_sum({d}) > score_sum({-d}));
        CHECK(score_sum({d + 1e-4}) > score_sum({d}));
        CHECK(score_sum({-(d + 1e-4)}) > score_sum({-d}));
    }
}

TEST_CASE("rmse dominates mae on random residual sets") {
    SadConfig scfg;
    scfg.d_model = 8;
    scfg.n_heads = 2;
    scfg.n_layers = 2;
    PredictorConfig pcfg;
    pcfg.conv1_channels = 4;
    pcfg.conv2_channels = 4;
    pcfg.fnn_width = 8;
    SkdanModel model = init_model(scfg, pcfg, 2);
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        DomainDataset test = small_source(6);
        for (auto& s : test.samples) s.soh_label = rng.uniform(0.5, 1.0);
        const EvalReport rep = evaluate(model, test);
        CHECK(rep.rmse >= rep.mae);
    }
}

TEST_CASE("default search space brackets the known-good configurations") {
    const SearchSpace s;
    CHECK(s.lr_min <= 5.6e-5);
    CHECK(s.lr_max >= 4.7e-3);
    CHECK(s.lr_min <= 7.5e-4);
    for (int b : {16, 32, 64})
        CHECK(std::count(s.batch_sizes.begin(), s.batch_sizes.end(), b) == 1);
    for (int l : {2, 3})
        CHECK(std::count(s.attention_layers.begin(), s.attention_layers.end(), l) == 1);
    CHECK(std::count(s.d_models.begin(), s.d_models.end(), 128) == 1);
    for (int h : {2, 4}) CHECK(std::count(s.heads.begin(), s.heads.end(), h) == 1);
    for (int f : {16, 32, 64})
        CHECK(std::count(s.fnn_widths.begin(), s.fnn_widths.end(), f) == 1);
    CHECK(s.dropout_min <= 0.2);
    CHECK(s.dropout_max >= 0.4);
    CHECK(s.beta_min <= 0.05);
    CHECK(s.beta_max >= 0.12);
    CHECK(s.lambda_min <= 0.72);
    CHECK(s.lambda_max >= 1.33);
    CHECK(s.max_epochs == 200);
    // even kernel sizes are excluded: same padding
    // requires odd kernels
    for (int k : s.kernel_sizes) CHECK(k % 2 == 1);
}

TEST_CASE("draw_config respects the space and is deterministic") {
    const SearchSpace space;
    Rng a(42), b(42);
    for (int i = 0; i < 20; ++i) {
        const HyperConfig ca = draw_config(space, a);
        const HyperConfig cb = draw_config(space, b);
        CHECK(ca.learning_rate == cb.learning_rate);
        CHECK(ca.d_model == cb.d_model);
        CHECK(ca.learning_rate >= space.lr_min);
        CHECK(ca.learning_rate <= space.lr_max);
        CHECK(ca.d_model % ca.n_heads == 0);
        CHECK(ca.dropout_rate >= space.dropout_min);
        CHECK(ca.dropout_rate <= space.dropout_max);
    }
}

TEST_CASE("random_search: single trial, determinism, zero trials rejected") {
    const DomainDataset source = small_source(10);
    SearchSpace space;
    space.d_models = {8};
    space.heads = {2};
    space.attention_layers = {2};
    space.fnn_widths = {8};
    space.batch_sizes = {8};
    space.max_epochs = 2;
    space.lambda_min = 1e-9;  // keep the target out of play
    space.lambda_max = 1e-8;
    space.beta_min = 1e-9;
    space.beta_max = 1e-8;

    AblationFlags flags;
    flags.disable_adaptation = true;
    flags.disable_smoothness = true;
    const SearchResult one =
        random_search(source, DomainDataset{}, space, 1, flags, 123, 0.2, 1);
    CHECK(one.leaderboard.size() == 1);
    CHECK(one.best.d_model == 8);

    const SearchResult a = random_search(source, DomainDataset{}, space, 3, flags, 7, 0.2, 2);
    const SearchResult b = random_search(source, DomainDataset{}, space, 3, flags, 7, 0.2, 1);
    REQUIRE(a.leaderboard.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.leaderboard[i].trial_id == b.leaderboard[i].trial_id);
        CHECK(a.leaderboard[i].val_rmse == b.leaderboard[i].val_rmse);
        CHECK(a.leaderboard[i].config.learning_rate == b.leaderboard[i].config.learning_rate);
    }
    CHECK_THROWS_AS(random_search(source, DomainDataset{}, space, 0, flags, 7), ConfigError);
}

TEST_CASE("split_samples is deterministic and respects bounds") {
    const DomainDataset source = small_source(10);
    const auto [a1, b1] = split_samples(source, 0.2, 9);
    const auto [a2, b2] = split_samples(source, 0.2, 9);
    CHECK(a1.samples.size() == a2.samples.size());
    CHECK(a1.samples.size() + b1.samples.size() == source.samples.size());
    CHECK(a1.samples.size() >= 1);
    for (std::size_t i = 0; i < a1.samples.size(); ++i)
        CHECK(a1.samples[i].cycle_index == a2.samples[i].cycle_index);
    CHECK_THROWS_AS(split_samples(source, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(split_samples(source, 1.0, 1), ConfigError);
}

TEST_CASE("loss trace csv is exact and stable") {
    std::vector<EpochTrace> trace(2);
    trace[0] = {1, 0.5, 0.25, 0.125, 0.875, 0.0};
    trace[1] = {2, 0.25, 0.125, 0.0625, 0.4375, 0.0};
    const auto path =
        (std::filesystem::temp_directory_path() / "skdan_trace_test.csv").string();
    write_loss_trace_csv(path, trace);
    std::ifstream in(path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(content ==
          "epoch,L_pre,L_MMD,L_smooth,total\n"
          "1,0.5,0.25,0.125,0.875\n"
          "2,0.25,0.125,0.0625,0.4375\n");
}

TEST_CASE("experiment file validation fails before any training") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "skdan_exp_tests";
    fs::create_directories(dir);

    {
        std::ofstream out(dir / "missing_data.json");
        out << R"({"source": "nowhere.skds", "target": "nowhere2.skds",
                   "hyper": {}, "master_seed": 1})";
    }
    CHECK_THROWS_AS(load_experiment((dir / "missing_data.json").string()), ConfigError);

    {
        std::ofstream out(dir / "no_model.json");
        out << R"({"source": "x.skds", "target": "y.skds"})";
    }
    CHECK_THROWS_AS(load_experiment((dir / "no_model.json").string()), SchemaError);

    {
        std::ofstream out(dir / "bad.json");
        out << "{ not json";
    }
    CHECK_THROWS_AS(load_experiment((dir / "bad.json").string()), SchemaError);
    CHECK_THROWS_AS(load_experiment((dir / "does_not_exist.json").string()), IoError);
}

TEST_CASE("experiment loader splits target batteries and honors the statistics flag") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "skdan_split_exp";
    fs::remove_all(dir);
    fs::create_directories(dir);

    SynthSpec src;
    src.n_cycles = 6;
    src.fade_a = 4e-3;
    src.dataset_name = "split-src";
    SynthSpec tgt = src;
    tgt.soc_start = 20;
    tgt.soc_end = 80;
    tgt.dataset_name = "split-tgt";
    src.seed = 41;
    write_synth_battery_csv(src, (dir / "s0.csv").string(), (dir / "s0_labels.csv").string());
    write_domain_meta(src, (dir / "smeta.json").string());
    for (int b = 0; b < 2; ++b) {
        tgt.seed = 50 + static_cast<std::uint64_t>(b);
        write_synth_battery_csv(tgt, (dir / ("t" + std::to_string(b) + ".csv")).string(),
                                (dir / ("t" + std::to_string(b) + "_labels.csv")).string());
    }
    write_domain_meta(tgt, (dir / "tmeta.json").string());

    const auto write_exp = [&](bool excludes) {
        std::ofstream out(dir / "exp.json");
        out << R"({
  "source": {"csvs": ["s0.csv"], "labels": ["s0_labels.csv"], "meta": "smeta.json"},
  "target": {"csvs": ["t0.csv", "t1.csv"], "labels": ["t0_labels.csv", "t1_labels.csv"],
             "meta": "tmeta.json", "split_by_battery": true},
  "window_dod": 60, "hyper": {"d_model": 8}, "n_repeats": 1, "master_seed": 3,
  "normalization_excludes_test": )"
            << (excludes ? "true" : "false") << "}";
    };

    write_exp(false);
    const ExperimentConfig shared = load_experiment((dir / "exp.json").string());
    CHECK(shared.source.labeled);
    CHECK_FALSE(shared.target_adapt.labeled);
    CHECK(shared.target_test.labeled);
    CHECK(shared.target_adapt.samples.size() == 6);
    CHECK(shared.target_test.samples.size() == 6);
    for (int c = 0; c < 4; ++c) {
        CHECK(shared.target_adapt.stats[static_cast<std::size_t>(c)].min ==
              shared.target_test.stats[static_cast<std::size_t>(c)].min);
    }
    // adaptation never sees target labels
    for (const auto& s : shared.target_adapt.samples) CHECK_FALSE(s.soh_label.has_value());

    write_exp(true);
    const ExperimentConfig excl = load_experiment((dir / "exp.json").string());
    // statistics come from the adaptation half only: its channels span [0,1],
    // the test half may leave that range
    for (const auto& s : excl.target_adapt.samples) {
        CHECK(s.v.minCoeff() >= 0.0);
        CHECK(s.v.maxCoeff() <= 1.0);
    }
    for (int c = 0; c < 4; ++c)
        CHECK(excl.target_test.stats[static_cast<std::size_t>(c)].min ==
              excl.target_adapt.stats[static_cast<std::size_t>(c)].min);
}

TEST_CASE("mini experiment produces consistent artifacts") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "skdan_mini_experiment";
    fs::remove_all(dir);
    fs::create_directories(dir);

    SynthSpec src;
    src.n_cycles = 10;
    src.fade_a = 4e-3;
    src.seed = 21;
    SynthSpec tgt = src;
    tgt.n_cycles = 8;
    tgt.soc_start = 20;
    tgt.soc_end = 80;
    tgt.fade_a = 6e-3;
    tgt.seed = 22;

    ExperimentConfig cfg;
    const TransferPair pair = synth_transfer_pair(src, tgt);
    cfg.source = pair.source;
    cfg.target_adapt = pair.target;
    cfg.target_test = pair.target;
    cfg.target_test.labeled = true;
    for (std::size_t i = 0; i < cfg.target_test.samples.size(); ++i)
        cfg.target_test.samples[i].soh_label = pair.hidden_target_labels[i];
    HyperConfig hp = tiny_hyper();
    hp.max_epochs = 4;
    hp.lambda_mmd = 0.5;
    hp.beta_smooth = 0.05;
    cfg.hyper = hp;
    cfg.n_repeats = 2;
    cfg.master_seed = 77;
    cfg.out_dir = (dir / "out").string();

    const ExperimentResult res = run_experiment(cfg, 2);
    CHECK(res.repeats.size() == 2);
    CHECK(fs::exists(res.report_path));
    CHECK(fs::exists(res.model_path));
    CHECK(fs::exists(dir / "out" / "loss_trace_rep0.csv"));
    CHECK(fs::exists(dir / "out" / "loss_trace_rep1.csv"));
    CHECK(fs::exists(dir / "out" / "kde_raw_v_source.csv"));
    CHECK(fs::exists(dir / "out" / "kde_features_target.csv"));

    // loss trace additivity at every logged row
    std::ifstream in(dir / "out" / "loss_trace_rep0.csv");
    std::string line;
    std::getline(in, line);  // header
    int rows = 0;
    while (std::getline(in, line)) {
        const auto f = split_csv_line(line);
        REQUIRE(f.size() == 5);
        const double pre = parse_double(f[1], "trace");
        const double mmd = parse_double(f[2], "trace");
        const double smooth = parse_double(f[3], "trace");
        const double total = parse_double(f[4], "trace");
        CHECK(std::abs(total - (pre + hp.lambda_mmd * mmd + hp.beta_smooth * smooth)) < 1e-10);
        ++rows;
    }
    CHECK(rows == 4);

    // single repeat: stddev is zero
    ExperimentConfig single = cfg;
    single.n_repeats = 1;
    single.out_dir = (dir / "single").string();
    const ExperimentResult res1 = run_experiment(single, 1);
    CHECK(res1.rmse.stddev == 0.0);
    CHECK(res1.mae.stddev == 0.0);
}
