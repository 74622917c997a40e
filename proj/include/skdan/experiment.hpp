#pragma once

#include <json.hpp>

#include "skdan/harness.hpp"

namespace skdan {

// Resolved experiment: datasets plus training/search instructions.
struct ExperimentConfig {
    DomainDataset source;        // labeled
    DomainDataset target_adapt;  // unlabeled
    DomainDataset target_test;   // labeled
    bool use_search = false;
    HyperConfig hyper;
    SearchSpace space;
    int search_trials = 100;
    AblationFlags flags;
    int n_repeats = 10;
    std::uint64_t master_seed = 0;
    std::string kde_channel = "v";
    std::string out_dir = "experiment_out";
};

struct RepeatOutcome {
    int repeat = 0;
    EvalReport report;
    double best_val_rmse = 0.0;
    int best_epoch = -1;
};

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation; 0 for a single repeat
};

struct ExperimentResult {
    HyperConfig chosen;
    std::vector<RepeatOutcome> repeats;
    Aggregate rmse, mae, score;
    int saved_model_repeat = 0;
    std::string report_path;
    std::string model_path;
};

// Parses the experiment JSON file (see README for the schema), resolving
// dataset references: a string is a serialized dataset path; an object with
// csvs/labels/meta builds the domain from raw files, optionally splitting
// target batteries 50/50 into adaptation and test halves.
ExperimentConfig load_experiment(const std::string& path);

// n_repeats seeded fits -> evaluation on the target test set -> mean +- std
// aggregation, loss traces, the best-validation model, and KDE exports, all
// written under cfg.out_dir. Byte-deterministic given the master seed.
ExperimentResult run_experiment(ExperimentConfig cfg, int n_threads = 0);

// Convenience: load + run (out_dir_override replaces the file's out_dir).
ExperimentResult run_experiment_file(const std::string& path,
                                     const std::string& out_dir_override = "",
                                     int n_threads = 0);

// JSON (de)serialization shared with the CLI.
nlohmann::ordered_json hyper_to_json(const HyperConfig& hp);
HyperConfig hyper_from_json(const nlohmann::json& j);
nlohmann::ordered_json ablation_to_json(const AblationFlags& f);
AblationFlags ablation_from_json(const nlohmann::json& j);
SearchSpace space_from_json(const nlohmann::json& j);

void write_eval_report_json(const std::string& path, const EvalReport& rep);

// Pooled-value KDE export (deterministic stride subsampling above `cap`).
void export_kde_channel(const DomainDataset& ds, const std::string& channel,
                        const std::string& path, int grid_points = 512, double bandwidth = 0.0);
void export_kde_features(const SkdanModel& model, const DomainDataset& ds,
                         const std::string& path, int grid_points = 512, double bandwidth = 0.0);

}  // namespace skdan
