#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "skdan/losses.hpp"
#include "skdan/synthgen.hpp"

namespace skdan {

// One point in hyperparameter space.
struct HyperConfig {
    int batch_size = 32;
    double learning_rate = 1e-3;
    int n_attention_layers = 2;
    int d_model = 128;
    int n_heads = 2;
    int kernel_size = 3;  // predictor conv kernel
    int fnn_width = 64;
    double dropout_rate = 0.2;
    double beta_smooth = 0.05;
    double lambda_mmd = 1.0;
    double gamma_noise = 0.01;
    int max_epochs = 200;
    std::uint64_t seed = 0;
    // Architectural extras with fixed defaults.
    int conv1_channels = 32;
    int conv2_channels = 16;
    bool pe_base_10000 = false;

    void validate() const {
        if (batch_size < 1) throw ConfigError("hyper: batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("hyper: learning_rate must be > 0");
        if (max_epochs < 1) throw ConfigError("hyper: max_epochs must be >= 1");
    }
};

// Structural and loss toggles for the ablation variants.
struct AblationFlags {
    bool disable_attention = false;     // variant 1
    bool disable_distillation = false;  // variant 2
    bool fnn_predictor = false;         // variant 3
    bool disable_smoothness = false;    // variant 4
    bool disable_adaptation = false;    // lambda forced to 0
};

struct EvalReport {
    double rmse = 0.0;
    double mae = 0.0;
    double score = 0.0;      // mean-normalized asymmetric score
    double score_sum = 0.0;  // plain per-sample sum
    std::vector<double> residuals;
    std::size_t n = 0;
};

struct EpochTrace {
    int epoch = 0;
    double pre = 0.0;
    double mmd = 0.0;
    double smooth = 0.0;
    double total = 0.0;
    double val_rmse = std::numeric_limits<double>::quiet_NaN();
};

struct FitResult {
    SkdanModel model;  // best-validation checkpoint when a validation set is given
    std::vector<EpochTrace> trace;
    double best_val_rmse = std::numeric_limits<double>::quiet_NaN();
    int best_epoch = -1;
};

// Minibatch Adam on the composite objective. Deterministic given hp.seed.
// `validation`, when given, is evaluated each epoch and the best checkpoint
// is returned. Target labels are never read.
FitResult fit(const DomainDataset& source, const DomainDataset& target, const HyperConfig& hp,
              const AblationFlags& flags, const DomainDataset* validation = nullptr);

// RMSE / MAE / asymmetric score on a labeled set, eval mode.
EvalReport evaluate(const SkdanModel& model, const DomainDataset& test);

// Asymmetric exponential score: overestimation (d >= 0) costs e^d - 1,
// underestimation costs e^(-d/1.3) - 1.
double score_sum(const std::vector<double>& residuals);
double score_mean(const std::vector<double>& residuals);

// Default random-search space; brackets the known-good configurations.
struct SearchSpace {
    std::vector<int> batch_sizes{16, 32, 64};
    double lr_min = 1e-5, lr_max = 1e-2;
    std::vector<int> attention_layers{2, 3};
    std::vector<int> d_models{32, 64, 128};
    std::vector<int> heads{2, 4};
    std::vector<int> kernel_sizes{3, 5};
    std::vector<int> fnn_widths{16, 32, 64};
    double dropout_min = 0.1, dropout_max = 0.5;
    double beta_min = 0.01, beta_max = 0.2;
    double lambda_min = 0.1, lambda_max = 3.0;
    double gamma_min = 1e-3, gamma_max = 0.1;
    int max_epochs = 200;
};

// Log-uniform draws for rates/weights, uniform choice for discrete fields.
HyperConfig draw_config(const SearchSpace& space, Rng& rng);

struct TrialResult {
    int trial_id = 0;
    HyperConfig config;
    double val_rmse = 0.0;
};

struct SearchResult {
    HyperConfig best;
    std::vector<TrialResult> leaderboard;  // sorted by validation RMSE
};

// n_trials independent draws, each trained on 80% of the source (the split is
// shared across trials) and ranked by RMSE on the held-out 20%. Trials run in
// parallel; results are reduced in trial order.
SearchResult random_search(const DomainDataset& source, const DomainDataset& target,
                           const SearchSpace& space, int n_trials, const AblationFlags& flags,
                           std::uint64_t master_seed, double val_fraction = 0.2,
                           int n_threads = 0);

// Deterministic sample-level split helper (indices shuffled by seed).
std::pair<DomainDataset, DomainDataset> split_samples(const DomainDataset& ds, double first_fraction,
                                                      std::uint64_t seed);

void write_loss_trace_csv(const std::string& path, const std::vector<EpochTrace>& trace);

}  // namespace skdan
