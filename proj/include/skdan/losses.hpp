#pragma once

#include <vector>

#include "skdan/model.hpp"

namespace skdan {

// Weighted bank of Gaussian kernels k_u(x,y) = exp(-||x-y||^2 / (2 sigma_u^2)).
struct KernelBank {
    std::vector<double> sigmas;
    std::vector<double> alphas;

    static KernelBank single(double sigma) { return KernelBank{{sigma}, {1.0}}; }

    void validate() const {
        if (sigmas.empty() || sigmas.size() != alphas.size())
            throw ConfigError("kernel bank: sigmas and alphas must be non-empty and aligned");
        double total = 0.0;
        for (std::size_t i = 0; i < sigmas.size(); ++i) {
            if (!(sigmas[i] > 0.0)) throw ConfigError("kernel bank: sigma must be positive");
            if (alphas[i] < 0.0) throw ConfigError("kernel bank: alpha must be non-negative");
            total += alphas[i];
        }
        if (std::abs(total - 1.0) > 1e-12)
            throw ConfigError("kernel bank: alphas must sum to 1");
    }
};

// Default bank: median pairwise distance of the joint batch scaled by
// {0.25, 0.5, 1, 2, 4}, equal weights. Falls back to sigma = 1 when the
// median distance degenerates to zero.
KernelBank median_heuristic_bank(const Eigen::MatrixXd& joint_rows);

// Biased V-statistic MK-MMD between two sample sets of equal-width feature
// vectors. Symmetric, order-invariant, and >= -1e-12 for any inputs.
double mk_mmd(const std::vector<Eigen::VectorXd>& fs, const std::vector<Eigen::VectorXd>& ft,
              const KernelBank& bank);

// Differentiable MK-MMD over row-vector feature nodes (one 1xD node per
// sample). Kernel bandwidths are treated as constants.
Var mk_mmd_loss(const std::vector<Var>& fs, const std::vector<Var>& ft, const KernelBank& bank);

// Mean squared error.
double prediction_loss(const std::vector<double>& pred, const std::vector<double>& label);

struct LossWeights {
    double lambda_mmd = 0.0;  // domain-adaptation trade-off
    double beta_smooth = 0.0; // smoothness trade-off

    void validate() const {
        if (lambda_mmd < 0.0 || beta_smooth < 0.0)
            throw ConfigError("loss weights must be non-negative");
    }
};

struct LossBreakdown {
    double pre = 0.0;
    double mmd = 0.0;
    double smooth = 0.0;
    double total = 0.0;
};

// Builds the composite objective graph on the tape:
//   total = L_pre(source) + lambda * MK-MMD(features_s, features_t)
//         + beta * mean smooth penalty over the source batch.
// The source batch must be fully labeled; the target batch is only touched
// when lambda > 0 and its labels are never read. Kernel bandwidths are
// constants within the step: by default the median heuristic on the current
// features, or `fixed_bank` when supplied (finite-difference checks need the
// same constants across evaluations). `breakdown` (if given) receives the
// unweighted component values.
Var overall_loss(Tape& tape, const ModelVars& mv, const SkdanModel& model,
                 const std::vector<const ChargeSegment*>& source_batch,
                 const std::vector<const ChargeSegment*>& target_batch, const LossWeights& weights,
                 Rng& rng, LossBreakdown* breakdown = nullptr,
                 const KernelBank* fixed_bank = nullptr);

}  // namespace skdan
