#pragma once

#include "skdan/ops.hpp"
#include "skdan/rng.hpp"

namespace skdan {

// CNN predictor: two conv+pool blocks, flatten, dropout, two-layer FNN head.
// Raw affine output (no squashing).
struct PredictorConfig {
    int kernel_size = 3;
    int conv1_channels = 32;
    int conv2_channels = 16;
    int pool_size = 4;
    int pool_stride = 4;
    int fnn_width = 64;
    double dropout_rate = 0.0;
    double gamma_noise = 0.01;
    int input_length = 40;    // feature rows from the extractor
    int input_channels = 128; // feature width from the extractor
    bool use_cnn = true;      // false: FNN-only predictor (ablation)

    int pooled_length(int n) const { return (n - pool_size) / pool_stride + 1; }

    // Width of the flattened vector entering the FNN.
    int flatten_width() const {
        if (!use_cnn) return input_length * input_channels;
        const int l1 = pooled_length(input_length);
        const int l2 = pooled_length(l1);
        return l2 * conv2_channels;
    }

    void validate() const {
        if (kernel_size <= 0 || kernel_size % 2 == 0)
            throw ConfigError("predictor: kernel size must be odd and positive, got " +
                              std::to_string(kernel_size));
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError("predictor: dropout rate must lie in [0,1)");
        if (gamma_noise < 0.0) throw ConfigError("predictor: gamma_noise must be >= 0");
        if (fnn_width <= 0) throw ConfigError("predictor: fnn_width must be positive");
        if (use_cnn) {
            if (input_length < pool_size)
                throw ConfigError("predictor: feature length " + std::to_string(input_length) +
                                  " shorter than pool size " + std::to_string(pool_size));
            if (pooled_length(input_length) < pool_size)
                throw ConfigError("predictor: feature length " + std::to_string(input_length) +
                                  " leaves pooled length " +
                                  std::to_string(pooled_length(input_length)) +
                                  " below pool size " + std::to_string(pool_size));
        }
    }
};

struct PredictorParams {
    Tensor conv1_w, conv1_b;  // {k, input_channels, conv1_channels}; empty when !use_cnn
    Tensor conv2_w, conv2_b;  // {k, conv1_channels, conv2_channels}
    Tensor w1, b1;            // {flatten, fnn_width}
    Tensor w2, b2;            // {fnn_width, 1}
};

struct PredictorVars {
    Var conv1_w, conv1_b, conv2_w, conv2_b;
    Var w1, b1, w2, b2;
};

PredictorParams init_predictor_params(const PredictorConfig& cfg, Rng& rng);
std::vector<Tensor*> predictor_parameters(PredictorParams& p);
std::vector<const Tensor*> predictor_parameters(const PredictorParams& p);
PredictorVars lift_predictor(Tape& tape, const PredictorParams& p, bool tracked);

// Same-padded conv -> ReLU -> maxpool(pool_size, pool_stride).
Var conv_block(Var f, Var w, Var b, const PredictorConfig& cfg);

// Scalar SOH estimate (1x1). Dropout is active between flatten and the FNN
// hidden layer in training mode only.
Var predict_soh(Var features, const PredictorVars& p, const PredictorConfig& cfg, bool training,
                Rng& rng);

// Squared difference between the clean prediction and the prediction under a
// gamma-scaled elementwise Gaussian perturbation. Both branches run in eval
// mode; the perturbation is drawn fresh from rng.
Var smooth_loss(Var features, const PredictorVars& p, const PredictorConfig& cfg, Rng& rng);

}  // namespace skdan
