#include "skdan/predictor.hpp"

#include <cmath>

namespace skdan {

namespace {

Tensor glorot(Rng& rng, Shape shape, double fan_in, double fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

PredictorParams init_predictor_params(const PredictorConfig& cfg, Rng& rng) {
    cfg.validate();
    PredictorParams p;
    const int k = cfg.kernel_size;
    if (cfg.use_cnn) {
        p.conv1_w = glorot(rng, {k, cfg.input_channels, cfg.conv1_channels},
                           static_cast<double>(k) * cfg.input_channels,
                           static_cast<double>(k) * cfg.conv1_channels);
        p.conv1_b = Tensor({cfg.conv1_channels});
        p.conv2_w = glorot(rng, {k, cfg.conv1_channels, cfg.conv2_channels},
                           static_cast<double>(k) * cfg.conv1_channels,
                           static_cast<double>(k) * cfg.conv2_channels);
        p.conv2_b = Tensor({cfg.conv2_channels});
    }
    const int z = cfg.flatten_width();
    p.w1 = glorot(rng, {z, cfg.fnn_width}, z, cfg.fnn_width);
    p.b1 = Tensor({cfg.fnn_width});
    p.w2 = glorot(rng, {cfg.fnn_width, 1}, cfg.fnn_width, 1.0);
    p.b2 = Tensor({1});
    return p;
}

std::vector<const Tensor*> predictor_parameters(const PredictorParams& p) {
    auto list = predictor_parameters(const_cast<PredictorParams&>(p));
    return {list.begin(), list.end()};
}

std::vector<Tensor*> predictor_parameters(PredictorParams& p) {
    std::vector<Tensor*> out;
    if (p.conv1_w.size() > 0) {
        out.push_back(&p.conv1_w);
        out.push_back(&p.conv1_b);
        out.push_back(&p.conv2_w);
        out.push_back(&p.conv2_b);
    }
    out.push_back(&p.w1);
    out.push_back(&p.b1);
    out.push_back(&p.w2);
    out.push_back(&p.b2);
    return out;
}

PredictorVars lift_predictor(Tape& tape, const PredictorParams& p, bool tracked) {
    PredictorVars v;
    if (p.conv1_w.size() > 0) {
        v.conv1_w = tape.leaf(p.conv1_w, tracked);
        v.conv1_b = tape.leaf(p.conv1_b, tracked);
        v.conv2_w = tape.leaf(p.conv2_w, tracked);
        v.conv2_b = tape.leaf(p.conv2_b, tracked);
    }
    v.w1 = tape.leaf(p.w1, tracked);
    v.b1 = tape.leaf(p.b1, tracked);
    v.w2 = tape.leaf(p.w2, tracked);
    v.b2 = tape.leaf(p.b2, tracked);
    return v;
}

Var conv_block(Var f, Var w, Var b, const PredictorConfig& cfg) {
    const Index n = f.value().rows();
    if (n < cfg.pool_size)
        throw LengthError("conv_block: length " + std::to_string(n) + " below pool size " +
                          std::to_string(cfg.pool_size));
    return maxpool1d(relu(conv1d(f, w, b, Padding::same)), cfg.pool_size, cfg.pool_stride);
}

Var predict_soh(Var features, const PredictorVars& p, const PredictorConfig& cfg, bool training,
                Rng& rng) {
    Var h = features;
    if (cfg.use_cnn) {
        h = conv_block(h, p.conv1_w, p.conv1_b, cfg);
        h = conv_block(h, p.conv2_w, p.conv2_b, cfg);
    }
    auto z = flatten_row(h);
    z = dropout(z, cfg.dropout_rate, rng, training);
    auto hidden = relu(add_rowvec(matmul(z, p.w1), p.b1));
    return add_rowvec(matmul(hidden, p.w2), p.b2);
}

Var smooth_loss(Var features, const PredictorVars& p, const PredictorConfig& cfg, Rng& rng) {
    Tape& tape = *features.tape;
    auto clean = predict_soh(features, p, cfg, false, rng);
    Tensor noise(features.value().shape());
    for (Index i = 0; i < noise.size(); ++i) noise[i] = cfg.gamma_noise * rng.normal();
    auto perturbed = add(features, tape.constant(std::move(noise)));
    auto noisy = predict_soh(perturbed, p, cfg, false, rng);
    return square(sub(clean, noisy));
}

}  // namespace skdan
