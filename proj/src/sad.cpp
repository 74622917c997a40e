#include "skdan/sad.hpp"

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

SadParams init_sad_params(const SadConfig& cfg, Rng& rng) {
    cfg.validate();
    SadParams p;
    const int d = cfg.d_model;
    const int dh = cfg.head_dim();
    p.embed_w = glorot(rng, {3, cfg.input_channels, d}, 3.0 * cfg.input_channels, 3.0 * d);
    p.embed_b = Tensor({d});
    p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& layer : p.layers) {
        if (cfg.use_attention) {
            for (int h = 0; h < cfg.n_heads; ++h) {
                layer.wq.push_back(glorot(rng, {d, dh}, d, dh));
                layer.wk.push_back(glorot(rng, {d, dh}, d, dh));
                layer.wv.push_back(glorot(rng, {d, dh}, d, dh));
            }
        }
        if (cfg.use_distillation) {
            layer.distill_w = glorot(rng, {3, d, d}, 3.0 * d, 3.0 * d);
            layer.distill_b = Tensor({d});
        }
    }
    return p;
}

std::vector<const Tensor*> sad_parameters(const SadParams& p) {
    auto list = sad_parameters(const_cast<SadParams&>(p));
    return {list.begin(), list.end()};
}

std::vector<Tensor*> sad_parameters(SadParams& p) {
    std::vector<Tensor*> out{&p.embed_w, &p.embed_b};
    for (auto& layer : p.layers) {
        for (auto& w : layer.wq) out.push_back(&w);
        for (auto& w : layer.wk) out.push_back(&w);
        for (auto& w : layer.wv) out.push_back(&w);
        if (layer.distill_w.size() > 0) {
            out.push_back(&layer.distill_w);
            out.push_back(&layer.distill_b);
        }
    }
    return out;
}

SadVars lift_sad(Tape& tape, const SadParams& p, bool tracked) {
    SadVars v;
    v.embed_w = tape.leaf(p.embed_w, tracked);
    v.embed_b = tape.leaf(p.embed_b, tracked);
    for (const auto& layer : p.layers) {
        SadLayerVars lv;
        for (const auto& w : layer.wq) lv.wq.push_back(tape.leaf(w, tracked));
        for (const auto& w : layer.wk) lv.wk.push_back(tape.leaf(w, tracked));
        for (const auto& w : layer.wv) lv.wv.push_back(tape.leaf(w, tracked));
        if (layer.distill_w.size() > 0) {
            lv.distill_w = tape.leaf(layer.distill_w, tracked);
            lv.distill_b = tape.leaf(layer.distill_b, tracked);
        }
        v.layers.push_back(std::move(lv));
    }
    return v;
}

Tensor positional_encoding(Index n, int d_model, bool base_10000) {
    if (n < 1) throw LengthError("positional_encoding: length must be >= 1");
    if (d_model <= 0 || d_model % 2 != 0)
        throw ConfigError("positional_encoding: d_model must be positive and even");
    const double base = base_10000 ? 10000.0 : 2.0 * static_cast<double>(n);
    Tensor p({n, d_model});
    for (Index k = 0; k < n; ++k)
        for (int j = 0; 2 * j < d_model; ++j) {
            const double denom = std::pow(base, 2.0 * j / d_model);
            const double arg = static_cast<double>(k) / denom;
            p.at(k, 2 * j) = std::sin(arg);
            p.at(k, 2 * j + 1) = std::cos(arg);
        }
    return p;
}

Var embed_input(Var x, const SadVars& p, const SadConfig& cfg) {
    const auto& xv = x.value();
    if (xv.rank() != 2 || xv.cols() != cfg.input_channels)
        throw DimensionError("embed_input: expected [n x " + std::to_string(cfg.input_channels) +
                             "] input, got " + shape_str(xv.shape()));
    Tape& tape = *x.tape;
    auto conv = conv1d(x, p.embed_w, p.embed_b, Padding::same);
    auto pos = tape.constant(positional_encoding(xv.rows(), cfg.d_model, cfg.pe_base_10000));
    return add(pos, conv);
}

Var multi_head_attention(Var g, const SadLayerVars& lp, const SadConfig& cfg) {
    if (g.value().cols() != cfg.d_model)
        throw DimensionError("multi_head_attention: expected width " +
                             std::to_string(cfg.d_model) + ", got " +
                             shape_str(g.value().shape()));
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
        const auto hi = static_cast<std::size_t>(h);
        auto q = matmul(g, lp.wq[hi]);
        auto k = matmul(g, lp.wk[hi]);
        auto v = matmul(g, lp.wv[hi]);
        auto weights = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_dk));
        heads.push_back(matmul(weights, v));
    }
    return concat_cols(heads);
}

Var distill(Var h, const SadLayerVars& lp) {
    if (h.value().rows() < 2)
        throw LengthError("distill: need at least 2 positions, got " +
                          std::to_string(h.value().rows()));
    return maxpool1d(elu(conv1d(h, lp.distill_w, lp.distill_b, Padding::same)), 2, 2);
}

Var extract_features(Var x, const SadVars& p, const SadConfig& cfg) {
    auto h = embed_input(x, p, cfg);
    for (const auto& layer : p.layers) {
        if (cfg.use_attention) h = multi_head_attention(h, layer, cfg);
        if (cfg.use_distillation) h = distill(h, layer);
    }
    return h;
}

}  // namespace skdan
