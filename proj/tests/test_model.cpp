#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "skdan/grad_check.hpp"
#include "skdan/model.hpp"
#include "test_util.hpp"

using namespace skdan;
using skdan::test::rand_tensor;

namespace {

SadConfig small_sad() {
    SadConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    return cfg;
}

ChargeSegment random_segment(Rng& rng) {
    ChargeSegment s;
    s.v.resize(kSegmentLength);
    s.dv.resize(kSegmentLength);
    s.dq.resize(kSegmentLength);
    s.ic.resize(kSegmentLength);
    for (int i = 0; i < kSegmentLength; ++i) {
        s.v[i] = rng.uniform();
        s.dv[i] = rng.uniform();
        s.dq[i] = rng.uniform();
        s.ic[i] = rng.uniform();
    }
    return s;
}

}  // namespace

TEST_CASE("positional encoding unit values and range") {
    const Tensor p = positional_encoding(160, 8);
    for (int j = 0; j < 8; j += 2) {
        CHECK(p.at(0, j) == 0.0);
        CHECK(p.at(0, j + 1) == 1.0);
    }
    // exponent 0 at j=0 forces denominator 1 regardless of n
    CHECK(p.at(1, 0) == doctest::Approx(std::sin(1.0)).epsilon(1e-14));
    CHECK(positional_encoding(12, 8).at(1, 0) == doctest::Approx(std::sin(1.0)).epsilon(1e-14));
    for (Index i = 0; i < p.size(); ++i) {
        CHECK(p[i] >= -1.0);
        CHECK(p[i] <= 1.0);
    }
    const Tensor q = positional_encoding(160, 8, true);  // conventional base
    CHECK(q.at(1, 2) == doctest::Approx(std::sin(1.0 / std::pow(10000.0, 2.0 / 8.0))));
    CHECK_THROWS_AS(positional_encoding(10, 7), ConfigError);
    CHECK_THROWS_AS(positional_encoding(0, 8), LengthError);
}

TEST_CASE("embed_input with zero conv weights equals the positional encoding") {
    Rng rng(1);
    const SadConfig cfg = small_sad();
    SadParams params = init_sad_params(cfg, rng);
    params.embed_w.flat().setZero();
    params.embed_b.flat().setZero();
    Tape tape;
    SadVars sv = lift_sad(tape, params, false);
    auto x = tape.constant(rand_tensor(rng, {kSegmentLength, 4}, 0.0, 1.0));
    auto g = embed_input(x, sv, cfg);
    const Tensor pos = positional_encoding(kSegmentLength, cfg.d_model);
    CHECK(g.value().shape() == Shape{kSegmentLength, cfg.d_model});
    CHECK((g.value().flat() - pos.flat()).abs().maxCoeff() == 0.0);

    auto bad = tape.constant(rand_tensor(rng, {kSegmentLength, 3}));
    CHECK_THROWS_AS(embed_input(bad, sv, cfg), DimensionError);
}

TEST_CASE("embed_input gradient w.r.t. conv weights matches finite differences") {
    Rng rng(2);
    SadConfig cfg = small_sad();
    cfg.n_layers = 1;
    SadParams params = init_sad_params(cfg, rng);
    const Tensor x0 = rand_tensor(rng, {12, 4}, 0.0, 1.0);
    const double err = grad_check(
        [&](Tape& tape, const std::vector<Var>& xs) {
            SadParams local = params;
            SadVars sv = lift_sad(tape, local, false);
            sv.embed_w = xs[0];
            sv.embed_b = xs[1];
            auto x = tape.constant(x0);
            return sum(square(embed_input(x, sv, cfg)));
        },
        {params.embed_w, params.embed_b});
    CHECK(err < 1e-5);
}

TEST_CASE("attention of a single position is the projected value row") {
    Rng rng(3);
    const SadConfig cfg = small_sad();
    SadParams params = init_sad_params(cfg, rng);
    Tape tape;
    SadVars sv = lift_sad(tape, params, false);
    auto g = tape.constant(rand_tensor(rng, {1, cfg.d_model}));
    auto out = multi_head_attention(g, sv.layers[0], cfg);
    REQUIRE(out.value().shape() == Shape{1, cfg.d_model});
    // softmax over a singleton is [1], so each head returns g * Wv directly
    for (int h = 0; h < cfg.n_heads; ++h) {
        const Eigen::MatrixXd v =
            g.value().mat() * params.layers[0].wv[static_cast<std::size_t>(h)].mat();
        for (int c = 0; c < cfg.head_dim(); ++c)
            CHECK(out.value().at(0, h * cfg.head_dim() + c) ==
                  doctest::Approx(v(0, c)).epsilon(1e-12));
    }
}

TEST_CASE("identical key rows give uniform weights: outputs are value means") {
    Rng rng(4);
    const SadConfig cfg = small_sad();
    SadParams params = init_sad_params(cfg, rng);
    for (auto& w : params.layers[0].wk) w.flat().setZero();  // keys all zero
    Tape tape;
    SadVars sv = lift_sad(tape, params, false);
    const Index n = 6;
    auto g = tape.constant(rand_tensor(rng, {n, cfg.d_model}));
    auto out = multi_head_attention(g, sv.layers[0], cfg);
    for (int h = 0; h < cfg.n_heads; ++h) {
        const Eigen::MatrixXd v =
            g.value().mat() * params.layers[0].wv[static_cast<std::size_t>(h)].mat();
        const Eigen::RowVectorXd mean = v.colwise().mean();
        for (Index r = 0; r < n; ++r)
            for (int c = 0; c < cfg.head_dim(); ++c)
                CHECK(out.value().at(r, h * cfg.head_dim() + c) ==
                      doctest::Approx(mean(c)).epsilon(1e-12));
    }
}

TEST_CASE("attention is permutation-equivariant") {
    Rng rng(5);
    const SadConfig cfg = small_sad();
    SadParams params = init_sad_params(cfg, rng);
    Tape tape;
    SadVars sv = lift_sad(tape, params, false);
    const Index n = 5;
    const Tensor g0 = rand_tensor(rng, {n, cfg.d_model});
    const std::vector<Index> perm{3, 0, 4, 1, 2};
    Tensor gp({n, cfg.d_model});
    for (Index r = 0; r < n; ++r) gp.mat().row(r) = g0.mat().row(perm[static_cast<std::size_t>(r)]);

    auto out0 = multi_head_attention(tape.constant(g0), sv.layers[0], cfg);
    auto outp = multi_head_attention(tape.constant(gp), sv.layers[0], cfg);
    for (Index r = 0; r < n; ++r) {
        const auto expect = out0.value().mat().row(perm[static_cast<std::size_t>(r)]);
        const auto got = outp.value().mat().row(r);
        CHECK((expect - got).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("attention requires d_model divisible by heads") {
    SadConfig cfg;
    cfg.d_model = 10;
    cfg.n_heads = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("distill halves length; delta kernels give pairwise maxima") {
    Rng rng(6);
    const SadConfig cfg = small_sad();
    SadParams params = init_sad_params(cfg, rng);
    Tape tape;
    SadVars sv = lift_sad(tape, params, false);
    auto h = tape.constant(rand_tensor(rng, {kSegmentLength, cfg.d_model}));
    CHECK(distill(h, sv.layers[0]).value().rows() == 80);

    // centered delta kernels: conv is identity; ELU is a no-op on >= 0 input
    SadParams ident = params;
    ident.layers[0].distill_w.flat().setZero();
    for (int c = 0; c < cfg.d_model; ++c)
        ident.layers[0].distill_w.flat()[(1 * cfg.d_model + c) * cfg.d_model + c] = 1.0;
    ident.layers[0].distill_b.flat().setZero();
    Tape tape2;
    SadVars sv2 = lift_sad(tape2, ident, false);
    const Tensor pos = rand_tensor(rng, {8, cfg.d_model}, 0.0, 2.0);
    auto y = distill(tape2.constant(pos), sv2.layers[0]);
    REQUIRE(y.value().rows() == 4);
    for (Index r = 0; r < 4; ++r)
        for (int c = 0; c < cfg.d_model; ++c)
            CHECK(y.value().at(r, c) ==
                  doctest::Approx(std::max(pos.at(2 * r, c), pos.at(2 * r + 1, c))).epsilon(1e-12));

    auto tiny = tape2.constant(rand_tensor(rng, {1, cfg.d_model}));
    CHECK_THROWS_AS(distill(tiny, sv2.layers[0]), LengthError);
}

TEST_CASE("extractor produces the documented shapes and is pure") {
    Rng rng(7);
    SadConfig cfg;
    cfg.d_model = 128;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    SadParams params = init_sad_params(cfg, rng);
    Tape tape;
    SadVars sv = lift_sad(tape, params, false);
    const Tensor x0 = rand_tensor(rng, {kSegmentLength, 4}, 0.0, 1.0);
    auto f1 = extract_features(tape.constant(x0), sv, cfg);
    CHECK(f1.value().shape() == Shape{40, 128});
    auto f2 = extract_features(tape.constant(x0), sv, cfg);
    CHECK((f1.value().flat() == f2.value().flat()).all());

    // length formula through 5 blocks
    SadConfig deep = small_sad();
    deep.n_layers = 5;
    CHECK(deep.output_length(kSegmentLength) == 5);
    SadParams dp = init_sad_params(deep, rng);
    Tape tape3;
    SadVars dv = lift_sad(tape3, dp, false);
    auto fd = extract_features(tape3.constant(x0), dv, deep);
    CHECK(fd.value().shape() == Shape{5, 8});
}

TEST_CASE("extractor end-to-end gradient matches finite differences") {
    Rng rng(8);
    SadConfig cfg;
    cfg.d_model = 4;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    SadParams params = init_sad_params(cfg, rng);
    auto plist = sad_parameters(params);
    std::vector<Tensor> point;
    point.reserve(plist.size());
    for (Tensor* p : plist) point.push_back(*p);
    const Tensor x0 = rand_tensor(rng, {10, 4}, 0.0, 1.0);

    const double err = grad_check(
        [&](Tape& tape, const std::vector<Var>& xs) {
            SadVars sv;
            std::size_t i = 0;
            sv.embed_w = xs[i++];
            sv.embed_b = xs[i++];
            SadLayerVars lv;
            for (int h = 0; h < cfg.n_heads; ++h) lv.wq.push_back(xs[i++]);
            for (int h = 0; h < cfg.n_heads; ++h) lv.wk.push_back(xs[i++]);
            for (int h = 0; h < cfg.n_heads; ++h) lv.wv.push_back(xs[i++]);
            lv.distill_w = xs[i++];
            lv.distill_b = xs[i++];
            sv.layers.push_back(lv);
            return sum(square(extract_features(tape.constant(x0), sv, cfg)));
        },
        point);
    CHECK(err < 1e-4);
}

TEST_CASE("conv_block pooling arithmetic and zero collapse") {
    Rng rng(9);
    PredictorConfig cfg;
    cfg.input_length = 40;
    cfg.input_channels = 8;
    cfg.conv1_channels = 4;
    cfg.conv2_channels = 4;
    cfg.fnn_width = 8;
    PredictorParams params = init_predictor_params(cfg, rng);
    Tape tape;
    PredictorVars pv = lift_predictor(tape, params, false);

    auto f40 = tape.constant(rand_tensor(rng, {40, 8}));
    CHECK(conv_block(f40, pv.conv1_w, pv.conv1_b, cfg).value().rows() == 10);
    auto f10 = tape.constant(rand_tensor(rng, {10, 4}));
    CHECK(conv_block(f10, pv.conv2_w, pv.conv2_b, cfg).value().rows() == 2);

    PredictorParams zero = params;
    zero.conv1_w.flat().setZero();
    zero.conv1_b.flat().setZero();
    Tape tape2;
    PredictorVars zv = lift_predictor(tape2, zero, false);
    auto out = conv_block(tape2.constant(rand_tensor(rng, {40, 8})), zv.conv1_w, zv.conv1_b, cfg);
    CHECK((out.value().flat() == 0.0).all());

    auto f3 = tape2.constant(rand_tensor(rng, {3, 8}));
    CHECK_THROWS_WITH_AS(conv_block(f3, zv.conv1_w, zv.conv1_b, cfg), doctest::Contains("3"),
                         LengthError);
}

TEST_CASE("conv blocks follow the pooling formula for any feature length") {
    Rng rng(42);
    for (Index len = 16; len <= 64; len += 3) {
        PredictorConfig cfg;
        cfg.input_length = static_cast<int>(len);
        cfg.input_channels = 4;
        cfg.conv1_channels = 3;
        cfg.conv2_channels = 3;
        cfg.fnn_width = 4;
        PredictorParams params = init_predictor_params(cfg, rng);
        Tape tape;
        PredictorVars pv = lift_predictor(tape, params, false);
        auto f = tape.constant(rand_tensor(rng, {len, 4}));
        auto b1 = conv_block(f, pv.conv1_w, pv.conv1_b, cfg);
        const Index l1 = (len - cfg.pool_size) / cfg.pool_stride + 1;
        CHECK(b1.value().rows() == l1);
        auto b2 = conv_block(b1, pv.conv2_w, pv.conv2_b, cfg);
        CHECK(b2.value().rows() == (l1 - cfg.pool_size) / cfg.pool_stride + 1);
        CHECK(cfg.flatten_width() ==
              ((l1 - cfg.pool_size) / cfg.pool_stride + 1) * cfg.conv2_channels);
    }
}

TEST_CASE("predict_soh affine collapse and eval determinism") {
    Rng rng(10);
    PredictorConfig cfg;
    cfg.input_length = 40;
    cfg.input_channels = 8;
    cfg.conv1_channels = 4;
    cfg.conv2_channels = 4;
    cfg.fnn_width = 8;
    cfg.dropout_rate = 0.3;
    PredictorParams params = init_predictor_params(cfg, rng);

    PredictorParams zero = params;
    for (Tensor* t : predictor_parameters(zero)) t->flat().setZero();
    zero.b2.flat()[0] = 0.7;
    Tape tape;
    PredictorVars zv = lift_predictor(tape, zero, false);
    Rng r1(1);
    auto out = predict_soh(tape.constant(rand_tensor(rng, {40, 8})), zv, cfg, false, r1);
    CHECK(out.value().item() == 0.7);

    Tape tape2;
    PredictorVars pv = lift_predictor(tape2, params, false);
    const Tensor f0 = rand_tensor(rng, {40, 8});
    Rng r2(2), r3(3);
    auto a = predict_soh(tape2.constant(f0), pv, cfg, false, r2);
    auto b = predict_soh(tape2.constant(f0), pv, cfg, false, r3);
    CHECK(a.value().item() == b.value().item());
}

TEST_CASE("predict_soh gradient matches finite differences") {
    Rng rng(11);
    PredictorConfig cfg;
    cfg.input_length = 16;
    cfg.input_channels = 4;
    cfg.conv1_channels = 3;
    cfg.conv2_channels = 3;
    cfg.fnn_width = 5;
    PredictorParams params = init_predictor_params(cfg, rng);
    auto plist = predictor_parameters(params);
    std::vector<Tensor> point;
    for (Tensor* p : plist) point.push_back(*p);
    const Tensor f0 = rand_tensor(rng, {16, 4});

    const double err = grad_check(
        [&](Tape& tape, const std::vector<Var>& xs) {
            PredictorVars pv;
            pv.conv1_w = xs[0];
            pv.conv1_b = xs[1];
            pv.conv2_w = xs[2];
            pv.conv2_b = xs[3];
            pv.w1 = xs[4];
            pv.b1 = xs[5];
            pv.w2 = xs[6];
            pv.b2 = xs[7];
            Rng local(99);
            return square(predict_soh(tape.constant(f0), pv, cfg, false, local));
        },
        point);
    CHECK(err < 1e-4);
}

TEST_CASE("smooth_loss degenerate cases and reproducibility") {
    Rng rng(12);
    PredictorConfig cfg;
    cfg.input_length = 16;
    cfg.input_channels = 4;
    cfg.conv1_channels = 3;
    cfg.conv2_channels = 3;
    cfg.fnn_width = 5;
    cfg.gamma_noise = 0.0;
    PredictorParams params = init_predictor_params(cfg, rng);
    Tape tape;
    PredictorVars pv = lift_predictor(tape, params, false);
    const Tensor f0 = rand_tensor(rng, {16, 4});
    Rng r1(5);
    CHECK(smooth_loss(tape.constant(f0), pv, cfg, r1).value().item() == 0.0);

    cfg.gamma_noise = 0.5;
    PredictorParams zero = params;
    for (Tensor* t : predictor_parameters(zero)) t->flat().setZero();
    Tape tape2;
    PredictorVars zv = lift_predictor(tape2, zero, false);
    Rng r2(5);
    CHECK(smooth_loss(tape2.constant(f0), zv, cfg, r2).value().item() == 0.0);

    Tape tape3;
    PredictorVars pv3 = lift_predictor(tape3, params, false);
    Rng ra(7), rb(7);
    const double va = smooth_loss(tape3.constant(f0), pv3, cfg, ra).value().item();
    const double vb = smooth_loss(tape3.constant(f0), pv3, cfg, rb).value().item();
    CHECK(va == vb);
    CHECK(va >= 0.0);
}

TEST_CASE("model container round-trips through its file format") {
    SadConfig scfg;
    scfg.d_model = 16;
    scfg.n_heads = 2;
    scfg.n_layers = 2;
    PredictorConfig pcfg;
    pcfg.conv1_channels = 8;
    pcfg.conv2_channels = 4;
    pcfg.fnn_width = 8;
    pcfg.dropout_rate = 0.25;
    SkdanModel m = init_model(scfg, pcfg, 424242);

    const auto path = (std::filesystem::temp_directory_path() / "skdan_model_test.skdm").string();
    save_model(m, path);
    SkdanModel loaded = load_model(path);
    CHECK(loaded.sad_config.d_model == 16);
    CHECK(loaded.predictor_config.dropout_rate == 0.25);
    CHECK(loaded.predictor_config.input_length == m.predictor_config.input_length);

    auto pa = model_parameters(m);
    auto pb = model_parameters(loaded);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
        CHECK((pa[i]->flat() == pb[i]->flat()).all());

    Rng rng(13);
    const ChargeSegment seg = random_segment(rng);
    CHECK(model_predict(m, seg) == model_predict(loaded, seg));
}

TEST_CASE("init_model seeds deterministically and validates structure") {
    SadConfig scfg = small_sad();
    PredictorConfig pcfg;
    pcfg.conv1_channels = 4;
    pcfg.conv2_channels = 4;
    pcfg.fnn_width = 8;
    SkdanModel a = init_model(scfg, pcfg, 7);
    SkdanModel b = init_model(scfg, pcfg, 7);
    auto pa = model_parameters(a), pb = model_parameters(b);
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK((pa[i]->flat() == pb[i]->flat()).all());

    SadConfig deep = scfg;
    deep.n_layers = 4;  // leaves 10 rows; second pool cannot fit
    CHECK_THROWS_AS(init_model(deep, pcfg, 7), ConfigError);
}

TEST_CASE("ablation structures: no attention, no distillation, fnn predictor") {
    Rng rng(14);
    const Tensor x0 = rand_tensor(rng, {kSegmentLength, 4}, 0.0, 1.0);

    SadConfig no_attn = small_sad();
    no_attn.use_attention = false;
    SadParams p1 = init_sad_params(no_attn, rng);
    CHECK(p1.layers[0].wq.empty());
    Tape t1;
    auto f1 = extract_features(t1.constant(x0), lift_sad(t1, p1, false), no_attn);
    CHECK(f1.value().shape() == Shape{40, 8});

    SadConfig no_dist = small_sad();
    no_dist.use_distillation = false;
    SadParams p2 = init_sad_params(no_dist, rng);
    CHECK(p2.layers[0].distill_w.size() == 0);
    CHECK(no_dist.output_length(kSegmentLength) == kSegmentLength);
    Tape t2;
    auto f2 = extract_features(t2.constant(x0), lift_sad(t2, p2, false), no_dist);
    CHECK(f2.value().shape() == Shape{kSegmentLength, 8});

    PredictorConfig fnn;
    fnn.use_cnn = false;
    fnn.input_length = 40;
    fnn.input_channels = 8;
    fnn.fnn_width = 8;
    PredictorParams p3 = init_predictor_params(fnn, rng);
    CHECK(p3.conv1_w.size() == 0);
    CHECK(p3.w1.dim(0) == 40 * 8);
    Tape t3;
    PredictorVars pv = lift_predictor(t3, p3, false);
    Rng local(1);
    auto y = predict_soh(t3.constant(rand_tensor(rng, {40, 8})), pv, fnn, false, local);
    CHECK(y.value().size() == 1);
}
