#include <doctest.h>

#include <cmath>

#include "skdan/grad_check.hpp"
#include "skdan/losses.hpp"
#include "test_util.hpp"

using namespace skdan;
using skdan::test::rand_tensor;

namespace {

// Independent double-loop oracle for the biased V-statistic.
double brute_force_mmd(const std::vector<Eigen::VectorXd>& fs,
                       const std::vector<Eigen::VectorXd>& ft, const KernelBank& bank) {
    const auto k = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        const double d2 = (a - b).squaredNorm();
        double acc = 0.0;
        for (std::size_t u = 0; u < bank.sigmas.size(); ++u)
            acc += bank.alphas[u] * std::exp(-d2 / (2.0 * bank.sigmas[u] * bank.sigmas[u]));
        return acc;
    };
    double ss = 0.0, tt = 0.0, st = 0.0;
    for (const auto& a : fs)
        for (const auto& b : fs) ss += k(a, b);
    for (const auto& a : ft)
        for (const auto& b : ft) tt += k(a, b);
    for (const auto& a : fs)
        for (const auto& b : ft) st += k(a, b);
    const double ns = static_cast<double>(fs.size()), nt = static_cast<double>(ft.size());
    return ss / (ns * ns) + tt / (nt * nt) - 2.0 * st / (ns * nt);
}

std::vector<Eigen::VectorXd> random_vectors(Rng& rng, int n, int d, double shift = 0.0) {
    std::vector<Eigen::VectorXd> out;
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd v(d);
        for (int j = 0; j < d; ++j) v[j] = rng.normal() + shift;
        out.push_back(v);
    }
    return out;
}

ChargeSegment labeled_segment(Rng& rng, double label) {
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
    s.soh_label = label;
    return s;
}

SkdanModel tiny_model(std::uint64_t seed) {
    SadConfig scfg;
    scfg.d_model = 4;
    scfg.n_heads = 2;
    scfg.n_layers = 2;
    PredictorConfig pcfg;
    pcfg.conv1_channels = 3;
    pcfg.conv2_channels = 3;
    pcfg.fnn_width = 4;
    pcfg.dropout_rate = 0.0;
    pcfg.gamma_noise = 0.01;
    return init_model(scfg, pcfg, seed);
}

}  // namespace

TEST_CASE("prediction_loss unit values") {
    CHECK(prediction_loss({0.4, 0.9}, {0.4, 0.9}) == 0.0);
    CHECK(prediction_loss({1, 1}, {0, 0}) == 1.0);
    CHECK(prediction_loss({0.9}, {1.0}) == doctest::Approx(0.01).epsilon(1e-9));
    CHECK_THROWS_AS(prediction_loss({1.0}, {1.0, 2.0}), DimensionError);
    CHECK_THROWS_AS(prediction_loss({}, {}), DataError);
}

TEST_CASE("kernel bank validation") {
    CHECK_THROWS_AS(KernelBank({}, {}).validate(), ConfigError);
    CHECK_THROWS_AS(KernelBank({{1.0}, {0.5}}).validate(), ConfigError);
    CHECK_THROWS_AS(KernelBank({{-1.0}, {1.0}}).validate(), ConfigError);
    KernelBank::single(2.0).validate();
}

TEST_CASE("mk_mmd of a set against itself vanishes") {
    Rng rng(21);
    const auto xs = random_vectors(rng, 12, 6);
    const double v = mk_mmd(xs, xs, median_heuristic_bank([&] {
                                Eigen::MatrixXd z(24, 6);
                                for (int i = 0; i < 12; ++i) {
                                    z.row(i) = xs[static_cast<std::size_t>(i)].transpose();
                                    z.row(12 + i) = xs[static_cast<std::size_t>(i)].transpose();
                                }
                                return z;
                            }()));
    CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("mk_mmd singleton closed form") {
    Eigen::VectorXd a(2), b(2);
    a << 1.0, 2.0;
    b << 0.5, -1.0;
    const double sigma = 1.3;
    const double expect = 2.0 - 2.0 * std::exp(-(a - b).squaredNorm() / (2.0 * sigma * sigma));
    CHECK(mk_mmd({a}, {b}, KernelBank::single(sigma)) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("mk_mmd agrees with the brute-force oracle, symmetric, order-invariant") {
    Rng rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 1 + static_cast<int>(rng.uniform_int(6));
        const auto fs = random_vectors(rng, 8, d, rng.uniform(-1, 1));
        const auto ft = random_vectors(rng, 8, d, rng.uniform(-1, 1));
        KernelBank bank;
        const int m = 1 + static_cast<int>(rng.uniform_int(4));
        for (int u = 0; u < m; ++u) {
            bank.sigmas.push_back(rng.uniform(0.3, 3.0));
            bank.alphas.push_back(1.0 / m);
        }
        const double v = mk_mmd(fs, ft, bank);
        CHECK(std::abs(v - brute_force_mmd(fs, ft, bank)) < 1e-10);
        CHECK(v >= -1e-12);
        CHECK(mk_mmd(ft, fs, bank) == doctest::Approx(v).epsilon(1e-12));

        auto shuffled = fs;
        std::swap(shuffled[0], shuffled[5]);
        std::swap(shuffled[2], shuffled[7]);
        CHECK(mk_mmd(shuffled, ft, bank) == doctest::Approx(v).epsilon(1e-12));
    }
}

TEST_CASE("mk_mmd separates shifted distributions") {
    Rng rng(23);
    const auto base = random_vectors(rng, 64, 4, 0.0);
    const auto same = random_vectors(rng, 64, 4, 0.0);
    const auto shifted = random_vectors(rng, 64, 4, 1.0);
    Eigen::MatrixXd joint(128, 4);
    for (int i = 0; i < 64; ++i) {
        joint.row(i) = base[static_cast<std::size_t>(i)].transpose();
        joint.row(64 + i) = shifted[static_cast<std::size_t>(i)].transpose();
    }
    const KernelBank bank = median_heuristic_bank(joint);
    const double gap = mk_mmd(base, shifted, bank);
    const double noise = mk_mmd(base, same, bank);
    CHECK(gap > 5.0 * noise);
}

TEST_CASE("mk_mmd_loss forward equals mk_mmd and its gradient is exact") {
    Rng rng(24);
    std::vector<Tensor> point;
    for (int i = 0; i < 3; ++i) point.push_back(rand_tensor(rng, {1, 5}));
    for (int i = 0; i < 4; ++i) point.push_back(rand_tensor(rng, {1, 5}, 0.5, 1.5));
    KernelBank bank{{0.7, 1.8}, {0.5, 0.5}};

    std::vector<Eigen::VectorXd> fs, ft;
    for (int i = 0; i < 3; ++i) fs.push_back(point[static_cast<std::size_t>(i)].flat().matrix());
    for (int i = 3; i < 7; ++i) ft.push_back(point[static_cast<std::size_t>(i)].flat().matrix());

    Tape tape;
    std::vector<Var> vs, vt;
    for (int i = 0; i < 3; ++i) vs.push_back(tape.constant(point[static_cast<std::size_t>(i)]));
    for (int i = 3; i < 7; ++i) vt.push_back(tape.constant(point[static_cast<std::size_t>(i)]));
    CHECK(mk_mmd_loss(vs, vt, bank).value().item() ==
          doctest::Approx(mk_mmd(fs, ft, bank)).epsilon(1e-14));

    const double err = grad_check(
        [&](Tape& t, const std::vector<Var>& xs) {
            std::vector<Var> s(xs.begin(), xs.begin() + 3), tt(xs.begin() + 3, xs.end());
            return mk_mmd_loss(s, tt, bank);
        },
        point);
    CHECK(err < 1e-5);
}

TEST_CASE("overall_loss degenerate weights reduce to the prediction term") {
    Rng rng(25);
    SkdanModel model = tiny_model(31);
    std::vector<ChargeSegment> src;
    for (int i = 0; i < 4; ++i) src.push_back(labeled_segment(rng, 0.8 + 0.05 * i));
    std::vector<const ChargeSegment*> batch;
    for (const auto& s : src) batch.push_back(&s);

    Tape tape;
    ModelVars mv = lift_model(tape, model, false);
    LossBreakdown bd;
    Rng step_rng(1);
    auto total = overall_loss(tape, mv, model, batch, {}, LossWeights{0.0, 0.0}, step_rng, &bd);

    std::vector<double> preds, labels;
    for (const auto& s : src) {
        preds.push_back(model_predict(model, s));
        labels.push_back(*s.soh_label);
    }
    CHECK(total.value().item() == doctest::Approx(prediction_loss(preds, labels)).epsilon(1e-12));
    CHECK(bd.mmd == 0.0);
    CHECK(bd.smooth == 0.0);
    CHECK(bd.total == doctest::Approx(bd.pre).epsilon(1e-15));
}

TEST_CASE("overall_loss on identical batches keeps only the prediction term") {
    Rng rng(26);
    SkdanModel model = tiny_model(32);
    std::vector<ChargeSegment> src;
    for (int i = 0; i < 3; ++i) src.push_back(labeled_segment(rng, 0.9));
    std::vector<const ChargeSegment*> batch;
    for (const auto& s : src) batch.push_back(&s);

    Tape tape;
    ModelVars mv = lift_model(tape, model, false);
    LossBreakdown bd;
    Rng step_rng(2);
    overall_loss(tape, mv, model, batch, batch, LossWeights{1.0, 0.0}, step_rng, &bd);
    CHECK(std::abs(bd.mmd) < 1e-12);
    CHECK(bd.total == doctest::Approx(bd.pre).epsilon(1e-12));
}

TEST_CASE("overall_loss is additive in its three terms") {
    Rng rng(27);
    SkdanModel model = tiny_model(33);
    std::vector<ChargeSegment> src, tgt;
    for (int i = 0; i < 3; ++i) src.push_back(labeled_segment(rng, 0.8 + 0.02 * i));
    for (int i = 0; i < 3; ++i) tgt.push_back(labeled_segment(rng, 0.0));
    std::vector<const ChargeSegment*> sb, tb;
    for (const auto& s : src) sb.push_back(&s);
    for (const auto& s : tgt) tb.push_back(&s);

    const LossWeights w{0.8, 0.3};
    Tape tape;
    ModelVars mv = lift_model(tape, model, false);
    LossBreakdown bd;
    Rng step_rng(3);
    auto total = overall_loss(tape, mv, model, sb, tb, w, step_rng, &bd);
    CHECK(bd.total ==
          doctest::Approx(bd.pre + w.lambda_mmd * bd.mmd + w.beta_smooth * bd.smooth)
              .epsilon(1e-15));
    CHECK(total.value().item() == doctest::Approx(bd.total).epsilon(1e-12));
    CHECK(bd.mmd > 0.0);
    CHECK(bd.smooth >= 0.0);
}

TEST_CASE("full objective gradient matches finite differences on a 4+4 batch") {
    Rng rng(28);
    SkdanModel model = tiny_model(34);
    std::vector<ChargeSegment> src, tgt;
    for (int i = 0; i < 4; ++i) src.push_back(labeled_segment(rng, 0.85 + 0.03 * i));
    for (int i = 0; i < 4; ++i) tgt.push_back(labeled_segment(rng, 0.0));
    std::vector<const ChargeSegment*> sb, tb;
    for (const auto& s : src) sb.push_back(&s);
    for (const auto& s : tgt) tb.push_back(&s);

    auto plist = model_parameters(model);
    std::vector<Tensor> point;
    for (Tensor* p : plist) point.push_back(*p);

    // Bandwidths are constants within a step; freeze them across evaluations.
    KernelBank bank;
    {
        Tape tape;
        ModelVars mv = lift_model(tape, model, false);
        std::vector<Eigen::VectorXd> rows;
        for (const auto* seg : sb) rows.push_back(model_features(model, *seg));
        for (const auto* seg : tb) rows.push_back(model_features(model, *seg));
        Eigen::MatrixXd joint(rows.size(), rows[0].size());
        for (std::size_t r = 0; r < rows.size(); ++r) joint.row(static_cast<Index>(r)) = rows[r];
        bank = median_heuristic_bank(joint);
    }

    const double err = grad_check(
        [&](Tape& tape, const std::vector<Var>& xs) {
            ModelVars mv = vars_from_list(model, xs);
            Rng step_rng(77);
            return overall_loss(tape, mv, model, sb, tb, LossWeights{0.7, 0.2}, step_rng, nullptr,
                                &bank);
        },
        point);
    CHECK(err < 1e-4);
}

TEST_CASE("overall_loss rejects unlabeled source and empty batches") {
    Rng rng(29);
    SkdanModel model = tiny_model(35);
    std::vector<ChargeSegment> src{labeled_segment(rng, 0.9)};
    src[0].soh_label.reset();
    std::vector<const ChargeSegment*> sb{&src[0]};
    Tape tape;
    ModelVars mv = lift_model(tape, model, false);
    Rng step_rng(4);
    CHECK_THROWS_AS(overall_loss(tape, mv, model, sb, {}, LossWeights{0, 0}, step_rng, nullptr),
                    DataError);
    CHECK_THROWS_AS(overall_loss(tape, mv, model, {}, {}, LossWeights{0, 0}, step_rng, nullptr),
                    DataError);
    CHECK_THROWS_AS(overall_loss(tape, mv, model, sb, {}, LossWeights{1.0, 0}, step_rng, nullptr),
                    DataError);
}
