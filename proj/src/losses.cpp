#include "skdan/losses.hpp"

#include <algorithm>
#include <cmath>

namespace skdan {

namespace {

Eigen::MatrixXd pairwise_sq_dists(const Eigen::MatrixXd& z) {
    const Eigen::VectorXd rn = z.rowwise().squaredNorm();
    Eigen::MatrixXd d2 = (-2.0 * (z * z.transpose())).eval();
    d2.colwise() += rn;
    d2.rowwise() += rn.transpose();
    return d2.cwiseMax(0.0);
}

double mmd_from_dists(const Eigen::MatrixXd& d2, Index ns, Index nt, const KernelBank& bank) {
    double total = 0.0;
    for (std::size_t u = 0; u < bank.sigmas.size(); ++u) {
        const double inv = 1.0 / (2.0 * bank.sigmas[u] * bank.sigmas[u]);
        const Eigen::MatrixXd k = (-d2.array() * inv).exp();
        const double ss = k.topLeftCorner(ns, ns).sum();
        const double tt = k.bottomRightCorner(nt, nt).sum();
        const double st = k.topRightCorner(ns, nt).sum();
        total += bank.alphas[u] *
                 (ss / static_cast<double>(ns * ns) + tt / static_cast<double>(nt * nt) -
                  2.0 * st / static_cast<double>(ns * nt));
    }
    return total;
}

// d(MK-MMD)/dZ for the joint sample matrix Z = [rows of S; rows of T].
Eigen::MatrixXd mmd_grad(const Eigen::MatrixXd& z, Index ns, Index nt, const KernelBank& bank) {
    const Eigen::MatrixXd d2 = pairwise_sq_dists(z);
    const Index n = z.rows();
    Eigen::MatrixXd coeff = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t u = 0; u < bank.sigmas.size(); ++u) {
        const double s2 = bank.sigmas[u] * bank.sigmas[u];
        coeff += (bank.alphas[u] / s2) * (-d2.array() / (2.0 * s2)).exp().matrix();
    }
    // Block weights of the V-statistic.
    const double wss = 1.0 / static_cast<double>(ns * ns);
    const double wtt = 1.0 / static_cast<double>(nt * nt);
    const double wst = -1.0 / static_cast<double>(ns * nt);
    coeff.topLeftCorner(ns, ns) *= wss;
    coeff.bottomRightCorner(nt, nt) *= wtt;
    coeff.topRightCorner(ns, nt) *= wst;
    coeff.bottomLeftCorner(nt, ns) *= wst;
    const Eigen::VectorXd rowsum = coeff.rowwise().sum();
    return 2.0 * (coeff * z - rowsum.asDiagonal() * z);
}

}  // namespace

KernelBank median_heuristic_bank(const Eigen::MatrixXd& joint_rows) {
    const Index n = joint_rows.rows();
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    const Eigen::MatrixXd d2 = pairwise_sq_dists(joint_rows);
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) dists.push_back(std::sqrt(d2(i, j)));
    double med = 1.0;
    if (!dists.empty()) {
        const std::size_t mid = dists.size() / 2;
        std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid),
                         dists.end());
        med = dists[mid];
        if (dists.size() % 2 == 0) {
            const double hi = med;
            std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid) - 1,
                             dists.end());
            med = 0.5 * (dists[mid - 1] + hi);
        }
    }
    if (!(med > 0.0)) med = 1.0;
    KernelBank bank;
    for (double scale : {0.25, 0.5, 1.0, 2.0, 4.0}) {
        bank.sigmas.push_back(med * scale);
        bank.alphas.push_back(0.2);
    }
    return bank;
}

double mk_mmd(const std::vector<Eigen::VectorXd>& fs, const std::vector<Eigen::VectorXd>& ft,
              const KernelBank& bank) {
    bank.validate();
    if (fs.empty() || ft.empty()) throw DataError("mk_mmd: empty sample set");
    const Index d = fs[0].size();
    const Index ns = static_cast<Index>(fs.size());
    const Index nt = static_cast<Index>(ft.size());
    Eigen::MatrixXd z(ns + nt, d);
    for (Index i = 0; i < ns; ++i) {
        if (fs[static_cast<std::size_t>(i)].size() != d)
            throw DimensionError("mk_mmd: inconsistent feature widths");
        z.row(i) = fs[static_cast<std::size_t>(i)].transpose();
    }
    for (Index i = 0; i < nt; ++i) {
        if (ft[static_cast<std::size_t>(i)].size() != d)
            throw DimensionError("mk_mmd: source width " + std::to_string(d) +
                                 " vs target width " +
                                 std::to_string(ft[static_cast<std::size_t>(i)].size()));
        z.row(ns + i) = ft[static_cast<std::size_t>(i)].transpose();
    }
    return mmd_from_dists(pairwise_sq_dists(z), ns, nt, bank);
}

Var mk_mmd_loss(const std::vector<Var>& fs, const std::vector<Var>& ft, const KernelBank& bank) {
    bank.validate();
    if (fs.empty() || ft.empty()) throw DataError("mk_mmd_loss: empty sample set");
    Tape& tape = *fs[0].tape;
    const Index d = fs[0].value().size();
    const Index ns = static_cast<Index>(fs.size());
    const Index nt = static_cast<Index>(ft.size());
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(ns + nt));
    Eigen::MatrixXd z(ns + nt, d);
    bool tracked = false;
    Index row = 0;
    for (const auto& list : {fs, ft})
        for (const Var& f : list) {
            if (f.tape != &tape) throw ConfigError("mk_mmd_loss: mixed tapes");
            if (f.value().size() != d)
                throw DimensionError("mk_mmd_loss: inconsistent feature widths");
            z.row(row++) = f.value().flat().matrix().transpose();
            ids.push_back(f.id);
            tracked = tracked || f.tracked();
        }
    const double value = mmd_from_dists(pairwise_sq_dists(z), ns, nt, bank);
    return tape.emplace(
        Tensor::scalar(value), tracked,
        [ids, ns, nt, d, bank](Tape& tp, int self) {
            const double g = tp.grad(self).flat()[0];
            Eigen::MatrixXd z2(ns + nt, d);
            for (Index r = 0; r < ns + nt; ++r)
                z2.row(r) = tp.value(ids[static_cast<std::size_t>(r)]).flat().matrix().transpose();
            const Eigen::MatrixXd gz = mmd_grad(z2, ns, nt, bank);
            for (Index r = 0; r < ns + nt; ++r) {
                const int id = ids[static_cast<std::size_t>(r)];
                if (tp.tracked(id))
                    tp.grad_ref(id).flat() += g * gz.row(r).transpose().array();
            }
        });
}

double prediction_loss(const std::vector<double>& pred, const std::vector<double>& label) {
    if (pred.size() != label.size())
        throw DimensionError("prediction_loss: " + std::to_string(pred.size()) +
                             " predictions vs " + std::to_string(label.size()) + " labels");
    if (pred.empty()) throw DataError("prediction_loss: empty inputs");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = pred[i] - label[i];
        acc += r * r;
    }
    return acc / static_cast<double>(pred.size());
}

Var overall_loss(Tape& tape, const ModelVars& mv, const SkdanModel& model,
                 const std::vector<const ChargeSegment*>& source_batch,
                 const std::vector<const ChargeSegment*>& target_batch, const LossWeights& weights,
                 Rng& rng, LossBreakdown* breakdown, const KernelBank* fixed_bank) {
    weights.validate();
    if (source_batch.empty()) throw DataError("overall_loss: empty source batch");
    const bool want_mmd = weights.lambda_mmd > 0.0;
    if (want_mmd && target_batch.empty())
        throw DataError("overall_loss: domain adaptation requires a target batch");

    std::vector<Var> features;   // extractor outputs, one per source sample
    std::vector<Var> fs_flat;    // flattened features for MK-MMD
    Var pre;
    for (std::size_t i = 0; i < source_batch.size(); ++i) {
        const ChargeSegment& seg = *source_batch[i];
        if (!seg.soh_label)
            throw DataError("overall_loss: unlabeled sample in source batch (cycle " +
                            std::to_string(seg.cycle_index) + ")");
        auto x = tape.constant(segment_to_tensor(seg));
        auto f = extract_features(x, mv.sad, model.sad_config);
        features.push_back(f);
        if (want_mmd) fs_flat.push_back(flatten_row(f));
        auto p = predict_soh(f, mv.predictor, model.predictor_config, true, rng);
        auto sq = square(sub(p, tape.constant(Tensor::scalar(*seg.soh_label))));
        pre = i == 0 ? sq : add(pre, sq);
    }
    pre = scale(pre, 1.0 / static_cast<double>(source_batch.size()));

    Var total = pre;
    double mmd_value = 0.0;
    if (want_mmd) {
        std::vector<Var> ft_flat;
        ft_flat.reserve(target_batch.size());
        for (const ChargeSegment* seg : target_batch) {
            auto x = tape.constant(segment_to_tensor(*seg));
            ft_flat.push_back(flatten_row(extract_features(x, mv.sad, model.sad_config)));
        }
        // Median-heuristic bandwidths from the current joint batch; constant
        // within the step (no gradient through the bandwidths).
        KernelBank bank;
        if (fixed_bank) {
            bank = *fixed_bank;
        } else {
            Eigen::MatrixXd joint(fs_flat.size() + ft_flat.size(), fs_flat[0].value().size());
            Index r = 0;
            for (const auto& list : {fs_flat, ft_flat})
                for (const Var& f : list) joint.row(r++) = f.value().flat().matrix().transpose();
            bank = median_heuristic_bank(joint);
        }
        Var mmd = mk_mmd_loss(fs_flat, ft_flat, bank);
        mmd_value = mmd.value().item();
        total = add(total, scale(mmd, weights.lambda_mmd));
    }

    double smooth_value = 0.0;
    if (weights.beta_smooth > 0.0) {
        Var sm;
        for (std::size_t i = 0; i < features.size(); ++i) {
            auto s = smooth_loss(features[i], mv.predictor, model.predictor_config, rng);
            sm = i == 0 ? s : add(sm, s);
        }
        sm = scale(sm, 1.0 / static_cast<double>(features.size()));
        smooth_value = sm.value().item();
        total = add(total, scale(sm, weights.beta_smooth));
    }

    if (breakdown) {
        breakdown->pre = pre.value().item();
        breakdown->mmd = mmd_value;
        breakdown->smooth = smooth_value;
        breakdown->total = breakdown->pre + weights.lambda_mmd * breakdown->mmd +
                           weights.beta_smooth * breakdown->smooth;
    }
    return total;
}

}  // namespace skdan
