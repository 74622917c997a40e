#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "skdan/tape.hpp"

namespace skdan {

// Compares the reverse-mode gradient of a scalar-valued function against
// central finite differences and returns the worst relative error.
//
// The function is called with a fresh tape and tracked leaves built from
// `point`; it must be deterministic across calls (re-seed any internal
// randomness). The relative error per coordinate uses a floor of 1e-3 in the
// denominator so finite-difference noise on near-zero gradients does not
// register as disagreement.
inline double grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& fn,
    const std::vector<Tensor>& point, double h = 1e-5) {
    // Reverse-mode gradients at the point.
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> leaves;
        leaves.reserve(point.size());
        for (const Tensor& p : point) leaves.push_back(tape.leaf(p, true));
        Var out = fn(tape, leaves);
        tape.backward(out);
        for (const Var& l : leaves) analytic.push_back(l.grad());
    }

    const auto eval = [&](const std::vector<Tensor>& at) {
        Tape tape;
        std::vector<Var> leaves;
        leaves.reserve(at.size());
        for (const Tensor& p : at) leaves.push_back(tape.leaf(p, false));
        return fn(tape, leaves).value().item();
    };

    double worst = 0.0;
    std::vector<Tensor> probe = point;
    for (std::size_t t = 0; t < point.size(); ++t) {
        for (Index i = 0; i < point[t].size(); ++i) {
            const double orig = probe[t][i];
            probe[t][i] = orig + h;
            const double fp = eval(probe);
            probe[t][i] = orig - h;
            const double fm = eval(probe);
            probe[t][i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = analytic[t][i];
            const double denom = std::max({std::abs(ad), std::abs(fd), 1e-3});
            worst = std::max(worst, std::abs(ad - fd) / denom);
        }
    }
    return worst;
}

}  // namespace skdan
