#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "skdan/rng.hpp"
#include "skdan/tape.hpp"

// Differentiable operations as expression-friendly free functions over tape
// handles. Each op records the forward value and a closure pushing adjoints
// into its parents; parent values are read back off the tape rather than
// captured, so closures stay small.

namespace skdan {

enum class Padding { same, valid };

namespace detail {

template <typename S>
TapeT<S>& tape_of(VarT<S> a) {
    if (a.tape == nullptr) throw ConfigError("op: variable is not bound to a tape");
    return *a.tape;
}

template <typename S>
void require_same_tape(VarT<S> a, VarT<S> b) {
    if (a.tape != b.tape) throw ConfigError("op: operands live on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S>
VarT<S> matmul(VarT<S> a, VarT<S> b) {
    detail::require_same_tape(a, b);
    TapeT<S>& t = detail::tape_of(a);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
        throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                             shape_str(bv.shape()));
    TensorT<S> out({av.rows(), bv.cols()});
    out.mat().noalias() = av.mat() * bv.mat();
    const int aid = a.id, bid = b.id;
    return t.emplace(std::move(out), a.tracked() || b.tracked(),
                     [aid, bid](TapeT<S>& tp, int self) {
                         auto gm = tp.grad(self).mat();
                         if (tp.tracked(aid))
                             tp.grad_ref(aid).mat().noalias() += gm * tp.value(bid).mat().transpose();
                         if (tp.tracked(bid))
                             tp.grad_ref(bid).mat().noalias() += tp.value(aid).mat().transpose() * gm;
                     });
}

template <typename S>
VarT<S> transpose(VarT<S> a) {
    TapeT<S>& t = detail::tape_of(a);
    const auto& av = a.value();
    if (av.rank() != 2)
        throw DimensionError("transpose: rank-2 tensor required, got " + shape_str(av.shape()));
    TensorT<S> out({av.cols(), av.rows()});
    out.mat() = av.mat().transpose();
    const int aid = a.id;
    return t.emplace(std::move(out), a.tracked(), [aid](TapeT<S>& tp, int self) {
        if (tp.tracked(aid)) tp.grad_ref(aid).mat() += tp.grad(self).mat().transpose();
    });
}

// ---------------------------------------------------------------------------
// Elementwise and broadcasting arithmetic

template <typename S>
VarT<S> add(VarT<S> a, VarT<S> b) {
    detail::require_same_tape(a, b);
    TapeT<S>& t = detail::tape_of(a);
    if (a.value().shape() != b.value().shape())
        throw DimensionError("add: shape mismatch " + shape_str(a.value().shape()) + " vs " +
                             shape_str(b.value().shape()));
    TensorT<S> out(a.value().shape(), a.value().flat() + b.value().flat());
    const int aid = a.id, bid = b.id;
    return t.emplace(std::move(out), a.tracked() || b.tracked(),
                     [aid, bid](TapeT<S>& tp, int self) {
                         const auto& g = tp.grad(self).flat();
                         if (tp.tracked(aid)) tp.grad_ref(aid).flat() += g;
                         if (tp.tracked(bid)) tp.grad_ref(bid).flat() += g;
                     });
}

template <typename S>
VarT<S> sub(VarT<S> a, VarT<S> b) {
    detail::require_same_tape(a, b);
    TapeT<S>& t = detail::tape_of(a);
    if (a.value().shape() != b.value().shape())
        throw DimensionError("sub: shape mismatch " + shape_str(a.value().shape()) + " vs " +
                             shape_str(b.value().shape()));
    TensorT<S> out(a.value().shape(), a.value().flat() - b.value().flat());
    const int aid = a.id, bid = b.id;
    return t.emplace(std::move(out), a.tracked() || b.tracked(),
                     [aid, bid](TapeT<S>& tp, int self) {
                         const auto& g = tp.grad(self).flat();
                         if (tp.tracked(aid)) tp.grad_ref(aid).flat() += g;
                         if (tp.tracked(bid)) tp.grad_ref(bid).flat() -= g;
                     });
}

// Adds a length-m vector to every row of an n-by-m value (bias broadcast).
template <typename S>
VarT<S> add_rowvec(VarT<S> a, VarT<S> b) {
    detail::require_same_tape(a, b);
    TapeT<S>& t = detail::tape_of(a);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rank() != 2 || bv.rank() > 2 || bv.rows() != 1 || bv.size() != av.cols())
        throw DimensionError("add_rowvec: shapes " + shape_str(av.shape()) + " and " +
                             shape_str(bv.shape()) + " do not broadcast");
    TensorT<S> out({av.rows(), av.cols()});
    Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> row(bv.flat().data(), bv.size());
    out.mat() = av.mat().rowwise() + row;
    const int aid = a.id, bid = b.id;
    return t.emplace(std::move(out), a.tracked() || b.tracked(),
                     [aid, bid](TapeT<S>& tp, int self) {
                         auto gm = tp.grad(self).mat();
                         if (tp.tracked(aid)) tp.grad_ref(aid).mat() += gm;
                         if (tp.tracked(bid)) {
                             auto& db = tp.grad_ref(bid).flat();
                             Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(db.data(), db.size()) +=
                                 gm.colwise().sum();
                         }
                     });
}

template <typename S>
VarT<S> scale(VarT<S> a, S c) {
    TapeT<S>& t = detail::tape_of(a);
    TensorT<S> out(a.value().shape(), a.value().flat() * c);
    const int aid = a.id;
    return t.emplace(std::move(out), a.tracked(), [aid, c](TapeT<S>& tp, int self) {
        if (tp.tracked(aid)) tp.grad_ref(aid).flat() += tp.grad(self).flat() * c;
    });
}

template <typename S>
VarT<S> square(VarT<S> a) {
    TapeT<S>& t = detail::tape_of(a);
    TensorT<S> out(a.value().shape(), a.value().flat().square());
    const int aid = a.id;
    return t.emplace(std::move(out), a.tracked(), [aid](TapeT<S>& tp, int self) {
        if (tp.tracked(aid))
            tp.grad_ref(aid).flat() += S(2) * tp.value(aid).flat() * tp.grad(self).flat();
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
VarT<S> sum(VarT<S> a) {
    TapeT<S>& t = detail::tape_of(a);
    TensorT<S> out = TensorT<S>::scalar(a.value().flat().sum());
    const int aid = a.id;
    return t.emplace(std::move(out), a.tracked(), [aid](TapeT<S>& tp, int self) {
        if (tp.tracked(aid)) tp.grad_ref(aid).flat() += tp.grad(self).flat()[0];
    });
}

template <typename S>
VarT<S> mean(VarT<S> a) {
    return scale(sum(a), S(1) / static_cast<S>(a.value().size()));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename S>
VarT<S> reshape(VarT<S> a, Shape shape) {
    TapeT<S>& t = detail::tape_of(a);
    TensorT<S> out = a.value().reshaped(std::move(shape));
    const int aid = a.id;
    return t.emplace(std::move(out), a.tracked(), [aid](TapeT<S>& tp, int self) {
        if (tp.tracked(aid)) tp.grad_ref(aid).flat() += tp.grad(self).flat();
    });
}

template <typename S>
VarT<S> flatten_row(VarT<S> a) {
    return reshape(a, {Index{1}, a.value().size()});
}

// Concatenates rank-2 values with equal row counts along columns.
template <typename S>
VarT<S> concat_cols(const std::vector<VarT<S>>& parts) {
    if (parts.empty()) throw ConfigError("concat_cols: empty input");
    TapeT<S>& t = detail::tape_of(parts[0]);
    const Index rows = parts[0].value().rows();
    Index cols = 0;
    bool tracked = false;
    for (const auto& p : parts) {
        detail::require_same_tape(parts[0], p);
        if (p.value().rank() > 2 || p.value().rows() != rows)
            throw DimensionError("concat_cols: row mismatch " + shape_str(p.value().shape()));
        cols += p.value().cols();
        tracked = tracked || p.tracked();
    }
    TensorT<S> out({rows, cols});
    Index off = 0;
    std::vector<int> ids;
    std::vector<Index> widths;
    for (const auto& p : parts) {
        const Index w = p.value().cols();
        out.mat().middleCols(off, w) = p.value().mat();
        ids.push_back(p.id);
        widths.push_back(w);
        off += w;
    }
    return t.emplace(std::move(out), tracked,
                     [ids, widths](TapeT<S>& tp, int self) {
                         auto gm = tp.grad(self).mat();
                         Index off2 = 0;
                         for (std::size_t i = 0; i < ids.size(); ++i) {
                             if (tp.tracked(ids[i]))
                                 tp.grad_ref(ids[i]).mat() += gm.middleCols(off2, widths[i]);
                             off2 += widths[i];
                         }
                     });
}

// ---------------------------------------------------------------------------
// Activations

template <typename S>
VarT<S> relu(VarT<S> a) {
    TapeT<S>& t = detail::tape_of(a);
    TensorT<S> out(a.value().shape(), a.value().flat().max(S(0)));
    const int aid = a.id;
    return t.emplace(std::move(out), a.tracked(), [aid](TapeT<S>& tp, int self) {
        if (tp.tracked(aid))
            tp.grad_ref(aid).flat() +=
                (tp.value(aid).flat() > S(0)).select(tp.grad(self).flat(), S(0));
    });
}

// elu(x) = x for x >= 0, exp(x) - 1 otherwise; derivative below zero is y + 1.
template <typename S>
VarT<S> elu(VarT<S> a) {
    TapeT<S>& t = detail::tape_of(a);
    const auto& x = a.value().flat();
    TensorT<S> out(a.value().shape(), (x >= S(0)).select(x, x.exp() - S(1)));
    const int aid = a.id;
    return t.emplace(std::move(out), a.tracked(), [aid](TapeT<S>& tp, int self) {
        if (tp.tracked(aid)) {
            const auto& x2 = tp.value(aid).flat();
            const auto& y = tp.value(self).flat();
            tp.grad_ref(aid).flat() +=
                tp.grad(self).flat() * (x2 >= S(0)).select(ArrayT<S>::Ones(x2.size()), y + S(1));
        }
    });
}

// Training mode zeroes entries with probability `rate` and rescales survivors
// by 1/(1-rate); eval mode and rate 0 are the identity (no node, no draws).
template <typename S>
VarT<S> dropout(VarT<S> a, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return a;
    TapeT<S>& t = detail::tape_of(a);
    ArrayT<S> mask(a.value().size());
    const S keep_scale = S(1) / static_cast<S>(1.0 - rate);
    for (Index i = 0; i < mask.size(); ++i)
        mask[i] = rng.uniform() >= rate ? keep_scale : S(0);
    TensorT<S> out(a.value().shape(), a.value().flat() * mask);
    const int aid = a.id;
    return t.emplace(std::move(out), a.tracked(),
                     [aid, mask = std::move(mask)](TapeT<S>& tp, int self) {
                         if (tp.tracked(aid)) tp.grad_ref(aid).flat() += tp.grad(self).flat() * mask;
                     });
}

// ---------------------------------------------------------------------------
// Softmax

// Row-wise softmax with max subtraction; every output row sums to one.
template <typename S>
VarT<S> softmax_rows(VarT<S> a) {
    TapeT<S>& t = detail::tape_of(a);
    const auto& av = a.value();
    if (av.rank() != 2)
        throw DimensionError("softmax_rows: rank-2 tensor required, got " + shape_str(av.shape()));
    TensorT<S> out({av.rows(), av.cols()});
    auto m = out.mat();
    m = (av.mat().colwise() - av.mat().rowwise().maxCoeff()).array().exp().matrix();
    const Eigen::Array<S, Eigen::Dynamic, 1> sums = m.rowwise().sum();
    m.array().colwise() /= sums;
    const int aid = a.id;
    return t.emplace(std::move(out), a.tracked(), [aid](TapeT<S>& tp, int self) {
        if (!tp.tracked(aid)) return;
        auto y = tp.value(self).mat();
        auto g = tp.grad(self).mat();
        // dx = y .* (g - rowsum(g .* y))
        Eigen::Array<S, Eigen::Dynamic, 1> dot = (g.array() * y.array()).rowwise().sum();
        tp.grad_ref(aid).mat().array() += y.array() * (g.array().colwise() - dot);
    });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

// Unrolls sliding windows of a length-n, c-channel sequence into a matrix of
// shape n' x (k*c); column tau*c + ch holds x[i + tau - pad, ch]. Linear, so
// the adjoint is the transposed scatter.
template <typename S>
VarT<S> im2col(VarT<S> x, Index k, Padding pad) {
    TapeT<S>& t = detail::tape_of(x);
    const auto& xv = x.value();
    if (xv.rank() != 2)
        throw DimensionError("im2col: rank-2 input required, got " + shape_str(xv.shape()));
    const Index n = xv.rows(), c = xv.cols();
    if (n < 1) throw LengthError("im2col: empty input");
    const Index pad_left = pad == Padding::same ? (k - 1) / 2 : 0;
    const Index n_out = pad == Padding::same ? n : n - k + 1;
    if (n_out < 1)
        throw LengthError("im2col: input length " + std::to_string(n) +
                          " shorter than kernel " + std::to_string(k));
    TensorT<S> out({n_out, k * c});
    auto om = out.mat();
    om.setZero();
    for (Index i = 0; i < n_out; ++i)
        for (Index tau = 0; tau < k; ++tau) {
            const Index src = i + tau - pad_left;
            if (src < 0 || src >= n) continue;
            om.block(i, tau * c, 1, c) = xv.mat().row(src);
        }
    const int xid = x.id;
    return t.emplace(std::move(out), x.tracked(),
                     [xid, k, c, n, pad_left](TapeT<S>& tp, int self) {
                         if (!tp.tracked(xid)) return;
                         auto g = tp.grad(self).mat();
                         auto dx = tp.grad_ref(xid).mat();
                         for (Index i = 0; i < g.rows(); ++i)
                             for (Index tau = 0; tau < k; ++tau) {
                                 const Index src = i + tau - pad_left;
                                 if (src < 0 || src >= n) continue;
                                 dx.row(src) += g.block(i, tau * c, 1, c);
                             }
                     });
}

// 1-D cross-correlation (no kernel flip). kernels has shape {k, c_in, c_out};
// "same" keeps the length with zero padding, "valid" yields n-k+1 rows.
template <typename S>
VarT<S> conv1d(VarT<S> input, VarT<S> kernels, VarT<S> bias, Padding pad = Padding::same) {
    const auto& xv = input.value();
    const auto& wv = kernels.value();
    if (xv.rank() != 2)
        throw DimensionError("conv1d: rank-2 input required, got " + shape_str(xv.shape()));
    if (xv.rows() < 1) throw LengthError("conv1d: empty input");
    if (wv.rank() != 3)
        throw DimensionError("conv1d: kernels must have shape {k, c_in, c_out}, got " +
                             shape_str(wv.shape()));
    const Index k = wv.dim(0), c_in = wv.dim(1), c_out = wv.dim(2);
    if (c_in != xv.cols())
        throw DimensionError("conv1d: input channels " + shape_str(xv.shape()) +
                             " do not match kernels " + shape_str(wv.shape()));
    if (pad == Padding::same && k % 2 == 0)
        throw ConfigError("conv1d: same padding requires an odd kernel size, got " +
                          std::to_string(k));
    if (bias.value().size() != c_out)
        throw DimensionError("conv1d: bias size " + shape_str(bias.value().shape()) +
                             " does not match output channels " + std::to_string(c_out));
    auto cols = im2col(input, k, pad);
    auto w2 = reshape(kernels, {k * c_in, c_out});
    return add_rowvec(matmul(cols, w2), bias);
}

// Per-channel windowed maxima; the gradient routes to the first maximal
// position in each window.
template <typename S>
VarT<S> maxpool1d(VarT<S> x, Index window, Index stride) {
    TapeT<S>& t = detail::tape_of(x);
    const auto& xv = x.value();
    if (xv.rank() != 2)
        throw DimensionError("maxpool1d: rank-2 input required, got " + shape_str(xv.shape()));
    if (window < 1 || stride < 1)
        throw ConfigError("maxpool1d: window and stride must be positive");
    const Index n = xv.rows(), c = xv.cols();
    if (window > n)
        throw LengthError("maxpool1d: window " + std::to_string(window) +
                          " exceeds input length " + std::to_string(n));
    const Index n_out = (n - window) / stride + 1;
    TensorT<S> out({n_out, c});
    std::vector<Index> argmax(static_cast<std::size_t>(n_out * c));
    for (Index i = 0; i < n_out; ++i)
        for (Index ch = 0; ch < c; ++ch) {
            Index best = i * stride;
            S best_v = xv.at(best, ch);
            for (Index tau = 1; tau < window; ++tau) {
                const S v = xv.at(i * stride + tau, ch);
                if (v > best_v) {
                    best_v = v;
                    best = i * stride + tau;
                }
            }
            out.at(i, ch) = best_v;
            argmax[static_cast<std::size_t>(i * c + ch)] = best * c + ch;
        }
    const int xid = x.id;
    return t.emplace(std::move(out), x.tracked(),
                     [xid, argmax = std::move(argmax)](TapeT<S>& tp, int self) {
                         if (!tp.tracked(xid)) return;
                         const auto& g = tp.grad(self).flat();
                         auto& dx = tp.grad_ref(xid).flat();
                         for (Index i = 0; i < g.size(); ++i)
                             dx[argmax[static_cast<std::size_t>(i)]] += g[i];
                     });
}

}  // namespace skdan
