#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "skdan/error.hpp"
#include "skdan/tensor.hpp"

namespace skdan {

template <typename Scalar>
class TapeT;

// Lightweight handle to a node on a tape. Ops are free functions over VarT;
// values are immutable once recorded.
template <typename Scalar>
struct VarT {
    TapeT<Scalar>* tape = nullptr;
    int id = -1;

    const TensorT<Scalar>& value() const { return tape->value(id); }
    const TensorT<Scalar>& grad() const { return tape->grad(id); }
    bool tracked() const { return tape->tracked(id); }
};

// Reverse-mode gradient tape (Wengert list). Nodes are recorded in forward
// order; backward() visits them in reverse, each node pushing its adjoint
// into its parents' accumulators. One backward pass per tape.
template <typename Scalar>
class TapeT {
public:
    using Tensor = TensorT<Scalar>;
    using Var = VarT<Scalar>;
    // Receives the tape and the id of the node whose adjoint is ready.
    using BackwardFn = std::function<void(TapeT&, int)>;

    Var leaf(Tensor v, bool tracked = false) {
        return emplace(std::move(v), tracked, nullptr);
    }

    Var constant(Tensor v) { return leaf(std::move(v), false); }

    Var emplace(Tensor value, bool tracked, BackwardFn backward) {
        Node n;
        n.value = std::move(value);
        n.tracked = tracked;
        if (tracked) n.grad = Tensor(n.value.shape());
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    const Tensor& grad(int id) const {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.tracked)
            throw ConfigError("tape: gradient requested for untracked node");
        return n.grad;
    }

    // Writable gradient accumulator; callers must check tracked(id) first.
    Tensor& grad_ref(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }

    bool tracked(int id) const { return nodes_[static_cast<std::size_t>(id)].tracked; }

    // Seeds d(root)/d(root) = 1 and runs the recorded closures in reverse.
    void backward(Var root) {
        if (root.tape != this)
            throw ConfigError("tape: root belongs to a different tape");
        Node& r = nodes_[static_cast<std::size_t>(root.id)];
        if (r.value.size() != 1)
            throw DimensionError("tape: backward root must be scalar, got " +
                                 shape_str(r.value.shape()));
        if (!r.tracked)
            throw ConfigError("tape: backward root does not depend on tracked inputs");
        r.grad.flat()[0] = Scalar(1);
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.tracked && n.backward) n.backward(*this, i);
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool tracked = false;
        BackwardFn backward;
    };

    // Deque keeps node references stable while ops append nodes; callers may
    // hold value() references across op construction.
    std::deque<Node> nodes_;
};

using Tape = TapeT<double>;
using Var = VarT<double>;

}  // namespace skdan
