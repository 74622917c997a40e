#pragma once

#include <Eigen/Core>

#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "skdan/error.hpp"

namespace skdan {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ArrayT = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

// Dense value with an arbitrary shape, stored flat in row-major order on an
// Eigen array. Rank-2 tensors expose an Eigen matrix view so all linear
// algebra runs through Eigen expressions.
template <typename Scalar>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape) : shape_(std::move(shape)) {
        data_ = ArrayT<Scalar>::Zero(count(shape_));
    }

    TensorT(Shape shape, ArrayT<Scalar> values) : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != count(shape_))
            throw DimensionError("tensor: " + std::to_string(data_.size()) +
                                 " values do not fill shape " + shape_str(shape_));
    }

    TensorT(Index rows, Index cols, std::initializer_list<Scalar> values)
        : shape_{rows, cols} {
        data_.resize(static_cast<Index>(values.size()));
        Index i = 0;
        for (Scalar v : values) data_[i++] = v;
        if (data_.size() != rows * cols)
            throw DimensionError("tensor: initializer size mismatch for " + shape_str(shape_));
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT from_matrix(const MatrixT<Scalar>& m) {
        TensorT t({m.rows(), m.cols()});
        t.mat() = m;
        return t;
    }

    static TensorT from_vector(const ArrayT<Scalar>& v) {
        return TensorT({v.size()}, v);
    }

    static TensorT scalar(Scalar v) {
        TensorT t({1, 1});
        t.data_[0] = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    Index size() const { return data_.size(); }
    Index dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

    // Rank-2 accessors. Rank-1 tensors are viewed as a single row.
    Index rows() const { return rank() == 1 ? 1 : shape_.empty() ? 0 : shape_[0]; }
    Index cols() const {
        if (rank() == 1) return shape_[0];
        if (rank() == 2) return shape_[1];
        throw DimensionError("tensor: matrix view needs rank <= 2, got " + shape_str(shape_));
    }

    Eigen::Map<MatrixT<Scalar>> mat() {
        return {data_.data(), rows(), cols()};
    }
    Eigen::Map<const MatrixT<Scalar>> mat() const {
        return {data_.data(), rows(), cols()};
    }

    ArrayT<Scalar>& flat() { return data_; }
    const ArrayT<Scalar>& flat() const { return data_; }

    Scalar& operator[](Index i) { return data_[i]; }
    Scalar operator[](Index i) const { return data_[i]; }

    Scalar& at(Index r, Index c) { return data_[r * cols() + c]; }
    Scalar at(Index r, Index c) const { return data_[r * cols() + c]; }

    // Scalar extraction for 1-element tensors.
    Scalar item() const {
        if (size() != 1)
            throw DimensionError("tensor: item() on non-scalar " + shape_str(shape_));
        return data_[0];
    }

    bool all_finite() const { return data_.isFinite().all(); }

    TensorT reshaped(Shape shape) const {
        if (count(shape) != size())
            throw DimensionError("tensor: cannot reshape " + shape_str(shape_) + " to " +
                                 shape_str(shape));
        return TensorT(std::move(shape), data_);
    }

    static Index count(const Shape& s) {
        return std::accumulate(s.begin(), s.end(), Index{1}, std::multiplies<Index>());
    }

private:
    Shape shape_;
    ArrayT<Scalar> data_;
};

using Tensor = TensorT<double>;

}  // namespace skdan
