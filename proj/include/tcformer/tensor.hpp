#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "tcformer/errors.hpp"

namespace tcformer {

using Index = std::int64_t;

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

// Dense row-major tensor of doubles, rank <= 4. All model math runs in double
// so finite-difference gradient checks have headroom.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<Index> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), 0.0);
    }

    Tensor(std::vector<Index> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_internal(static_cast<Index>(data_.size()) == count(shape_),
                       "tensor data does not match shape");
    }

    static Tensor zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<Index> shape, double value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    static Tensor row(std::initializer_list<double> values) {
        return Tensor({1, static_cast<Index>(values.size())}, std::vector<double>(values));
    }

    const std::vector<Index>& shape() const { return shape_; }
    Index dim(size_t i) const { return shape_.at(i); }
    int rank() const { return static_cast<int>(shape_.size()); }
    Index numel() const { return static_cast<Index>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](Index i) { return data_[static_cast<size_t>(i)]; }
    double operator[](Index i) const { return data_[static_cast<size_t>(i)]; }

    double& at(Index i, Index j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double at(Index i, Index j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }

    // Rows/cols of the canonical 2-D view: first dim x product of the rest.
    Index rows() const { return shape_.empty() ? 0 : shape_[0]; }
    Index cols() const { return shape_.empty() ? 0 : numel() / shape_[0]; }

    MatMap mat() { return MatMap(data(), rows(), cols()); }
    ConstMatMap mat() const { return ConstMatMap(data(), rows(), cols()); }
    ConstMatMap cmat() const { return ConstMatMap(data(), rows(), cols()); }
    VecMap vec() { return VecMap(data(), numel()); }
    ConstVecMap vec() const { return ConstVecMap(data(), numel()); }
    ConstVecMap cvec() const { return ConstVecMap(data(), numel()); }

    Tensor reshaped(std::vector<Index> shape) const {
        check_internal(count(shape) == numel(), "reshape changes element count");
        return Tensor(std::move(shape), data_);
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    static Index count(const std::vector<Index>& shape) {
        Index n = 1;
        for (Index d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<Index> shape_;
    std::vector<double> data_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

}  // namespace tcformer
