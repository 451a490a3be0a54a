#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "iism/error.hpp"

namespace iism {

// Dense row-major tensor. The NN stack is templated on the scalar so the
// production pipeline runs in float while gradient-check tests instantiate
// the exact same code in double.
template <typename T>
class Tensor {
  public:
    using Scalar = T;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), T(0));
    }

    Tensor(std::initializer_list<std::size_t> shape)
        : Tensor(std::vector<std::size_t>(shape)) {}

    static std::size_t count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t(1),
                               std::multiplies<>());
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void set_zero() { fill(T(0)); }

    void reshape(std::vector<std::size_t> shape) {
        if (count(shape) != data_.size())
            throw_error(ErrorKind::validation, "tensor reshape changes element count");
        shape_ = std::move(shape);
    }

    // Flat 2-D views for GEMM. Row-major storage viewed as (rows, cols).
    using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstMatMap =
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
    using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

    MatMap mat(std::size_t rows, std::size_t cols) {
        return MatMap(data_.data(), Eigen::Index(rows), Eigen::Index(cols));
    }
    ConstMatMap mat(std::size_t rows, std::size_t cols) const {
        return ConstMatMap(data_.data(), Eigen::Index(rows), Eigen::Index(cols));
    }
    VecMap vec() { return VecMap(data_.data(), Eigen::Index(data_.size())); }
    ConstVecMap vec() const { return ConstVecMap(data_.data(), Eigen::Index(data_.size())); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

  private:
    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

} // namespace iism
