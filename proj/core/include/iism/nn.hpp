#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "iism/rng.hpp"
#include "iism/tensor.hpp"

// Minimal layer kit for the two fixed architectures in this project. Layers
// hold parameters and gradient buffers; activations live with the caller so a
// frozen model can serve concurrent inference. Batched GEMM via Eigen, no
// hidden threading, fully deterministic.
namespace iism::nn {

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;
};

template <typename T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename T>
using ColMap = Eigen::Map<ColMat<T>>;
template <typename T>
using ConstColMap = Eigen::Map<const ColMat<T>>;

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Unfold one sample (C, H, W) into a (C*k*k) x (OH*OW) column-major matrix.
template <typename T>
void im2col(const T* input, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* cols) {
    const std::size_t rows = channels * k * k;
    for (std::size_t oi = 0; oi < oh; ++oi) {
        for (std::size_t oj = 0; oj < ow; ++oj) {
            T* column = cols + (oi * ow + oj) * rows;
            for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t ki = 0; ki < k; ++ki) {
                    const std::ptrdiff_t si = std::ptrdiff_t(oi * stride + ki) - std::ptrdiff_t(pad);
                    for (std::size_t kj = 0; kj < k; ++kj) {
                        const std::ptrdiff_t sj =
                            std::ptrdiff_t(oj * stride + kj) - std::ptrdiff_t(pad);
                        T v = T(0);
                        if (si >= 0 && sj >= 0 && si < std::ptrdiff_t(h) &&
                            sj < std::ptrdiff_t(w))
                            v = input[(c * h + std::size_t(si)) * w + std::size_t(sj)];
                        column[(c * k + ki) * k + kj] = v;
                    }
                }
            }
        }
    }
}

// Fold columns back, accumulating overlaps (adjoint of im2col).
template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* output) {
    const std::size_t rows = channels * k * k;
    for (std::size_t oi = 0; oi < oh; ++oi) {
        for (std::size_t oj = 0; oj < ow; ++oj) {
            const T* column = cols + (oi * ow + oj) * rows;
            for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t ki = 0; ki < k; ++ki) {
                    const std::ptrdiff_t si = std::ptrdiff_t(oi * stride + ki) - std::ptrdiff_t(pad);
                    if (si < 0 || si >= std::ptrdiff_t(h)) continue;
                    for (std::size_t kj = 0; kj < k; ++kj) {
                        const std::ptrdiff_t sj =
                            std::ptrdiff_t(oj * stride + kj) - std::ptrdiff_t(pad);
                        if (sj < 0 || sj >= std::ptrdiff_t(w)) continue;
                        output[(c * h + std::size_t(si)) * w + std::size_t(sj)] +=
                            column[(c * k + ki) * k + kj];
                    }
                }
            }
        }
    }
}

template <typename T>
struct Conv2d {
    std::size_t in_ch = 0, out_ch = 0, k = 0, stride = 1, pad = 0;
    Tensor<T> weight;      // (out_ch, in_ch*k*k)
    Tensor<T> bias;        // (out_ch)
    Tensor<T> grad_weight;
    Tensor<T> grad_bias;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
           std::size_t pad_)
        : in_ch(in), out_ch(out), k(kernel), stride(stride_), pad(pad_),
          weight({out, in * kernel * kernel}), bias({out}),
          grad_weight({out, in * kernel * kernel}), grad_bias({out}) {}

    void init_he(Rng& rng) {
        const double std = std::sqrt(2.0 / double(in_ch * k * k));
        for (auto& v : weight.storage()) v = T(rng.normal(0.0, std));
        bias.set_zero();
    }

    // x (N, in_ch, H, W) -> y (N, out_ch, OH, OW). When cols is non-null the
    // unfolded input (N, in_ch*k*k, OH*OW) is kept for backward.
    Tensor<T> forward(const Tensor<T>& x, Tensor<T>* cols = nullptr) const {
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t oh = conv_out_extent(h, k, stride, pad);
        const std::size_t ow = conv_out_extent(w, k, stride, pad);
        const std::size_t rows = in_ch * k * k;
        Tensor<T> y({n, out_ch, oh, ow});
        Tensor<T> local_cols;
        Tensor<T>& cbuf = cols ? *cols : local_cols;
        cbuf = Tensor<T>({n, rows, oh * ow});
        typename Tensor<T>::ConstMatMap wmap = weight.mat(out_ch, rows);
        for (std::size_t i = 0; i < n; ++i) {
            T* cptr = cbuf.data() + i * rows * oh * ow;
            im2col(x.data() + i * in_ch * h * w, in_ch, h, w, k, stride, pad, oh, ow, cptr);
            ConstColMap<T> cmat(cptr, Eigen::Index(rows), Eigen::Index(oh * ow));
            typename Tensor<T>::MatMap ymap(y.data() + i * out_ch * oh * ow, out_ch, oh * ow);
            ymap.noalias() = wmap * cmat;
            ymap.colwise() += bias.vec();
        }
        return y;
    }

    // dy (N, out_ch, OH, OW) -> dx; accumulates parameter gradients.
    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& cols, const Tensor<T>& dy) {
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t oh = dy.dim(2), ow = dy.dim(3);
        const std::size_t rows = in_ch * k * k;
        Tensor<T> dx(x.shape());
        typename Tensor<T>::ConstMatMap wmap = std::as_const(weight).mat(out_ch, rows);
        typename Tensor<T>::MatMap gw = grad_weight.mat(out_ch, rows);
        ColMat<T> dcols(Eigen::Index(rows), Eigen::Index(oh * ow));
        for (std::size_t i = 0; i < n; ++i) {
            typename Tensor<T>::ConstMatMap dymap(dy.data() + i * out_ch * oh * ow, out_ch,
                                                  oh * ow);
            const T* cptr = cols.data() + i * rows * oh * ow;
            ConstColMap<T> cmat(cptr, Eigen::Index(rows), Eigen::Index(oh * ow));
            gw.noalias() += dymap * cmat.transpose();
            grad_bias.vec() += dymap.rowwise().sum();
            dcols.noalias() = wmap.transpose() * dymap;
            col2im(dcols.data(), in_ch, h, w, k, stride, pad, oh, ow,
                   dx.data() + i * in_ch * h * w);
        }
        return dx;
    }

    std::vector<ParamRef<T>> params(const std::string& prefix) {
        return {{prefix + ".weight", &weight, &grad_weight},
                {prefix + ".bias", &bias, &grad_bias}};
    }
};

// Transposed convolution; the adjoint of Conv2d with the same geometry, so
// im2col/col2im swap roles between forward and backward.
template <typename T>
struct ConvTranspose2d {
    std::size_t in_ch = 0, out_ch = 0, k = 0, stride = 1, pad = 0;
    Tensor<T> weight; // (in_ch, out_ch*k*k)
    Tensor<T> bias;   // (out_ch)
    Tensor<T> grad_weight;
    Tensor<T> grad_bias;

    ConvTranspose2d() = default;
    ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
                    std::size_t pad_)
        : in_ch(in), out_ch(out), k(kernel), stride(stride_), pad(pad_),
          weight({in, out * kernel * kernel}), bias({out}),
          grad_weight({in, out * kernel * kernel}), grad_bias({out}) {}

    void init_he(Rng& rng) {
        const double std = std::sqrt(2.0 / double(in_ch * k * k));
        for (auto& v : weight.storage()) v = T(rng.normal(0.0, std));
        bias.set_zero();
    }

    std::size_t out_extent(std::size_t in) const { return (in - 1) * stride + k - 2 * pad; }

    // x (N, in_ch, H, W) -> y (N, out_ch, OH, OW) with OH = (H-1)*stride+k-2*pad.
    Tensor<T> forward(const Tensor<T>& x) const {
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t oh = out_extent(h), ow = out_extent(w);
        const std::size_t rows = out_ch * k * k;
        Tensor<T> y({n, out_ch, oh, ow});
        typename Tensor<T>::ConstMatMap wmap = weight.mat(in_ch, rows);
        ColMat<T> cols(Eigen::Index(rows), Eigen::Index(h * w));
        for (std::size_t i = 0; i < n; ++i) {
            typename Tensor<T>::ConstMatMap xmap(x.data() + i * in_ch * h * w, in_ch, h * w);
            cols.noalias() = wmap.transpose() * xmap;
            T* yptr = y.data() + i * out_ch * oh * ow;
            col2im(cols.data(), out_ch, oh, ow, k, stride, pad, h, w, yptr);
            typename Tensor<T>::MatMap ymap(yptr, out_ch, oh * ow);
            ymap.colwise() += bias.vec();
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) {
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t oh = dy.dim(2), ow = dy.dim(3);
        const std::size_t rows = out_ch * k * k;
        Tensor<T> dx(x.shape());
        typename Tensor<T>::ConstMatMap wmap = std::as_const(weight).mat(in_ch, rows);
        typename Tensor<T>::MatMap gw = grad_weight.mat(in_ch, rows);
        ColMat<T> dcols(Eigen::Index(rows), Eigen::Index(h * w));
        for (std::size_t i = 0; i < n; ++i) {
            const T* dyptr = dy.data() + i * out_ch * oh * ow;
            im2col(dyptr, out_ch, oh, ow, k, stride, pad, h, w, dcols.data());
            typename Tensor<T>::ConstMatMap xmap(x.data() + i * in_ch * h * w, in_ch, h * w);
            typename Tensor<T>::MatMap dxmap(dx.data() + i * in_ch * h * w, in_ch, h * w);
            dxmap.noalias() = wmap * dcols;
            gw.noalias() += xmap * dcols.transpose();
            typename Tensor<T>::ConstMatMap dymap(dyptr, out_ch, oh * ow);
            grad_bias.vec() += dymap.rowwise().sum();
        }
        return dx;
    }

    std::vector<ParamRef<T>> params(const std::string& prefix) {
        return {{prefix + ".weight", &weight, &grad_weight},
                {prefix + ".bias", &bias, &grad_bias}};
    }
};

template <typename T>
struct Linear {
    std::size_t in_dim = 0, out_dim = 0;
    Tensor<T> weight; // (out, in)
    Tensor<T> bias;   // (out)
    Tensor<T> grad_weight;
    Tensor<T> grad_bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out)
        : in_dim(in), out_dim(out), weight({out, in}), bias({out}), grad_weight({out, in}),
          grad_bias({out}) {}

    void init_he(Rng& rng) {
        const double std = std::sqrt(2.0 / double(in_dim));
        for (auto& v : weight.storage()) v = T(rng.normal(0.0, std));
        bias.set_zero();
    }

    // x (N, in) -> y (N, out)
    Tensor<T> forward(const Tensor<T>& x) const {
        const std::size_t n = x.dim(0);
        Tensor<T> y({n, out_dim});
        y.mat(n, out_dim).noalias() = x.mat(n, in_dim) * weight.mat(out_dim, in_dim).transpose();
        y.mat(n, out_dim).rowwise() += bias.vec().transpose();
        return y;
    }

    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) {
        const std::size_t n = x.dim(0);
        grad_weight.mat(out_dim, in_dim).noalias() +=
            dy.mat(n, out_dim).transpose() * x.mat(n, in_dim);
        grad_bias.vec() += dy.mat(n, out_dim).colwise().sum().transpose();
        Tensor<T> dx({n, in_dim});
        dx.mat(n, in_dim).noalias() = dy.mat(n, out_dim) * weight.mat(out_dim, in_dim);
        return dx;
    }

    std::vector<ParamRef<T>> params(const std::string& prefix) {
        return {{prefix + ".weight", &weight, &grad_weight},
                {prefix + ".bias", &bias, &grad_bias}};
    }
};

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.storage()) v = v > T(0) ? v : T(0);
    return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
        if (!(x[i] > T(0))) dx[i] = T(0);
    return dx;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.storage()) {
        const T s = T(1) / (T(1) + std::exp(-v));
        v = v * s;
    }
    return y;
}

template <typename T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        dx[i] = dy[i] * (s + x[i] * s * (T(1) - s));
    }
    return dx;
}

template <typename T>
class Adam {
  public:
    Adam(std::vector<ParamRef<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            slots_.push_back({Tensor<T>(p.value->shape()), Tensor<T>(p.value->shape())});
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.grad->set_zero();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, double(t_));
        const double bc2 = 1.0 - std::pow(beta2_, double(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor<T>& value = *params_[i].value;
            const Tensor<T>& grad = *params_[i].grad;
            Tensor<T>& m = slots_[i].m;
            Tensor<T>& v = slots_[i].v;
            for (std::size_t j = 0; j < value.size(); ++j) {
                const double g = double(grad[j]);
                const double mj = beta1_ * double(m[j]) + (1.0 - beta1_) * g;
                const double vj = beta2_ * double(v[j]) + (1.0 - beta2_) * g * g;
                m[j] = T(mj);
                v[j] = T(vj);
                value[j] -= T(lr_ * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
            }
        }
    }

    const std::vector<ParamRef<T>>& params() const { return params_; }

  private:
    struct Slot {
        Tensor<T> m, v;
    };
    std::vector<ParamRef<T>> params_;
    std::vector<Slot> slots_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

} // namespace iism::nn
