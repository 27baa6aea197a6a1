#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "diffrec/rng.hpp"
#include "diffrec/tensor.hpp"

namespace diffrec {

template <class T>
struct Param {
    Tensor<T> w;
    Tensor<T> g;

    Param() = default;
    explicit Param(std::vector<int64_t> shape) : w(shape), g(std::move(shape)) {}
    void zero_grad() { g.fill(T(0)); }
};

template <class T>
struct ParamRef {
    std::string name;
    Param<T>* p;
};

template <class T>
using ParamList = std::vector<ParamRef<T>>;

template <class T>
void init_normal(Tensor<T>& t, Rng& rng, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    for (auto& v : t.data) v = static_cast<T>(d(rng));
}

template <class T>
inline T gelu_value(T x) {
    return static_cast<T>(0.5) * x * (static_cast<T>(1) + static_cast<T>(std::erf(static_cast<double>(x) * 0.7071067811865476)));
}

template <class T>
inline T gelu_grad(T x) {
    const double xd = static_cast<double>(x);
    const double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865476));
    const double pdf = std::exp(-0.5 * xd * xd) * 0.3989422804014327;
    return static_cast<T>(cdf + xd * pdf);
}

// Affine layer y = x W + b over row-vectors; x: [n x in], W: [in x out].
template <class T>
struct Dense {
    Param<T> W;
    Param<T> b;
    int64_t in = 0, out = 0;

    struct Ctx {
        Tensor<T> x;  // kept for dW
    };

    Dense() = default;
    Dense(int64_t in_dim, int64_t out_dim)
        : W({in_dim, out_dim}), b({out_dim}), in(in_dim), out(out_dim) {}

    void init(Rng& rng) {
        // Xavier-style scale keeps activations bounded at init.
        init_normal(W.w, rng, std::sqrt(2.0 / static_cast<double>(in + out)));
        b.w.fill(T(0));
    }

    Tensor<T> forward(const Tensor<T>& x, Ctx* ctx) const {
        const int64_t n = x.size() / in;
        Tensor<T> y({n, out});
        matmul(x, W.w, y, n, in, out);
        auto ym = as_matrix(y, n, out);
        ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.w.ptr(), out);
        if (ctx) ctx->x = x;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy, const Ctx& ctx) {
        const int64_t n = dy.size() / out;
        matmul_tn_acc(ctx.x, dy, W.g, n, in, out);
        // Reduce into a plain (aligned) vector first: assigning the reduction
        // through a map lets the gradient buffer's address pick the
        // packet/scalar split, and the low bits then vary run to run with
        // heap layout.
        const Eigen::Matrix<T, 1, Eigen::Dynamic> col_sums = as_matrix(dy, n, out).colwise().sum();
        for (int64_t j = 0; j < out; ++j) b.g[j] += col_sums[j];
        Tensor<T> dx({n, in});
        matmul_nt(dy, W.w, dx, n, out, in);
        return dx;
    }

    void collect(const std::string& prefix, ParamList<T>& list) {
        list.push_back({prefix + ".weight", &W});
        list.push_back({prefix + ".bias", &b});
    }
};

// Row-wise layer normalization with learned scale/shift.
template <class T>
struct LayerNorm {
    Param<T> gamma;
    Param<T> beta;
    int64_t dim = 0;
    static constexpr double kEps = 1e-5;

    struct Ctx {
        Tensor<T> x_hat;          // normalized input
        std::vector<T> inv_std;   // per row
    };

    LayerNorm() = default;
    explicit LayerNorm(int64_t d) : gamma({d}), beta({d}), dim(d) {
        gamma.w.fill(T(1));
        beta.w.fill(T(0));
    }

    Tensor<T> forward(const Tensor<T>& x, Ctx* ctx) const {
        const int64_t n = x.size() / dim;
        Tensor<T> y({n, dim});
        Tensor<T> x_hat({n, dim});
        std::vector<T> inv_std(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            const T* row = x.ptr() + i * dim;
            double mean = 0;
            for (int64_t j = 0; j < dim; ++j) mean += row[j];
            mean /= static_cast<double>(dim);
            double var = 0;
            for (int64_t j = 0; j < dim; ++j) {
                const double c = row[j] - mean;
                var += c * c;
            }
            var /= static_cast<double>(dim);
            const T is = static_cast<T>(1.0 / std::sqrt(var + kEps));
            inv_std[static_cast<size_t>(i)] = is;
            for (int64_t j = 0; j < dim; ++j) {
                const T xh = static_cast<T>((row[j] - mean) * is);
                x_hat.at2(i, j) = xh;
                y.at2(i, j) = xh * gamma.w[j] + beta.w[j];
            }
        }
        if (ctx) {
            ctx->x_hat = std::move(x_hat);
            ctx->inv_std = std::move(inv_std);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy, const Ctx& ctx) {
        const int64_t n = dy.size() / dim;
        Tensor<T> dx({n, dim});
        for (int64_t i = 0; i < n; ++i) {
            const T is = ctx.inv_std[static_cast<size_t>(i)];
            double sum_dg = 0, sum_dg_xhat = 0;
            for (int64_t j = 0; j < dim; ++j) {
                const T d = dy.at2(i, j);
                const T xh = ctx.x_hat.at2(i, j);
                gamma.g[j] += d * xh;
                beta.g[j] += d;
                const double dxh = static_cast<double>(d) * gamma.w[j];
                sum_dg += dxh;
                sum_dg_xhat += dxh * xh;
            }
            const double inv_n = 1.0 / static_cast<double>(dim);
            for (int64_t j = 0; j < dim; ++j) {
                const double dxh = static_cast<double>(dy.at2(i, j)) * gamma.w[j];
                const double xh = ctx.x_hat.at2(i, j);
                dx.at2(i, j) = static_cast<T>(is * (dxh - inv_n * sum_dg - xh * inv_n * sum_dg_xhat));
            }
        }
        return dx;
    }

    void collect(const std::string& prefix, ParamList<T>& list) {
        list.push_back({prefix + ".gamma", &gamma});
        list.push_back({prefix + ".beta", &beta});
    }
};

template <class T>
struct Gelu {
    struct Ctx {
        Tensor<T> x;
    };
    static Tensor<T> forward(const Tensor<T>& x, Ctx* ctx) {
        Tensor<T> y(x.shape);
        for (int64_t i = 0; i < x.size(); ++i) y[i] = gelu_value(x[i]);
        if (ctx) ctx->x = x;
        return y;
    }
    static Tensor<T> backward(const Tensor<T>& dy, const Ctx& ctx) {
        Tensor<T> dx(dy.shape);
        for (int64_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * gelu_grad(ctx.x[i]);
        return dx;
    }
};

// Token embedding lookup; rows of `table` indexed by token id.
template <class T>
struct Embedding {
    Param<T> table;  // [vocab x dim]
    int64_t vocab = 0, dim = 0;

    Embedding() = default;
    Embedding(int64_t v, int64_t d) : table({v, d}), vocab(v), dim(d) {}

    void init(Rng& rng, double stddev = 0.02) { init_normal(table.w, rng, stddev); }

    Tensor<T> forward(const std::vector<int32_t>& ids) const {
        Tensor<T> y({static_cast<int64_t>(ids.size()), dim});
        for (size_t i = 0; i < ids.size(); ++i) {
            const T* src = table.w.ptr() + static_cast<int64_t>(ids[i]) * dim;
            std::copy(src, src + dim, y.ptr() + static_cast<int64_t>(i) * dim);
        }
        return y;
    }

    void backward(const std::vector<int32_t>& ids, const Tensor<T>& dy) {
        for (size_t i = 0; i < ids.size(); ++i) {
            T* dst = table.g.ptr() + static_cast<int64_t>(ids[i]) * dim;
            const T* src = dy.ptr() + static_cast<int64_t>(i) * dim;
            for (int64_t j = 0; j < dim; ++j) dst[j] += src[j];
        }
    }

    void collect(const std::string& prefix, ParamList<T>& list) {
        list.push_back({prefix + ".table", &table});
    }
};

// Numerically stable row softmax in place over [n x d].
template <class T>
void softmax_rows(Tensor<T>& t, int64_t n, int64_t d) {
    for (int64_t i = 0; i < n; ++i) {
        T* row = t.ptr() + i * d;
        T mx = row[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double sum = 0;
        for (int64_t j = 0; j < d; ++j) {
            row[j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)));
            sum += row[j];
        }
        const T inv = static_cast<T>(1.0 / sum);
        for (int64_t j = 0; j < d; ++j) row[j] *= inv;
    }
}

// log(softmax(row)[idx]) for one row without materializing the softmax.
template <class T>
double log_softmax_at(const T* row, int64_t d, int64_t idx) {
    T mx = row[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (int64_t j = 0; j < d; ++j) sum += std::exp(static_cast<double>(row[j] - mx));
    return static_cast<double>(row[idx] - mx) - std::log(sum);
}

}  // namespace diffrec
