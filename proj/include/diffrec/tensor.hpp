#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffrec {

// Dense row-major tensor over float (training) or double (verification mode).
template <class T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(static_cast<size_t>(count(shape)), T(0)) {}
    Tensor(std::vector<int64_t> s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (count(shape) != static_cast<int64_t>(data.size())) {
            throw std::invalid_argument("tensor: value count does not match shape");
        }
    }

    static int64_t count(const std::vector<int64_t>& s) {
        return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<int64_t>());
    }
    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int64_t rows() const { return shape.at(0); }
    int64_t cols() const { return shape.size() >= 2 ? shape.at(1) : 1; }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
    T& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
    const T& at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols() + j)]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }
};

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<MatRM<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const MatRM<T>>;

template <class T>
MatMap<T> as_matrix(Tensor<T>& t, int64_t r, int64_t c) {
    return MatMap<T>(t.ptr(), r, c);
}
template <class T>
ConstMatMap<T> as_matrix(const Tensor<T>& t, int64_t r, int64_t c) {
    return ConstMatMap<T>(t.ptr(), r, c);
}

// C = A(m x k) * B(k x n)
template <class T>
void matmul(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, int64_t m, int64_t k, int64_t n) {
    as_matrix(c, m, n).noalias() = as_matrix(a, m, k) * as_matrix(b, k, n);
}

// C += A(m x k) * B(k x n)
template <class T>
void matmul_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, int64_t m, int64_t k, int64_t n) {
    as_matrix(c, m, n).noalias() += as_matrix(a, m, k) * as_matrix(b, k, n);
}

// C = A^T(m x k) * B(m x n) with A stored (m x k): result (k x n)
template <class T>
void matmul_tn_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, int64_t m, int64_t k, int64_t n) {
    as_matrix(c, k, n).noalias() += as_matrix(a, m, k).transpose() * as_matrix(b, m, n);
}

// C = A(m x k) * B^T(n x k): result (m x n)
template <class T>
void matmul_nt(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, int64_t m, int64_t k, int64_t n) {
    as_matrix(c, m, n).noalias() = as_matrix(a, m, k) * as_matrix(b, n, k).transpose();
}

template <class T>
void require_finite(const Tensor<T>& t, const std::string& what) {
    if (!t.all_finite()) {
        throw std::runtime_error("non-finite values in " + what);
    }
}

}  // namespace diffrec
