#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgnn {

/// Raised when a numeric operation produces a non-finite value.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles. Scalars are 1x1, vectors 1xN or Nx1.
struct Tensor {
    int rows{0};
    int cols{0};
    std::vector<double> data;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
        if (r <= 0 || c <= 0) throw std::invalid_argument("tensor dims must be positive");
    }
    Tensor(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
        if (r <= 0 || c <= 0) throw std::invalid_argument("tensor dims must be positive");
        if (data.size() != static_cast<size_t>(r) * c)
            throw std::invalid_argument("tensor data length does not match shape");
    }

    static Tensor zeros(int r, int c) { return Tensor(r, c); }
    static Tensor full(int r, int c, double v) {
        Tensor t(r, c);
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(double v) { return full(1, 1, v); }
    static Tensor row(std::initializer_list<double> vals) {
        Tensor t(1, static_cast<int>(vals.size()));
        std::copy(vals.begin(), vals.end(), t.data.begin());
        return t;
    }
    static Tensor from(std::initializer_list<std::initializer_list<double>> rows_init) {
        const int r = static_cast<int>(rows_init.size());
        const int c = static_cast<int>(rows_init.begin()->size());
        Tensor t(r, c);
        int i = 0;
        for (const auto& rr : rows_init) {
            if (static_cast<int>(rr.size()) != c)
                throw std::invalid_argument("ragged initializer");
            for (double v : rr) t.data[i++] = v;
        }
        return t;
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    int size() const { return rows * cols; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
    bool is_scalar() const { return rows == 1 && cols == 1; }
    double scalar_value() const {
        if (!is_scalar()) throw std::invalid_argument("tensor is not scalar, shape " + shape_str());
        return data[0];
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[" << rows << "x" << cols << "]";
        return os.str();
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double max_abs_diff(const Tensor& o) const {
        if (!same_shape(o)) throw std::invalid_argument("shape mismatch " + shape_str() + " vs " + o.shape_str());
        double m = 0.0;
        for (int i = 0; i < size(); ++i) m = std::max(m, std::abs(data[i] - o.data[i]));
        return m;
    }
};

inline void check_finite(const Tensor& t, const char* where) {
    if (!t.all_finite()) throw numeric_error(std::string("non-finite value produced by ") + where);
}

/// C = A * B, naive ikj loop. Sizes here are small (at most a few hundred rows).
inline Tensor matmul_plain(const Tensor& a, const Tensor& b) {
    if (a.cols != b.rows)
        throw std::invalid_argument("matmul shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor c(a.rows, b.cols);
    const int m = a.rows, k = a.cols, n = b.cols;
    for (int i = 0; i < m; ++i) {
        const double* arow = &a.data[static_cast<size_t>(i) * k];
        double* crow = &c.data[static_cast<size_t>(i) * n];
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(p) * n];
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

/// C = A^T * B
inline Tensor matmul_at_b(const Tensor& a, const Tensor& b) {
    if (a.rows != b.rows)
        throw std::invalid_argument("matmul_at_b shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor c(a.cols, b.cols);
    for (int p = 0; p < a.rows; ++p) {
        const double* arow = &a.data[static_cast<size_t>(p) * a.cols];
        const double* brow = &b.data[static_cast<size_t>(p) * b.cols];
        for (int i = 0; i < a.cols; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = &c.data[static_cast<size_t>(i) * b.cols];
            for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

/// C = A * B^T
inline Tensor matmul_a_bt(const Tensor& a, const Tensor& b) {
    if (a.cols != b.cols)
        throw std::invalid_argument("matmul_a_bt shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = &a.data[static_cast<size_t>(i) * a.cols];
        double* crow = &c.data[static_cast<size_t>(i) * b.rows];
        for (int j = 0; j < b.rows; ++j) {
            const double* brow = &b.data[static_cast<size_t>(j) * b.cols];
            double s = 0.0;
            for (int p = 0; p < a.cols; ++p) s += arow[p] * brow[p];
            crow[j] = s;
        }
    }
    return c;
}

}  // namespace cgnn
