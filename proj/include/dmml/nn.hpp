/* Copyright 2026 The dmml-sim Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dmml {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SimulationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Row-major dense matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), data_(std::move(values)) {
        if (data_.size() != rows_ * cols_)
            throw ConfigError("Matrix: value count does not match shape");
    }
    static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) return {};
        Matrix m(rows.size(), rows.front().size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != m.cols_) throw ConfigError("Matrix: ragged rows");
            std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    const std::vector<double>& storage() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    Matrix& operator+=(const Matrix& o) {
        check_same(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Matrix& add_scaled(const Matrix& o, double s) {
        check_same(o, "add_scaled");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
        return *this;
    }
    Matrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    void check_same(const Matrix& o, const char* what) const {
        if (!same_shape(o)) throw ConfigError(std::string("Matrix ") + what + ": shape mismatch");
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline double squared_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Named trainable tensor. The shape is fixed at construction; only values change.
class ParamBlock {
public:
    ParamBlock() = default;
    ParamBlock(std::string id, std::size_t rows, std::size_t cols)
        : id_(std::move(id)), value_(rows, cols) {}
    ParamBlock(std::string id, Matrix value) : id_(std::move(id)), value_(std::move(value)) {}

    const std::string& id() const { return id_; }
    std::vector<std::size_t> shape() const { return {value_.rows(), value_.cols()}; }
    std::size_t rows() const { return value_.rows(); }
    std::size_t cols() const { return value_.cols(); }
    std::size_t size() const { return value_.size(); }

    const Matrix& value() const { return value_; }
    std::span<double> values() { return value_.values(); }
    std::span<const double> values() const { return value_.values(); }

    // Replaces the contents with a same-shaped matrix.
    void assign(const Matrix& m) {
        if (!m.same_shape(value_)) throw ConfigError("ParamBlock " + id_ + ": shape is immutable");
        std::copy(m.values().begin(), m.values().end(), value_.values().begin());
    }

    friend bool operator==(const ParamBlock&, const ParamBlock&) = default;

private:
    std::string id_;
    Matrix value_;
};

// Gradient arrays keyed by ParamBlock id.
using GradientSet = std::map<std::string, Matrix>;

inline void accumulate(GradientSet& into, const std::string& id, const Matrix& g) {
    auto it = into.find(id);
    if (it == into.end()) into.emplace(id, g);
    else it->second += g;
}

// y = x W^T + b, with W [out x in] and b [1 x out].
inline Matrix dense_forward(const Matrix& x, const Matrix& w, const Matrix& b) {
    if (x.cols() != w.cols() || b.size() != w.rows())
        throw ConfigError("dense_forward: shape mismatch (x " + std::to_string(x.rows()) + "x" +
                          std::to_string(x.cols()) + ", W " + std::to_string(w.rows()) + "x" +
                          std::to_string(w.cols()) + ", b " + std::to_string(b.size()) + ")");
    const std::size_t n = x.rows(), in = x.cols(), out = w.rows();
    Matrix y(n, out);
    const auto bv = b.values();
    for (std::size_t r = 0; r < n; ++r) {
        const auto xr = x.row(r);
        auto yr = y.row(r);
        for (std::size_t o = 0; o < out; ++o) {
            const auto wr = w.row(o);
            double acc = bv[o];
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            yr[o] = acc;
        }
    }
    return y;
}

// y = x W^T without bias.
inline Matrix linear_forward(const Matrix& x, const Matrix& w) {
    return dense_forward(x, w, Matrix(1, w.rows()));
}

struct DenseGrads {
    Matrix dx;  // [batch x in]
    Matrix dw;  // [out x in]
    Matrix db;  // [1 x out]
};

// Backward pass of y = x W^T + b given dL/dy.
inline DenseGrads dense_backward(const Matrix& x, const Matrix& w, const Matrix& dy, bool need_dx = true) {
    const std::size_t n = x.rows(), in = x.cols(), out = w.rows();
    if (dy.rows() != n || dy.cols() != out) throw ConfigError("dense_backward: shape mismatch");
    DenseGrads g{need_dx ? Matrix(n, in) : Matrix(), Matrix(out, in), Matrix(1, out)};
    auto db = g.db.values();
    for (std::size_t r = 0; r < n; ++r) {
        const auto xr = x.row(r);
        const auto dyr = dy.row(r);
        for (std::size_t o = 0; o < out; ++o) {
            const double d = dyr[o];
            if (d == 0.0) continue;
            db[o] += d;
            auto dwr = g.dw.row(o);
            for (std::size_t i = 0; i < in; ++i) dwr[i] += d * xr[i];
            if (need_dx) {
                auto dxr = g.dx.row(r);
                const auto wr = w.row(o);
                for (std::size_t i = 0; i < in; ++i) dxr[i] += d * wr[i];
            }
        }
    }
    return g;
}

inline Matrix relu(const Matrix& x) {
    Matrix y = x;
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
    return y;
}

inline std::vector<double> relu(std::span<const double> x) {
    std::vector<double> y(x.begin(), x.end());
    for (double& v : y) v = v > 0.0 ? v : 0.0;
    return y;
}

// dL/dx for y = relu(x), given the pre-activation x.
inline Matrix relu_backward(const Matrix& pre, const Matrix& dy) {
    Matrix dx = dy;
    auto d = dx.values();
    const auto p = pre.values();
    for (std::size_t i = 0; i < d.size(); ++i)
        if (p[i] <= 0.0) d[i] = 0.0;
    return dx;
}

inline double log_sum_exp(std::span<const double> row) {
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    return mx + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> row) {
    const double mx = *std::max_element(row.begin(), row.end());
    std::vector<double> p(row.size());
    double s = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) s += (p[i] = std::exp(row[i] - mx));
    for (double& v : p) v /= s;
    return p;
}

inline Matrix softmax(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto pr = softmax(logits.row(r));
        std::copy(pr.begin(), pr.end(), p.row(r).begin());
    }
    return p;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

enum class OptimizerKind { sgd, adam };

struct AdamMoments {
    Matrix first;
    Matrix second;
    long step = 0;
};

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long steps = 0;
    std::map<std::string, AdamMoments> moments;
};

// Applies one update to every block that has an entry in grads. Blocks
// without a gradient are not touched. Adam bias correction uses the
// per-block step count, so a block skipped on some iterations still gets a
// correctly debiased update.
inline void optimizer_step(OptimizerState& state, std::span<ParamBlock* const> params, const GradientSet& grads) {
    ++state.steps;
    for (ParamBlock* p : params) {
        auto git = grads.find(p->id());
        if (git == grads.end()) continue;
        const Matrix& g = git->second;
        if (!g.same_shape(p->value()))
            throw ConfigError("optimizer_step: gradient shape mismatch for " + p->id());
        auto w = p->values();
        const auto gv = g.values();
        if (state.kind == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= state.learning_rate * gv[i];
            continue;
        }
        auto& mom = state.moments[p->id()];
        if (mom.first.empty()) {
            mom.first = Matrix(g.rows(), g.cols());
            mom.second = Matrix(g.rows(), g.cols());
        }
        ++mom.step;
        const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(mom.step));
        const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(mom.step));
        auto m1 = mom.first.values();
        auto m2 = mom.second.values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m1[i] = state.beta1 * m1[i] + (1.0 - state.beta1) * gv[i];
            m2[i] = state.beta2 * m2[i] + (1.0 - state.beta2) * gv[i] * gv[i];
            const double mhat = m1[i] / c1;
            const double vhat = m2[i] / c2;
            w[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace dmml
