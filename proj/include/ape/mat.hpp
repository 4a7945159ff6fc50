#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ape/common.hpp"

namespace ape {

// Dense row-major f32 matrix. Storage is 32-bit; every reduction that feeds
// a stored result accumulates in 64-bit, left to right, so results are
// reproducible per platform.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;  // rows * cols, row-major

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const float> row(std::size_t r) const {
        return {data.data() + r * cols, cols};
    }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// Per (query-row, key-column) visibility. Two representable families cover
// every mask this artifact needs: full, and causal-with-offset where column c
// is visible to row r iff c <= r + offset.
class RowMask {
public:
    static RowMask full(std::size_t rows, std::size_t cols) {
        if (cols == 0) {
            throw value_error("RowMask: a mask over zero key columns leaves rows fully masked");
        }
        return RowMask(Kind::kFull, rows, cols, 0);
    }

    static RowMask causal(std::size_t rows, std::size_t cols, std::size_t offset) {
        if (cols == 0) {
            throw value_error("RowMask: a mask over zero key columns leaves rows fully masked");
        }
        // Row 0 must see column 0, which holds for any offset >= 0.
        return RowMask(Kind::kCausal, rows, cols, offset);
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    bool visible(std::size_t r, std::size_t c) const {
        if (kind_ == Kind::kFull) return true;
        return c <= r + offset_;
    }

    // Index one past the last visible column for a row (visible columns are
    // always the contiguous range [0, end)).
    std::size_t visible_end(std::size_t r) const {
        if (kind_ == Kind::kFull) return cols_;
        const std::size_t end = r + offset_ + 1;
        return end < cols_ ? end : cols_;
    }

private:
    enum class Kind { kFull, kCausal };

    RowMask(Kind k, std::size_t r, std::size_t c, std::size_t off)
        : kind_(k), rows_(r), cols_(c), offset_(off) {}

    Kind kind_;
    std::size_t rows_;
    std::size_t cols_;
    std::size_t offset_;
};

// out[i][j] = sum_k a[i][k] * b[j][k]; b is interpreted transposed, which is
// the natural layout for Q K^T and for x W^T with weights stored out-major.
inline Mat matmul(const Mat& a, const Mat& b_transposed) {
    if (a.cols != b_transposed.cols) {
        throw shape_error("matmul: inner dimensions differ (" + std::to_string(a.cols) +
                          " vs " + std::to_string(b_transposed.cols) + ")");
    }
    Mat out(a.rows, b_transposed.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const float* arow = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < b_transposed.rows; ++j) {
            const float* brow = b_transposed.data.data() + j * b_transposed.cols;
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += static_cast<double>(arow[k]) * static_cast<double>(brow[k]);
            }
            out.data[i * out.cols + j] = static_cast<float>(acc);
        }
    }
    ensure_all_finite(out.data, "matmul");
    return out;
}

// max(x) + ln sum exp(x - max(x)). Exact for constant vectors: every shifted
// exponent is exp(0) = 1.
inline double logsumexp_row(std::span<const float> x) {
    if (x.empty()) {
        throw value_error("logsumexp_row: empty input");
    }
    double m = x[0];
    for (float v : x) m = std::max(m, static_cast<double>(v));
    double sum = 0.0;
    for (float v : x) sum += std::exp(static_cast<double>(v) - m);
    const double r = m + std::log(sum);
    ensure_finite(r, "logsumexp_row");
    return r;
}

inline double logsumexp_row(std::span<const double> x) {
    if (x.empty()) {
        throw value_error("logsumexp_row: empty input");
    }
    double m = x[0];
    for (double v : x) m = std::max(m, v);
    double sum = 0.0;
    for (double v : x) sum += std::exp(v - m);
    const double r = m + std::log(sum);
    ensure_finite(r, "logsumexp_row");
    return r;
}

// softmax(x / temperature) via max-subtraction.
inline std::vector<float> softmax_row(std::span<const float> x, double temperature) {
    if (temperature <= 0.0) {
        throw value_error("softmax_row: temperature must be > 0");
    }
    if (x.empty()) {
        throw value_error("softmax_row: empty input");
    }
    std::vector<double> scaled(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        scaled[i] = static_cast<double>(x[i]) / temperature;
    }
    double m = scaled[0];
    for (double v : scaled) m = std::max(m, v);
    double sum = 0.0;
    std::vector<double> e(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        e[i] = std::exp(scaled[i] - m);
        sum += e[i];
    }
    std::vector<float> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = static_cast<float>(e[i] / sum);
    }
    ensure_all_finite(out, "softmax_row");
    return out;
}

inline double l2_norm(std::span<const float> u) {
    double acc = 0.0;
    for (float v : u) acc += static_cast<double>(v) * static_cast<double>(v);
    const double r = std::sqrt(acc);
    ensure_finite(r, "l2_norm");
    return r;
}

inline double cosine(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size()) {
        throw shape_error("cosine: length mismatch");
    }
    const double nu = l2_norm(u);
    const double nv = l2_norm(v);
    if (nu == 0.0 || nv == 0.0) {
        throw value_error("cosine: zero-norm input");
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += static_cast<double>(u[i]) * static_cast<double>(v[i]);
    }
    double c = dot / (nu * nv);
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return c;
}

}  // namespace ape
