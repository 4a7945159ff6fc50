#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "ape/common.hpp"
#include "ape/mat.hpp"

namespace ape {

struct RopeParams {
    std::size_t head_dim = 0;
    double base = 10000.0;
};

// Where each block of tokens sits in the position axis.
//
// sequential: contexts are laid out one after another behind the prefix.
// parallel:   every context starts at the same index (position re-use), and
//             the query starts past the longest context so it never overlaps
//             any context positionally.
enum class Layout { sequential, parallel };

struct PositionPlan {
    std::size_t prefix_start = 0;
    std::vector<std::size_t> context_starts;
    std::size_t query_start = 0;
};

inline PositionPlan plan_positions(Layout mode, std::size_t prefix_len,
                                   std::span<const std::size_t> context_lens,
                                   std::size_t /*query_len*/ = 0) {
    PositionPlan plan;
    plan.prefix_start = 0;
    plan.context_starts.reserve(context_lens.size());
    if (mode == Layout::parallel) {
        std::size_t max_len = 0;
        for (std::size_t l : context_lens) max_len = std::max(max_len, l);
        for (std::size_t i = 0; i < context_lens.size(); ++i) {
            plan.context_starts.push_back(prefix_len);
        }
        plan.query_start = prefix_len + max_len;
    } else {
        std::size_t cursor = prefix_len;
        for (std::size_t l : context_lens) {
            plan.context_starts.push_back(cursor);
            cursor += l;
        }
        plan.query_start = cursor;
    }
    return plan;
}

// Rotary embedding over interleaved pairs (2i, 2i+1): each pair of row x at
// position p is rotated by angle p * base^(-2i/head_dim). Rotations preserve
// row norms, and q.k depends only on the position difference, which is what
// lets every parallel context occupy the same positional range.
inline Mat apply_rope(const Mat& x, std::span<const std::size_t> positions,
                      const RopeParams& params) {
    if (params.head_dim % 2 != 0) {
        throw value_error("apply_rope: head_dim must be even");
    }
    if (params.base <= 1.0) {
        throw value_error("apply_rope: base must be > 1");
    }
    if (x.cols != params.head_dim) {
        throw shape_error("apply_rope: x.cols != head_dim");
    }
    if (positions.size() != x.rows) {
        throw shape_error("apply_rope: positions length != x.rows");
    }
    Mat out(x.rows, x.cols);
    const std::size_t half = params.head_dim / 2;
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double pos = static_cast<double>(positions[r]);
        for (std::size_t i = 0; i < half; ++i) {
            const double freq =
                std::pow(params.base, -2.0 * static_cast<double>(i) /
                                          static_cast<double>(params.head_dim));
            const double angle = pos * freq;
            const double c = std::cos(angle);
            const double s = std::sin(angle);
            const double x0 = x.at(r, 2 * i);
            const double x1 = x.at(r, 2 * i + 1);
            out.at(r, 2 * i) = static_cast<float>(x0 * c - x1 * s);
            out.at(r, 2 * i + 1) = static_cast<float>(x0 * s + x1 * c);
        }
    }
    ensure_all_finite(out.data, "apply_rope");
    return out;
}

}  // namespace ape
