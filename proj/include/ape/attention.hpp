#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ape/common.hpp"
#include "ape/mat.hpp"

namespace ape {

enum class ScalingMode { aggregate, per_context };

// Knobs of adaptive parallel encoding. temperature divides context logits
// (< 1 sharpens the within-context distribution), scale damps the context
// LogSumExp before the cross-segment merge (< 1 shrinks its magnitude).
struct ApeConfig {
    double temperature = 1.0;        // in (0, 1]
    double scale = 1.0;              // in (0, 1]
    ScalingMode scaling_mode = ScalingMode::aggregate;
    std::vector<std::uint8_t> prefix_tokens;

    void validate() const {
        if (!(temperature > 0.0) || temperature > 1.0) {
            throw value_error("ApeConfig: temperature must be in (0, 1]");
        }
        if (!(scale > 0.0) || scale > 1.0) {
            throw value_error("ApeConfig: scale must be in (0, 1]");
        }
    }
};

// One segment's contribution to a query block: the within-segment softmax
// output (rows are convex combinations of the segment's value rows) plus the
// per-row LogSumExp of the segment's scaled logits. (out, lse) is all a later
// merge needs; the segment's size drops out.
struct PartialAttention {
    Mat out;                  // n_query_rows x head_dim
    std::vector<double> lse;  // n_query_rows
};

// Single-head K/V pair for one segment.
struct SegmentKv {
    Mat k;
    Mat v;
};

// -----------------------------------------------------------------------
// Monolithic reference: O = Softmax(Q K^T / sqrt(d) + mask) V.
// Kept independent of the partial/merge path below; equivalence suites
// compare the two routes.
// -----------------------------------------------------------------------
inline Mat attend_full(const Mat& q, const Mat& k, const Mat& v, const RowMask& mask) {
    if (q.cols != k.cols) {
        throw shape_error("attend_full: q.cols != k.cols");
    }
    if (k.rows != v.rows) {
        throw shape_error("attend_full: k.rows != v.rows");
    }
    if (mask.rows() != q.rows || mask.cols() != k.rows) {
        throw shape_error("attend_full: mask shape mismatch");
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols));
    Mat out(q.rows, v.cols);
    std::vector<float> logits;
    for (std::size_t r = 0; r < q.rows; ++r) {
        const std::size_t m = mask.visible_end(r);
        if (m == 0) {
            throw value_error("attend_full: fully masked query row");
        }
        logits.assign(m, 0.0f);
        for (std::size_t c = 0; c < m; ++c) {
            double dot = 0.0;
            for (std::size_t j = 0; j < q.cols; ++j) {
                dot += static_cast<double>(q.at(r, j)) * static_cast<double>(k.at(c, j));
            }
            logits[c] = static_cast<float>(dot * inv_sqrt_d);
        }
        const std::vector<float> w = softmax_row(logits, 1.0);
        for (std::size_t j = 0; j < v.cols; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < m; ++c) {
                acc += static_cast<double>(w[c]) * static_cast<double>(v.at(c, j));
            }
            out.at(r, j) = static_cast<float>(acc);
        }
    }
    ensure_all_finite(out.data, "attend_full");
    return out;
}

// -----------------------------------------------------------------------
// Hierarchical building block. For segment h:
//
//   out_h = Softmax(Q K_h^T / (T sqrt(d))) V_h
//   lse_h = LogSumExp(Q K_h^T / (T sqrt(d)))      (per query row)
//
// The within-segment softmax reuses softmax_row's shifted exponentials, and
// lse reuses the same shifted sum, so a single-segment decomposition merged
// back together reproduces attend_full bit for bit at T = 1.
// -----------------------------------------------------------------------
inline PartialAttention partial_attention(const Mat& q, const Mat& k_seg, const Mat& v_seg,
                                          const RowMask& mask, double temperature) {
    if (temperature <= 0.0) {
        throw value_error("partial_attention: temperature must be > 0");
    }
    if (q.cols != k_seg.cols) {
        throw shape_error("partial_attention: q.cols != k.cols");
    }
    if (k_seg.rows != v_seg.rows) {
        throw shape_error("partial_attention: k.rows != v.rows");
    }
    if (mask.rows() != q.rows || mask.cols() != k_seg.rows) {
        throw shape_error("partial_attention: mask shape mismatch");
    }
    const double inv_scale = 1.0 / (temperature * std::sqrt(static_cast<double>(q.cols)));
    PartialAttention part;
    part.out = Mat(q.rows, v_seg.cols);
    part.lse.assign(q.rows, 0.0);
    std::vector<float> logits;
    for (std::size_t r = 0; r < q.rows; ++r) {
        const std::size_t m = mask.visible_end(r);
        if (m == 0) {
            throw value_error("partial_attention: fully masked query row");
        }
        logits.assign(m, 0.0f);
        for (std::size_t c = 0; c < m; ++c) {
            double dot = 0.0;
            for (std::size_t j = 0; j < q.cols; ++j) {
                dot += static_cast<double>(q.at(r, j)) *
                       static_cast<double>(k_seg.at(c, j));
            }
            logits[c] = static_cast<float>(dot * inv_scale);
        }
        double mx = logits[0];
        for (float v : logits) mx = std::max(mx, static_cast<double>(v));
        double sum = 0.0;
        std::vector<double> e(m);
        for (std::size_t c = 0; c < m; ++c) {
            e[c] = std::exp(static_cast<double>(logits[c]) - mx);
            sum += e[c];
        }
        part.lse[r] = mx + std::log(sum);
        for (std::size_t j = 0; j < v_seg.cols; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < m; ++c) {
                acc += (e[c] / sum) * static_cast<double>(v_seg.at(c, j));
            }
            part.out.at(r, j) = static_cast<float>(acc);
        }
        ensure_finite(part.lse[r], "partial_attention lse");
    }
    ensure_all_finite(part.out.data, "partial_attention");
    return part;
}

// Adjustment applied to a partial's per-row lse before merging:
// adjusted = mul * lse + add. APE's scaling factor is mul = S.
struct LseAdjust {
    double mul = 1.0;
    double add = 0.0;
};

// -----------------------------------------------------------------------
// Cross-segment merge:
//
//   O = Softmax(lse_1, ..., lse_S) x [out_1, ..., out_S]   (per query row)
//
// computed max-shifted, so segment order only reassociates the sum.
// -----------------------------------------------------------------------
inline Mat merge(std::span<const PartialAttention> partials,
                 std::span<const LseAdjust> adjusts = {}) {
    if (partials.empty()) {
        throw value_error("merge: no partials");
    }
    if (!adjusts.empty() && adjusts.size() != partials.size()) {
        throw shape_error("merge: adjusts size mismatch");
    }
    const std::size_t n = partials[0].out.rows;
    const std::size_t d = partials[0].out.cols;
    for (const PartialAttention& p : partials) {
        if (p.out.rows != n || p.out.cols != d) {
            throw shape_error("merge: partials disagree on query rows or head_dim");
        }
        if (p.lse.size() != n) {
            throw shape_error("merge: lse length != query rows");
        }
    }
    auto adjusted = [&](std::size_t s, std::size_t r) {
        const double raw = partials[s].lse[r];
        if (adjusts.empty()) return raw;
        return adjusts[s].mul * raw + adjusts[s].add;
    };
    Mat out(n, d);
    std::vector<double> w(partials.size());
    for (std::size_t r = 0; r < n; ++r) {
        double mx = adjusted(0, r);
        for (std::size_t s = 1; s < partials.size(); ++s) {
            mx = std::max(mx, adjusted(s, r));
        }
        double sum = 0.0;
        for (std::size_t s = 0; s < partials.size(); ++s) {
            w[s] = std::exp(adjusted(s, r) - mx);
            sum += w[s];
        }
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t s = 0; s < partials.size(); ++s) {
                acc += (w[s] / sum) * static_cast<double>(partials[s].out.at(r, j));
            }
            out.at(r, j) = static_cast<float>(acc);
        }
    }
    ensure_all_finite(out.data, "merge");
    return out;
}

// -----------------------------------------------------------------------
// Sequential attention: the query block attends the concatenation
// [prefix | contexts... | self] as one causal sequence. Prefix and context
// columns are fully visible; visibility inside the trailing self block is
// given by self_mask (causal during prefill, full for a single generated
// row). This is the monolithic route the hierarchical paths are checked
// against.
// -----------------------------------------------------------------------
inline Mat sequential_attention(const Mat& q, const SegmentKv* prefix,
                                std::span<const SegmentKv> contexts,
                                const SegmentKv& self_kv, const RowMask& self_mask) {
    std::size_t total = self_kv.k.rows;
    if (prefix != nullptr) total += prefix->k.rows;
    for (const SegmentKv& c : contexts) total += c.k.rows;

    Mat k_all(total, q.cols);
    Mat v_all(total, self_kv.v.cols);
    std::size_t row = 0;
    auto append = [&](const SegmentKv& seg) {
        if (seg.k.rows != seg.v.rows) {
            throw shape_error("sequential_attention: segment k/v row mismatch");
        }
        for (std::size_t r = 0; r < seg.k.rows; ++r, ++row) {
            std::copy(seg.k.row(r).begin(), seg.k.row(r).end(), k_all.row(row).begin());
            std::copy(seg.v.row(r).begin(), seg.v.row(r).end(), v_all.row(row).begin());
        }
    };
    if (prefix != nullptr) append(*prefix);
    for (const SegmentKv& c : contexts) append(c);
    const std::size_t non_self = row;
    append(self_kv);

    if (self_mask.rows() != q.rows || self_mask.cols() != self_kv.k.rows) {
        throw shape_error("sequential_attention: self mask shape mismatch");
    }
    // Composite visibility is still causal-with-offset in concatenated
    // coordinates as long as the self block itself is.
    const std::size_t self_off = self_mask.visible_end(0) == self_kv.k.rows
                                     ? self_kv.k.rows  // full self visibility
                                     : self_mask.visible_end(0) - 1;
    RowMask mask = self_off >= self_kv.k.rows
                       ? RowMask::full(q.rows, total)
                       : RowMask::causal(q.rows, total, non_self + self_off);
    return attend_full(q, k_all, v_all, mask);
}

// -----------------------------------------------------------------------
// APE attention over already-computed partials. Context partials carry
// temperature-T logits, prefix/self partials temperature 1 (caller contract).
//
// aggregate mode (one LogSumExp over all context tokens):
//     L_ctx = LSE(lse_1, ..., lse_N)   per row
//     ctx_out = sum_i exp(lse_i - L_ctx) out_i
//     O = Softmax(lse_P, S * L_ctx, lse_self) x [out_P, ctx_out, out_self]
//
// per-context mode (each context damped individually):
//     O = Softmax(lse_P, S*lse_1, ..., S*lse_N, lse_self)
//           x [out_P, out_1, ..., out_N, out_self]
//
// The two coincide when N == 1 or S == 1; with T = S = 1 both collapse to
// the plain hierarchical merge and hence to sequential attention over the
// same visibility.
// -----------------------------------------------------------------------
inline Mat ape_attention(const PartialAttention* prefix,
                         std::span<const PartialAttention> contexts,
                         const PartialAttention& self_part, const ApeConfig& cfg) {
    cfg.validate();
    if (contexts.empty()) {
        throw value_error("ape_attention: context list must be nonempty");
    }

    std::vector<PartialAttention> merged;
    std::vector<LseAdjust> adjusts;
    if (cfg.scaling_mode == ScalingMode::aggregate) {
        const std::size_t n = contexts[0].out.rows;
        const std::size_t d = contexts[0].out.cols;
        PartialAttention ctx;
        ctx.out = Mat(n, d);
        ctx.lse.assign(n, 0.0);
        std::vector<double> lses(contexts.size());
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t i = 0; i < contexts.size(); ++i) {
                if (contexts[i].out.rows != n || contexts[i].out.cols != d) {
                    throw shape_error("ape_attention: context partial shape mismatch");
                }
                lses[i] = contexts[i].lse[r];
            }
            const double l_ctx = logsumexp_row(std::span<const double>(lses));
            ctx.lse[r] = l_ctx;
            for (std::size_t j = 0; j < d; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < contexts.size(); ++i) {
                    acc += std::exp(lses[i] - l_ctx) *
                           static_cast<double>(contexts[i].out.at(r, j));
                }
                ctx.out.at(r, j) = static_cast<float>(acc);
            }
        }
        if (prefix != nullptr) {
            merged.push_back(*prefix);
            adjusts.push_back(LseAdjust{});
        }
        merged.push_back(std::move(ctx));
        adjusts.push_back(LseAdjust{cfg.scale, 0.0});
        merged.push_back(self_part);
        adjusts.push_back(LseAdjust{});
    } else {
        if (prefix != nullptr) {
            merged.push_back(*prefix);
            adjusts.push_back(LseAdjust{});
        }
        for (const PartialAttention& c : contexts) {
            merged.push_back(c);
            adjusts.push_back(LseAdjust{cfg.scale, 0.0});
        }
        merged.push_back(self_part);
        adjusts.push_back(LseAdjust{});
    }
    return merge(merged, adjusts);
}

// -----------------------------------------------------------------------
// Flat reference path: evaluates the refined attention weights token by
// token, in double, with no max-shifting. Aggregate mode, with
// Z = sum over all context tokens of exp(q k / (T sqrt(d))):
//
//   w(context token) = exp(q k / (T sqrt(d))) * Z^(S-1) / D
//   w(other token)   = exp(q k / sqrt(d))               / D
//   D = sum_P exp(q k_P / sqrt(d)) + Z^S + sum_self exp(q k / sqrt(d))
//
// per-context mode replaces Z^S by sum_i Z_i^S and the context numerator by
// exp(.) * Z_i^(S-1). Not numerically hardened; it exists so the efficient
// two-pass path above has an in-library cross-check.
// -----------------------------------------------------------------------
inline Mat ape_attention_flat(const Mat& q, const SegmentKv* prefix,
                              std::span<const SegmentKv> contexts,
                              const SegmentKv& self_kv, const RowMask& self_mask,
                              const ApeConfig& cfg) {
    cfg.validate();
    if (contexts.empty()) {
        throw value_error("ape_attention_flat: context list must be nonempty");
    }
    if (self_mask.rows() != q.rows || self_mask.cols() != self_kv.k.rows) {
        throw shape_error("ape_attention_flat: self mask shape mismatch");
    }
    const double sqrt_d = std::sqrt(static_cast<double>(q.cols));
    const double t = cfg.temperature;
    const double s = cfg.scale;
    Mat out(q.rows, self_kv.v.cols);

    auto dot = [&](std::size_t r, const Mat& k, std::size_t c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < q.cols; ++j) {
            acc += static_cast<double>(q.at(r, j)) * static_cast<double>(k.at(c, j));
        }
        return acc;
    };

    for (std::size_t r = 0; r < q.rows; ++r) {
        std::vector<double> z_per_ctx(contexts.size(), 0.0);
        double z_all = 0.0;
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            for (std::size_t c = 0; c < contexts[i].k.rows; ++c) {
                z_per_ctx[i] += std::exp(dot(r, contexts[i].k, c) / (t * sqrt_d));
            }
            z_all += z_per_ctx[i];
        }
        double denom_other = 0.0;
        if (prefix != nullptr) {
            for (std::size_t c = 0; c < prefix->k.rows; ++c) {
                denom_other += std::exp(dot(r, prefix->k, c) / sqrt_d);
            }
        }
        const std::size_t self_end = self_mask.visible_end(r);
        for (std::size_t c = 0; c < self_end; ++c) {
            denom_other += std::exp(dot(r, self_kv.k, c) / sqrt_d);
        }
        double denom_ctx = 0.0;
        if (cfg.scaling_mode == ScalingMode::aggregate) {
            denom_ctx = std::pow(z_all, s);
        } else {
            for (double z : z_per_ctx) denom_ctx += std::pow(z, s);
        }
        const double denom = denom_other + denom_ctx;
        ensure_finite(denom, "ape_attention_flat denominator");

        std::vector<double> acc(self_kv.v.cols, 0.0);
        if (prefix != nullptr) {
            for (std::size_t c = 0; c < prefix->k.rows; ++c) {
                const double w = std::exp(dot(r, prefix->k, c) / sqrt_d) / denom;
                for (std::size_t j = 0; j < acc.size(); ++j) {
                    acc[j] += w * static_cast<double>(prefix->v.at(c, j));
                }
            }
        }
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            const double z = cfg.scaling_mode == ScalingMode::aggregate ? z_all : z_per_ctx[i];
            const double damp = std::pow(z, s - 1.0);
            for (std::size_t c = 0; c < contexts[i].k.rows; ++c) {
                const double w =
                    std::exp(dot(r, contexts[i].k, c) / (t * sqrt_d)) * damp / denom;
                for (std::size_t j = 0; j < acc.size(); ++j) {
                    acc[j] += w * static_cast<double>(contexts[i].v.at(c, j));
                }
            }
        }
        for (std::size_t c = 0; c < self_end; ++c) {
            const double w = std::exp(dot(r, self_kv.k, c) / sqrt_d) / denom;
            for (std::size_t j = 0; j < acc.size(); ++j) {
                acc[j] += w * static_cast<double>(self_kv.v.at(c, j));
            }
        }
        for (std::size_t j = 0; j < acc.size(); ++j) {
            out.at(r, j) = static_cast<float>(acc[j]);
        }
    }
    ensure_all_finite(out.data, "ape_attention_flat");
    return out;
}

// -----------------------------------------------------------------------
// Analytic prefill cost, in multiply-accumulates, attention terms only
// (Q K^T plus weights x V over the dense rows x cols rectangle; per-token
// projections are identical per processed token across modes and excluded
// so mode ratios stay exact in integer arithmetic).
//
//   sequential:              rows = cols = P + sum l_i + q
//   parallel, precached:     rows = q,  cols = P + sum l_i + q
//   parallel, not precached: adds the encode work P^2 + sum l_i (P + l_i)
//
// Each rows x cols attention block costs 2 * rows * cols * head_dim MACs
// per head per layer.
// -----------------------------------------------------------------------
struct ModelDims {
    std::uint64_t n_layers = 0;
    std::uint64_t n_heads = 0;
    std::uint64_t head_dim = 0;
};

enum class FlopMode { sequential, parallel };

inline std::uint64_t flop_count(FlopMode mode, bool precached, std::uint64_t prefix_len,
                                std::span<const std::uint64_t> context_lens,
                                std::uint64_t query_len, const ModelDims& dims) {
    const unsigned __int128 per_block =
        static_cast<unsigned __int128>(2) * dims.n_layers * dims.n_heads * dims.head_dim;
    unsigned __int128 total_ctx = 0;
    for (std::uint64_t l : context_lens) total_ctx += l;
    const unsigned __int128 all = total_ctx + prefix_len + query_len;

    unsigned __int128 area = 0;
    if (mode == FlopMode::sequential) {
        area = all * all;
    } else {
        area = all * query_len;
        if (!precached) {
            area += static_cast<unsigned __int128>(prefix_len) * prefix_len;
            for (std::uint64_t l : context_lens) {
                area += static_cast<unsigned __int128>(l) * (prefix_len + l);
            }
        }
    }
    const unsigned __int128 result = area * per_block;
    if (result > static_cast<unsigned __int128>(UINT64_MAX)) {
        throw value_error("flop_count: result exceeds 64-bit range");
    }
    return static_cast<std::uint64_t>(result);
}

}  // namespace ape
