#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ape/common.hpp"
#include "ape/mat.hpp"
#include "ape/model.hpp"

namespace ape {

// Per-position mean and standard deviation of one scalar statistic at one
// layer. Downstream plotting puts the position axis on a log scale.
struct ProfileReport {
    std::size_t layer = 0;
    std::vector<double> mean;
    std::vector<double> stddev;
};

enum class StateKind { key, value };

namespace detail {

inline std::size_t min_rows(std::span<const Mat> states) {
    std::size_t n = states.empty() ? 0 : states[0].rows;
    for (const Mat& m : states) n = std::min(n, m.rows);
    return n;
}

inline void mean_std(std::span<const double> xs, double& mean, double& stddev) {
    double sum = 0.0;
    for (double x : xs) sum += x;
    mean = sum / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    stddev = std::sqrt(std::max(var, 0.0));
}

}  // namespace detail

// Mean pairwise cosine between the same position's state vectors across
// samples. states[s] holds one sample's per-position vectors as rows.
inline ProfileReport similarity_profile_from_states(std::span<const Mat> states,
                                                    std::size_t layer) {
    if (states.size() < 2) {
        throw value_error("similarity profile: need at least 2 samples");
    }
    const std::size_t n = detail::min_rows(states);
    ProfileReport rep;
    rep.layer = layer;
    rep.mean.resize(n);
    rep.stddev.resize(n);
    std::vector<double> cs;
    for (std::size_t p = 0; p < n; ++p) {
        cs.clear();
        for (std::size_t a = 0; a < states.size(); ++a) {
            for (std::size_t b = a + 1; b < states.size(); ++b) {
                cs.push_back(cosine(states[a].row(p), states[b].row(p)));
            }
        }
        detail::mean_std(cs, rep.mean[p], rep.stddev[p]);
    }
    return rep;
}

// Cosine of the position-0 state against each later position, per sample.
inline ProfileReport initial_vs_rest_from_states(std::span<const Mat> states,
                                                 std::size_t layer) {
    if (states.empty()) {
        throw value_error("initial-vs-rest profile: need at least 1 sample");
    }
    const std::size_t n = detail::min_rows(states);
    ProfileReport rep;
    rep.layer = layer;
    rep.mean.resize(n);
    rep.stddev.resize(n);
    std::vector<double> cs;
    for (std::size_t p = 0; p < n; ++p) {
        cs.clear();
        for (const Mat& m : states) {
            cs.push_back(cosine(m.row(0), m.row(p)));
        }
        detail::mean_std(cs, rep.mean[p], rep.stddev[p]);
    }
    return rep;
}

inline ProfileReport magnitude_from_states(std::span<const Mat> states, std::size_t layer) {
    if (states.empty()) {
        throw value_error("magnitude profile: need at least 1 sample");
    }
    const std::size_t n = detail::min_rows(states);
    ProfileReport rep;
    rep.layer = layer;
    rep.mean.resize(n);
    rep.stddev.resize(n);
    std::vector<double> ns;
    for (std::size_t p = 0; p < n; ++p) {
        ns.clear();
        for (const Mat& m : states) ns.push_back(l2_norm(m.row(p)));
        detail::mean_std(ns, rep.mean[p], rep.stddev[p]);
    }
    return rep;
}

namespace detail {

inline std::vector<Mat> layer_states(const Model& model,
                                     std::span<const TokenSeq> samples, std::size_t layer,
                                     StateKind kind) {
    if (layer >= model.spec().n_layers) {
        throw value_error("diagnostics: layer out of range");
    }
    std::vector<Mat> states;
    states.reserve(samples.size());
    for (const TokenSeq& s : samples) {
        auto captured = model.capture_states(s, nullptr, 0);
        states.push_back(kind == StateKind::key ? std::move(captured[layer].k)
                                                : std::move(captured[layer].v));
    }
    return states;
}

}  // namespace detail

inline ProfileReport key_similarity_profile(const Model& model,
                                            std::span<const TokenSeq> samples,
                                            std::size_t layer) {
    const std::vector<Mat> states =
        detail::layer_states(model, samples, layer, StateKind::key);
    return similarity_profile_from_states(states, layer);
}

inline ProfileReport initial_vs_rest_similarity(const Model& model,
                                                std::span<const TokenSeq> samples,
                                                std::size_t layer, StateKind kind) {
    const std::vector<Mat> states = detail::layer_states(model, samples, layer, kind);
    return initial_vs_rest_from_states(states, layer);
}

inline ProfileReport magnitude_profile(const Model& model, std::span<const TokenSeq> samples,
                                       std::size_t layer, StateKind kind) {
    const std::vector<Mat> states = detail::layer_states(model, samples, layer, kind);
    return magnitude_from_states(states, layer);
}

// Raw dot products of the last token's query state against every past key at
// one layer; mean/std taken across heads.
inline ProfileReport qk_product_profile(const Model& model, const TokenSeq& sample,
                                        std::size_t layer) {
    if (sample.tokens.empty()) {
        throw value_error("qk_product_profile: empty sample");
    }
    if (layer >= model.spec().n_layers) {
        throw value_error("diagnostics: layer out of range");
    }
    const auto captured = model.capture_states(sample, nullptr, 0);
    const Mat& q = captured[layer].q;
    const Mat& k = captured[layer].k;
    const std::size_t n = q.rows;
    const std::size_t d = model.spec().head_dim;
    ProfileReport rep;
    rep.layer = layer;
    rep.mean.resize(n);
    rep.stddev.resize(n);
    std::vector<double> dots(model.spec().n_heads);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t h = 0; h < model.spec().n_heads; ++h) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                acc += static_cast<double>(q.at(n - 1, h * d + j)) *
                       static_cast<double>(k.at(p, h * d + j));
            }
            dots[h] = acc;
        }
        detail::mean_std(dots, rep.mean[p], rep.stddev[p]);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Rotation perturbation of initial-position key states.
// ---------------------------------------------------------------------------

enum class AxisMode { shared, per_context };

struct RotationRow {
    double degree = 0.0;
    AxisMode axis_mode = AxisMode::shared;
    DecodeMode mode = DecodeMode::parallel;
    double divergence = 0.0;  // L2 of final-position logits vs unrotated
};

namespace detail {

// Rotation by theta inside the seeded 2-plane spanned by (e1, e2); the
// orthogonal complement is untouched. At theta = 0 both correction terms are
// exactly zero, so v comes back bit-identical.
inline void rotate_in_plane(std::span<float> v, std::span<const double> e1,
                            std::span<const double> e2, double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        a += static_cast<double>(v[i]) * e1[i];
        b += static_cast<double>(v[i]) * e2[i];
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double delta = (c - 1.0) * (a * e1[i] + b * e2[i]) + s * (a * e2[i] - b * e1[i]);
        v[i] = static_cast<float>(static_cast<double>(v[i]) + delta);
    }
}

inline void random_plane(SplitMix64& rng, std::size_t dim, std::vector<double>& e1,
                         std::vector<double>& e2) {
    e1.resize(dim);
    e2.resize(dim);
    double n1 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        e1[i] = rng.next_gaussian();
        n1 += e1[i] * e1[i];
    }
    n1 = std::sqrt(n1);
    for (double& x : e1) x /= n1;
    double dot = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        e2[i] = rng.next_gaussian();
        dot += e2[i] * e1[i];
    }
    for (std::size_t i = 0; i < dim; ++i) e2[i] -= dot * e1[i];
    for (double x : e2) n2 += x * x;
    n2 = std::sqrt(n2);
    for (double& x : e2) x /= n2;
}

}  // namespace detail

// Rotates initial-position key states by each requested angle and reports the
// L2 divergence of the final query logits against the unrotated decode. In
// sequential mode there is one initial position (the first context's first
// token); in parallel mode every context contributes one. Plane construction
// consumes the rng in (context, layer, head) order for per-context axes and
// (layer, head) order for a shared axis.
inline std::vector<RotationRow> rotation_experiment(
    const Model& model, std::span<const TokenSeq> contexts, const TokenSeq& query,
    std::span<const double> degrees, AxisMode axis_mode, DecodeMode mode,
    std::uint64_t seed) {
    if (contexts.empty()) {
        throw value_error("rotation_experiment: need at least one context");
    }
    if (mode != DecodeMode::sequential && mode != DecodeMode::parallel) {
        throw value_error("rotation_experiment: mode must be sequential or parallel");
    }
    for (double d : degrees) {
        if (!(d >= 0.0) || d > 360.0) {
            throw value_error("rotation_experiment: degree outside [0, 360]");
        }
    }

    const Layout layout =
        mode == DecodeMode::sequential ? Layout::sequential : Layout::parallel;
    std::vector<std::size_t> lens;
    for (const TokenSeq& c : contexts) lens.push_back(c.tokens.size());
    const PositionPlan plan = plan_positions(layout, 0, lens, query.tokens.size());

    std::vector<KvSegment> base;
    base.reserve(contexts.size());
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        base.push_back(model.encode_segment(contexts[i], nullptr, plan.context_starts[i]));
    }

    const ApeConfig cfg;  // T = S = 1
    auto final_logits = [&](const std::vector<KvSegment>& segs) {
        std::vector<const KvSegment*> ptrs;
        for (const KvSegment& s : segs) ptrs.push_back(&s);
        const DecodeResult r = model.decode_with_cache(query, nullptr, ptrs, mode, cfg, 0);
        std::vector<float> row(r.prefill_logits.row(r.prefill_logits.rows - 1).begin(),
                               r.prefill_logits.row(r.prefill_logits.rows - 1).end());
        return row;
    };
    const std::vector<float> baseline = final_logits(base);

    // Which segments carry an "initial" key state under this mode.
    std::vector<std::size_t> targets;
    if (mode == DecodeMode::sequential) {
        targets.push_back(0);
    } else {
        for (std::size_t i = 0; i < contexts.size(); ++i) targets.push_back(i);
    }

    const std::size_t n_layers = model.spec().n_layers;
    const std::size_t n_heads = model.spec().n_heads;
    const std::size_t dim = model.spec().head_dim;

    std::vector<RotationRow> rows;
    for (double degree : degrees) {
        const double theta = degree * 3.14159265358979323846 / 180.0;
        std::vector<KvSegment> rotated = base;
        SplitMix64 rng(seed);
        std::vector<std::vector<double>> shared_e1, shared_e2;
        if (axis_mode == AxisMode::shared) {
            shared_e1.resize(n_layers * n_heads);
            shared_e2.resize(n_layers * n_heads);
            for (std::size_t l = 0; l < n_layers; ++l) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    detail::random_plane(rng, dim, shared_e1[l * n_heads + h],
                                         shared_e2[l * n_heads + h]);
                }
            }
        }
        std::vector<double> e1, e2;
        for (std::size_t t : targets) {
            for (std::size_t l = 0; l < n_layers; ++l) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    if (axis_mode == AxisMode::shared) {
                        detail::rotate_in_plane(rotated[t].key_at(l, h, 0),
                                                shared_e1[l * n_heads + h],
                                                shared_e2[l * n_heads + h], theta);
                    } else {
                        detail::random_plane(rng, dim, e1, e2);
                        detail::rotate_in_plane(rotated[t].key_at(l, h, 0), e1, e2, theta);
                    }
                }
            }
        }
        const std::vector<float> logits = final_logits(rotated);
        double acc = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const double d = static_cast<double>(logits[i]) - static_cast<double>(baseline[i]);
            acc += d * d;
        }
        rows.push_back(RotationRow{degree, axis_mode, mode, std::sqrt(acc)});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// LSE-vs-temperature curve: per-row LogSumExp of Q K^T / (T sqrt(d)) for each
// temperature in the grid.
// ---------------------------------------------------------------------------

struct LseCurve {
    std::vector<double> temperatures;
    std::vector<std::vector<double>> lse;  // [t][row]
};

inline LseCurve lse_vs_temperature(const Mat& q, const Mat& k,
                                   std::span<const double> t_grid) {
    for (double t : t_grid) {
        if (!(t > 0.0) || t > 1.0) {
            throw value_error("lse_vs_temperature: temperatures must lie in (0, 1]");
        }
    }
    if (q.cols != k.cols) {
        throw shape_error("lse_vs_temperature: q.cols != k.cols");
    }
    const double sqrt_d = std::sqrt(static_cast<double>(q.cols));
    // Base logits at T = 1, in double.
    std::vector<std::vector<double>> logits(q.rows, std::vector<double>(k.rows));
    for (std::size_t r = 0; r < q.rows; ++r) {
        for (std::size_t c = 0; c < k.rows; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < q.cols; ++j) {
                acc += static_cast<double>(q.at(r, j)) * static_cast<double>(k.at(c, j));
            }
            logits[r][c] = acc / sqrt_d;
        }
    }
    LseCurve curve;
    curve.temperatures.assign(t_grid.begin(), t_grid.end());
    curve.lse.resize(t_grid.size());
    std::vector<double> scaled(k.rows);
    for (std::size_t ti = 0; ti < t_grid.size(); ++ti) {
        curve.lse[ti].resize(q.rows);
        for (std::size_t r = 0; r < q.rows; ++r) {
            for (std::size_t c = 0; c < k.rows; ++c) scaled[c] = logits[r][c] / t_grid[ti];
            curve.lse[ti][r] = logsumexp_row(std::span<const double>(scaled));
        }
    }
    return curve;
}

}  // namespace ape
