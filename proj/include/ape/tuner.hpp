#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ape/attention.hpp"
#include "ape/common.hpp"
#include "ape/mat.hpp"
#include "ape/model.hpp"

namespace ape {

struct ValidationExample {
    std::vector<std::string> contexts;
    std::string query;
    std::string gold;
};

// Candidate configuration under evaluation: prefix length in newline tokens
// plus the APE knobs.
struct TuneCandidate {
    std::size_t prefix_len = 0;
    double temperature = 1.0;
    double scale = 1.0;
};

// Higher is better. The default metric is the negative mean per-token NLL of
// the gold continuation under APE decoding with the candidate configuration.
using TuneMetric =
    std::function<double(const Model&, const ValidationExample&, const TuneCandidate&)>;

struct TuneSpec {
    std::vector<std::size_t> prefix_schedule{2, 12, 22, 42};  // newline tokens
    std::vector<double> t_grid;                               // (0, 1]
    std::vector<double> st_grid;                              // product S*T, (0, 1]
    ScalingMode scaling_mode = ScalingMode::aggregate;
    std::vector<ValidationExample> validation;
    TuneMetric metric;  // empty => gold-NLL metric

    static std::vector<double> default_grid() {
        std::vector<double> g;
        for (int i = 1; i <= 10; ++i) g.push_back(static_cast<double>(i) / 10.0);
        return g;
    }

    void validate() const {
        if (validation.empty()) {
            throw value_error("greedy_tune: validation set must be nonempty");
        }
        if (prefix_schedule.empty() || t_grid.empty() || st_grid.empty()) {
            throw value_error("greedy_tune: grids must be nonempty");
        }
        for (double t : t_grid) {
            if (!(t > 0.0) || t > 1.0) throw value_error("greedy_tune: t_grid outside (0, 1]");
        }
        for (double st : st_grid) {
            if (!(st > 0.0) || st > 1.0) {
                throw value_error("greedy_tune: st_grid outside (0, 1]");
            }
        }
        for (const ValidationExample& ex : validation) {
            if (ex.contexts.empty()) {
                throw value_error("greedy_tune: validation example without contexts");
            }
            if (ex.query.empty() || ex.gold.empty()) {
                throw value_error("greedy_tune: validation example needs query and gold");
            }
        }
    }
};

struct TuneTracePoint {
    int stage = 0;  // 1 = prefix, 2 = temperature, 3 = S*T product
    std::size_t prefix_len = 0;
    double temperature = 1.0;
    double scale = 1.0;
    double score = 0.0;
    bool valid = true;  // false when S = st/T falls outside (0, 1]
};

struct TuneResult {
    ApeConfig config;
    std::size_t prefix_len = 0;
    double score = 0.0;
    std::vector<TuneTracePoint> trace;
};

// Teacher-forced mean NLL of gold under APE decoding: the query||gold block
// is prefilled once and gold token j is scored from the logits row preceding
// it.
inline double gold_nll(const Model& model, const ValidationExample& ex,
                       const TuneCandidate& cand, ScalingMode scaling_mode) {
    TokenSeq prefix_tokens;
    prefix_tokens.role = Role::prefix;
    prefix_tokens.tokens.assign(cand.prefix_len, static_cast<std::uint8_t>('\n'));
    const KvSegment prefix_seg = model.encode_segment(prefix_tokens, nullptr, 0);

    std::vector<KvSegment> ctx_segs;
    std::vector<std::size_t> lens;
    for (const std::string& c : ex.contexts) lens.push_back(c.size());
    const PositionPlan plan = plan_positions(Layout::parallel, cand.prefix_len, lens);
    for (std::size_t i = 0; i < ex.contexts.size(); ++i) {
        ctx_segs.push_back(model.encode_segment(make_tokens(ex.contexts[i], Role::context),
                                                cand.prefix_len > 0 ? &prefix_seg : nullptr,
                                                plan.context_starts[i]));
    }
    std::vector<const KvSegment*> ptrs;
    for (const KvSegment& s : ctx_segs) ptrs.push_back(&s);

    TokenSeq block = make_tokens(ex.query + ex.gold, Role::query);
    ApeConfig cfg;
    cfg.temperature = cand.temperature;
    cfg.scale = cand.scale;
    cfg.scaling_mode = scaling_mode;
    const DecodeResult r = model.decode_with_cache(
        block, cand.prefix_len > 0 ? &prefix_seg : nullptr, ptrs, DecodeMode::ape, cfg, 0);

    const std::size_t q_len = ex.query.size();
    double nll = 0.0;
    for (std::size_t j = 0; j < ex.gold.size(); ++j) {
        const std::span<const float> row = r.prefill_logits.row(q_len - 1 + j);
        const double lse = logsumexp_row(row);
        const std::uint8_t tok = static_cast<std::uint8_t>(ex.gold[j]);
        nll -= static_cast<double>(row[tok]) - lse;
    }
    return nll / static_cast<double>(ex.gold.size());
}

namespace detail {

inline double mean_score(const Model& model, const TuneSpec& spec,
                         const TuneCandidate& cand) {
    double sum = 0.0;
    for (const ValidationExample& ex : spec.validation) {
        if (spec.metric) {
            sum += spec.metric(model, ex, cand);
        } else {
            sum += -gold_nll(model, ex, cand, spec.scaling_mode);
        }
    }
    return sum / static_cast<double>(spec.validation.size());
}

// Ties prefer larger T, then larger S, then shorter prefix.
inline bool better(double score, const TuneCandidate& cand, double best_score,
                   const TuneCandidate& best) {
    if (score != best_score) return score > best_score;
    if (cand.temperature != best.temperature) return cand.temperature > best.temperature;
    if (cand.scale != best.scale) return cand.scale > best.scale;
    return cand.prefix_len < best.prefix_len;
}

}  // namespace detail

// Three-stage greedy search: prefix length at T = S = 1, then temperature at
// S = 1, then the product S*T with S derived as (S*T)/T. Product candidates
// whose derived S leaves (0, 1] are recorded in the trace as invalid and
// never win. Deterministic given identical inputs.
inline TuneResult greedy_tune(const Model& model, const TuneSpec& spec) {
    spec.validate();
    TuneResult result;

    TuneCandidate best;
    double best_score = -std::numeric_limits<double>::infinity();
    bool have_best = false;

    auto consider = [&](int stage, const TuneCandidate& cand, bool valid) {
        double score = -std::numeric_limits<double>::infinity();
        if (valid) {
            score = detail::mean_score(model, spec, cand);
            if (!have_best || detail::better(score, cand, best_score, best)) {
                best = cand;
                best_score = score;
                have_best = true;
            }
        }
        result.trace.push_back(TuneTracePoint{stage, cand.prefix_len, cand.temperature,
                                              cand.scale, score, valid});
    };

    // Stage 1: prefix length.
    for (std::size_t p : spec.prefix_schedule) {
        consider(1, TuneCandidate{p, 1.0, 1.0}, true);
    }
    const std::size_t chosen_prefix = best.prefix_len;

    // Stage 2: temperature at the chosen prefix.
    have_best = false;
    best_score = -std::numeric_limits<double>::infinity();
    for (double t : spec.t_grid) {
        consider(2, TuneCandidate{chosen_prefix, t, 1.0}, true);
    }
    const double chosen_t = best.temperature;

    // Stage 3: the product S*T; S = (S*T)/T. If every product candidate is
    // invalid the stage-2 result stands.
    const TuneCandidate stage2_best = best;
    const double stage2_score = best_score;
    have_best = false;
    best_score = -std::numeric_limits<double>::infinity();
    for (double st : spec.st_grid) {
        const double s = st / chosen_t;
        const bool valid = s > 0.0 && s <= 1.0;
        consider(3, TuneCandidate{chosen_prefix, chosen_t, s}, valid);
    }
    if (!have_best) {
        best = stage2_best;
        best_score = stage2_score;
    }

    result.config.temperature = best.temperature;
    result.config.scale = best.scale;
    result.config.scaling_mode = spec.scaling_mode;
    result.config.prefix_tokens.assign(best.prefix_len, static_cast<std::uint8_t>('\n'));
    result.prefix_len = best.prefix_len;
    result.score = best_score;
    return result;
}

}  // namespace ape
