#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ape/attention.hpp"
#include "ape/common.hpp"
#include "ape/kv.hpp"
#include "ape/mat.hpp"
#include "ape/rope.hpp"

namespace ape {

// Deterministic seeded decoder-only transformer that stands in for both the
// encoder and the decoder. Pre-norm RMS, SiLU-gated MLP, rotary positions,
// untied embedding/output, no biases, byte-level vocab. The weights are
// random, never trained: everything downstream rests on algebraic
// equivalences between encoding modes, not output quality.
struct ToyModelSpec {
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t head_dim = 16;
    std::size_t ffn_mult = 4;
    std::size_t vocab = 256;
    std::uint64_t seed = 42;
    double init_std = 0.02;
    std::size_t max_positions = 4096;
    double rope_base = 10000.0;

    std::size_t hidden() const { return n_heads * head_dim; }

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || head_dim < 1 || ffn_mult < 1 || vocab < 1) {
            throw value_error("ToyModelSpec: all counts must be >= 1");
        }
        if (hidden() == 0) {
            throw value_error("ToyModelSpec: zero hidden size");
        }
        if (head_dim % 2 != 0) {
            throw value_error("ToyModelSpec: head_dim must be even for rotary positions");
        }
        if (init_std <= 0.0) {
            throw value_error("ToyModelSpec: init_std must be > 0");
        }
    }
};

struct TokenSeq {
    std::vector<std::uint8_t> tokens;
    Role role = Role::context;
};

inline TokenSeq make_tokens(const std::string& text, Role role) {
    TokenSeq seq;
    seq.tokens.assign(text.begin(), text.end());
    seq.role = role;
    return seq;
}

enum class DecodeMode { sequential, parallel, ape };

struct DecodeResult {
    std::vector<std::uint8_t> generated;
    Mat prefill_logits;  // one row per query token
    Mat step_logits;     // one row per generated token (logits after it)
};

// Greedy pick with ties broken by lowest token id.
inline std::size_t greedy_pick(std::span<const float> logits) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.size(); ++j) {
        if (logits[j] > logits[best]) best = j;
    }
    return best;
}

namespace detail {

inline Mat slice_cols(const Mat& m, std::size_t c0, std::size_t width) {
    Mat out(m.rows, width);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            out.at(r, c) = m.at(r, c0 + c);
        }
    }
    return out;
}

inline void paste_cols(Mat& dst, const Mat& src, std::size_t c0) {
    for (std::size_t r = 0; r < src.rows; ++r) {
        for (std::size_t c = 0; c < src.cols; ++c) {
            dst.at(r, c0 + c) = src.at(r, c);
        }
    }
}

inline void append_rows(Mat& dst, const Mat& src) {
    if (dst.rows == 0 && dst.cols == 0) {
        dst.cols = src.cols;
    }
    if (dst.cols != src.cols) {
        throw shape_error("append_rows: column mismatch");
    }
    dst.data.insert(dst.data.end(), src.data.begin(), src.data.end());
    dst.rows += src.rows;
}

}  // namespace detail

class Model {
public:
    explicit Model(const ToyModelSpec& spec) : spec_(spec) {
        spec_.validate();
        SplitMix64 rng(spec_.seed);
        const std::size_t h = spec_.hidden();
        const std::size_t f = spec_.ffn_mult * h;

        embedding_ = gaussian_mat(rng, spec_.vocab, h);
        layers_.resize(spec_.n_layers);
        for (LayerWeights& lw : layers_) {
            lw.wq = gaussian_mat(rng, h, h);
            lw.wk = gaussian_mat(rng, h, h);
            lw.wv = gaussian_mat(rng, h, h);
            lw.wo = gaussian_mat(rng, h, h);
            lw.w_gate = gaussian_mat(rng, f, h);
            lw.w_up = gaussian_mat(rng, f, h);
            lw.w_down = gaussian_mat(rng, h, f);
            lw.attn_norm.assign(h, 1.0f);
            lw.mlp_norm.assign(h, 1.0f);
        }
        final_norm_.assign(h, 1.0f);
        output_ = gaussian_mat(rng, spec_.vocab, h);
        checksum_ = compute_checksum();
    }

    const ToyModelSpec& spec() const { return spec_; }
    std::uint64_t checksum() const { return checksum_; }

    std::size_t parameter_count() const {
        const std::size_t h = spec_.hidden();
        const std::size_t f = spec_.ffn_mult * h;
        return spec_.vocab * h                         // embedding
               + spec_.n_layers * (4 * h * h + 2 * h * f + f * h + 2 * h)
               + h                                     // final norm
               + spec_.vocab * h;                      // output head
    }

    // Per-layer roped q/k and raw v states of a token block, as the encoder
    // sees them. Diagnostics introspect these directly.
    struct LayerStates {
        Mat q, k, v;  // n_tokens x hidden
    };

    // Encode one token block into its per-layer KV states. Tokens attend
    // causally within the block plus the full prefix, never anything else.
    KvSegment encode_segment(const TokenSeq& tokens, const KvSegment* prefix,
                             std::size_t position_start) const {
        const std::size_t n = tokens.tokens.size();
        KvSegment seg(spec_.n_layers, spec_.n_heads, spec_.head_dim, n, tokens.role,
                      position_start);
        const std::vector<LayerStates> states =
            encoder_forward(tokens, prefix, position_start);
        for (std::size_t l = 0; l < spec_.n_layers; ++l) {
            for (std::size_t hd = 0; hd < spec_.n_heads; ++hd) {
                const std::size_t c0 = hd * spec_.head_dim;
                for (std::size_t p = 0; p < n; ++p) {
                    for (std::size_t j = 0; j < spec_.head_dim; ++j) {
                        seg.key_at(l, hd, p)[j] = states[l].k.at(p, c0 + j);
                        seg.value_at(l, hd, p)[j] = states[l].v.at(p, c0 + j);
                    }
                }
            }
        }
        return seg;
    }

    std::vector<LayerStates> capture_states(const TokenSeq& tokens, const KvSegment* prefix,
                                            std::size_t position_start) const {
        return encoder_forward(tokens, prefix, position_start);
    }

    // Greedy decode of a query against pre-cached segments, combining them
    // per the selected mode. parallel is ape with T = S = 1.
    DecodeResult decode_with_cache(const TokenSeq& query, const KvSegment* prefix,
                                   std::span<const KvSegment* const> contexts,
                                   DecodeMode mode, const ApeConfig& cfg,
                                   std::size_t max_new) const {
        cfg.validate();
        if (query.tokens.empty()) {
            throw value_error("decode_with_cache: empty query");
        }
        check_tokens(query.tokens);
        if ((mode == DecodeMode::parallel || mode == DecodeMode::ape) && contexts.empty()) {
            throw value_error("decode_with_cache: parallel/ape require at least one context");
        }
        const KvSegment* pfx = (prefix != nullptr && prefix->seq_len > 0) ? prefix : nullptr;
        if (pfx != nullptr) {
            check_segment_shape(*pfx);
            if (pfx->position_offset != 0) {
                throw value_error("decode_with_cache: prefix must start at position 0");
            }
        }
        const std::size_t prefix_len = pfx ? pfx->seq_len : 0;

        std::vector<std::size_t> ctx_lens;
        ctx_lens.reserve(contexts.size());
        for (const KvSegment* c : contexts) {
            check_segment_shape(*c);
            ctx_lens.push_back(c->seq_len);
        }
        const Layout layout =
            mode == DecodeMode::sequential ? Layout::sequential : Layout::parallel;
        const PositionPlan plan =
            plan_positions(layout, prefix_len, ctx_lens, query.tokens.size());
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            if (contexts[i]->position_offset != plan.context_starts[i]) {
                throw value_error(
                    "decode_with_cache: mode/cache mismatch: context position offsets do "
                    "not match the position plan");
            }
        }
        if (plan.query_start + query.tokens.size() + max_new > spec_.max_positions) {
            throw value_error("decode_with_cache: position overflow beyond configured max");
        }

        ApeConfig effective = cfg;
        if (mode == DecodeMode::parallel || mode == DecodeMode::sequential) {
            effective.temperature = 1.0;
            effective.scale = 1.0;
        }

        // Per (layer, head) views, extracted once.
        PerHead prefix_kv = pfx ? extract(*pfx) : PerHead{};
        std::vector<PerHead> ctx_kv;
        ctx_kv.reserve(contexts.size());
        for (const KvSegment* c : contexts) ctx_kv.push_back(extract(*c));

        SelfCache self(spec_.n_layers);

        DecodeResult result;
        result.prefill_logits = forward_block(query.tokens, plan.query_start, pfx != nullptr,
                                              prefix_kv, ctx_kv, mode, effective, self);
        result.step_logits = Mat(0, spec_.vocab);
        if (max_new == 0) return result;

        std::span<const float> last = result.prefill_logits.row(query.tokens.size() - 1);
        for (std::size_t step = 0; step < max_new; ++step) {
            const std::uint8_t tok = static_cast<std::uint8_t>(greedy_pick(last));
            result.generated.push_back(tok);
            const std::size_t pos = plan.query_start + query.tokens.size() + step;
            Mat logits = forward_block({&tok, 1}, pos, pfx != nullptr, prefix_kv, ctx_kv,
                                       mode, effective, self);
            detail::append_rows(result.step_logits, logits);
            last = result.step_logits.row(step);
        }
        return result;
    }

private:
    struct LayerWeights {
        Mat wq, wk, wv, wo;
        Mat w_gate, w_up, w_down;
        std::vector<float> attn_norm, mlp_norm;
    };

    // Per (layer, head) single-head K/V mats for one segment.
    struct PerHead {
        std::vector<SegmentKv> kv;  // n_layers * n_heads entries
        std::size_t seq_len = 0;
    };

    struct SelfCache {
        explicit SelfCache(std::size_t n_layers) : k(n_layers), v(n_layers) {}
        std::vector<Mat> k, v;  // hidden-wide, rows grow as tokens arrive
        std::size_t len = 0;
    };

    static Mat gaussian_mat(SplitMix64& rng, std::size_t rows, std::size_t cols_,
                            double std_dev) {
        Mat m(rows, cols_);
        for (float& f : m.data) {
            f = static_cast<float>(rng.next_gaussian() * std_dev);
        }
        return m;
    }

    Mat gaussian_mat(SplitMix64& rng, std::size_t rows, std::size_t cols_) const {
        return gaussian_mat(rng, rows, cols_, spec_.init_std);
    }

    std::uint64_t compute_checksum() const {
        // FNV-1a over f32 LE bytes of all parameters in init order.
        std::uint64_t h = kFnvOffsetBasis;
        auto feed = [&h](std::span<const float> vals) {
            for (float f : vals) {
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                std::uint8_t le[4];
                for (int i = 0; i < 4; ++i) le[i] = static_cast<std::uint8_t>(bits >> (8 * i));
                h = fnv1a64(std::span<const std::uint8_t>(le, 4), h);
            }
        };
        feed(embedding_.data);
        for (const LayerWeights& lw : layers_) {
            feed(lw.wq.data);
            feed(lw.wk.data);
            feed(lw.wv.data);
            feed(lw.wo.data);
            feed(lw.w_gate.data);
            feed(lw.w_up.data);
            feed(lw.w_down.data);
            feed(lw.attn_norm);
            feed(lw.mlp_norm);
        }
        feed(final_norm_);
        feed(output_.data);
        return h;
    }

    void check_tokens(std::span<const std::uint8_t> tokens) const {
        for (std::uint8_t t : tokens) {
            if (t >= spec_.vocab) {
                throw value_error("token id out of vocab range");
            }
        }
    }

    void check_segment_shape(const KvSegment& seg) const {
        if (seg.layers != spec_.n_layers || seg.heads != spec_.n_heads ||
            seg.head_dim != spec_.head_dim) {
            throw shape_error("segment shape does not match model spec");
        }
    }

    Mat embed(std::span<const std::uint8_t> tokens) const {
        Mat x(tokens.size(), spec_.hidden());
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            auto src = embedding_.row(tokens[i]);
            std::copy(src.begin(), src.end(), x.row(i).begin());
        }
        return x;
    }

    static Mat rmsnorm(const Mat& x, std::span<const float> gain) {
        constexpr double kEps = 1e-5;
        Mat out(x.rows, x.cols);
        for (std::size_t r = 0; r < x.rows; ++r) {
            double ms = 0.0;
            for (std::size_t c = 0; c < x.cols; ++c) {
                const double v = x.at(r, c);
                ms += v * v;
            }
            const double inv = 1.0 / std::sqrt(ms / static_cast<double>(x.cols) + kEps);
            for (std::size_t c = 0; c < x.cols; ++c) {
                out.at(r, c) = static_cast<float>(static_cast<double>(x.at(r, c)) * inv *
                                                  static_cast<double>(gain[c]));
            }
        }
        return out;
    }

    static Mat add(const Mat& a, const Mat& b) {
        Mat out(a.rows, a.cols);
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            out.data[i] = static_cast<float>(static_cast<double>(a.data[i]) +
                                             static_cast<double>(b.data[i]));
        }
        return out;
    }

    Mat mlp(const Mat& xn, const LayerWeights& lw) const {
        Mat gate = matmul(xn, lw.w_gate);
        Mat up = matmul(xn, lw.w_up);
        Mat act(gate.rows, gate.cols);
        for (std::size_t i = 0; i < gate.data.size(); ++i) {
            const double g = gate.data[i];
            const double silu = g / (1.0 + std::exp(-g));
            act.data[i] = static_cast<float>(silu * static_cast<double>(up.data[i]));
        }
        return matmul(act, lw.w_down);
    }

    std::vector<LayerStates> encoder_forward(const TokenSeq& tokens, const KvSegment* prefix,
                                             std::size_t position_start) const {
        if (tokens.role == Role::context && tokens.tokens.empty()) {
            throw value_error("encode_segment: context token sequence must be nonempty");
        }
        check_tokens(tokens.tokens);
        const std::size_t prefix_len = (prefix != nullptr) ? prefix->seq_len : 0;
        if (prefix != nullptr && prefix->seq_len > 0) {
            check_segment_shape(*prefix);
        }
        const std::size_t n = tokens.tokens.size();
        if (position_start + n > spec_.max_positions) {
            throw value_error("encode_segment: position overflow beyond configured max");
        }
        std::vector<LayerStates> states(spec_.n_layers);
        if (n == 0) {
            for (LayerStates& st : states) {
                st.q = Mat(0, spec_.hidden());
                st.k = Mat(0, spec_.hidden());
                st.v = Mat(0, spec_.hidden());
            }
            return states;
        }

        std::vector<std::size_t> positions(n);
        for (std::size_t i = 0; i < n; ++i) positions[i] = position_start + i;

        Mat x = embed(tokens.tokens);
        const RopeParams rope{spec_.head_dim, spec_.rope_base};
        for (std::size_t l = 0; l < spec_.n_layers; ++l) {
            const LayerWeights& lw = layers_[l];
            Mat xn = rmsnorm(x, lw.attn_norm);
            Mat q = matmul(xn, lw.wq);
            Mat k = matmul(xn, lw.wk);
            Mat v = matmul(xn, lw.wv);
            states[l].q = Mat(n, spec_.hidden());
            states[l].k = Mat(n, spec_.hidden());
            states[l].v = v;
            Mat attn(n, spec_.hidden());
            for (std::size_t hd = 0; hd < spec_.n_heads; ++hd) {
                const std::size_t c0 = hd * spec_.head_dim;
                Mat qh = apply_rope(detail::slice_cols(q, c0, spec_.head_dim), positions, rope);
                Mat kh = apply_rope(detail::slice_cols(k, c0, spec_.head_dim), positions, rope);
                Mat vh = detail::slice_cols(v, c0, spec_.head_dim);
                detail::paste_cols(states[l].q, qh, c0);
                detail::paste_cols(states[l].k, kh, c0);
                // Visibility at encode time: whole prefix plus causal self.
                Mat k_cat, v_cat;
                if (prefix_len > 0) {
                    k_cat = prefix->key_mat(l, hd);
                    v_cat = prefix->value_mat(l, hd);
                } else {
                    k_cat = Mat(0, spec_.head_dim);
                    v_cat = Mat(0, spec_.head_dim);
                }
                detail::append_rows(k_cat, kh);
                detail::append_rows(v_cat, vh);
                const RowMask mask = RowMask::causal(n, prefix_len + n, prefix_len);
                Mat oh = attend_full(qh, k_cat, v_cat, mask);
                detail::paste_cols(attn, oh, c0);
            }
            x = add(x, matmul(attn, lw.wo));
            Mat xn2 = rmsnorm(x, lw.mlp_norm);
            x = add(x, mlp(xn2, lw));
        }
        return states;
    }

    PerHead extract(const KvSegment& seg) const {
        PerHead out;
        out.seq_len = seg.seq_len;
        out.kv.reserve(spec_.n_layers * spec_.n_heads);
        for (std::size_t l = 0; l < spec_.n_layers; ++l) {
            for (std::size_t h = 0; h < spec_.n_heads; ++h) {
                out.kv.push_back(SegmentKv{seg.key_mat(l, h), seg.value_mat(l, h)});
            }
        }
        return out;
    }

    // One forward pass over a token block at consecutive positions, attending
    // prefix + contexts + self per the decode mode. Appends the block's KV to
    // the self cache and returns final logits rows.
    Mat forward_block(std::span<const std::uint8_t> tokens, std::size_t position_start,
                      bool has_prefix, const PerHead& prefix_kv,
                      std::span<const PerHead> ctx_kv, DecodeMode mode,
                      const ApeConfig& cfg, SelfCache& self) const {
        const std::size_t n = tokens.size();
        const std::size_t past = self.len;
        std::vector<std::size_t> positions(n);
        for (std::size_t i = 0; i < n; ++i) positions[i] = position_start + i;

        Mat x = embed(tokens);
        const RopeParams rope{spec_.head_dim, spec_.rope_base};
        for (std::size_t l = 0; l < spec_.n_layers; ++l) {
            const LayerWeights& lw = layers_[l];
            Mat xn = rmsnorm(x, lw.attn_norm);
            Mat q = matmul(xn, lw.wq);
            Mat k = matmul(xn, lw.wk);
            Mat v = matmul(xn, lw.wv);

            // Rope the new keys and grow the self cache before attending, so
            // the block sees itself causally.
            Mat k_roped(n, spec_.hidden());
            for (std::size_t hd = 0; hd < spec_.n_heads; ++hd) {
                const std::size_t c0 = hd * spec_.head_dim;
                Mat kh = apply_rope(detail::slice_cols(k, c0, spec_.head_dim), positions, rope);
                detail::paste_cols(k_roped, kh, c0);
            }
            detail::append_rows(self.k[l], k_roped);
            detail::append_rows(self.v[l], v);

            Mat attn(n, spec_.hidden());
            for (std::size_t hd = 0; hd < spec_.n_heads; ++hd) {
                const std::size_t c0 = hd * spec_.head_dim;
                Mat qh = apply_rope(detail::slice_cols(q, c0, spec_.head_dim), positions, rope);
                SegmentKv self_kv{detail::slice_cols(self.k[l], c0, spec_.head_dim),
                                  detail::slice_cols(self.v[l], c0, spec_.head_dim)};
                const RowMask self_mask = RowMask::causal(n, past + n, past);
                const std::size_t hidx = l * spec_.n_heads + hd;

                Mat oh;
                if (mode == DecodeMode::sequential) {
                    std::vector<SegmentKv> ctx;
                    ctx.reserve(ctx_kv.size());
                    for (const PerHead& c : ctx_kv) ctx.push_back(c.kv[hidx]);
                    oh = sequential_attention(qh, has_prefix ? &prefix_kv.kv[hidx] : nullptr,
                                              ctx, self_kv, self_mask);
                } else {
                    std::vector<PartialAttention> ctx_parts;
                    ctx_parts.reserve(ctx_kv.size());
                    for (const PerHead& c : ctx_kv) {
                        const SegmentKv& seg = c.kv[hidx];
                        ctx_parts.push_back(partial_attention(
                            qh, seg.k, seg.v, RowMask::full(n, seg.k.rows),
                            cfg.temperature));
                    }
                    PartialAttention self_part =
                        partial_attention(qh, self_kv.k, self_kv.v, self_mask, 1.0);
                    std::optional<PartialAttention> prefix_part;
                    if (has_prefix) {
                        const SegmentKv& seg = prefix_kv.kv[hidx];
                        prefix_part = partial_attention(
                            qh, seg.k, seg.v, RowMask::full(n, seg.k.rows), 1.0);
                    }
                    oh = ape_attention(prefix_part ? &*prefix_part : nullptr, ctx_parts,
                                       self_part, cfg);
                }
                detail::paste_cols(attn, oh, c0);
            }
            x = add(x, matmul(attn, lw.wo));
            Mat xn2 = rmsnorm(x, lw.mlp_norm);
            x = add(x, mlp(xn2, lw));
        }
        self.len += n;
        Mat logits = matmul(rmsnorm(x, final_norm_), output_);
        ensure_all_finite(logits.data, "logits");
        return logits;
    }

    ToyModelSpec spec_;
    Mat embedding_;
    std::vector<LayerWeights> layers_;
    std::vector<float> final_norm_;
    Mat output_;
    std::uint64_t checksum_ = 0;
};

// FNV id for an encoded context, binding tokens, model weights and layout.
inline ContextCacheEntry make_cache_entry(const Model& model, const TokenSeq& tokens,
                                          const KvSegment* prefix,
                                          std::size_t position_start) {
    ContextCacheEntry entry;
    entry.segment = model.encode_segment(tokens, prefix, position_start);
    entry.token_len = tokens.tokens.size();
    entry.id = cache_entry_id(tokens.tokens, model.checksum(), position_start);
    return entry;
}

}  // namespace ape
