#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ape/common.hpp"
#include "ape/mat.hpp"

#include "json.hpp"

namespace ape {

enum class Role : std::uint8_t { prefix, context, query };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::prefix: return "prefix";
        case Role::context: return "context";
        case Role::query: return "query";
    }
    return "?";
}

inline Role role_from_name(const std::string& s) {
    if (s == "prefix") return Role::prefix;
    if (s == "context") return Role::context;
    if (s == "query") return Role::query;
    throw format_error("unknown role: " + s);
}

// A contiguous block of per-layer, per-head key/value states. Keys are stored
// post-rotation at the segment's absolute positions; values are raw. Arrays
// are flat in [layer][head][pos][dim] order.
struct KvSegment {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t head_dim = 0;
    std::size_t seq_len = 0;
    Role role = Role::context;
    std::size_t position_offset = 0;
    std::vector<float> keys;
    std::vector<float> values;

    KvSegment() = default;
    KvSegment(std::size_t l, std::size_t h, std::size_t d, std::size_t n, Role r,
              std::size_t pos)
        : layers(l),
          heads(h),
          head_dim(d),
          seq_len(n),
          role(r),
          position_offset(pos),
          keys(l * h * n * d, 0.0f),
          values(l * h * n * d, 0.0f) {}

    std::size_t elem_count() const { return layers * heads * seq_len * head_dim; }

    std::size_t index(std::size_t layer, std::size_t head, std::size_t pos,
                      std::size_t dim) const {
        return ((layer * heads + head) * seq_len + pos) * head_dim + dim;
    }

    std::span<float> key_at(std::size_t layer, std::size_t head, std::size_t pos) {
        return {keys.data() + index(layer, head, pos, 0), head_dim};
    }
    std::span<const float> key_at(std::size_t layer, std::size_t head,
                                  std::size_t pos) const {
        return {keys.data() + index(layer, head, pos, 0), head_dim};
    }
    std::span<float> value_at(std::size_t layer, std::size_t head, std::size_t pos) {
        return {values.data() + index(layer, head, pos, 0), head_dim};
    }
    std::span<const float> value_at(std::size_t layer, std::size_t head,
                                    std::size_t pos) const {
        return {values.data() + index(layer, head, pos, 0), head_dim};
    }

    // seq_len x head_dim copy for one (layer, head); the per-head currency of
    // the attention engine.
    Mat key_mat(std::size_t layer, std::size_t head) const {
        Mat m(seq_len, head_dim);
        for (std::size_t p = 0; p < seq_len; ++p) {
            auto src = key_at(layer, head, p);
            std::copy(src.begin(), src.end(), m.row(p).begin());
        }
        return m;
    }
    Mat value_mat(std::size_t layer, std::size_t head) const {
        Mat m(seq_len, head_dim);
        for (std::size_t p = 0; p < seq_len; ++p) {
            auto src = value_at(layer, head, p);
            std::copy(src.begin(), src.end(), m.row(p).begin());
        }
        return m;
    }

    bool same_model_shape(const KvSegment& o) const {
        return layers == o.layers && heads == o.heads && head_dim == o.head_dim;
    }

    bool operator==(const KvSegment& o) const = default;
};

// Content-addressed cache entry. The id is FNV-1a-64 over
//   token bytes || model weight checksum (8 LE bytes) || position_offset (8 LE bytes)
// so identical inputs hash identically across runs and implementations.
struct ContextCacheEntry {
    std::uint64_t id = 0;
    KvSegment segment;
    std::size_t token_len = 0;
};

inline std::uint64_t cache_entry_id(std::span<const std::uint8_t> tokens,
                                    std::uint64_t model_checksum,
                                    std::size_t position_offset) {
    std::uint64_t h = fnv1a64(tokens);
    std::uint8_t le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<std::uint8_t>(model_checksum >> (8 * i));
    h = fnv1a64(std::span<const std::uint8_t>(le, 8), h);
    for (int i = 0; i < 8; ++i) {
        le[i] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(position_offset) >> (8 * i));
    }
    return fnv1a64(std::span<const std::uint8_t>(le, 8), h);
}

// In-memory store: entries are immutable once stored; a separate ordering
// list drives which contexts feed a decode and in what sequence. swap touches
// only that list, never KV bytes.
class KvStore {
public:
    void put(ContextCacheEntry entry) {
        const std::uint64_t id = entry.id;
        auto [it, inserted] = entries_.insert_or_assign(id, std::move(entry));
        if (inserted) order_.push_back(id);
    }

    const ContextCacheEntry& get(std::uint64_t id) const {
        auto it = entries_.find(id);
        if (it == entries_.end()) {
            throw not_found_error("kv-store: id not present");
        }
        return it->second;
    }

    bool contains(std::uint64_t id) const { return entries_.count(id) != 0; }

    void remove(std::uint64_t id) {
        auto it = entries_.find(id);
        if (it == entries_.end()) {
            throw not_found_error("kv-store: id not present");
        }
        entries_.erase(it);
        std::erase(order_, id);
    }

    void swap_order(std::uint64_t a, std::uint64_t b) {
        auto ia = std::find(order_.begin(), order_.end(), a);
        auto ib = std::find(order_.begin(), order_.end(), b);
        if (ia == order_.end() || ib == order_.end()) {
            throw not_found_error("kv-store: id not present");
        }
        std::iter_swap(ia, ib);
    }

    // Replaces the KV payload behind an id. The replacement must come from
    // the same model shape; sequence length may change.
    void replace(std::uint64_t id, ContextCacheEntry entry) {
        auto it = entries_.find(id);
        if (it == entries_.end()) {
            throw not_found_error("kv-store: id not present");
        }
        if (!it->second.segment.same_model_shape(entry.segment)) {
            throw shape_error("kv-store: replacement segment shape mismatch");
        }
        entry.id = id;
        it->second = std::move(entry);
    }

    std::vector<std::uint64_t> ids_in_order() const { return order_; }
    std::size_t size() const { return entries_.size(); }

private:
    std::unordered_map<std::uint64_t, ContextCacheEntry> entries_;
    std::vector<std::uint64_t> order_;
};

// -----------------------------------------------------------------------
// .apekv file format, little-endian, bit-exact:
//
//   magic   "APEKV1"                          6 bytes
//   version u32 = 1
//   mlen    u32 = metadata byte length
//   meta    UTF-8 JSON {layers, heads, head_dim, seq_len, role,
//                       position_offset, model_checksum, token_len}
//   keys    f32 x (layers*heads*seq_len*head_dim), [layer][head][pos][dim]
//   values  same shape
//   check   u64 FNV-1a over every preceding byte of the file
//
// The trailing checksum covers the header too, so any single corrupted byte
// that slips past the magic/version checks still fails verification.
// -----------------------------------------------------------------------

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32_array(std::vector<std::uint8_t>& out, std::span<const float> vals) {
    for (float f : vals) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
    return v;
}

}  // namespace detail

inline constexpr char kApekvMagic[6] = {'A', 'P', 'E', 'K', 'V', '1'};
inline constexpr std::uint32_t kApekvVersion = 1;

inline std::vector<std::uint8_t> serialize_entry(const ContextCacheEntry& entry,
                                                 std::uint64_t model_checksum) {
    const KvSegment& s = entry.segment;
    if (s.keys.size() != s.elem_count() || s.values.size() != s.elem_count()) {
        throw shape_error("serialize_entry: array sizes do not match declared shape");
    }
    nlohmann::json meta = {
        {"layers", s.layers},
        {"heads", s.heads},
        {"head_dim", s.head_dim},
        {"seq_len", s.seq_len},
        {"role", role_name(s.role)},
        {"position_offset", s.position_offset},
        {"model_checksum", model_checksum},
        {"token_len", entry.token_len},
    };
    const std::string mstr = meta.dump();

    std::vector<std::uint8_t> out;
    out.reserve(6 + 8 + mstr.size() + 8 * s.elem_count() + 8);
    out.insert(out.end(), kApekvMagic, kApekvMagic + 6);
    detail::put_u32(out, kApekvVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(mstr.size()));
    out.insert(out.end(), mstr.begin(), mstr.end());
    detail::put_f32_array(out, s.keys);
    detail::put_f32_array(out, s.values);
    detail::put_u64(out, fnv1a64(out));
    return out;
}

inline void persist(const ContextCacheEntry& entry, std::uint64_t model_checksum,
                    const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = serialize_entry(entry, model_checksum);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw io_error("persist: cannot open " + path.string());
    }
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw io_error("persist: write failed for " + path.string());
    }
}

struct LoadedEntry {
    ContextCacheEntry entry;
    std::uint64_t model_checksum = 0;
};

inline LoadedEntry deserialize_entry(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 6 + 4 + 4 + 8) {
        throw format_error("apekv: truncated header");
    }
    if (std::memcmp(bytes.data(), kApekvMagic, 6) != 0) {
        throw format_error("apekv: bad magic");
    }
    const std::uint32_t version = detail::get_u32(bytes, 6);
    if (version != kApekvVersion) {
        throw format_error("apekv: unsupported version " + std::to_string(version));
    }
    const std::uint32_t mlen = detail::get_u32(bytes, 10);
    const std::size_t meta_at = 14;
    if (bytes.size() < meta_at + mlen + 8) {
        throw format_error("apekv: truncated metadata");
    }

    // Verify the trailing checksum before trusting any field.
    const std::size_t check_at = bytes.size() - 8;
    const std::uint64_t want = detail::get_u64(bytes, check_at);
    const std::uint64_t got = fnv1a64(bytes.subspan(0, check_at));
    if (want != got) {
        throw format_error("apekv: checksum mismatch");
    }

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(bytes.begin() + meta_at, bytes.begin() + meta_at + mlen);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("apekv: bad metadata: ") + e.what());
    }

    LoadedEntry loaded;
    KvSegment& s = loaded.entry.segment;
    try {
        s.layers = meta.at("layers").get<std::size_t>();
        s.heads = meta.at("heads").get<std::size_t>();
        s.head_dim = meta.at("head_dim").get<std::size_t>();
        s.seq_len = meta.at("seq_len").get<std::size_t>();
        s.role = role_from_name(meta.at("role").get<std::string>());
        s.position_offset = meta.at("position_offset").get<std::size_t>();
        loaded.model_checksum = meta.at("model_checksum").get<std::uint64_t>();
        loaded.entry.token_len = meta.at("token_len").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("apekv: bad metadata: ") + e.what());
    }

    const std::size_t n = s.elem_count();
    const std::size_t payload_at = meta_at + mlen;
    if (check_at - payload_at != 8 * n) {
        throw format_error("apekv: payload size does not match declared shape");
    }
    s.keys.resize(n);
    s.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t bits = detail::get_u32(bytes, payload_at + 4 * i);
        std::memcpy(&s.keys[i], &bits, 4);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t bits = detail::get_u32(bytes, payload_at + 4 * n + 4 * i);
        std::memcpy(&s.values[i], &bits, 4);
    }
    loaded.entry.id = 0;  // id is not stored; recompute from tokens when known
    return loaded;
}

inline LoadedEntry load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw io_error("load: cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return deserialize_entry(bytes);
}

// -----------------------------------------------------------------------
// Memory needed to pre-cache every ordered arrangement of n chunks.
//
// Counting ordered-predecessor states: chunk c cached once per ordered
// sequence of distinct chunks ending in c, i.e. sum_{k=1..n} P(n,k) chunk
// instances, each costing
//
//   tokens_per_chunk * 2 * layers * kv_heads * head_dim * bytes_per_elem.
//
// A coarser reading (cache each of the n! full orderings outright) gives
// n! * n chunk instances instead; estimate_permutation_cache_naive reports
// that variant. Intermediates are 128-bit; anything past that is rejected.
// -----------------------------------------------------------------------

inline unsigned __int128 checked_mul_u128(unsigned __int128 a, unsigned __int128 b) {
    if (a != 0 && b > static_cast<unsigned __int128>(-1) / a) {
        throw value_error("permutation cache estimate: 128-bit overflow");
    }
    return a * b;
}

inline unsigned __int128 estimate_permutation_cache(
    std::uint64_t chunks, std::uint64_t tokens_per_chunk, std::uint64_t layers,
    std::uint64_t kv_heads, std::uint64_t head_dim, std::uint64_t bytes_per_elem) {
    if (chunks < 1 || tokens_per_chunk < 1 || layers < 1 || kv_heads < 1 ||
        head_dim < 1 || bytes_per_elem < 1) {
        throw value_error("permutation cache estimate: all counts must be >= 1");
    }
    unsigned __int128 states = 0;  // sum_{k=1..n} P(n,k)
    unsigned __int128 perm = 1;
    for (std::uint64_t k = 1; k <= chunks; ++k) {
        perm = checked_mul_u128(perm, chunks - k + 1);
        states += perm;
        if (states < perm) {
            throw value_error("permutation cache estimate: 128-bit overflow");
        }
    }
    unsigned __int128 per_chunk = checked_mul_u128(
        checked_mul_u128(static_cast<unsigned __int128>(tokens_per_chunk), 2),
        checked_mul_u128(checked_mul_u128(layers, kv_heads),
                         checked_mul_u128(head_dim, bytes_per_elem)));
    return checked_mul_u128(states, per_chunk);
}

inline unsigned __int128 estimate_permutation_cache_naive(
    std::uint64_t chunks, std::uint64_t tokens_per_chunk, std::uint64_t layers,
    std::uint64_t kv_heads, std::uint64_t head_dim, std::uint64_t bytes_per_elem) {
    if (chunks < 1 || tokens_per_chunk < 1 || layers < 1 || kv_heads < 1 ||
        head_dim < 1 || bytes_per_elem < 1) {
        throw value_error("permutation cache estimate: all counts must be >= 1");
    }
    unsigned __int128 factorial = 1;
    for (std::uint64_t k = 2; k <= chunks; ++k) factorial = checked_mul_u128(factorial, k);
    unsigned __int128 instances = checked_mul_u128(factorial, chunks);
    unsigned __int128 per_chunk = checked_mul_u128(
        checked_mul_u128(static_cast<unsigned __int128>(tokens_per_chunk), 2),
        checked_mul_u128(checked_mul_u128(layers, kv_heads),
                         checked_mul_u128(head_dim, bytes_per_elem)));
    return checked_mul_u128(instances, per_chunk);
}

inline std::string u128_to_string(unsigned __int128 v) {
    if (v == 0) return "0";
    std::string s;
    while (v > 0) {
        s.push_back(static_cast<char>('0' + static_cast<int>(v % 10)));
        v /= 10;
    }
    return std::string(s.rbegin(), s.rend());
}

}  // namespace ape
