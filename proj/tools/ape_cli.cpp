// Command-line front end: every experiment in the library is reachable here
// and emits CSV or JSON for external plotting. Exit codes: 0 success, 2 bad
// flags, 3 missing file, 4 format error, 5 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ape/attention.hpp"
#include "ape/cache_sim.hpp"
#include "ape/common.hpp"
#include "ape/diagnostics.hpp"
#include "ape/kv.hpp"
#include "ape/model.hpp"
#include "ape/tuner.hpp"

namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw ape::io_error("cannot open " + path);
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw ape::io_error("cannot open " + path + " for writing");
    }
    f << text;
}

// Stable numeric formatting for golden-file CSV comparisons.
std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct ModelFlags {
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t head_dim = 16;
    std::size_t ffn_mult = 4;
    std::uint64_t seed = 42;
    double init_std = 0.02;

    void attach(CLI::App* cmd) {
        cmd->add_option("--layers", layers, "transformer layers");
        cmd->add_option("--heads", heads, "attention heads");
        cmd->add_option("--head-dim", head_dim, "dimension per head (even)");
        cmd->add_option("--ffn-mult", ffn_mult, "MLP width multiplier");
        cmd->add_option("--seed", seed, "seed for all randomness");
        cmd->add_option("--init-std", init_std, "weight init standard deviation");
    }

    ape::Model build() const {
        ape::ToyModelSpec spec;
        spec.n_layers = layers;
        spec.n_heads = heads;
        spec.head_dim = head_dim;
        spec.ffn_mult = ffn_mult;
        spec.seed = seed;
        spec.init_std = init_std;
        return ape::Model(spec);
    }
};

ape::ScalingMode parse_scaling_mode(const std::string& s) {
    if (s == "aggregate") return ape::ScalingMode::aggregate;
    if (s == "per-context") return ape::ScalingMode::per_context;
    throw ape::value_error("unknown scaling mode: " + s);
}

ape::DecodeMode parse_decode_mode(const std::string& s) {
    if (s == "sequential") return ape::DecodeMode::sequential;
    if (s == "parallel") return ape::DecodeMode::parallel;
    if (s == "ape") return ape::DecodeMode::ape;
    throw ape::value_error("unknown mode: " + s);
}

void emit(const std::string& out_path, const std::string& text) {
    if (out_path.empty()) {
        std::cout << text;
    } else {
        write_text(out_path, text);
    }
}

// ---------------------------------------------------------------- encode ---

int cmd_encode(const ModelFlags& mf, const std::string& context_file,
               const std::string& prefix_text, long long position_offset,
               const std::string& out, const std::string& out_dir) {
    const ape::Model model = mf.build();
    const std::string text = read_file(context_file);
    ape::TokenSeq prefix = ape::make_tokens(prefix_text, ape::Role::prefix);
    ape::KvSegment prefix_seg = model.encode_segment(prefix, nullptr, 0);

    const std::size_t offset =
        position_offset >= 0 ? static_cast<std::size_t>(position_offset) : prefix_text.size();
    ape::ContextCacheEntry entry = ape::make_cache_entry(
        model, ape::make_tokens(text, ape::Role::context),
        prefix_text.empty() ? nullptr : &prefix_seg, offset);

    std::filesystem::path path = out.empty()
                                     ? std::filesystem::path(out_dir) / (hex64(entry.id) + ".apekv")
                                     : std::filesystem::path(out);
    ape::persist(entry, model.checksum(), path);

    json j = {{"id", hex64(entry.id)},
              {"tokens", entry.token_len},
              {"position_offset", offset},
              {"path", path.string()}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

// -------------------------------------------------------------- generate ---

std::vector<ape::KvSegment> load_caches(const ape::Model& model,
                                        const std::vector<std::string>& files) {
    std::vector<ape::KvSegment> segs;
    for (const std::string& f : files) {
        ape::LoadedEntry loaded = ape::load(f);
        if (loaded.model_checksum != model.checksum()) {
            throw ape::format_error("cache " + f + " was built for a different model");
        }
        segs.push_back(std::move(loaded.entry.segment));
    }
    return segs;
}

int cmd_generate(const ModelFlags& mf, const std::string& mode_str,
                 const std::vector<std::string>& cache_files, const std::string& prefix_text,
                 const std::string& query_text, std::size_t max_new, double temperature,
                 double scale, const std::string& scaling_mode, const std::string& out) {
    const ape::Model model = mf.build();
    const ape::DecodeMode mode = parse_decode_mode(mode_str);
    ape::ApeConfig cfg;
    cfg.temperature = temperature;
    cfg.scale = scale;
    cfg.scaling_mode = parse_scaling_mode(scaling_mode);
    cfg.prefix_tokens.assign(prefix_text.begin(), prefix_text.end());
    cfg.validate();

    ape::KvSegment prefix_seg = model.encode_segment(
        ape::make_tokens(prefix_text, ape::Role::prefix), nullptr, 0);
    std::vector<ape::KvSegment> segs = load_caches(model, cache_files);
    std::vector<const ape::KvSegment*> ptrs;
    for (const ape::KvSegment& s : segs) ptrs.push_back(&s);

    const ape::DecodeResult r = model.decode_with_cache(
        ape::make_tokens(query_text, ape::Role::query),
        prefix_text.empty() ? nullptr : &prefix_seg, ptrs, mode, cfg, max_new);

    json steps = json::array();
    for (std::size_t i = 0; i < r.generated.size(); ++i) {
        std::span<const float> row = i == 0
                                         ? r.prefill_logits.row(r.prefill_logits.rows - 1)
                                         : r.step_logits.row(i - 1);
        const std::size_t top = ape::greedy_pick(row);
        steps.push_back({{"token", r.generated[i]}, {"top_logit", row[top]}});
    }
    std::string text(r.generated.begin(), r.generated.end());
    json j = {{"mode", mode_str},
              {"generated", r.generated},
              {"text", text},
              {"steps", steps}};
    emit(out, j.dump(2) + "\n");
    return 0;
}

// --------------------------------------------------------------- compare ---

int cmd_compare(const ModelFlags& mf, const std::vector<std::string>& context_files,
                const std::string& prefix_text, const std::string& query_text,
                double temperature, double scale, const std::string& scaling_mode,
                const std::string& out) {
    const ape::Model model = mf.build();
    std::vector<std::string> ctx_texts;
    std::vector<std::size_t> lens;
    for (const std::string& f : context_files) {
        ctx_texts.push_back(read_file(f));
        lens.push_back(ctx_texts.back().size());
    }
    ape::KvSegment prefix_seg = model.encode_segment(
        ape::make_tokens(prefix_text, ape::Role::prefix), nullptr, 0);
    const ape::KvSegment* pfx = prefix_text.empty() ? nullptr : &prefix_seg;
    const ape::TokenSeq query = ape::make_tokens(query_text, ape::Role::query);

    auto encode_all = [&](ape::Layout layout) {
        const ape::PositionPlan plan =
            ape::plan_positions(layout, prefix_text.size(), lens);
        std::vector<ape::KvSegment> segs;
        for (std::size_t i = 0; i < ctx_texts.size(); ++i) {
            segs.push_back(model.encode_segment(
                ape::make_tokens(ctx_texts[i], ape::Role::context), pfx,
                plan.context_starts[i]));
        }
        return segs;
    };
    auto run = [&](const std::vector<ape::KvSegment>& segs, ape::DecodeMode mode,
                   const ape::ApeConfig& cfg) {
        std::vector<const ape::KvSegment*> ptrs;
        for (const ape::KvSegment& s : segs) ptrs.push_back(&s);
        return model.decode_with_cache(query, pfx, ptrs, mode, cfg, 0);
    };

    const std::vector<ape::KvSegment> seq_segs = encode_all(ape::Layout::sequential);
    const std::vector<ape::KvSegment> par_segs = encode_all(ape::Layout::parallel);
    ape::ApeConfig pcw;  // T = S = 1
    ape::ApeConfig cfg;
    cfg.temperature = temperature;
    cfg.scale = scale;
    cfg.scaling_mode = parse_scaling_mode(scaling_mode);

    const ape::DecodeResult rs = run(seq_segs, ape::DecodeMode::sequential, pcw);
    const ape::DecodeResult rp = run(par_segs, ape::DecodeMode::parallel, pcw);
    const ape::DecodeResult ra = run(par_segs, ape::DecodeMode::ape, cfg);

    auto l2 = [](std::span<const float> a, std::span<const float> b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
            acc += d * d;
        }
        return std::sqrt(acc);
    };

    std::ostringstream csv;
    csv << "position,parallel_vs_sequential,ape_vs_sequential\n";
    for (std::size_t p = 0; p < query.tokens.size(); ++p) {
        csv << p << "," << num(l2(rp.prefill_logits.row(p), rs.prefill_logits.row(p)))
            << "," << num(l2(ra.prefill_logits.row(p), rs.prefill_logits.row(p))) << "\n";
    }
    emit(out, csv.str());
    return 0;
}

// ------------------------------------------------------------------ diag ---

std::vector<ape::TokenSeq> read_corpus(const std::string& path) {
    const std::string text = read_file(path);
    std::vector<ape::TokenSeq> samples;
    std::string line;
    std::istringstream ss(text);
    while (std::getline(ss, line)) {
        if (!line.empty()) {
            samples.push_back(ape::make_tokens(line, ape::Role::context));
        }
    }
    if (samples.empty()) {
        throw ape::format_error("corpus " + path + " has no nonempty lines");
    }
    return samples;
}

std::string profile_csv(const ape::ProfileReport& rep) {
    std::ostringstream csv;
    csv << "layer,position,mean,std\n";
    for (std::size_t p = 0; p < rep.mean.size(); ++p) {
        csv << rep.layer << "," << p << "," << num(rep.mean[p]) << ","
            << num(rep.stddev[p]) << "\n";
    }
    return csv.str();
}

int cmd_diag(const ModelFlags& mf, const std::string& profile, const std::string& corpus,
             std::size_t layer, const std::string& kind_str,
             const std::vector<std::string>& context_files, const std::string& query_text,
             const std::vector<double>& degrees, const std::string& out) {
    const ape::Model model = mf.build();
    const ape::StateKind kind =
        kind_str == "value" ? ape::StateKind::value : ape::StateKind::key;

    if (profile == "key-similarity" || profile == "initial-vs-rest" ||
        profile == "magnitude" || profile == "qk-product") {
        const std::vector<ape::TokenSeq> samples = read_corpus(corpus);
        ape::ProfileReport rep;
        if (profile == "key-similarity") {
            rep = ape::key_similarity_profile(model, samples, layer);
        } else if (profile == "initial-vs-rest") {
            rep = ape::initial_vs_rest_similarity(model, samples, layer, kind);
        } else if (profile == "magnitude") {
            rep = ape::magnitude_profile(model, samples, layer, kind);
        } else {
            rep = ape::qk_product_profile(model, samples[0], layer);
        }
        emit(out, profile_csv(rep));
        return 0;
    }

    if (profile == "rotation") {
        std::vector<ape::TokenSeq> contexts;
        for (const std::string& f : context_files) {
            contexts.push_back(ape::make_tokens(read_file(f), ape::Role::context));
        }
        if (contexts.empty() && !corpus.empty()) {
            contexts = read_corpus(corpus);
        }
        const ape::TokenSeq query = ape::make_tokens(query_text, ape::Role::query);
        std::vector<double> degs = degrees;
        if (degs.empty()) {
            for (int d = 0; d <= 360; d += 30) degs.push_back(d);
        }
        std::ostringstream csv;
        csv << "degree,mode,divergence\n";
        auto emit_rows = [&](ape::DecodeMode mode, ape::AxisMode axis,
                             const std::string& label) {
            const auto rows = ape::rotation_experiment(model, contexts, query, degs, axis,
                                                       mode, mf.seed);
            for (const ape::RotationRow& r : rows) {
                csv << num(r.degree) << "," << label << "," << num(r.divergence) << "\n";
            }
        };
        emit_rows(ape::DecodeMode::sequential, ape::AxisMode::shared, "sequential");
        emit_rows(ape::DecodeMode::parallel, ape::AxisMode::shared, "parallel-shared");
        emit_rows(ape::DecodeMode::parallel, ape::AxisMode::per_context,
                  "parallel-per-context");
        emit(out, csv.str());
        return 0;
    }

    if (profile == "lse-temperature") {
        const std::vector<ape::TokenSeq> samples = read_corpus(corpus);
        const auto captured = model.capture_states(samples[0], nullptr, 0);
        if (layer >= captured.size()) {
            throw ape::value_error("layer out of range");
        }
        // Head 0's query rows against head 0's keys.
        const std::size_t d = model.spec().head_dim;
        ape::Mat q(captured[layer].q.rows, d);
        ape::Mat k(captured[layer].k.rows, d);
        for (std::size_t r = 0; r < q.rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) {
                q.at(r, j) = captured[layer].q.at(r, j);
                k.at(r, j) = captured[layer].k.at(r, j);
            }
        }
        std::vector<double> grid;
        for (int i = 1; i <= 10; ++i) grid.push_back(static_cast<double>(i) / 10.0);
        const ape::LseCurve curve = ape::lse_vs_temperature(q, k, grid);
        std::ostringstream csv;
        csv << "temperature,row,lse\n";
        for (std::size_t ti = 0; ti < curve.temperatures.size(); ++ti) {
            for (std::size_t r = 0; r < curve.lse[ti].size(); ++r) {
                csv << num(curve.temperatures[ti]) << "," << r << ","
                    << num(curve.lse[ti][r]) << "\n";
            }
        }
        emit(out, csv.str());
        return 0;
    }

    throw ape::value_error("unknown profile: " + profile);
}

// ------------------------------------------------------------------ tune ---

int cmd_tune(const ModelFlags& mf, const std::string& validation_file,
             const std::string& scaling_mode, const std::string& out) {
    const ape::Model model = mf.build();
    ape::TuneSpec spec;
    spec.t_grid = ape::TuneSpec::default_grid();
    spec.st_grid = ape::TuneSpec::default_grid();
    spec.scaling_mode = parse_scaling_mode(scaling_mode);

    const std::string text = read_file(validation_file);
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ape::format_error(std::string("validation jsonl: ") + e.what());
        }
        ape::ValidationExample ex;
        try {
            ex.contexts = j.at("contexts").get<std::vector<std::string>>();
            ex.query = j.at("query").get<std::string>();
            ex.gold = j.at("gold").get<std::string>();
        } catch (const json::exception& e) {
            throw ape::format_error(std::string("validation jsonl: ") + e.what());
        }
        spec.validation.push_back(std::move(ex));
    }

    const ape::TuneResult r = ape::greedy_tune(model, spec);
    json trace = json::array();
    for (const ape::TuneTracePoint& p : r.trace) {
        trace.push_back({{"stage", p.stage},
                         {"prefix_len", p.prefix_len},
                         {"T", p.temperature},
                         {"S", p.scale},
                         {"score", p.valid ? json(p.score) : json()},
                         {"valid", p.valid}});
    }
    json j = {{"prefix_len", r.prefix_len},
              {"T", r.config.temperature},
              {"S", r.config.scale},
              {"scaling_mode", scaling_mode},
              {"score", r.score},
              {"trace", trace}};
    emit(out, j.dump(2) + "\n");
    return 0;
}

// -------------------------------------------------------------- simcache ---

int cmd_simcache(std::size_t n, std::size_t k, std::size_t budget, const std::string& out) {
    const ape::sim::Workload w = ape::sim::make_subset_workload(n, k, budget);
    emit(out, ape::sim::sim_report(w).dump(2) + "\n");
    return 0;
}

// ----------------------------------------------------------------- flops ---

int cmd_flops(const ModelFlags& mf, std::size_t context_len, std::size_t query_len,
              std::size_t prefix_len, std::size_t max_contexts, const std::string& out) {
    const ape::ModelDims dims{mf.layers, mf.heads, mf.head_dim};
    std::ostringstream csv;
    csv << "n_contexts,sequential,parallel_precached,parallel_uncached,"
           "seq_over_precached\n";
    for (std::size_t n = 1; n <= max_contexts; ++n) {
        std::vector<std::uint64_t> lens(n, context_len);
        const std::uint64_t seq = ape::flop_count(ape::FlopMode::sequential, false,
                                                  prefix_len, lens, query_len, dims);
        const std::uint64_t pre = ape::flop_count(ape::FlopMode::parallel, true, prefix_len,
                                                  lens, query_len, dims);
        const std::uint64_t unc = ape::flop_count(ape::FlopMode::parallel, false, prefix_len,
                                                  lens, query_len, dims);
        csv << n << "," << seq << "," << pre << "," << unc << ","
            << num(static_cast<double>(seq) / static_cast<double>(pre)) << "\n";
    }
    emit(out, csv.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Context-augmented generation attention engine"};
    app.require_subcommand(1);

    ModelFlags mf;

    // encode
    auto* enc = app.add_subcommand("encode", "encode a context file into an .apekv cache");
    std::string enc_context, enc_prefix, enc_out, enc_out_dir = ".";
    long long enc_offset = -1;
    enc->add_option("--context", enc_context, "context text file")->required();
    enc->add_option("--prefix", enc_prefix, "shared prefix text");
    enc->add_option("--position-offset", enc_offset,
                    "position offset (default: prefix length)");
    enc->add_option("--out", enc_out, "output file (default: <hash>.apekv in --out-dir)");
    enc->add_option("--out-dir", enc_out_dir, "output directory for hashed filenames");
    mf.attach(enc);

    // generate
    auto* gen = app.add_subcommand("generate", "greedy decode against cached contexts");
    std::string gen_mode = "ape", gen_prefix, gen_query, gen_scaling = "aggregate", gen_out;
    std::vector<std::string> gen_caches;
    std::size_t gen_max_new = 16;
    double gen_t = 1.0, gen_s = 1.0;
    gen->add_option("--mode", gen_mode, "sequential | parallel | ape");
    gen->add_option("--cache", gen_caches, "cache files (.apekv), in order");
    gen->add_option("--prefix", gen_prefix, "shared prefix text");
    gen->add_option("--query", gen_query, "query text")->required();
    gen->add_option("--max-new", gen_max_new, "tokens to generate");
    gen->add_option("-T,--temperature", gen_t, "attention temperature in (0, 1]");
    gen->add_option("-S,--scale", gen_s, "scaling factor in (0, 1]");
    gen->add_option("--scaling-mode", gen_scaling, "aggregate | per-context");
    gen->add_option("--out", gen_out, "write JSON here instead of stdout");
    mf.attach(gen);

    // compare
    auto* cmp = app.add_subcommand("compare",
                                   "sequential vs parallel vs APE logit divergence");
    std::vector<std::string> cmp_contexts;
    std::string cmp_prefix, cmp_query, cmp_scaling = "aggregate", cmp_out;
    double cmp_t = 1.0, cmp_s = 1.0;
    cmp->add_option("--context", cmp_contexts, "context text files")->required();
    cmp->add_option("--prefix", cmp_prefix, "shared prefix text");
    cmp->add_option("--query", cmp_query, "query text")->required();
    cmp->add_option("-T,--temperature", cmp_t, "APE temperature");
    cmp->add_option("-S,--scale", cmp_s, "APE scaling factor");
    cmp->add_option("--scaling-mode", cmp_scaling, "aggregate | per-context");
    cmp->add_option("--out", cmp_out, "write CSV here instead of stdout");
    mf.attach(cmp);

    // diag
    auto* dia = app.add_subcommand("diag", "KV-state diagnostics, CSV output");
    std::string dia_profile, dia_corpus, dia_kind = "key", dia_query, dia_out;
    std::size_t dia_layer = 0;
    std::vector<std::string> dia_contexts;
    std::vector<double> dia_degrees;
    dia->add_option("--profile", dia_profile,
                    "key-similarity | initial-vs-rest | magnitude | qk-product | "
                    "rotation | lse-temperature")
        ->required();
    dia->add_option("--corpus", dia_corpus, "sample file, one sample per line");
    dia->add_option("--layer", dia_layer, "layer to profile");
    dia->add_option("--kind", dia_kind, "key | value");
    dia->add_option("--context", dia_contexts, "context files (rotation)");
    dia->add_option("--query", dia_query, "query text (rotation)");
    dia->add_option("--degrees", dia_degrees, "rotation degrees");
    dia->add_option("--out", dia_out, "write CSV here instead of stdout");
    mf.attach(dia);

    // tune
    auto* tun = app.add_subcommand("tune", "greedy hyperparameter search");
    std::string tun_validation, tun_scaling = "aggregate", tun_out;
    tun->add_option("--validation", tun_validation, "JSONL validation set")->required();
    tun->add_option("--scaling-mode", tun_scaling, "aggregate | per-context");
    tun->add_option("--out", tun_out, "write JSON here instead of stdout");
    mf.attach(tun);

    // simcache
    auto* simc = app.add_subcommand("simcache", "prefix-cache vs APE-cache hit rates");
    std::size_t sim_n = 4, sim_k = 3, sim_budget = 4;
    std::string sim_out;
    simc->add_option("-n,--contexts", sim_n, "number of contexts");
    simc->add_option("-k,--retrieve", sim_k, "contexts retrieved per query");
    simc->add_option("--budget", sim_budget, "cache budget in context-units");
    simc->add_option("--out", sim_out, "write JSON here instead of stdout");

    // flops
    auto* flp = app.add_subcommand("flops", "analytic prefill cost table");
    std::size_t flp_ctx_len = 256, flp_query_len = 32, flp_prefix_len = 0, flp_max_n = 8;
    std::string flp_out;
    flp->add_option("--context-len", flp_ctx_len, "tokens per context");
    flp->add_option("--query-len", flp_query_len, "query tokens");
    flp->add_option("--prefix-len", flp_prefix_len, "shared prefix tokens");
    flp->add_option("--max-contexts", flp_max_n, "table rows: 1..N contexts");
    flp->add_option("--out", flp_out, "write CSV here instead of stdout");
    mf.attach(flp);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // 0 covers --help / --version
    }

    try {
        if (*enc) {
            return cmd_encode(mf, enc_context, enc_prefix, enc_offset, enc_out, enc_out_dir);
        }
        if (*gen) {
            return cmd_generate(mf, gen_mode, gen_caches, gen_prefix, gen_query, gen_max_new,
                                gen_t, gen_s, gen_scaling, gen_out);
        }
        if (*cmp) {
            return cmd_compare(mf, cmp_contexts, cmp_prefix, cmp_query, cmp_t, cmp_s,
                               cmp_scaling, cmp_out);
        }
        if (*dia) {
            return cmd_diag(mf, dia_profile, dia_corpus, dia_layer, dia_kind, dia_contexts,
                            dia_query, dia_degrees, dia_out);
        }
        if (*tun) {
            return cmd_tune(mf, tun_validation, tun_scaling, tun_out);
        }
        if (*simc) {
            return cmd_simcache(sim_n, sim_k, sim_budget, sim_out);
        }
        if (*flp) {
            return cmd_flops(mf, flp_ctx_len, flp_query_len, flp_prefix_len, flp_max_n,
                             flp_out);
        }
    } catch (const ape::io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ape::not_found_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ape::format_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const ape::numeric_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const ape::value_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ape::shape_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
