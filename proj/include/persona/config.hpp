#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "persona/errors.hpp"
#include "persona/model.hpp"
#include "persona/prm.hpp"
#include "persona/scoring/backends.hpp"

namespace persona::config {

/// Relevance backend value that selects the classifier produced by the train-scorer stage.
inline const std::string trained_relevance = "trained";

struct PipelineConfig {
    // paths
    std::filesystem::path corpus;
    std::filesystem::path collection;   // optional ConvAI2 file; default: built from the corpus
    std::filesystem::path annotations;  // optional annotation JSONL for DCG@3
    std::filesystem::path out = "runs";

    double test_fraction = 0.2;
    double tfidf_threshold = 0.25;

    prm::RetrievalConfig retrieval;
    model::ModelConfig model;

    std::size_t train_steps = 600;
    std::size_t train_batch = 1;
    double train_lr = 1e-3;
    double train_clip = 1.0;
    model::Ablation ablation = model::Ablation::full;
    model::LossOptions loss;

    std::size_t decode_max_len = 40;
    std::size_t decode_beam = 1;

    std::string prm_nli = "lexical";
    std::string eval_nli = "lexical:instance=eval";
    std::string relevance = trained_relevance;
    bool memo = false;

    std::uint64_t seed = 1;
};

namespace detail {

inline std::string fmt_double(double v)
{
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& key, const std::string& v)
{
    double out = 0.0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) {
        throw ConfigError(key, "expected a number, got '" + v + "'");
    }
    return out;
}

template <typename T>
T parse_unsigned(const std::string& key, const std::string& v)
{
    T out{};
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) {
        throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true") {
        return true;
    }
    if (v == "false") {
        return false;
    }
    throw ConfigError(key, "expected true or false, got '" + v + "'");
}

struct Key {
    std::string name;
    std::function<void(PipelineConfig&, const std::string&)> set;
    std::function<std::string(const PipelineConfig&)> get;
    bool is_path = false;
};

inline Key path_key(std::string name, std::filesystem::path PipelineConfig::*m)
{
    return {name, [m](PipelineConfig& c, const std::string& v) { c.*m = v; },
            [m](const PipelineConfig& c) { return (c.*m).string(); }, true};
}

template <typename T>
Key number_key(std::string name, std::function<T&(PipelineConfig&)> ref)
{
    return {name,
            [name, ref](PipelineConfig& c, const std::string& v) {
                if constexpr (std::is_floating_point_v<T>) {
                    ref(c) = parse_double(name, v);
                } else {
                    ref(c) = static_cast<T>(parse_unsigned<std::uint64_t>(name, v));
                }
            },
            [ref](const PipelineConfig& c) {
                auto& cc = const_cast<PipelineConfig&>(c);
                if constexpr (std::is_floating_point_v<T>) {
                    return fmt_double(ref(cc));
                } else {
                    return std::to_string(ref(cc));
                }
            }};
}

inline Key string_key(std::string name, std::string PipelineConfig::*m)
{
    return {name, [m](PipelineConfig& c, const std::string& v) { c.*m = v; },
            [m](const PipelineConfig& c) { return c.*m; }};
}

/// Every accepted key in canonical output order.
inline const std::vector<Key>& keys()
{
    using C = PipelineConfig;
    static const std::vector<Key> table{
        path_key("paths.corpus", &C::corpus),
        path_key("paths.collection", &C::collection),
        path_key("paths.annotations", &C::annotations),
        path_key("paths.out", &C::out),
        number_key<double>("data.test_fraction", [](C& c) -> double& { return c.test_fraction; }),
        number_key<double>("tfidf.threshold", [](C& c) -> double& { return c.tfidf_threshold; }),
        {"retrieval.strategy",
         [](C& c, const std::string& v) {
             try {
                 c.retrieval.strategy = prm::parse_strategy(v);
             } catch (const ArgumentError& e) {
                 throw ConfigError("retrieval.strategy", e.what());
             }
         },
         [](const C& c) { return prm::to_string(c.retrieval.strategy); }},
        number_key<double>("retrieval.alpha", [](C& c) -> double& { return c.retrieval.alpha; }),
        number_key<double>("retrieval.beta", [](C& c) -> double& { return c.retrieval.beta; }),
        number_key<double>("retrieval.gamma", [](C& c) -> double& { return c.retrieval.gamma; }),
        number_key<std::size_t>("retrieval.pool_r", [](C& c) -> std::size_t& { return c.retrieval.pool_r; }),
        number_key<std::size_t>("retrieval.pool_c", [](C& c) -> std::size_t& { return c.retrieval.pool_c; }),
        number_key<int>("model.embed_dim", [](C& c) -> int& { return c.model.embed_dim; }),
        number_key<int>("model.layers", [](C& c) -> int& { return c.model.layers; }),
        number_key<int>("model.heads", [](C& c) -> int& { return c.model.heads; }),
        number_key<int>("model.scorer_heads", [](C& c) -> int& { return c.model.scorer_heads; }),
        number_key<int>("model.max_len", [](C& c) -> int& { return c.model.max_len; }),
        number_key<int>("model.max_personas", [](C& c) -> int& { return c.model.max_personas; }),
        number_key<std::size_t>("train.steps", [](C& c) -> std::size_t& { return c.train_steps; }),
        number_key<std::size_t>("train.batch", [](C& c) -> std::size_t& { return c.train_batch; }),
        number_key<double>("train.lr", [](C& c) -> double& { return c.train_lr; }),
        number_key<double>("train.clip", [](C& c) -> double& { return c.train_clip; }),
        {"train.ablation",
         [](C& c, const std::string& v) {
             try {
                 c.ablation = model::parse_ablation(v);
             } catch (const ArgumentError& e) {
                 throw ConfigError("train.ablation", e.what());
             }
         },
         [](const C& c) { return model::to_string(c.ablation); }},
        number_key<double>("loss.lambda1", [](C& c) -> double& { return c.loss.lambda1; }),
        number_key<double>("loss.lambda2", [](C& c) -> double& { return c.loss.lambda2; }),
        {"loss.detach_posterior",
         [](C& c, const std::string& v) { c.loss.detach_posterior = parse_bool("loss.detach_posterior", v); },
         [](const C& c) { return std::string(c.loss.detach_posterior ? "true" : "false"); }},
        number_key<std::size_t>("decode.max_len", [](C& c) -> std::size_t& { return c.decode_max_len; }),
        number_key<std::size_t>("decode.beam", [](C& c) -> std::size_t& { return c.decode_beam; }),
        string_key("backends.prm_nli", &C::prm_nli),
        string_key("backends.eval_nli", &C::eval_nli),
        string_key("backends.relevance", &C::relevance),
        {"backends.memo", [](C& c, const std::string& v) { c.memo = parse_bool("backends.memo", v); },
         [](const C& c) { return std::string(c.memo ? "true" : "false"); }},
        number_key<std::uint64_t>("seed", [](C& c) -> std::uint64_t& { return c.seed; }),
    };
    return table;
}

inline std::string trim(const std::string& s)
{
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Range and cross-key checks; throws ConfigError naming the offending key.
inline void validate(const PipelineConfig& c)
{
    if (c.corpus.empty()) {
        throw ConfigError("paths.corpus", "required");
    }
    if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) {
        throw ConfigError("data.test_fraction", "must lie strictly between 0 and 1");
    }
    if (!(c.tfidf_threshold >= 0.0 && c.tfidf_threshold <= 1.0)) {
        throw ConfigError("tfidf.threshold", "must lie in [0, 1]");
    }
    try {
        c.retrieval.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError("retrieval.pool_c", e.what());
    }
    auto m = c.model;
    m.vocab_size = 5;
    try {
        m.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError("model.embed_dim", e.what());
    }
    if (c.train_batch == 0) {
        throw ConfigError("train.batch", "must be positive");
    }
    if (c.train_lr < 0.0) {
        throw ConfigError("train.lr", "must be non-negative");
    }
    if (c.decode_beam == 0 || c.decode_beam > 4) {
        throw ConfigError("decode.beam", "must be in 1..4");
    }
    if (c.decode_max_len == 0 || c.decode_max_len > static_cast<std::size_t>(c.model.max_decode_len)) {
        throw ConfigError("decode.max_len", "must be in 1.." + std::to_string(c.model.max_decode_len));
    }
    for (const auto& [key, value] : {std::pair<const char*, const std::string&>{"backends.prm_nli", c.prm_nli},
                                     {"backends.eval_nli", c.eval_nli}}) {
        try {
            auto spec = scoring::ScoringBackendSpec::parse(value);
            if (spec.kind == scoring::ScoringBackendSpec::Kind::pair_classifier) {
                throw ConfigError(key, "pair-classifier backends do not give NLI verdicts");
            }
        } catch (const ArgumentError& e) {
            throw ConfigError(key, e.what());
        }
    }
    if (scoring::ScoringBackendSpec::parse(c.prm_nli) == scoring::ScoringBackendSpec::parse(c.eval_nli)) {
        throw ConfigError("backends.eval_nli", "evaluation NLI must be a different instance from backends.prm_nli");
    }
    if (c.relevance != trained_relevance) {
        try {
            auto spec = scoring::ScoringBackendSpec::parse(c.relevance);
            if (spec.kind == scoring::ScoringBackendSpec::Kind::external) {
                throw ConfigError("backends.relevance", "external backends only give NLI verdicts");
            }
        } catch (const ArgumentError& e) {
            throw ConfigError("backends.relevance", e.what());
        }
    }
}

/// Parses "key = value" lines; '#' starts a comment line. Unknown keys and repeated keys
/// are rejected. Relative paths resolve against `base`.
inline PipelineConfig parse(std::istream& in, const std::filesystem::path& base = {})
{
    PipelineConfig c;
    std::map<std::string, bool> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') {
            continue;
        }
        auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no), "expected key = value");
        }
        auto key = detail::trim(t.substr(0, eq));
        auto value = detail::trim(t.substr(eq + 1));
        const detail::Key* k = nullptr;
        for (const auto& cand : detail::keys()) {
            if (cand.name == key) {
                k = &cand;
            }
        }
        if (!k) {
            throw ConfigError(key, "unknown key");
        }
        if (seen[key]) {
            throw ConfigError(key, "given twice");
        }
        seen[key] = true;
        k->set(c, value);
        if (k->is_path && !value.empty() && !base.empty()) {
            std::filesystem::path p = k->get(c);
            if (p.is_relative()) {
                k->set(c, (base / p).lexically_normal().string());
            }
        }
    }
    validate(c);
    return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("--config", "cannot open " + path.string());
    }
    auto c = parse(in, path.parent_path());
    if (!std::filesystem::exists(c.corpus)) {
        throw ConfigError("paths.corpus", "no such file " + c.corpus.string());
    }
    for (const auto& [key, p] : {std::pair<const char*, const std::filesystem::path&>{"paths.collection", c.collection},
                                 {"paths.annotations", c.annotations}}) {
        if (!p.empty() && !std::filesystem::exists(p)) {
            throw ConfigError(key, "no such file " + p.string());
        }
    }
    return c;
}

/// Canonical text: every key, fixed order, shortest round-trip number formatting.
inline std::string save(const PipelineConfig& c)
{
    std::ostringstream out;
    for (const auto& k : detail::keys()) {
        out << k.name << " = " << k.get(c) << '\n';
    }
    return out.str();
}

/// 64-bit FNV-1a over the canonical text without the output root, as 16 hex digits.
inline std::string config_hash(const PipelineConfig& c)
{
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& k : detail::keys()) {
        if (k.name == "paths.out") {
            continue;
        }
        for (char ch : k.name + "=" + k.get(c) + "\n") {
            h ^= static_cast<unsigned char>(ch);
            h *= 1099511628211ull;
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace persona::config
