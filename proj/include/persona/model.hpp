#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "persona/autodiff.hpp"
#include "persona/corpus.hpp"
#include "persona/errors.hpp"

namespace persona::model {

using ad::Matrix;
using ad::Var;
using RowVector = Eigen::RowVectorXd;

struct ModelConfig {
    int vocab_size = 0;
    int embed_dim = 64;
    int layers = 2;
    int heads = 4;
    int scorer_heads = 4;
    int max_len = 32;          // tokens per segment
    int max_personas = 6;
    int max_decode_len = 40;   // generation cap
    std::uint64_t seed = 1;

    void validate() const
    {
        if (vocab_size <= 4 || embed_dim <= 0 || layers <= 0 || heads <= 0 || scorer_heads <= 0 ||
            max_len <= 0 || max_personas <= 0 || max_decode_len <= 0) {
            throw ArgumentError("model config values must be positive (vocab_size > 4)");
        }
        if (embed_dim % heads != 0 || embed_dim % scorer_heads != 0) {
            throw ArgumentError("embed_dim must be divisible by heads and scorer_heads");
        }
    }

    /// Size of the position table: segments, padded read-out rows and the decoder sequence.
    int positions() const { return std::max(max_len, max_decode_len) + 2; }

    bool operator==(const ModelConfig&) const = default;
};

/// Word-level vocabulary with four reserved ids.
class Vocabulary {
  public:
    static constexpr int pad = 0;
    static constexpr int unk = 1;
    static constexpr int bos = 2;
    static constexpr int eos = 3;

    Vocabulary() : m_tokens{"<pad>", "<unk>", "<bos>", "<eos>"}
    {
        for (int i = 0; i < 4; ++i) {
            m_index.emplace(m_tokens[static_cast<std::size_t>(i)], i);
        }
    }

    int add(const std::string& token)
    {
        auto [it, inserted] = m_index.try_emplace(token, static_cast<int>(m_tokens.size()));
        if (inserted) {
            m_tokens.push_back(token);
        }
        return it->second;
    }

    void add_all(const Tokens& tokens)
    {
        for (const auto& t : tokens) {
            add(t);
        }
    }

    int id(const std::string& token) const
    {
        auto it = m_index.find(token);
        return it == m_index.end() ? unk : it->second;
    }

    std::vector<int> encode(const Tokens& tokens) const
    {
        std::vector<int> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) {
            out.push_back(id(t));
        }
        return out;
    }

    Tokens decode(const std::vector<int>& ids) const
    {
        Tokens out;
        for (int i : ids) {
            if (i == eos) {
                break;
            }
            if (i == pad || i == bos) {
                continue;
            }
            out.push_back(m_tokens.at(static_cast<std::size_t>(i)));
        }
        return out;
    }

    int size() const noexcept { return static_cast<int>(m_tokens.size()); }
    const std::vector<std::string>& tokens() const noexcept { return m_tokens; }

    static Vocabulary from_tokens(const std::vector<std::string>& tokens)
    {
        if (tokens.size() < 4 || tokens[0] != "<pad>" || tokens[1] != "<unk>" || tokens[2] != "<bos>" ||
            tokens[3] != "<eos>") {
            throw ArgumentError("vocabulary must start with <pad> <unk> <bos> <eos>");
        }
        Vocabulary v;
        for (std::size_t i = 4; i < tokens.size(); ++i) {
            v.add(tokens[i]);
        }
        return v;
    }

  private:
    std::vector<std::string> m_tokens;
    std::unordered_map<std::string, int> m_index;
};

enum class Segment : int { persona = 0, query = 1, response = 2 };

enum class ScorerMode { prior, posterior };

/// Which parts of the persona scorer are active.
///   full          posterior weights fuse personas in training, BCE on w_post, cosine tie of
///                 prior to posterior attention
///   no_posterior  prior weights fuse personas in training, BCE on w_pri, no cosine term
///   no_scorer     uniform 1/n weights everywhere, no scorer losses
enum class Ablation { full, no_posterior, no_scorer };

inline std::string to_string(Ablation a)
{
    switch (a) {
    case Ablation::full:
        return "full";
    case Ablation::no_posterior:
        return "no_posterior";
    case Ablation::no_scorer:
        return "no_scorer";
    }
    return {};
}

inline Ablation parse_ablation(const std::string& s)
{
    for (auto a : {Ablation::full, Ablation::no_posterior, Ablation::no_scorer}) {
        if (to_string(a) == s) {
            return a;
        }
    }
    throw ArgumentError("unknown ablation '" + s + "'");
}

struct LossOptions {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    bool detach_posterior = false;
    Ablation ablation = Ablation::full;
};

/// Token-id view of one training example.
struct EncodedExample {
    std::vector<std::vector<int>> personas;
    std::vector<int> query;
    std::vector<int> response;
    std::vector<int> labels;
};

struct SegmentEncoding {
    Matrix E;  // context-free, one row per segment token
    Matrix H;  // attending to the target prefix, one row per segment token
    Matrix H_padded;  // H followed by computed pad rows up to the common decode length
};

struct SegmentEncodings {
    std::vector<SegmentEncoding> personas;
    SegmentEncoding query;
    Matrix prefix;  // decoder states of [<bos>, prefix...]
};

struct PersonaScore {
    RowVector attention;  // pooled multi-head attention output
    double weight = 0.5;
};

struct LossBreakdown {
    double l1 = 0.0;
    double l2 = 0.0;
    double l3 = 0.0;
    double total = 0.0;
};

/// Decoder-side keys and values at every layer, reused by all segments that attend to the
/// target prefix.
struct PrefixStates {
    std::vector<Var> keys;
    std::vector<Var> values;
    Var output{};  // final-normalised decoder states
    std::size_t rows = 0;
};

/// Transformer stack shared by every segment and by the decoder, plus the prior/posterior
/// persona scorer heads and a two-layer scorer MLP. Output projection is tied to the token
/// embedding.
class GeneratorModel {
  public:
    GeneratorModel() = default;

    explicit GeneratorModel(const ModelConfig& cfg) : m_cfg(cfg)
    {
        cfg.validate();
        std::mt19937_64 rng(cfg.seed);
        const auto d = cfg.embed_dim;
        m_params.add("tok_emb", ad::gaussian(cfg.vocab_size, d, 0.1, rng));
        m_params.add("pos_emb", ad::gaussian(cfg.positions(), d, 0.1, rng));
        m_params.add("seg_emb", ad::gaussian(3, d, 0.1, rng));
        for (int l = 0; l < cfg.layers; ++l) {
            auto p = layer_prefix(l);
            add_norm(p + "ln1");
            add_linear(p + "attn.q", d, d, rng);
            add_linear(p + "attn.k", d, d, rng);
            add_linear(p + "attn.v", d, d, rng);
            add_linear(p + "attn.o", d, d, rng);
            add_norm(p + "ln2");
            add_linear(p + "ffn.1", d, 4 * d, rng);
            add_linear(p + "ffn.2", 4 * d, d, rng);
        }
        add_norm("ln_f");
        for (const char* head : {"pri", "post"}) {
            for (const char* proj : {".q", ".k", ".v", ".o"}) {
                add_linear(std::string(head) + proj, d, d, rng);
            }
        }
        add_linear("mlp.1", d, d, rng);
        add_linear("mlp.2", d, 1, rng);
    }

    const ModelConfig& config() const noexcept { return m_cfg; }
    ad::ParameterSet& params() noexcept { return m_params; }
    const ad::ParameterSet& params() const noexcept { return m_params; }

    /// Copies the posterior scorer head into the prior head.
    void copy_posterior_to_prior()
    {
        for (const char* proj : {".q", ".k", ".v", ".o"}) {
            for (const char* part : {".w", ".b"}) {
                m_params.value(std::string("pri") + proj + part) = m_params.value(std::string("post") + proj + part);
            }
        }
    }

    // ---- graph builders (used by training and inference) ---------------------------------

    Var embed(ad::Tape& t, const std::vector<int>& ids, const std::vector<int>& positions, Segment seg) const
    {
        auto tok = t.gather_rows(t.param("tok_emb"), ids);
        auto pos = t.gather_rows(t.param("pos_emb"), positions);
        std::vector<int> segs(ids.size(), static_cast<int>(seg));
        auto sg = t.gather_rows(t.param("seg_emb"), segs);
        return t.add_n({tok, pos, sg});
    }

    /// Causal pass over the decoder sequence [<bos>, y_1, ...]; keeps per-layer keys/values
    /// for segments that attend to the prefix.
    PrefixStates run_decoder(ad::Tape& t, const std::vector<int>& ids) const
    {
        const auto n = ids.size();
        check_positions(n);
        PrefixStates out;
        out.rows = n;
        std::vector<int> pos(n);
        for (std::size_t i = 0; i < n; ++i) {
            pos[i] = static_cast<int>(i);
        }
        auto x = embed(t, ids, pos, Segment::response);
        ad::Mask causal = ad::Mask::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), false);
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
            for (Eigen::Index j = 0; j <= i; ++j) {
                causal(i, j) = true;
            }
        }
        for (int l = 0; l < m_cfg.layers; ++l) {
            auto p = layer_prefix(l);
            auto h = norm(t, x, p + "ln1");
            auto q = linear(t, h, p + "attn.q");
            auto k = linear(t, h, p + "attn.k");
            auto v = linear(t, h, p + "attn.v");
            out.keys.push_back(k);
            out.values.push_back(v);
            auto a = linear(t, t.attention(q, k, v, m_cfg.heads, &causal), p + "attn.o");
            x = t.add(x, a);
            x = t.add(x, ffn(t, x, p));
        }
        out.output = norm(t, x, "ln_f");
        return out;
    }

    /// Runs one segment through the stack. Query rows are the segment tokens followed by pad
    /// rows at `pad_positions`; keys are the segment tokens plus decoder rows 1..prefix_rows
    /// (the generated tokens, excluding <bos>). With `select_row` only that query row is
    /// carried through the last layer and returned.
    Var run_segment(ad::Tape& t, const std::vector<int>& ids, Segment seg, const PrefixStates* prefix,
                    std::size_t prefix_rows, const std::vector<int>& pad_positions = {},
                    std::optional<std::size_t> select_row = std::nullopt) const
    {
        const auto n = ids.size();
        if (n == 0) {
            throw ArgumentError("segment is empty");
        }
        if (prefix_rows > 0 && (!prefix || prefix_rows + 1 > prefix->rows)) {
            throw std::logic_error("prefix rows exceed decoder states");
        }
        std::vector<int> all_ids = ids;
        std::vector<int> pos(n);
        for (std::size_t i = 0; i < n; ++i) {
            pos[i] = static_cast<int>(i);
        }
        for (int p : pad_positions) {
            check_positions(static_cast<std::size_t>(p) + 1);
            all_ids.push_back(Vocabulary::pad);
            pos.push_back(p);
        }
        check_positions(n);
        auto x = embed(t, all_ids, pos, seg);
        const bool has_pads = !pad_positions.empty();
        for (int l = 0; l < m_cfg.layers; ++l) {
            auto p = layer_prefix(l);
            const bool last = l + 1 == m_cfg.layers;
            auto h = norm(t, x, p + "ln1");
            auto h_real = has_pads ? t.rows(h, 0, n) : h;
            auto k = linear(t, h_real, p + "attn.k");
            auto v = linear(t, h_real, p + "attn.v");
            if (prefix_rows > 0) {
                k = t.vstack({k, t.rows(prefix->keys[static_cast<std::size_t>(l)], 1, prefix_rows)});
                v = t.vstack({v, t.rows(prefix->values[static_cast<std::size_t>(l)], 1, prefix_rows)});
            }
            if (last && select_row) {
                x = t.rows(x, *select_row, 1);
                h = t.rows(h, *select_row, 1);
            }
            auto q = linear(t, h, p + "attn.q");
            auto a = linear(t, t.attention(q, k, v, m_cfg.heads), p + "attn.o");
            x = t.add(x, a);
            x = t.add(x, ffn(t, x, p));
        }
        return norm(t, x, "ln_f");
    }

    /// Pooled multi-head attention of persona rows over target rows and its scorer logit.
    std::pair<Var, Var> persona_attention(ad::Tape& t, Var e_persona, Var e_target, ScorerMode mode) const
    {
        const std::string head = mode == ScorerMode::prior ? "pri" : "post";
        if (t.value(e_persona).cols() != m_cfg.embed_dim || t.value(e_target).cols() != m_cfg.embed_dim) {
            throw std::logic_error("persona_attention: dimension mismatch");
        }
        auto q = linear(t, e_persona, head + ".q");
        auto k = linear(t, e_target, head + ".k");
        auto v = linear(t, e_target, head + ".v");
        auto att = linear(t, t.attention(q, k, v, m_cfg.scorer_heads), head + ".o");
        auto pooled = t.mean_rows(att);
        auto hidden = t.tanh(linear(t, pooled, "mlp.1"));
        auto logit = linear(t, hidden, "mlp.2");
        return {pooled, logit};
    }

    Var output_logits(ad::Tape& t, Var rows) const { return t.matmul_nt(rows, t.param("tok_emb")); }

    // ---- serialization --------------------------------------------------------------------

    nlohmann::ordered_json to_json() const
    {
        nlohmann::ordered_json j;
        j["config"] = config_to_json(m_cfg);
        for (const auto& name : m_params.names()) {
            const auto& v = m_params.value(name);
            nlohmann::ordered_json arr;
            arr["rows"] = v.rows();
            arr["cols"] = v.cols();
            std::vector<double> data;
            data.reserve(static_cast<std::size_t>(v.size()));
            for (Eigen::Index r = 0; r < v.rows(); ++r) {
                for (Eigen::Index c = 0; c < v.cols(); ++c) {
                    data.push_back(v(r, c));
                }
            }
            arr["data"] = std::move(data);
            j["params"][name] = std::move(arr);
        }
        return j;
    }

    static GeneratorModel from_json(const nlohmann::json& j)
    {
        GeneratorModel m(config_from_json(j.at("config")));
        for (const auto& name : m.m_params.names()) {
            const auto& arr = j.at("params").at(name);
            auto& v = m.m_params.value(name);
            auto data = arr.at("data").get<std::vector<double>>();
            if (arr.at("rows").get<Eigen::Index>() != v.rows() || arr.at("cols").get<Eigen::Index>() != v.cols() ||
                static_cast<Eigen::Index>(data.size()) != v.size()) {
                throw ArgumentError("checkpoint array '" + name + "' has the wrong shape");
            }
            std::size_t i = 0;
            for (Eigen::Index r = 0; r < v.rows(); ++r) {
                for (Eigen::Index c = 0; c < v.cols(); ++c) {
                    v(r, c) = data[i++];
                }
            }
        }
        return m;
    }

    static nlohmann::ordered_json config_to_json(const ModelConfig& c)
    {
        nlohmann::ordered_json j;
        j["vocab_size"] = c.vocab_size;
        j["embed_dim"] = c.embed_dim;
        j["layers"] = c.layers;
        j["heads"] = c.heads;
        j["scorer_heads"] = c.scorer_heads;
        j["max_len"] = c.max_len;
        j["max_personas"] = c.max_personas;
        j["max_decode_len"] = c.max_decode_len;
        j["seed"] = c.seed;
        return j;
    }

    static ModelConfig config_from_json(const nlohmann::json& j)
    {
        ModelConfig c;
        c.vocab_size = j.at("vocab_size").get<int>();
        c.embed_dim = j.at("embed_dim").get<int>();
        c.layers = j.at("layers").get<int>();
        c.heads = j.at("heads").get<int>();
        c.scorer_heads = j.at("scorer_heads").get<int>();
        c.max_len = j.at("max_len").get<int>();
        c.max_personas = j.at("max_personas").get<int>();
        c.max_decode_len = j.at("max_decode_len").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        return c;
    }

  private:
    static std::string layer_prefix(int l) { return "layer" + std::to_string(l) + "."; }

    void add_linear(const std::string& name, int in, int out, std::mt19937_64& rng)
    {
        m_params.add(name + ".w", ad::glorot(in, out, rng));
        m_params.add(name + ".b", Matrix::Zero(1, out));
    }

    void add_norm(const std::string& name)
    {
        m_params.add(name + ".g", Matrix::Ones(1, m_cfg.embed_dim));
        m_params.add(name + ".b", Matrix::Zero(1, m_cfg.embed_dim));
    }

    Var linear(ad::Tape& t, Var x, const std::string& name) const
    {
        return t.add_row(t.matmul(x, t.param(name + ".w")), t.param(name + ".b"));
    }

    Var norm(ad::Tape& t, Var x, const std::string& name) const
    {
        return t.layer_norm(x, t.param(name + ".g"), t.param(name + ".b"));
    }

    Var ffn(ad::Tape& t, Var x, const std::string& p) const
    {
        auto h = norm(t, x, p + "ln2");
        return linear(t, t.gelu(linear(t, h, p + "ffn.1")), p + "ffn.2");
    }

    void check_positions(std::size_t n) const
    {
        if (n > static_cast<std::size_t>(m_cfg.positions())) {
            throw ArgumentError("sequence longer than the position table");
        }
    }

    ModelConfig m_cfg;
    ad::ParameterSet m_params;
};

}  // namespace persona::model
