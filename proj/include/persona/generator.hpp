#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/autodiff.hpp"
#include "persona/corpus.hpp"
#include "persona/errors.hpp"
#include "persona/model.hpp"

namespace persona::model {

// ---- example encoding ---------------------------------------------------------------------

/// Builds a vocabulary over every sentence of the examples plus any extra sentences
/// (typically the global persona collection, so retrieved personas stay in-vocabulary).
inline Vocabulary build_vocabulary(const std::vector<DialogueExample>& examples,
                                   const std::vector<Tokens>& extra = {})
{
    Vocabulary v;
    for (const auto& ex : examples) {
        for (const auto& p : ex.profile.personas()) {
            v.add_all(p.text);
        }
        v.add_all(ex.query);
        v.add_all(ex.response);
    }
    for (const auto& s : extra) {
        v.add_all(s);
    }
    return v;
}

namespace detail {

inline std::vector<int> clip_segment(std::vector<int> ids, int max_len, const char* what)
{
    if (ids.size() > static_cast<std::size_t>(max_len)) {
        std::cerr << "warning: " << what << " truncated from " << ids.size() << " to " << max_len << " tokens\n";
        ids.resize(static_cast<std::size_t>(max_len));
    }
    return ids;
}

}  // namespace detail

inline EncodedExample encode_example(const Vocabulary& vocab, const ModelConfig& cfg, const DialogueExample& ex)
{
    EncodedExample out;
    for (const auto& p : ex.profile.personas()) {
        out.personas.push_back(detail::clip_segment(vocab.encode(p.text), cfg.max_len, "persona"));
    }
    out.query = detail::clip_segment(vocab.encode(ex.query), cfg.max_len, "query");
    out.response = detail::clip_segment(vocab.encode(ex.response), cfg.max_len, "response");
    if (ex.persona_labels) {
        out.labels = *ex.persona_labels;
    }
    return out;
}

namespace detail {

inline void check_inputs(const ModelConfig& cfg, const std::vector<std::vector<int>>& personas,
                         const std::vector<int>& query)
{
    if (personas.empty()) {
        throw ArgumentError("at least one persona is required");
    }
    if (personas.size() > static_cast<std::size_t>(cfg.max_personas)) {
        throw ArgumentError("persona count " + std::to_string(personas.size()) + " exceeds max_personas " +
                            std::to_string(cfg.max_personas));
    }
    for (const auto& p : personas) {
        if (p.empty()) {
            throw ArgumentError("empty persona segment");
        }
    }
    if (query.empty()) {
        throw ArgumentError("empty query segment");
    }
    auto check_ids = [&](const std::vector<int>& ids) {
        for (int i : ids) {
            if (i < 0 || i >= cfg.vocab_size) {
                throw ArgumentError("token id " + std::to_string(i) + " outside the vocabulary");
            }
        }
    };
    for (const auto& p : personas) {
        check_ids(p);
    }
    check_ids(query);
}

// Inference tapes read parameters but never run backward, so the set is not modified.
inline ad::ParameterSet* readonly(const GeneratorModel& m)
{
    return const_cast<ad::ParameterSet*>(&m.params());
}

/// Read-out row `r` of a segment that attends to `prefix_rows` generated tokens. Rows past
/// the segment's end are computed as pad-token query rows at that position.
inline ad::Var readout_row(ad::Tape& t, const GeneratorModel& m, const std::vector<int>& ids, Segment seg,
                           const PrefixStates& dec, std::size_t prefix_rows, std::size_t r)
{
    if (r < ids.size()) {
        return m.run_segment(t, ids, seg, &dec, prefix_rows, {}, r);
    }
    return m.run_segment(t, ids, seg, &dec, prefix_rows, {static_cast<int>(r)}, ids.size());
}

/// Fusion weights as graph nodes; `uniform` yields 1/n constants.
struct WeightNodes {
    std::vector<ad::Var> weights;
    std::vector<ad::Var> pri_logits;
    std::vector<ad::Var> pri_attention;
};

inline WeightNodes prior_weights(ad::Tape& t, const GeneratorModel& m, const std::vector<ad::Var>& e_personas,
                                 ad::Var e_query, bool uniform)
{
    WeightNodes out;
    const double n = static_cast<double>(e_personas.size());
    for (auto e : e_personas) {
        if (uniform) {
            out.weights.push_back(t.scalar_constant(1.0 / n));
            continue;
        }
        auto [att, logit] = m.persona_attention(t, e, e_query, ScorerMode::prior);
        out.pri_attention.push_back(att);
        out.pri_logits.push_back(logit);
        out.weights.push_back(t.sigmoid(logit));
    }
    return out;
}

/// Next-token logits (1 x vocab) after `prefix` under fixed fusion weights.
inline ad::Var next_logits(ad::Tape& t, const GeneratorModel& m, const std::vector<std::vector<int>>& personas,
                           const std::vector<int>& query, const std::vector<ad::Var>& weights,
                           const std::vector<int>& prefix)
{
    std::vector<int> d{Vocabulary::bos};
    d.insert(d.end(), prefix.begin(), prefix.end());
    auto dec = m.run_decoder(t, d);
    const auto r = prefix.size();
    std::vector<ad::Var> fused;
    for (std::size_t i = 0; i < personas.size(); ++i) {
        fused.push_back(t.scale_by(readout_row(t, m, personas[i], Segment::persona, dec, r, r), weights[i]));
    }
    auto hp = t.add_n(fused);
    auto hq = readout_row(t, m, query, Segment::query, dec, r, r);
    auto hg = t.rows(dec.output, r, 1);
    return m.output_logits(t, t.scale(t.add_n({hq, hp, hg}), 1.0 / 3.0));
}

inline RowVector softmax(const Matrix& logits)
{
    RowVector z = logits.row(0);
    z.array() -= z.maxCoeff();
    z = z.array().exp().matrix();
    return z / z.sum();
}

}  // namespace detail

// ---- inference network pieces -------------------------------------------------------------

/// E and H for every persona and the query given a target prefix (token ids without <bos>).
/// H_padded extends each H to a shared row count so the three-way mean is defined.
inline SegmentEncodings encode_segments(const GeneratorModel& m, const std::vector<std::vector<int>>& personas,
                                        const std::vector<int>& query, const std::vector<int>& prefix)
{
    const auto& cfg = m.config();
    std::vector<std::vector<int>> ps;
    for (const auto& p : personas) {
        ps.push_back(detail::clip_segment(p, cfg.max_len, "persona"));
    }
    auto q = detail::clip_segment(query, cfg.max_len, "query");
    detail::check_inputs(cfg, ps, q);

    ad::Tape t(detail::readonly(m));
    std::vector<int> d{Vocabulary::bos};
    d.insert(d.end(), prefix.begin(), prefix.end());
    auto dec = m.run_decoder(t, d);
    const auto rows = std::max(static_cast<std::size_t>(cfg.max_len), d.size());

    auto encode = [&](const std::vector<int>& ids, Segment seg) {
        SegmentEncoding s;
        s.E = t.value(m.run_segment(t, ids, seg, nullptr, 0));
        std::vector<int> pads;
        for (auto i = ids.size(); i < rows; ++i) {
            pads.push_back(static_cast<int>(i));
        }
        s.H_padded = t.value(m.run_segment(t, ids, seg, &dec, prefix.size(), pads));
        s.H = s.H_padded.topRows(static_cast<Eigen::Index>(ids.size()));
        return s;
    };
    SegmentEncodings out;
    for (const auto& p : ps) {
        out.personas.push_back(encode(p, Segment::persona));
    }
    out.query = encode(q, Segment::query);
    out.prefix = t.value(dec.output);
    return out;
}

inline PersonaScore persona_attention(const GeneratorModel& m, const Matrix& e_persona, const Matrix& e_target,
                                      ScorerMode mode)
{
    ad::Tape t(detail::readonly(m));
    auto [att, logit] = m.persona_attention(t, t.constant(e_persona), t.constant(e_target), mode);
    return {t.value(att).row(0), ad::Tape::stable_sigmoid(t.item(logit))};
}

struct PersonaWeights {
    std::vector<double> w_pri;
    std::vector<double> w_post;
    std::vector<RowVector> A_pri;
    std::vector<RowVector> A_post;
};

/// Prior weights from the query and, when a response is given, posterior weights from it.
inline PersonaWeights persona_weights(const GeneratorModel& m, const std::vector<std::vector<int>>& personas,
                                      const std::vector<int>& query, const std::vector<int>& response = {})
{
    detail::check_inputs(m.config(), personas, query);
    ad::Tape t(detail::readonly(m));
    auto eq = m.run_segment(t, query, Segment::query, nullptr, 0);
    std::optional<ad::Var> eg;
    if (!response.empty()) {
        eg = m.run_segment(t, response, Segment::response, nullptr, 0);
    }
    PersonaWeights out;
    for (const auto& p : personas) {
        auto ep = m.run_segment(t, p, Segment::persona, nullptr, 0);
        auto [a, z] = m.persona_attention(t, ep, eq, ScorerMode::prior);
        out.A_pri.push_back(t.value(a).row(0));
        out.w_pri.push_back(ad::Tape::stable_sigmoid(t.item(z)));
        if (eg) {
            auto [ap, zp] = m.persona_attention(t, ep, *eg, ScorerMode::posterior);
            out.A_post.push_back(t.value(ap).row(0));
            out.w_post.push_back(ad::Tape::stable_sigmoid(t.item(zp)));
        }
    }
    return out;
}

inline Matrix fuse_personas(const std::vector<Matrix>& h_personas, const std::vector<double>& weights)
{
    if (h_personas.empty() || h_personas.size() != weights.size()) {
        throw ArgumentError("fuse_personas needs one weight per persona matrix");
    }
    Matrix out = Matrix::Zero(h_personas.front().rows(), h_personas.front().cols());
    for (std::size_t i = 0; i < h_personas.size(); ++i) {
        if (h_personas[i].rows() != out.rows() || h_personas[i].cols() != out.cols()) {
            throw ArgumentError("fuse_personas needs equal shapes");
        }
        out += weights[i] * h_personas[i];
    }
    return out;
}

/// Next-token distribution from the element-wise mean of the three matrices. H_prefix holds
/// the decoder states of [<bos>, prefix...]; its last row fixes the read-out position.
/// Missing trailing prefix rows are zero-padded up to the shared shape.
inline RowVector decode_step(const GeneratorModel& m, const Matrix& h_q, const Matrix& h_p, const Matrix& h_prefix)
{
    if (h_q.rows() != h_p.rows() || h_q.cols() != h_p.cols() || h_prefix.cols() != h_q.cols() ||
        h_prefix.rows() == 0 || h_prefix.rows() > h_q.rows()) {
        throw std::logic_error("decode_step: shape mismatch after padding");
    }
    Matrix g = Matrix::Zero(h_q.rows(), h_q.cols());
    g.topRows(h_prefix.rows()) = h_prefix;
    Matrix h_dec = (h_q + h_p + g) / 3.0;
    const auto r = h_prefix.rows() - 1;
    Matrix logits = h_dec.row(r) * m.params().value("tok_emb").transpose();
    return detail::softmax(logits);
}

// ---- training objective -------------------------------------------------------------------

struct LossGraph {
    ad::Var total;
    ad::Var l1;
    ad::Var l2;
    ad::Var l3;
};

/// Teacher-forced objective for one example on `t`.
inline LossGraph build_losses(ad::Tape& t, const GeneratorModel& m, const EncodedExample& ex,
                              const LossOptions& opts = {})
{
    detail::check_inputs(m.config(), ex.personas, ex.query);
    const auto n = ex.personas.size();
    if (ex.labels.size() != n) {
        throw ArgumentError("persona labels are missing or do not match the profile");
    }
    if (ex.response.empty()) {
        throw ArgumentError("empty response");
    }
    const double inv_n = 1.0 / static_cast<double>(n);

    std::vector<ad::Var> ep;
    for (const auto& p : ex.personas) {
        ep.push_back(m.run_segment(t, p, Segment::persona, nullptr, 0));
    }
    auto eq = m.run_segment(t, ex.query, Segment::query, nullptr, 0);

    LossGraph g;
    g.l1 = t.scalar_constant(0.0);
    g.l2 = t.scalar_constant(0.0);
    auto prior = detail::prior_weights(t, m, ep, eq, opts.ablation == Ablation::no_scorer);
    std::vector<ad::Var> weights = prior.weights;
    if (opts.ablation == Ablation::no_posterior) {
        std::vector<ad::Var> bce;
        for (std::size_t i = 0; i < n; ++i) {
            bce.push_back(t.bce_with_logits(prior.pri_logits[i], ex.labels[i]));
        }
        g.l1 = t.scale(t.add_n(bce), inv_n);
    } else if (opts.ablation == Ablation::full) {
        auto eg = m.run_segment(t, ex.response, Segment::response, nullptr, 0);
        std::vector<ad::Var> bce;
        std::vector<ad::Var> gaps;
        for (std::size_t i = 0; i < n; ++i) {
            auto [a_post, z_post] = m.persona_attention(t, ep[i], eg, ScorerMode::posterior);
            bce.push_back(t.bce_with_logits(z_post, ex.labels[i]));
            weights[i] = t.sigmoid(z_post);
            auto target = opts.detach_posterior ? t.detach(a_post) : a_post;
            gaps.push_back(t.sub(t.scalar_constant(1.0), t.cosine(target, prior.pri_attention[i])));
        }
        g.l1 = t.scale(t.add_n(bce), inv_n);
        g.l2 = t.scale(t.add_n(gaps), inv_n);
    }

    // Decoder sequence [<bos>, g_1 .. g_T]; step t reads row t-1 and predicts g_t, then <eos>.
    std::vector<int> d{Vocabulary::bos};
    d.insert(d.end(), ex.response.begin(), ex.response.end());
    auto dec = m.run_decoder(t, d);
    const auto steps = ex.response.size() + 1;
    std::vector<ad::Var> rows;
    std::vector<int> targets;
    for (std::size_t step = 1; step <= steps; ++step) {
        const auto r = step - 1;
        std::vector<ad::Var> fused;
        for (std::size_t i = 0; i < n; ++i) {
            auto h = (r == 0 && r < ex.personas[i].size())
                         ? t.rows(ep[i], 0, 1)
                         : detail::readout_row(t, m, ex.personas[i], Segment::persona, dec, r, r);
            fused.push_back(t.scale_by(h, weights[i]));
        }
        auto hq = r == 0 ? t.rows(eq, 0, 1) : detail::readout_row(t, m, ex.query, Segment::query, dec, r, r);
        auto hg = t.rows(dec.output, r, 1);
        rows.push_back(t.scale(t.add_n({hq, t.add_n(fused), hg}), 1.0 / 3.0));
        targets.push_back(step <= ex.response.size() ? ex.response[step - 1] : Vocabulary::eos);
    }
    auto logits = m.output_logits(t, t.vstack(rows));
    g.l3 = t.scale(t.cross_entropy(logits, targets), 1.0 / static_cast<double>(steps));
    g.total = t.add_n({g.l3, t.scale(g.l1, opts.lambda1), t.scale(g.l2, opts.lambda2)});
    return g;
}

inline LossBreakdown compute_losses(const GeneratorModel& m, const EncodedExample& ex, const LossOptions& opts = {})
{
    ad::Tape t(detail::readonly(m));
    auto g = build_losses(t, m, ex, opts);
    return {t.item(g.l1), t.item(g.l2), t.item(g.l3), t.item(g.total)};
}

// ---- training loop ------------------------------------------------------------------------

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch = 1;
    double lr = 1e-3;
    double clip_norm = 1.0;
    std::uint64_t seed = 1;
    LossOptions loss;
    std::function<void(std::size_t, const LossBreakdown&)> on_step;  // optional progress hook
    std::function<bool(std::size_t, const LossBreakdown&)> stop_when;  // optional early stop
};

struct TrainResult {
    std::vector<LossBreakdown> trace;  // batch-mean losses per optimizer step
};

/// Adam over minibatches drawn from seeded epoch shuffles. Throws TrainingError with the
/// step index when the loss stops being finite.
inline TrainResult train(GeneratorModel& m, const std::vector<EncodedExample>& data, const TrainConfig& cfg)
{
    if (data.empty()) {
        throw ArgumentError("training set is empty");
    }
    if (cfg.batch == 0) {
        throw ArgumentError("batch size must be positive");
    }
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;

    ad::Adam opt({.lr = cfg.lr, .clip_norm = cfg.clip_norm});
    TrainResult result;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        m.params().zero_grad();
        LossBreakdown mean;
        const double scale = 1.0 / static_cast<double>(cfg.batch);
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            const auto& ex = data[order[cursor++]];
            ad::Tape t(&m.params());
            auto g = build_losses(t, m, ex, cfg.loss);
            auto loss = t.scale(g.total, scale);
            if (!std::isfinite(t.item(loss))) {
                throw TrainingError(step, "non-finite loss at step " + std::to_string(step));
            }
            t.backward(loss);
            mean.l1 += t.item(g.l1) * scale;
            mean.l2 += t.item(g.l2) * scale;
            mean.l3 += t.item(g.l3) * scale;
            mean.total += t.item(g.total) * scale;
        }
        opt.step(m.params());
        result.trace.push_back(mean);
        if (cfg.on_step) {
            cfg.on_step(step, mean);
        }
        if (cfg.stop_when && cfg.stop_when(step, mean)) {
            break;
        }
    }
    return result;
}

// ---- generation ---------------------------------------------------------------------------

struct DecodeConfig {
    std::size_t max_len = 40;
    std::size_t beam = 1;         // 1 = greedy
    bool uniform_weights = false;  // scorer disabled
};

struct Generation {
    std::vector<int> ids;
    std::vector<double> w_pri;
};

/// Decodes a response with prior-weighted persona fusion.
inline Generation generate(const GeneratorModel& m, const std::vector<std::vector<int>>& personas_in,
                           const std::vector<int>& query_in, const DecodeConfig& dc = {})
{
    const auto& cfg = m.config();
    if (dc.beam == 0 || dc.beam > 4) {
        throw ArgumentError("beam width must be in 1..4");
    }
    if (dc.max_len == 0 || dc.max_len > static_cast<std::size_t>(cfg.positions() - 1)) {
        throw ArgumentError("decode length outside the position table");
    }
    std::vector<std::vector<int>> personas;
    for (const auto& p : personas_in) {
        personas.push_back(detail::clip_segment(p, cfg.max_len, "persona"));
    }
    auto query = detail::clip_segment(query_in, cfg.max_len, "query");
    detail::check_inputs(cfg, personas, query);

    Generation out;
    std::vector<double> w;
    {
        ad::Tape t(detail::readonly(m));
        std::vector<ad::Var> ep;
        for (const auto& p : personas) {
            ep.push_back(m.run_segment(t, p, Segment::persona, nullptr, 0));
        }
        auto eq = m.run_segment(t, query, Segment::query, nullptr, 0);
        auto prior = detail::prior_weights(t, m, ep, eq, dc.uniform_weights);
        for (auto v : prior.weights) {
            w.push_back(t.item(v));
        }
    }
    out.w_pri = w;

    auto distribution = [&](const std::vector<int>& prefix) {
        ad::Tape t(detail::readonly(m));
        std::vector<ad::Var> wv;
        for (double x : w) {
            wv.push_back(t.scalar_constant(x));
        }
        return detail::softmax(t.value(detail::next_logits(t, m, personas, query, wv, prefix)));
    };

    if (dc.beam == 1) {
        for (std::size_t step = 0; step < dc.max_len; ++step) {
            Eigen::Index best = 0;
            distribution(out.ids).maxCoeff(&best);
            if (best == Vocabulary::eos) {
                break;
            }
            out.ids.push_back(static_cast<int>(best));
        }
        return out;
    }

    struct Hyp {
        std::vector<int> ids;
        double logp = 0.0;
        bool done = false;
    };
    std::vector<Hyp> beams{Hyp{}};
    for (std::size_t step = 0; step < dc.max_len; ++step) {
        std::vector<Hyp> next;
        for (const auto& h : beams) {
            if (h.done) {
                next.push_back(h);
                continue;
            }
            auto p = distribution(h.ids);
            for (Eigen::Index tok = 0; tok < p.size(); ++tok) {
                if (tok == Vocabulary::pad || tok == Vocabulary::bos || p(tok) <= 0.0) {
                    continue;
                }
                Hyp e = h;
                e.logp += std::log(p(tok));
                if (tok == Vocabulary::eos) {
                    e.done = true;
                } else {
                    e.ids.push_back(static_cast<int>(tok));
                }
                next.push_back(std::move(e));
            }
        }
        std::stable_sort(next.begin(), next.end(), [](const Hyp& a, const Hyp& b) { return a.logp > b.logp; });
        next.resize(std::min(next.size(), dc.beam));
        beams = std::move(next);
        if (std::all_of(beams.begin(), beams.end(), [](const Hyp& h) { return h.done; })) {
            break;
        }
    }
    out.ids = beams.front().ids;
    return out;
}

// ---- checkpoints --------------------------------------------------------------------------

struct Checkpoint {
    GeneratorModel model;
    Vocabulary vocab;
    Ablation ablation = Ablation::full;

    nlohmann::ordered_json to_json() const
    {
        auto j = model.to_json();
        j["vocab"] = vocab.tokens();
        j["ablation"] = to_string(ablation);
        return j;
    }

    static Checkpoint from_json(const nlohmann::json& j)
    {
        try {
            Checkpoint c;
            c.model = GeneratorModel::from_json(j);
            c.vocab = Vocabulary::from_tokens(j.at("vocab").get<std::vector<std::string>>());
            c.ablation = parse_ablation(j.at("ablation").get<std::string>());
            if (c.vocab.size() != c.model.config().vocab_size) {
                throw ArgumentError("checkpoint vocabulary size does not match the model");
            }
            return c;
        } catch (const nlohmann::json::exception& e) {
            throw ArgumentError(std::string("bad checkpoint document: ") + e.what());
        }
    }

    static Checkpoint load(const std::filesystem::path& path)
    {
        std::ifstream in(path);
        if (!in) {
            throw ArgumentError("cannot open checkpoint " + path.string());
        }
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ArgumentError("checkpoint " + path.string() + " is not JSON: " + e.what());
        }
        return from_json(j);
    }
};

}  // namespace persona::model
