#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "persona/autodiff.hpp"
#include "persona/errors.hpp"
#include "persona/scoring/nli.hpp"

namespace persona::scoring {

struct PairExample {
    Tokens query;
    Tokens persona;
    int label = 0;
};

struct PairClassifierConfig {
    int embed_dim = 32;
    int hidden = 64;
    int epochs = 40;
    int batch = 16;
    double lr = 1e-2;
    std::uint64_t seed = 7;
};

/// Sentence-pair relevance model: mean term embeddings u, v; features [u; v; |u-v|; u*v];
/// one tanh hidden layer; sigmoid output.
class PairClassifier final : public RelevanceBackend {
  public:
    PairClassifier() = default;

    static PairClassifier train(const std::vector<PairExample>& pairs, const PairClassifierConfig& cfg = {})
    {
        std::size_t pos = 0;
        for (const auto& p : pairs) {
            if (p.label != 0 && p.label != 1) {
                throw ArgumentError("pair labels must be 0 or 1");
            }
            pos += static_cast<std::size_t>(p.label);
        }
        if (pos < 2 || pairs.size() - pos < 2) {
            throw TrainingError(0, "pair classifier needs at least two examples of each label");
        }

        PairClassifier m;
        m.m_seed = cfg.seed;
        for (const auto& p : pairs) {
            for (const auto* s : {&p.query, &p.persona}) {
                for (const auto& t : terms(*s)) {
                    m.m_vocab.try_emplace(t, static_cast<int>(m.m_vocab.size()));
                }
            }
        }
        std::mt19937_64 rng(cfg.seed);
        auto vocab_rows = static_cast<Eigen::Index>(std::max<std::size_t>(m.m_vocab.size(), 1));
        m.m_params.add("embedding", ad::gaussian(vocab_rows, cfg.embed_dim, 0.3, rng));
        m.m_params.add("w1", ad::glorot(4 * cfg.embed_dim, cfg.hidden, rng));
        m.m_params.add("b1", ad::Matrix::Zero(1, cfg.hidden));
        m.m_params.add("w2", ad::glorot(cfg.hidden, 1, rng));
        m.m_params.add("b2", ad::Matrix::Zero(1, 1));

        std::vector<std::vector<int>> qids;
        std::vector<std::vector<int>> pids;
        for (const auto& p : pairs) {
            qids.push_back(m.ids(p.query));
            pids.push_back(m.ids(p.persona));
        }

        ad::Adam opt({.lr = cfg.lr, .clip_norm = 1.0});
        std::vector<std::size_t> order(pairs.size());
        std::iota(order.begin(), order.end(), 0);
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
                auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
                m.m_params.zero_grad();
                ad::Tape tape(&m.m_params);
                std::vector<ad::Var> losses;
                for (auto i = start; i < end; ++i) {
                    auto z = m.logit(tape, qids[order[i]], pids[order[i]]);
                    losses.push_back(tape.bce_with_logits(z, pairs[order[i]].label));
                }
                auto loss = tape.scale(tape.add_n(losses), 1.0 / static_cast<double>(losses.size()));
                if (!std::isfinite(tape.item(loss))) {
                    throw TrainingError(static_cast<std::size_t>(epoch), "pair classifier loss diverged");
                }
                tape.backward(loss);
                opt.step(m.m_params);
            }
        }
        return m;
    }

    double related(const Tokens& query, const Tokens& candidate) override
    {
        if (m_params.names().empty()) {
            throw BackendError("pair classifier has no parameters");
        }
        ad::Tape tape(&m_params);
        return ad::Tape::stable_sigmoid(tape.item(logit(tape, ids(query), ids(candidate))));
    }

    std::string name() const override { return "pair-classifier:seed=" + std::to_string(m_seed); }

    nlohmann::ordered_json to_json() const
    {
        nlohmann::ordered_json j;
        std::vector<std::string> vocab(m_vocab.size());
        for (const auto& [t, i] : m_vocab) {
            vocab[static_cast<std::size_t>(i)] = t;
        }
        j["seed"] = m_seed;
        j["vocab"] = vocab;
        for (const auto& name : m_params.names()) {
            const auto& v = m_params.value(name);
            nlohmann::ordered_json arr;
            arr["rows"] = v.rows();
            arr["cols"] = v.cols();
            std::vector<double> data(static_cast<std::size_t>(v.size()));
            for (Eigen::Index r = 0; r < v.rows(); ++r) {
                for (Eigen::Index c = 0; c < v.cols(); ++c) {
                    data[static_cast<std::size_t>(r * v.cols() + c)] = v(r, c);
                }
            }
            arr["data"] = data;
            j["params"][name] = arr;
        }
        return j;
    }

    static PairClassifier from_json(const nlohmann::json& j)
    {
        PairClassifier m;
        try {
            m.m_seed = j.at("seed").get<std::uint64_t>();
            auto vocab = j.at("vocab").get<std::vector<std::string>>();
            for (std::size_t i = 0; i < vocab.size(); ++i) {
                m.m_vocab.emplace(vocab[i], static_cast<int>(i));
            }
            for (const char* name : {"embedding", "w1", "b1", "w2", "b2"}) {
                const auto& arr = j.at("params").at(name);
                auto rows = arr.at("rows").get<Eigen::Index>();
                auto cols = arr.at("cols").get<Eigen::Index>();
                auto data = arr.at("data").get<std::vector<double>>();
                if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
                    throw ArgumentError(std::string("pair classifier array '") + name + "' has wrong size");
                }
                ad::Matrix v(rows, cols);
                for (Eigen::Index r = 0; r < rows; ++r) {
                    for (Eigen::Index c = 0; c < cols; ++c) {
                        v(r, c) = data[static_cast<std::size_t>(r * cols + c)];
                    }
                }
                m.m_params.add(name, std::move(v));
            }
        } catch (const nlohmann::json::exception& e) {
            throw ArgumentError(std::string("bad pair classifier document: ") + e.what());
        }
        return m;
    }

  private:
    /// Content words, or every word when a sentence has no content word.
    static Tokens terms(const Tokens& sentence)
    {
        Tokens out;
        for (const auto& t : sentence) {
            if (text::is_content(t)) {
                out.push_back(t);
            }
        }
        if (out.empty()) {
            for (const auto& t : sentence) {
                if (!text::is_punct(t)) {
                    out.push_back(t);
                }
            }
        }
        return out;
    }

    std::vector<int> ids(const Tokens& sentence) const
    {
        std::vector<int> out;
        for (const auto& t : terms(sentence)) {
            auto it = m_vocab.find(t);
            if (it != m_vocab.end()) {
                out.push_back(it->second);
            }
        }
        return out;
    }

    ad::Var sentence_vector(ad::Tape& tape, const std::vector<int>& ids) const
    {
        auto emb = tape.param("embedding");
        if (ids.empty()) {
            return tape.constant(ad::Matrix::Zero(1, tape.value(emb).cols()));
        }
        return tape.mean_rows(tape.gather_rows(emb, ids));
    }

    ad::Var logit(ad::Tape& tape, const std::vector<int>& q, const std::vector<int>& p) const
    {
        auto u = sentence_vector(tape, q);
        auto v = sentence_vector(tape, p);
        auto feats = tape.hstack({u, v, tape.abs(tape.sub(u, v)), tape.hadamard(u, v)});
        auto h = tape.tanh(tape.add_row(tape.matmul(feats, tape.param("w1")), tape.param("b1")));
        return tape.add_row(tape.matmul(h, tape.param("w2")), tape.param("b2"));
    }

    ad::ParameterSet m_params;
    std::unordered_map<std::string, int> m_vocab;
    std::uint64_t m_seed = 0;
};

}  // namespace persona::scoring
