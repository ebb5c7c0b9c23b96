#pragma once

#include <cmath>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "persona/corpus.hpp"

namespace persona::scoring {

/// Okapi BM25 over a persona collection. Terms are word tokens (punctuation dropped);
/// each distinct query term contributes once. idf uses the non-negative form
/// ln(1 + (N - df + 0.5) / (df + 0.5)) so tiny collections still score positively.
class Bm25Index {
  public:
    static constexpr double default_k1 = 1.2;
    static constexpr double default_b = 0.75;

    explicit Bm25Index(const GlobalPersonaCollection& collection, double k1 = default_k1,
                       double b = default_b)
        : m_k1(k1), m_b(b), m_docs(collection.size())
    {
        double total = 0.0;
        for (const auto& p : collection.personas()) {
            auto& doc = m_docs[p.id];
            for (const auto& tok : p.text) {
                if (!text::is_punct(tok)) {
                    ++doc.tf[tok];
                    ++doc.length;
                }
            }
            for (const auto& [term, _] : doc.tf) {
                ++m_df[term];
            }
            total += static_cast<double>(doc.length);
        }
        m_avgdl = m_docs.empty() ? 0.0 : total / static_cast<double>(m_docs.size());
    }

    double idf(const std::string& term) const
    {
        auto it = m_df.find(term);
        double df = it == m_df.end() ? 0.0 : static_cast<double>(it->second);
        double n = static_cast<double>(m_docs.size());
        return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    }

    double score(const Tokens& query, std::size_t doc_id) const
    {
        const auto& doc = m_docs.at(doc_id);
        std::set<std::string> terms;
        for (const auto& t : query) {
            if (!text::is_punct(t)) {
                terms.insert(t);
            }
        }
        double norm = m_avgdl > 0.0 ? static_cast<double>(doc.length) / m_avgdl : 0.0;
        double s = 0.0;
        for (const auto& term : terms) {
            auto it = doc.tf.find(term);
            if (it == doc.tf.end()) {
                continue;
            }
            double f = static_cast<double>(it->second);
            s += idf(term) * f * (m_k1 + 1.0) / (f + m_k1 * (1.0 - m_b + m_b * norm));
        }
        return s;
    }

    std::size_t size() const noexcept { return m_docs.size(); }
    double average_length() const noexcept { return m_avgdl; }

  private:
    struct Doc {
        std::unordered_map<std::string, std::size_t> tf;
        std::size_t length = 0;
    };

    double m_k1;
    double m_b;
    std::vector<Doc> m_docs;
    std::unordered_map<std::string, std::size_t> m_df;
    double m_avgdl = 0.0;
};

}  // namespace persona::scoring
