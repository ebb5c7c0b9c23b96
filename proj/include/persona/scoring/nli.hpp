#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>

#include "persona/corpus.hpp"
#include "persona/errors.hpp"
#include "persona/text.hpp"

namespace persona::scoring {

/// (entail, neutral, contradict) probabilities for a premise/hypothesis pair.
struct NliVerdict {
    double entail = 0.0;
    double neutral = 1.0;
    double contradict = 0.0;

    /// Clamps negatives to zero and rescales to sum 1.
    static NliVerdict normalized(double e, double n, double c)
    {
        e = std::max(e, 0.0);
        n = std::max(n, 0.0);
        c = std::max(c, 0.0);
        double z = e + n + c;
        if (!(z > 0.0) || !std::isfinite(z)) {
            throw BackendError("NLI verdict has no probability mass");
        }
        return {e / z, n / z, c / z};
    }

    enum class Label { entail, neutral, contradict };

    Label argmax() const
    {
        if (entail >= neutral && entail >= contradict) {
            return Label::entail;
        }
        if (contradict > neutral) {
            return Label::contradict;
        }
        return Label::neutral;
    }
};

class NliBackend {
  public:
    virtual ~NliBackend() = default;
    virtual NliVerdict verdict(const Tokens& premise, const Tokens& hypothesis) = 0;
    /// Stable identifier used for memo keys and config comparison.
    virtual std::string name() const = 0;
};

class RelevanceBackend {
  public:
    virtual ~RelevanceBackend() = default;
    virtual double related(const Tokens& query, const Tokens& candidate) = 0;
    virtual std::string name() const = 0;
};

/// Content-word overlap rules standing in for a pretrained NLI model.
///
/// o = |A n B| / |B| over content tokens of premise A and hypothesis B; n = 1 when exactly
/// one side contains a negator.
///   n = 1, o > 0    -> contradict = 0.6 + 0.3 o, neutral takes the rest
///   n = 0, o >= 0.5 -> entail = 0.5 + 0.5 o, neutral takes the rest
///   otherwise       -> neutral-dominant, entail = 0.4 o (only when n = 0), contradict = 0.1 n
/// When the hypothesis has no content token the overlap falls back to all word tokens.
class LexicalBackend final : public NliBackend, public RelevanceBackend {
  public:
    explicit LexicalBackend(std::string instance = {}) : m_instance(std::move(instance)) {}

    static double overlap(const Tokens& premise, const Tokens& hypothesis)
    {
        auto a = text::content_set(premise);
        auto b = text::content_set(hypothesis);
        if (b.empty()) {
            a = words(premise);
            b = words(hypothesis);
        }
        if (b.empty()) {
            return 0.0;
        }
        std::size_t shared = 0;
        for (const auto& t : b) {
            shared += a.count(t);
        }
        return static_cast<double>(shared) / static_cast<double>(b.size());
    }

    NliVerdict verdict(const Tokens& premise, const Tokens& hypothesis) override
    {
        if (premise.empty() || hypothesis.empty()) {
            throw ArgumentError("NLI inputs must be non-empty");
        }
        double o = overlap(premise, hypothesis);
        bool parity = text::has_negator(premise) != text::has_negator(hypothesis);
        if (parity && o > 0.0) {
            double c = 0.6 + 0.3 * o;
            return NliVerdict::normalized(0.0, 1.0 - c, c);
        }
        if (!parity && o >= 0.5) {
            double e = 0.5 + 0.5 * o;
            return NliVerdict::normalized(e, 1.0 - e, 0.0);
        }
        double e = parity ? 0.0 : 0.4 * o;
        double c = parity ? 0.1 : 0.0;
        return NliVerdict::normalized(e, 1.0 - e - c, c);
    }

    /// Dice coefficient of the content-token sets; 0 when either side has none.
    double related(const Tokens& query, const Tokens& candidate) override
    {
        auto a = text::content_set(query);
        auto b = text::content_set(candidate);
        if (a.empty() || b.empty()) {
            return 0.0;
        }
        std::size_t shared = 0;
        for (const auto& t : b) {
            shared += a.count(t);
        }
        return 2.0 * static_cast<double>(shared) / static_cast<double>(a.size() + b.size());
    }

    std::string name() const override
    {
        return m_instance.empty() ? "lexical" : "lexical:instance=" + m_instance;
    }

  private:
    static std::set<std::string> words(const Tokens& tokens)
    {
        std::set<std::string> out;
        for (const auto& t : tokens) {
            if (!text::is_punct(t)) {
                out.insert(t);
            }
        }
        return out;
    }

    std::string m_instance;
};

/// Max over the profile of the entail component of verdict(p_i, candidate).
inline double entail_set(const Profile& profile, const Tokens& candidate, NliBackend& backend)
{
    if (profile.empty()) {
        throw ArgumentError("entail_set needs a non-empty profile");
    }
    double best = 0.0;
    for (const auto& p : profile.personas()) {
        best = std::max(best, backend.verdict(p.text, candidate).entail);
    }
    return best;
}

/// Max over the profile of the contradict component of verdict(p_i, candidate).
inline double conflict_set(const Profile& profile, const Tokens& candidate, NliBackend& backend)
{
    if (profile.empty()) {
        throw ArgumentError("conflict_set needs a non-empty profile");
    }
    double best = 0.0;
    for (const auto& p : profile.personas()) {
        best = std::max(best, backend.verdict(p.text, candidate).contradict);
    }
    return best;
}

}  // namespace persona::scoring
