#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <tuple>

#include <json.hpp>

#include "persona/errors.hpp"
#include "persona/scoring/external.hpp"
#include "persona/scoring/nli.hpp"
#include "persona/scoring/pair_classifier.hpp"

namespace persona::scoring {

/// Textual backend selector: "lexical", "lexical:instance=eval",
/// "pair-classifier:path=scorer.json", "external:<shell command>".
struct ScoringBackendSpec {
    enum class Kind { lexical, pair_classifier, external };

    Kind kind = Kind::lexical;
    std::map<std::string, std::string> parameters;

    static ScoringBackendSpec parse(const std::string& text)
    {
        ScoringBackendSpec spec;
        auto colon = text.find(':');
        std::string kind = text.substr(0, colon);
        std::string rest = colon == std::string::npos ? std::string{} : text.substr(colon + 1);
        if (kind == "lexical") {
            spec.kind = Kind::lexical;
        } else if (kind == "pair-classifier") {
            spec.kind = Kind::pair_classifier;
        } else if (kind == "external") {
            spec.kind = Kind::external;
            if (rest.empty()) {
                throw ArgumentError("external backend needs a launch command");
            }
            spec.parameters["command"] = rest;
            return spec;
        } else {
            throw ArgumentError("unknown scoring backend kind '" + kind + "'");
        }
        std::size_t pos = 0;
        while (pos < rest.size()) {
            auto comma = rest.find(',', pos);
            auto item = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            auto eq = item.find('=');
            if (eq == std::string::npos || eq == 0) {
                throw ArgumentError("backend parameter '" + item + "' is not key=value");
            }
            spec.parameters[item.substr(0, eq)] = item.substr(eq + 1);
            if (comma == std::string::npos) {
                break;
            }
            pos = comma + 1;
        }
        if (spec.kind == Kind::pair_classifier && !spec.parameters.count("path")) {
            throw ArgumentError("pair-classifier backend needs path=<file>");
        }
        return spec;
    }

    std::string str() const
    {
        switch (kind) {
        case Kind::external:
            return "external:" + parameters.at("command");
        case Kind::lexical:
        case Kind::pair_classifier: {
            std::string out = kind == Kind::lexical ? "lexical" : "pair-classifier";
            char sep = ':';
            for (const auto& [k, v] : parameters) {
                out += sep + k + "=" + v;
                sep = ',';
            }
            return out;
        }
        }
        return {};
    }

    bool operator==(const ScoringBackendSpec& other) const = default;
};

inline std::unique_ptr<NliBackend> make_nli_backend(const ScoringBackendSpec& spec)
{
    switch (spec.kind) {
    case ScoringBackendSpec::Kind::lexical: {
        auto it = spec.parameters.find("instance");
        return std::make_unique<LexicalBackend>(it == spec.parameters.end() ? std::string{} : it->second);
    }
    case ScoringBackendSpec::Kind::external:
        return std::make_unique<ExternalNliBackend>(spec.parameters.at("command"));
    case ScoringBackendSpec::Kind::pair_classifier:
        break;
    }
    throw ArgumentError("backend '" + spec.str() + "' does not provide NLI verdicts");
}

inline PairClassifier load_pair_classifier(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ArgumentError("cannot open pair classifier " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError("pair classifier " + path.string() + " is not JSON: " + e.what());
    }
    return PairClassifier::from_json(j);
}

inline std::unique_ptr<RelevanceBackend> make_relevance_backend(const ScoringBackendSpec& spec)
{
    switch (spec.kind) {
    case ScoringBackendSpec::Kind::lexical: {
        auto it = spec.parameters.find("instance");
        return std::make_unique<LexicalBackend>(it == spec.parameters.end() ? std::string{} : it->second);
    }
    case ScoringBackendSpec::Kind::pair_classifier:
        return std::make_unique<PairClassifier>(load_pair_classifier(spec.parameters.at("path")));
    case ScoringBackendSpec::Kind::external:
        break;
    }
    throw ArgumentError("backend '" + spec.str() + "' does not provide relevance scores");
}

/// Decorator that caches verdicts in memory and in an append-only JSONL file keyed by
/// (backend name, premise, hypothesis).
class MemoNliBackend final : public NliBackend {
  public:
    MemoNliBackend(std::unique_ptr<NliBackend> inner, std::filesystem::path path)
        : m_inner(std::move(inner)), m_path(std::move(path))
    {
        std::ifstream in(m_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) {
                continue;
            }
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object()) {
                continue;  // torn write from an interrupted run
            }
            try {
                m_cache[{j.at("backend").get<std::string>(), j.at("premise").get<std::string>(),
                         j.at("hypothesis").get<std::string>()}] =
                    NliVerdict{j.at("entail").get<double>(), j.at("neutral").get<double>(),
                               j.at("contradict").get<double>()};
            } catch (const nlohmann::json::exception&) {
                continue;
            }
        }
    }

    NliVerdict verdict(const Tokens& premise, const Tokens& hypothesis) override
    {
        Key key{m_inner->name(), text::join(premise), text::join(hypothesis)};
        auto it = m_cache.find(key);
        if (it != m_cache.end()) {
            ++m_hits;
            return it->second;
        }
        auto v = m_inner->verdict(premise, hypothesis);
        m_cache.emplace(key, v);
        std::ofstream out(m_path, std::ios::app);
        nlohmann::ordered_json j;
        j["backend"] = std::get<0>(key);
        j["premise"] = std::get<1>(key);
        j["hypothesis"] = std::get<2>(key);
        j["entail"] = v.entail;
        j["neutral"] = v.neutral;
        j["contradict"] = v.contradict;
        out << j.dump() << '\n';
        return v;
    }

    std::string name() const override { return m_inner->name(); }
    std::size_t hits() const noexcept { return m_hits; }

  private:
    using Key = std::tuple<std::string, std::string, std::string>;
    std::unique_ptr<NliBackend> m_inner;
    std::filesystem::path m_path;
    std::map<Key, NliVerdict> m_cache;
    std::size_t m_hits = 0;
};

}  // namespace persona::scoring
