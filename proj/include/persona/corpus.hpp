#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "persona/errors.hpp"
#include "persona/text.hpp"

namespace persona {

struct PersonaSentence {
    std::size_t id = 0;
    Tokens text;

    std::string str() const { return text::join(text); }
};

/// The predefined persona set of one agent.
class Profile {
  public:
    static constexpr std::size_t max_size = 10;

    Profile() = default;

    /// Builds a profile from raw sentences; duplicates (after normalization) are dropped,
    /// ids are positions in the resulting list.
    static Profile from_sentences(const std::vector<std::string>& sentences)
    {
        Profile p;
        for (const auto& s : sentences) {
            p.add(text::tokenize(s));
        }
        return p;
    }

    /// Appends a persona unless its normalized text is already present. Returns false on
    /// a duplicate.
    bool add(Tokens sentence)
    {
        if (sentence.empty()) {
            throw ArgumentError("persona sentence is empty after normalization");
        }
        auto key = text::join(sentence);
        for (const auto& p : m_personas) {
            if (p.str() == key) {
                return false;
            }
        }
        if (m_personas.size() == max_size) {
            throw ArgumentError("profile holds at most 10 personas");
        }
        m_personas.push_back({m_personas.size(), std::move(sentence)});
        return true;
    }

    const std::vector<PersonaSentence>& personas() const noexcept { return m_personas; }
    std::size_t size() const noexcept { return m_personas.size(); }
    bool empty() const noexcept { return m_personas.empty(); }
    const PersonaSentence& operator[](std::size_t i) const { return m_personas.at(i); }

    bool contains(const std::string& normalized) const
    {
        return std::any_of(m_personas.begin(), m_personas.end(),
                           [&](const auto& p) { return p.str() == normalized; });
    }

    std::vector<std::string> strings() const
    {
        std::vector<std::string> out;
        for (const auto& p : m_personas) {
            out.push_back(p.str());
        }
        return out;
    }

    bool operator==(const Profile& other) const { return strings() == other.strings(); }

  private:
    std::vector<PersonaSentence> m_personas;
};

struct DialogueExample {
    Tokens query;
    Tokens response;
    Profile profile;
    std::vector<PersonaSentence> removed;
    std::optional<std::vector<int>> persona_labels;
    std::size_t dialogue_id = 0;

    void validate() const
    {
        if (query.empty() || response.empty()) {
            throw ArgumentError("dialogue example needs a non-empty query and response");
        }
        if (persona_labels && persona_labels->size() != profile.size()) {
            throw ArgumentError("persona_labels must have one entry per profile persona");
        }
    }
};

struct ParseResult {
    std::vector<DialogueExample> examples;
    std::size_t dialogues = 0;          // dialogues that produced examples
    std::size_t skipped_dialogues = 0;  // dialogues without any persona line
};

namespace detail {

struct PendingDialogue {
    std::vector<std::string> personas;
    std::vector<std::pair<std::string, std::string>> turns;
};

}  // namespace detail

/// Reads the ConvAI2 plain-text layout: every line is "<number> <text>", numbering restarts
/// at each dialogue, persona lines carry a "your persona:" prefix and turns are
/// "query<TAB>response[<TAB>...]". Partner persona lines are ignored.
inline ParseResult parse_convai2(std::istream& in)
{
    ParseResult result;
    detail::PendingDialogue cur;
    bool open = false;
    long last_number = 0;

    auto close = [&] {
        if (!open) {
            return;
        }
        open = false;
        if (cur.personas.empty()) {
            ++result.skipped_dialogues;
            cur = {};
            return;
        }
        auto profile = Profile::from_sentences(cur.personas);
        std::size_t emitted = 0;
        for (auto& [q, r] : cur.turns) {
            DialogueExample ex;
            ex.query = text::tokenize(q);
            ex.response = text::tokenize(r);
            if (ex.query.empty() || ex.response.empty()) {
                continue;
            }
            ex.profile = profile;
            ex.dialogue_id = result.dialogues;
            result.examples.push_back(std::move(ex));
            ++emitted;
        }
        if (emitted > 0) {
            ++result.dialogues;
        }
        cur = {};
    };

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        long number = 0;
        auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), number);
        if (ec != std::errc{} || ptr == line.data()) {
            throw ParseError(line_no, "line does not start with a turn number");
        }
        std::string body(ptr, static_cast<const char*>(line.data() + line.size()));
        if (!body.empty() && body.front() == ' ') {
            body.erase(body.begin());
        }
        if (!open || number <= last_number) {
            close();
            open = true;
        }
        last_number = number;

        static const std::string own_prefix = "your persona:";
        static const std::string partner_prefix = "partner's persona:";
        if (body.rfind(own_prefix, 0) == 0) {
            cur.personas.push_back(body.substr(own_prefix.size()));
            continue;
        }
        if (body.rfind(partner_prefix, 0) == 0) {
            continue;
        }
        auto tab = body.find('\t');
        if (tab == std::string::npos) {
            throw ParseError(line_no, "dialogue line has no tab between query and response");
        }
        auto rest = body.substr(tab + 1);
        auto tab2 = rest.find('\t');
        cur.turns.emplace_back(body.substr(0, tab), rest.substr(0, tab2));
    }
    close();
    return result;
}

/// Writes examples back in ConvAI2 layout, one dialogue per distinct dialogue_id.
inline void serialize_convai2(const std::vector<DialogueExample>& examples, std::ostream& out)
{
    std::vector<std::size_t> order;
    std::map<std::size_t, std::vector<const DialogueExample*>> groups;
    for (const auto& ex : examples) {
        auto [it, inserted] = groups.try_emplace(ex.dialogue_id);
        if (inserted) {
            order.push_back(ex.dialogue_id);
        }
        it->second.push_back(&ex);
    }
    for (auto id : order) {
        const auto& group = groups[id];
        std::size_t n = 1;
        for (const auto& p : group.front()->profile.personas()) {
            out << n++ << " your persona: " << p.str() << '\n';
        }
        for (const auto* ex : group) {
            out << n++ << ' ' << text::join(ex->query) << '\t' << text::join(ex->response) << '\n';
        }
    }
}

/// Sparse tf-idf vector: term index -> weight.
using SparseVector = std::map<std::size_t, double>;

/// tf-idf with raw term counts and idf = ln(N / df). Punctuation is not a term; stop
/// words are (idf already discounts them).
class TfIdfModel {
  public:
    static TfIdfModel fit(const std::vector<Tokens>& documents)
    {
        TfIdfModel m;
        std::vector<std::size_t> df;
        for (const auto& doc : documents) {
            std::unordered_set<std::size_t> seen;
            for (const auto& tok : doc) {
                if (text::is_punct(tok)) {
                    continue;
                }
                auto [it, inserted] = m.m_vocabulary.try_emplace(tok, m.m_vocabulary.size());
                if (inserted) {
                    df.push_back(0);
                }
                if (seen.insert(it->second).second) {
                    ++df[it->second];
                }
            }
        }
        m.m_document_count = documents.size();
        m.m_idf.resize(df.size());
        for (std::size_t i = 0; i < df.size(); ++i) {
            m.m_idf[i] = std::log(static_cast<double>(m.m_document_count) / static_cast<double>(df[i]));
        }
        return m;
    }

    static TfIdfModel from_parts(std::unordered_map<std::string, std::size_t> vocabulary,
                                 std::vector<double> idf, std::size_t document_count)
    {
        if (vocabulary.size() != idf.size()) {
            throw ArgumentError("tf-idf vocabulary and idf sizes differ");
        }
        for (const auto& [term, index] : vocabulary) {
            if (index >= idf.size()) {
                throw ArgumentError("tf-idf term index out of range: " + term);
            }
        }
        if (std::any_of(idf.begin(), idf.end(), [](double w) { return !(w >= 0.0); })) {
            throw ArgumentError("idf weights must be non-negative");
        }
        TfIdfModel m;
        m.m_vocabulary = std::move(vocabulary);
        m.m_idf = std::move(idf);
        m.m_document_count = document_count;
        return m;
    }

    SparseVector vectorize(const Tokens& tokens) const
    {
        SparseVector v;
        for (const auto& tok : tokens) {
            auto it = m_vocabulary.find(tok);
            if (it != m_vocabulary.end()) {
                v[it->second] += 1.0;
            }
        }
        for (auto& [index, weight] : v) {
            weight *= m_idf[index];
        }
        return v;
    }

    /// Cosine of the tf-idf vectors; 0 when either vector is zero.
    double similarity(const Tokens& a, const Tokens& b) const
    {
        auto va = vectorize(a);
        auto vb = vectorize(b);
        double dot = 0.0;
        double na = 0.0;
        double nb = 0.0;
        for (const auto& [i, w] : va) {
            na += w * w;
            auto it = vb.find(i);
            if (it != vb.end()) {
                dot += w * it->second;
            }
        }
        for (const auto& [i, w] : vb) {
            nb += w * w;
        }
        if (na == 0.0 || nb == 0.0) {
            return 0.0;
        }
        return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
    }

    const std::unordered_map<std::string, std::size_t>& vocabulary() const noexcept
    {
        return m_vocabulary;
    }
    const std::vector<double>& idf() const noexcept { return m_idf; }
    std::size_t document_count() const noexcept { return m_document_count; }

  private:
    std::unordered_map<std::string, std::size_t> m_vocabulary;
    std::vector<double> m_idf;
    std::size_t m_document_count = 0;
};

/// Fits tf-idf on the distinct persona sentences and every response of a corpus.
inline TfIdfModel fit_tfidf(const std::vector<DialogueExample>& corpus)
{
    std::vector<Tokens> docs;
    std::unordered_set<std::string> seen;
    for (const auto& ex : corpus) {
        for (const auto& p : ex.profile.personas()) {
            if (seen.insert(p.str()).second) {
                docs.push_back(p.text);
            }
        }
        for (const auto& p : ex.removed) {
            if (seen.insert(p.str()).second) {
                docs.push_back(p.text);
            }
        }
        docs.push_back(ex.response);
    }
    return TfIdfModel::fit(docs);
}

struct PersonaLink {
    std::size_t persona_id = 0;
    double similarity = 0.0;
    int label = 0;
};

inline std::vector<PersonaLink> link_personas(const Tokens& response, const Profile& profile,
                                              const TfIdfModel& model, double threshold)
{
    std::vector<PersonaLink> out;
    out.reserve(profile.size());
    for (const auto& p : profile.personas()) {
        double sim = model.similarity(response, p.text);
        out.push_back({p.id, sim, sim > threshold ? 1 : 0});
    }
    return out;
}

/// Persona-question rule: a question mark plus an interrogative word or a second-person
/// pronoun.
inline bool detect_persona_query(const Tokens& query)
{
    static const std::unordered_set<std::string> interrogatives{
        "what", "where", "who", "how", "do", "are", "have", "did", "is", "you", "your"};
    bool question = std::find(query.begin(), query.end(), "?") != query.end();
    if (!question) {
        return false;
    }
    return std::any_of(query.begin(), query.end(),
                       [](const auto& t) { return interrogatives.count(t) > 0; });
}

/// Attaches link_personas labels to every example.
inline void label_personas(std::vector<DialogueExample>& corpus, const TfIdfModel& model,
                           double threshold)
{
    for (auto& ex : corpus) {
        std::vector<int> labels;
        for (const auto& link : link_personas(ex.response, ex.profile, model, threshold)) {
            labels.push_back(link.label);
        }
        ex.persona_labels = std::move(labels);
    }
}

struct ItBuildResult {
    std::vector<DialogueExample> examples;
    std::size_t not_persona_query = 0;
    std::size_t no_linked_persona = 0;
    std::size_t emptied_profile = 0;
};

/// Persona-removed split: keep persona questions whose response links to at least one
/// persona, and move every linked persona out of the profile.
inline ItBuildResult build_it_convai2(const std::vector<DialogueExample>& dialogues,
                                      const TfIdfModel& model, double threshold)
{
    ItBuildResult result;
    for (const auto& ex : dialogues) {
        if (!detect_persona_query(ex.query)) {
            ++result.not_persona_query;
            continue;
        }
        auto links = link_personas(ex.response, ex.profile, model, threshold);
        DialogueExample out;
        out.query = ex.query;
        out.response = ex.response;
        out.dialogue_id = ex.dialogue_id;
        out.removed = ex.removed;
        bool any = false;
        for (std::size_t i = 0; i < links.size(); ++i) {
            const auto& p = ex.profile[i];
            if (links[i].label == 1) {
                out.removed.push_back({out.removed.size(), p.text});
                any = true;
            } else {
                out.profile.add(p.text);
            }
        }
        if (!any) {
            ++result.no_linked_persona;
            continue;
        }
        if (out.profile.empty()) {
            ++result.emptied_profile;
            continue;
        }
        result.examples.push_back(std::move(out));
    }
    return result;
}

class GlobalPersonaCollection {
  public:
    /// Adds a sentence unless its normalized text is known; returns its id either way.
    std::size_t add(const Tokens& sentence)
    {
        if (sentence.empty()) {
            throw ArgumentError("collection persona is empty");
        }
        auto key = text::join(sentence);
        auto [it, inserted] = m_index.try_emplace(key, m_personas.size());
        if (inserted) {
            m_personas.push_back({it->second, sentence});
        }
        return it->second;
    }

    const std::vector<PersonaSentence>& personas() const noexcept { return m_personas; }
    std::size_t size() const noexcept { return m_personas.size(); }
    bool empty() const noexcept { return m_personas.empty(); }
    const PersonaSentence& at(std::size_t id) const { return m_personas.at(id); }

    std::optional<std::size_t> find(const std::string& normalized) const
    {
        auto it = m_index.find(normalized);
        if (it == m_index.end()) {
            return std::nullopt;
        }
        return it->second;
    }

  private:
    std::vector<PersonaSentence> m_personas;
    std::unordered_map<std::string, std::size_t> m_index;
};

inline GlobalPersonaCollection build_global_collection(const std::vector<DialogueExample>& dialogues)
{
    GlobalPersonaCollection c;
    for (const auto& ex : dialogues) {
        for (const auto& p : ex.profile.personas()) {
            c.add(p.text);
        }
        for (const auto& p : ex.removed) {
            c.add(p.text);
        }
    }
    return c;
}

}  // namespace persona
