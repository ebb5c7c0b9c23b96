#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/corpus.hpp"
#include "persona/errors.hpp"

namespace persona::jsonl {

using Json = nlohmann::ordered_json;

enum class Schema { dialogue, collection, ranked, prediction, annotation, report };

inline std::string to_string(Schema s)
{
    switch (s) {
    case Schema::dialogue:
        return "dialogue";
    case Schema::collection:
        return "collection";
    case Schema::ranked:
        return "ranked";
    case Schema::prediction:
        return "prediction";
    case Schema::annotation:
        return "annotation";
    case Schema::report:
        return "report";
    }
    return {};
}

inline Schema parse_schema(const std::string& s)
{
    for (auto v : {Schema::dialogue, Schema::collection, Schema::ranked, Schema::prediction, Schema::annotation,
                   Schema::report}) {
        if (to_string(v) == s) {
            return v;
        }
    }
    throw ArgumentError("unknown schema tag '" + s + "'");
}

/// Provenance header written as the first line: {"_meta": {...}}.
struct Meta {
    std::string schema;
    std::string config_hash;
    std::uint64_t seed = 0;

    bool operator==(const Meta&) const = default;
};

namespace detail {

enum class Type { string, integer, number, boolean, string_array, int_array, number_array, object_array, nullable_string };

struct Field {
    const char* key;
    Type type;
    bool required;
};

inline const std::vector<Field>& fields(Schema s)
{
    static const std::vector<Field> dialogue{{"query", Type::string, true},
                                             {"response", Type::string, true},
                                             {"profile", Type::string_array, true},
                                             {"removed", Type::string_array, true},
                                             {"persona_labels", Type::int_array, false},
                                             {"dialogue_id", Type::integer, false}};
    static const std::vector<Field> collection{{"id", Type::integer, true}, {"text", Type::string, true}};
    static const std::vector<Field> ranked{{"query", Type::string, true},
                                           {"chosen", Type::string, true},
                                           {"candidates", Type::object_array, true}};
    static const std::vector<Field> prediction{{"query", Type::string, true},
                                               {"profile", Type::string_array, true},
                                               {"extended_persona", Type::nullable_string, true},
                                               {"response", Type::string, true},
                                               {"w_pri", Type::number_array, true},
                                               {"reference", Type::string, false}};
    static const std::vector<Field> annotation{{"query", Type::string, true},
                                               {"rank", Type::integer, true},
                                               {"related", Type::boolean, true},
                                               {"s_pp", Type::integer, true},
                                               {"query_relevance", Type::integer, false}};
    static const std::vector<Field> report{{"entail", Type::number, true},  {"conflict", Type::number, true},
                                           {"bleu", Type::number, true},    {"rouge_l", Type::number, true},
                                           {"cider", Type::number, true},   {"n", Type::integer, true},
                                           {"dcg3", Type::number, false},   {"label", Type::string, false}};
    switch (s) {
    case Schema::dialogue:
        return dialogue;
    case Schema::collection:
        return collection;
    case Schema::ranked:
        return ranked;
    case Schema::prediction:
        return prediction;
    case Schema::annotation:
        return annotation;
    case Schema::report:
        return report;
    }
    throw std::logic_error("unknown schema");
}

inline const std::vector<Field>& candidate_fields()
{
    static const std::vector<Field> candidate{{"text", Type::string, true}, {"r", Type::number, true},
                                              {"e", Type::number, true},    {"c", Type::number, true},
                                              {"s", Type::number, true},    {"rank", Type::integer, true}};
    return candidate;
}

template <typename J>
bool all_of(const J& v, bool (J::*pred)() const noexcept)
{
    if (!v.is_array()) {
        return false;
    }
    for (const auto& x : v) {
        if (!(x.*pred)()) {
            return false;
        }
    }
    return true;
}

template <typename J>
void check_object(const J& obj, const std::vector<Field>& spec, std::size_t line, const std::string& prefix)
{
    if (!obj.is_object()) {
        throw SchemaError(line, prefix.empty() ? "<record>" : prefix, "record is not a JSON object");
    }
    for (const auto& f : spec) {
        std::string key = prefix + f.key;
        auto it = obj.find(f.key);
        if (it == obj.end()) {
            if (f.required) {
                throw SchemaError(line, key, "missing required key");
            }
            continue;
        }
        const auto& v = *it;
        bool ok = false;
        switch (f.type) {
        case Type::string:
            ok = v.is_string();
            break;
        case Type::nullable_string:
            ok = v.is_string() || v.is_null();
            break;
        case Type::integer:
            ok = v.is_number_integer();
            break;
        case Type::number:
            ok = v.is_number();
            break;
        case Type::boolean:
            ok = v.is_boolean();
            break;
        case Type::string_array:
            ok = all_of(v, &J::is_string);
            break;
        case Type::int_array:
            ok = all_of(v, &J::is_number_integer);
            break;
        case Type::number_array:
            ok = all_of(v, &J::is_number);
            break;
        case Type::object_array:
            ok = v.is_array();
            if (ok) {
                for (std::size_t i = 0; i < v.size(); ++i) {
                    check_object(v[i], candidate_fields(), line, key + "[" + std::to_string(i) + "].");
                }
            }
            break;
        }
        if (!ok) {
            throw SchemaError(line, key, "value has the wrong type");
        }
    }
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const auto& f : spec) {
            known = known || it.key() == f.key;
        }
        if (!known) {
            throw SchemaError(line, prefix + it.key(), "unknown key");
        }
    }
}

}  // namespace detail

/// Strict validation: required keys present with the right types and no unknown keys.
template <typename J>
void validate(Schema schema, const J& record, std::size_t line = 0)
{
    detail::check_object(record, detail::fields(schema), line, "");
}

inline Json meta_record(const Meta& m)
{
    Json j;
    j["_meta"]["schema"] = m.schema;
    j["_meta"]["config_hash"] = m.config_hash;
    j["_meta"]["seed"] = m.seed;
    return j;
}

/// Streams records one line at a time; holds only the current line in memory.
class Reader {
  public:
    Reader(const std::filesystem::path& path, Schema schema) : m_schema(schema), m_file(path)
    {
        if (!m_file) {
            throw ArgumentError("cannot open " + path.string());
        }
        m_in = &m_file;
    }

    Reader(std::istream& in, Schema schema) : m_schema(schema), m_in(&in) {}

    /// Provenance header, available once the first line has been consumed.
    const std::optional<Meta>& meta()
    {
        prime();
        return m_meta;
    }

    bool next(Json& out)
    {
        prime();
        if (m_pending) {
            out = std::move(*m_pending);
            m_pending.reset();
            return true;
        }
        return read_record(out);
    }

    std::size_t line() const noexcept { return m_line; }

  private:
    void prime()
    {
        if (m_primed) {
            return;
        }
        m_primed = true;
        Json first;
        if (!read_raw(first)) {
            return;
        }
        if (first.is_object() && first.size() == 1 && first.contains("_meta")) {
            try {
                const auto& m = first.at("_meta");
                m_meta = Meta{m.at("schema").get<std::string>(), m.at("config_hash").get<std::string>(),
                              m.at("seed").get<std::uint64_t>()};
            } catch (const nlohmann::json::exception&) {
                throw SchemaError(m_line, "_meta", "malformed provenance header");
            }
            if (m_meta->schema != to_string(m_schema)) {
                throw SchemaError(m_line, "_meta.schema",
                                  "file holds '" + m_meta->schema + "' records, expected '" + to_string(m_schema) + "'");
            }
            return;
        }
        validate(m_schema, first, m_line);
        m_pending = std::move(first);
    }

    bool read_record(Json& out)
    {
        if (!read_raw(out)) {
            return false;
        }
        validate(m_schema, out, m_line);
        return true;
    }

    bool read_raw(Json& out)
    {
        std::string text;
        while (std::getline(*m_in, text)) {
            ++m_line;
            if (text.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            try {
                out = Json::parse(text);
            } catch (const nlohmann::json::exception& e) {
                throw SchemaError(m_line, "<record>", std::string("invalid JSON: ") + e.what());
            }
            return true;
        }
        return false;
    }

    Schema m_schema;
    std::ifstream m_file;
    std::istream* m_in = nullptr;
    std::size_t m_line = 0;
    bool m_primed = false;
    std::optional<Meta> m_meta;
    std::optional<Json> m_pending;
};

class Writer {
  public:
    Writer(std::ostream& out, Schema schema, const std::optional<Meta>& meta = std::nullopt)
        : m_out(out), m_schema(schema)
    {
        if (meta) {
            m_out << meta_record(*meta).dump() << '\n';
        }
    }

    void write(const Json& record)
    {
        validate(m_schema, record, ++m_count);
        m_out << record.dump() << '\n';
    }

    std::size_t count() const noexcept { return m_count; }

  private:
    std::ostream& m_out;
    Schema m_schema;
    std::size_t m_count = 0;
};

inline std::vector<Json> read_all(const std::filesystem::path& path, Schema schema, std::optional<Meta>* meta = nullptr)
{
    Reader r(path, schema);
    std::vector<Json> out;
    Json rec;
    while (r.next(rec)) {
        out.push_back(std::move(rec));
    }
    if (meta) {
        *meta = r.meta();
    }
    return out;
}

// ---- record conversions -------------------------------------------------------------------

inline Json to_record(const DialogueExample& ex)
{
    Json j;
    j["query"] = text::join(ex.query);
    j["response"] = text::join(ex.response);
    j["profile"] = ex.profile.strings();
    std::vector<std::string> removed;
    for (const auto& p : ex.removed) {
        removed.push_back(p.str());
    }
    j["removed"] = removed;
    if (ex.persona_labels) {
        j["persona_labels"] = *ex.persona_labels;
    }
    j["dialogue_id"] = ex.dialogue_id;
    return j;
}

inline DialogueExample dialogue_from_record(const Json& j)
{
    DialogueExample ex;
    ex.query = text::tokenize(j.at("query").get<std::string>());
    ex.response = text::tokenize(j.at("response").get<std::string>());
    ex.profile = Profile::from_sentences(j.at("profile").get<std::vector<std::string>>());
    for (const auto& s : j.at("removed").get<std::vector<std::string>>()) {
        ex.removed.push_back({ex.removed.size(), text::tokenize(s)});
    }
    if (j.contains("persona_labels")) {
        ex.persona_labels = j.at("persona_labels").get<std::vector<int>>();
    }
    if (j.contains("dialogue_id")) {
        ex.dialogue_id = j.at("dialogue_id").get<std::size_t>();
    }
    ex.validate();
    return ex;
}

}  // namespace persona::jsonl
