#pragma once

#include <algorithm>
#include <cctype>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace persona {

using Tokens = std::vector<std::string>;

namespace text {

inline bool is_word_char(unsigned char ch)
{
    return std::isalnum(ch) || ch == '\'' || ch >= 0x80;
}

/// Lower-cases, splits punctuation into standalone tokens and collapses whitespace.
/// Apostrophes stay inside words so contractions ("don't") survive as one token.
inline Tokens tokenize(std::string_view raw)
{
    Tokens out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            // A leading or trailing apostrophe is quoting, not a contraction.
            while (!cur.empty() && cur.front() == '\'') {
                cur.erase(cur.begin());
            }
            while (!cur.empty() && cur.back() == '\'') {
                cur.pop_back();
            }
            if (!cur.empty()) {
                out.push_back(std::move(cur));
            }
            cur.clear();
        }
    };
    for (unsigned char ch : raw) {
        if (std::isspace(ch)) {
            flush();
        } else if (is_word_char(ch)) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else {
            flush();
            out.emplace_back(1, static_cast<char>(ch));
        }
    }
    flush();
    return out;
}

inline std::string join(const Tokens& tokens)
{
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += t;
    }
    return out;
}

/// Canonical text of a sentence: tokenized and re-joined with single spaces.
inline std::string normalize(std::string_view raw) { return join(tokenize(raw)); }

inline bool is_punct(const std::string& token)
{
    return std::none_of(token.begin(), token.end(), [](unsigned char c) { return is_word_char(c); });
}

inline bool is_negator(const std::string& token)
{
    static const std::unordered_set<std::string> negators{"not", "don't", "never", "no"};
    if (negators.count(token)) {
        return true;
    }
    return token.size() > 3 && token.ends_with("n't");
}

/// Function words ignored by the lexical scorers. Pronouns are kept on purpose:
/// persona sentences are first-person and "i" carries the speaker identity.
inline bool is_stop_word(const std::string& token)
{
    static const std::unordered_set<std::string> stop{
        "a",     "an",   "the",  "to",    "of",    "in",    "on",    "at",   "for",  "with",
        "by",    "from", "up",   "as",    "into",  "about", "and",   "or",   "but",  "so",
        "if",    "then", "than", "that",  "this",  "these", "those", "is",   "am",   "are",
        "was",   "were", "be",   "been",  "being", "do",    "does",  "did",  "have", "has",
        "had",   "will", "would", "can",  "could", "should", "shall", "may", "might", "must",
        "what",  "where", "who", "whom",  "how",   "why",   "when",  "which", "any", "some",
        "very",  "too",  "also", "just",  "there", "here",  "it",    "its",  "it's",
        "lol",   "oh",   "well", "yes",   "yeah",  "hi",    "hello", "hey"};
    return stop.count(token) > 0;
}

inline bool is_content(const std::string& token)
{
    return !is_punct(token) && !is_stop_word(token) && !is_negator(token);
}

inline std::set<std::string> content_set(const Tokens& tokens)
{
    std::set<std::string> out;
    for (const auto& t : tokens) {
        if (is_content(t)) {
            out.insert(t);
        }
    }
    return out;
}

inline bool has_negator(const Tokens& tokens)
{
    return std::any_of(tokens.begin(), tokens.end(), is_negator);
}

}  // namespace text
}  // namespace persona
