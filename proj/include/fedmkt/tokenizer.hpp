#pragma once

// Deterministic toy tokenizers with deliberately heterogeneous vocabularies:
// word-level, char-level, and merge-based subword. Three kinds are enough to
// produce 1-to-1, many-to-1 and 1-to-many situations for the aligner.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fedmkt/io.hpp"

namespace fedmkt {

struct Vocabulary {
    std::string id;                   // stable identifier, used as cache / wire key
    std::vector<std::string> tokens;  // token id == index
    int unk_id = 0;

    std::unordered_map<std::string, int> index;

    int size() const { return static_cast<int>(tokens.size()); }

    std::optional<int> find(std::string_view tok) const {
        auto it = index.find(std::string(tok));
        if (it == index.end()) return std::nullopt;
        return it->second;
    }

    const std::string& surface(int id) const {
        if (id < 0 || id >= size())
            throw std::out_of_range("token id " + std::to_string(id) + " out of range");
        return tokens[static_cast<size_t>(id)];
    }
};

inline Vocabulary make_vocabulary(std::string id, std::vector<std::string> tokens, int unk_id) {
    Vocabulary v;
    v.id = std::move(id);
    v.tokens = std::move(tokens);
    v.unk_id = unk_id;
    if (v.tokens.empty()) throw std::invalid_argument("vocabulary must be non-empty");
    if (unk_id < 0 || unk_id >= v.size()) throw std::invalid_argument("unk_id out of range");
    for (int i = 0; i < v.size(); ++i) {
        const auto& t = v.tokens[static_cast<size_t>(i)];
        if (t.empty()) throw std::invalid_argument("empty token string at id " + std::to_string(i));
        if (!v.index.emplace(t, i).second)
            throw std::invalid_argument("duplicate token string: " + t);
    }
    return v;
}

enum class TokenizerKind { word, character, subword };

inline const char* kind_name(TokenizerKind k) {
    switch (k) {
        case TokenizerKind::word: return "word";
        case TokenizerKind::character: return "char";
        case TokenizerKind::subword: return "subword";
    }
    return "?";
}

inline TokenizerKind kind_from_name(std::string_view s) {
    if (s == "word") return TokenizerKind::word;
    if (s == "char") return TokenizerKind::character;
    if (s == "subword") return TokenizerKind::subword;
    throw CorruptError("unknown tokenizer kind: " + std::string(s));
}

struct TokenizerSpec {
    TokenizerKind kind = TokenizerKind::word;
    Vocabulary vocab;
    // subword only: adjacent-unit merges, applied in priority order
    std::vector<std::pair<std::string, std::string>> merge_rules;
    bool lowercase = true;
};

inline TokenizerSpec make_tokenizer(TokenizerKind kind, Vocabulary vocab,
                                    std::vector<std::pair<std::string, std::string>> merges = {},
                                    bool lowercase = true) {
    TokenizerSpec spec;
    spec.kind = kind;
    spec.vocab = std::move(vocab);
    spec.merge_rules = std::move(merges);
    spec.lowercase = lowercase;
    if (kind != TokenizerKind::subword && !spec.merge_rules.empty())
        throw std::invalid_argument("merge rules only apply to the subword kind");
    for (const auto& [a, b] : spec.merge_rules) {
        if (!spec.vocab.find(a) || !spec.vocab.find(b) || !spec.vocab.find(a + b))
            throw std::invalid_argument("merge rule references token missing from vocab: " + a +
                                        " + " + b);
    }
    return spec;
}

namespace detail {

inline std::string normalize(const TokenizerSpec& spec, std::string_view text) {
    std::string out(text);
    if (spec.lowercase)
        for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) words.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return words;
}

// Greedy merge application: rules are tried in priority order; the
// highest-priority rule present anywhere in the unit sequence is applied at
// its leftmost occurrence, repeatedly, until no rule applies.
inline std::vector<std::string> segment_word(const TokenizerSpec& spec, const std::string& word) {
    std::vector<std::string> units;
    units.reserve(word.size());
    for (char c : word) units.emplace_back(1, c);

    while (units.size() > 1) {
        size_t best_rule = spec.merge_rules.size();
        size_t best_pos = 0;
        for (size_t p = 0; p + 1 < units.size(); ++p) {
            for (size_t r = 0; r < best_rule; ++r) {
                if (spec.merge_rules[r].first == units[p] &&
                    spec.merge_rules[r].second == units[p + 1]) {
                    best_rule = r;
                    best_pos = p;
                    break;
                }
            }
        }
        if (best_rule == spec.merge_rules.size()) break;
        units[best_pos] += units[best_pos + 1];
        units.erase(units.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
    }
    return units;
}

}  // namespace detail

// Deterministic text -> token ids. Unknown surface forms map to unk_id.
inline std::vector<int> tokenize(const TokenizerSpec& spec, std::string_view text) {
    const std::string norm = detail::normalize(spec, text);
    std::vector<int> ids;

    switch (spec.kind) {
        case TokenizerKind::word:
            for (const auto& w : detail::split_words(norm)) {
                auto id = spec.vocab.find(w);
                ids.push_back(id ? *id : spec.vocab.unk_id);
            }
            break;
        case TokenizerKind::character:
            ids.reserve(norm.size());
            for (char c : norm) {
                auto id = spec.vocab.find(std::string_view(&c, 1));
                ids.push_back(id ? *id : spec.vocab.unk_id);
            }
            break;
        case TokenizerKind::subword:
            for (const auto& w : detail::split_words(norm)) {
                for (const auto& unit : detail::segment_word(spec, w)) {
                    auto id = spec.vocab.find(unit);
                    ids.push_back(id ? *id : spec.vocab.unk_id);
                }
            }
            break;
    }
    return ids;
}

// Joining rule: single space between word-level tokens, direct concatenation
// otherwise. Invalid ids signal a corrupt sequence.
inline std::string detokenize(const TokenizerSpec& spec, const std::vector<int>& ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (spec.kind == TokenizerKind::word && i > 0) out += ' ';
        out += spec.vocab.surface(ids[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Corpus-driven construction

inline Vocabulary word_vocab_from_corpus(const std::vector<std::string>& texts, std::string id,
                                         bool lowercase = true) {
    std::map<std::string, int> seen;  // ordered for determinism
    for (const auto& t : texts) {
        std::string norm = t;
        if (lowercase)
            for (char& c : norm) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        for (const auto& w : detail::split_words(norm)) seen[w]++;
    }
    std::vector<std::string> tokens{"<unk>"};
    for (const auto& [w, _] : seen) tokens.push_back(w);
    return make_vocabulary(std::move(id), std::move(tokens), 0);
}

inline Vocabulary char_vocab_from_corpus(const std::vector<std::string>& texts, std::string id,
                                         bool lowercase = true) {
    std::map<char, int> seen;
    for (const auto& t : texts) {
        for (char c0 : t) {
            char c = lowercase ? static_cast<char>(std::tolower(static_cast<unsigned char>(c0))) : c0;
            seen[c]++;
        }
    }
    std::vector<std::string> tokens{"<unk>"};
    for (const auto& [c, _] : seen) tokens.emplace_back(1, c);
    return make_vocabulary(std::move(id), std::move(tokens), 0);
}

// Tiny pair-frequency merge learner over the corpus words. Good enough to
// fuse frequent words into single units and leave rare ones fragmented,
// which is exactly the mix the aligner needs to see.
inline TokenizerSpec subword_tokenizer_from_corpus(const std::vector<std::string>& texts,
                                                   std::string id, size_t n_merges,
                                                   bool lowercase = true) {
    std::map<std::vector<std::string>, int> words;  // segmented word -> count
    for (const auto& t : texts) {
        std::string norm = t;
        if (lowercase)
            for (char& c : norm) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        for (const auto& w : detail::split_words(norm)) {
            std::vector<std::string> units;
            for (char c : w) units.emplace_back(1, c);
            words[units]++;
        }
    }

    std::vector<std::pair<std::string, std::string>> merges;
    for (size_t step = 0; step < n_merges; ++step) {
        std::map<std::pair<std::string, std::string>, int> pair_counts;
        for (const auto& [units, count] : words)
            for (size_t i = 0; i + 1 < units.size(); ++i)
                pair_counts[{units[i], units[i + 1]}] += count;
        if (pair_counts.empty()) break;
        // highest count wins; ties go to the lexicographically smallest pair
        auto best = pair_counts.begin();
        for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it)
            if (it->second > best->second) best = it;
        if (best->second < 2) break;
        const auto [a, b] = best->first;
        merges.emplace_back(a, b);

        std::map<std::vector<std::string>, int> next;
        for (const auto& [units, count] : words) {
            std::vector<std::string> merged;
            for (size_t i = 0; i < units.size(); ++i) {
                if (i + 1 < units.size() && units[i] == a && units[i + 1] == b) {
                    merged.push_back(a + b);
                    ++i;
                } else {
                    merged.push_back(units[i]);
                }
            }
            next[merged] += count;
        }
        words = std::move(next);
    }

    std::map<std::string, int> unit_set;
    for (const auto& [units, _] : words)
        for (const auto& u : units) unit_set[u]++;
    for (const auto& [a, b] : merges) {
        unit_set[a];
        unit_set[b];
        unit_set[a + b];
    }
    std::vector<std::string> tokens{"<unk>"};
    for (const auto& [u, _] : unit_set) tokens.push_back(u);
    return make_tokenizer(TokenizerKind::subword,
                          make_vocabulary(std::move(id), std::move(tokens), 0), std::move(merges),
                          lowercase);
}

// ---------------------------------------------------------------------------
// Self-describing text format (bit-exact round trip)

inline std::string tokenizer_to_text(const TokenizerSpec& spec) {
    std::ostringstream out;
    out << "fedmkt-tokenizer v1\n";
    out << "kind " << kind_name(spec.kind) << "\n";
    out << "lowercase " << (spec.lowercase ? 1 : 0) << "\n";
    out << "vocab " << escape_token(spec.vocab.id) << "\n";
    out << "unk " << spec.vocab.unk_id << "\n";
    out << "tokens " << spec.vocab.size() << "\n";
    for (const auto& t : spec.vocab.tokens) out << escape_token(t) << "\n";
    out << "merges " << spec.merge_rules.size() << "\n";
    for (const auto& [a, b] : spec.merge_rules)
        out << escape_token(a) << " " << escape_token(b) << "\n";
    return out.str();
}

namespace detail {

struct LineReader {
    std::istringstream in;
    explicit LineReader(std::string_view text) : in(std::string(text)) {}

    std::string line() {
        std::string l;
        if (!std::getline(in, l)) throw TruncatedError("unexpected end of text stream");
        return l;
    }

    // "key value" line; returns value, validates key
    std::string field(std::string_view key) {
        std::string l = line();
        auto sp = l.find(' ');
        if (sp == std::string::npos || std::string_view(l).substr(0, sp) != key)
            throw CorruptError("expected '" + std::string(key) + "' line, got: " + l);
        return l.substr(sp + 1);
    }

    long field_int(std::string_view key) {
        std::string v = field(key);
        try {
            return std::stol(v);
        } catch (const std::exception&) {
            throw CorruptError("bad integer for '" + std::string(key) + "': " + v);
        }
    }
};

}  // namespace detail

inline TokenizerSpec tokenizer_from_text(std::string_view text) {
    detail::LineReader r(text);
    std::string magic = r.line();
    if (!magic.starts_with("fedmkt-tokenizer"))
        throw BadMagicError("not a tokenizer spec: " + magic);
    if (magic != "fedmkt-tokenizer v1")
        throw BadVersionError("unsupported tokenizer spec version: " + magic);

    TokenizerKind kind = kind_from_name(r.field("kind"));
    bool lowercase = r.field_int("lowercase") != 0;
    std::string vocab_id = unescape_token(r.field("vocab"));
    int unk = static_cast<int>(r.field_int("unk"));
    long n_tokens = r.field_int("tokens");
    if (n_tokens <= 0) throw CorruptError("token count must be positive");
    std::vector<std::string> tokens;
    tokens.reserve(static_cast<size_t>(n_tokens));
    for (long i = 0; i < n_tokens; ++i) tokens.push_back(unescape_token(r.line()));
    long n_merges = r.field_int("merges");
    std::vector<std::pair<std::string, std::string>> merges;
    for (long i = 0; i < n_merges; ++i) {
        std::string l = r.line();
        auto sp = l.find(' ');
        if (sp == std::string::npos) throw CorruptError("bad merge line: " + l);
        merges.emplace_back(unescape_token(l.substr(0, sp)), unescape_token(l.substr(sp + 1)));
    }
    try {
        return make_tokenizer(kind, make_vocabulary(std::move(vocab_id), std::move(tokens), unk),
                              std::move(merges), lowercase);
    } catch (const std::invalid_argument& e) {
        throw CorruptError(e.what());
    }
}

}  // namespace fedmkt
