#pragma once

// Byte-pair-encoding tokenizer over UTF-8 code points with a word-final
// marker, plus the reserved special tokens used by the revision model.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "common.hpp"

namespace agencyrev {

using TokenId = int;

/// Appended to the last symbol of every word; decoding turns it back into a
/// space.
inline constexpr std::string_view kWordEnd = "</w>";

/// Special tokens in id order. Ids 0..6 are fixed for every vocabulary.
inline constexpr std::array<std::string_view, 7> kSpecialTokens = {"<PAD>", "<END>", "<SEP>", "<VERB>",
                                                                   "<Pos>", "<Equal>", "<Neg>"};

namespace special {
inline constexpr TokenId Pad = 0;
inline constexpr TokenId End = 1;
inline constexpr TokenId Sep = 2;
inline constexpr TokenId Verb = 3;
inline constexpr TokenId Pos = 4;
inline constexpr TokenId Equal = 5;
inline constexpr TokenId Neg = 6;
}  // namespace special

namespace detail {

inline std::vector<std::string> utf8_chars(std::string_view word) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < word.size()) {
        const auto c = static_cast<unsigned char>(word[i]);
        std::size_t len = 1;
        if (c >= 0xF0) len = 4;
        else if (c >= 0xE0) len = 3;
        else if (c >= 0xC0) len = 2;
        len = std::min(len, word.size() - i);
        out.emplace_back(word.substr(i, len));
        i += len;
    }
    return out;
}

inline std::vector<std::string> initial_symbols(std::string_view word) {
    auto syms = utf8_chars(word);
    if (!syms.empty()) syms.back() += kWordEnd;
    return syms;
}

inline std::optional<TokenId> special_id(std::string_view w) {
    for (std::size_t i = 0; i < kSpecialTokens.size(); ++i) {
        if (kSpecialTokens[i] == w) return static_cast<TokenId>(i);
    }
    return std::nullopt;
}

}  // namespace detail

/// Trained BPE vocabulary. Immutable after construction; encode/decode are
/// const and reentrant.
class Vocabulary {
public:
    using Merge = std::pair<std::string, std::string>;

    Vocabulary() : Vocabulary(std::vector<std::string>{}, std::vector<Merge>{}) {}

    /// Ids: specials first, then `alphabet` in the given order, then the
    /// result of each merge that produced a new string.
    Vocabulary(std::vector<std::string> alphabet, std::vector<Merge> merges)
        : alphabet_(std::move(alphabet)), merges_(std::move(merges)) {
        for (auto s : kSpecialTokens) add_token(std::string(s));
        for (const auto& a : alphabet_) add_token(a);
        for (std::size_t r = 0; r < merges_.size(); ++r) {
            const auto& [a, b] = merges_[r];
            if (!id_of_.contains(a) || !id_of_.contains(b))
                throw ValidationError("merge (" + a + ", " + b + ") references an unknown symbol");
            rank_.emplace(a + '\x1f' + b, r);
            add_token(a + b);
        }
    }

    std::size_t size() const { return tokens_.size(); }
    const std::vector<Merge>& merges() const { return merges_; }
    const std::vector<std::string>& alphabet() const { return alphabet_; }
    const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    std::optional<TokenId> id_of(std::string_view tok) const {
        auto it = id_of_.find(std::string(tok));
        if (it == id_of_.end()) return std::nullopt;
        return it->second;
    }

    /// BPE segmentation of one whitespace-free word into symbol strings.
    std::vector<std::string> segment(std::string_view word) const {
        auto syms = detail::initial_symbols(word);
        while (syms.size() > 1) {
            std::size_t best_rank = merges_.size();
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                auto it = rank_.find(syms[i] + '\x1f' + syms[i + 1]);
                if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
            }
            if (best_rank == merges_.size()) break;
            const auto& [a, b] = merges_[best_rank];
            std::vector<std::string> next;
            next.reserve(syms.size());
            for (std::size_t i = 0; i < syms.size();) {
                if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
                    next.push_back(a + b);
                    i += 2;
                } else {
                    next.push_back(syms[i]);
                    ++i;
                }
            }
            syms = std::move(next);
        }
        return syms;
    }

    /// Encodes whitespace-separated text. Special tokens are recognized only
    /// as whole words. Throws ArgumentError on characters outside the
    /// alphabet.
    std::vector<TokenId> encode(std::string_view text) const {
        std::vector<TokenId> ids;
        for (const auto& word : split_whitespace(text)) {
            if (auto sid = detail::special_id(word)) {
                ids.push_back(*sid);
                continue;
            }
            for (const auto& sym : segment(word)) {
                auto it = id_of_.find(sym);
                if (it == id_of_.end())
                    throw ArgumentError("encode: symbol '" + sym + "' in '" + word + "' is not in the vocabulary");
                ids.push_back(it->second);
            }
        }
        return ids;
    }

    /// Inverse of encode for single-space-separated text.
    std::string decode(std::span<const TokenId> ids) const {
        std::string out;
        for (TokenId id : ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
                throw DecodeError("decode: unknown token id " + std::to_string(id));
            const auto& t = tokens_[static_cast<std::size_t>(id)];
            if (static_cast<std::size_t>(id) < kSpecialTokens.size()) {
                if (!out.empty() && out.back() != ' ') out += ' ';
                out += t;
                out += ' ';
            } else if (t.ends_with(kWordEnd)) {
                out.append(t, 0, t.size() - kWordEnd.size());
                out += ' ';
            } else {
                out += t;
            }
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        return out;
    }

    /// Id of the first subtoken of `word`; nullopt if the word is not
    /// representable.
    std::optional<TokenId> first_subtoken(std::string_view word) const {
        if (auto sid = detail::special_id(word)) return *sid;
        const auto syms = segment(word);
        if (syms.empty()) return std::nullopt;
        return id_of(syms.front());
    }

    bool representable(std::string_view word) const {
        for (const auto& sym : segment(word)) {
            if (!id_of_.contains(sym)) return false;
        }
        return true;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = "agencyrev-bpe";
        j["version"] = 1;
        nlohmann::json sp = nlohmann::json::object();
        for (std::size_t i = 0; i < kSpecialTokens.size(); ++i) sp[std::string(kSpecialTokens[i])] = i;
        j["specials"] = sp;
        j["alphabet"] = alphabet_;
        nlohmann::json m = nlohmann::json::array();
        for (const auto& [a, b] : merges_) m.push_back({a, b});
        j["merges"] = m;
        return j;
    }

    static Vocabulary from_json(const nlohmann::json& j) {
        try {
            if (j.contains("specials")) {
                for (std::size_t i = 0; i < kSpecialTokens.size(); ++i) {
                    const auto key = std::string(kSpecialTokens[i]);
                    if (!j["specials"].contains(key) || j["specials"][key].get<std::size_t>() != i)
                        throw ValidationError("vocabulary: special token " + key + " missing or renumbered");
                }
            }
            std::vector<Merge> merges;
            for (const auto& m : j.at("merges")) merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
            return Vocabulary(j.at("alphabet").get<std::vector<std::string>>(), std::move(merges));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("vocabulary json: ") + e.what());
        }
    }

    std::string serialize() const { return to_json().dump(); }
    std::uint64_t hash() const { return fnv1a(serialize()); }

private:
    void add_token(std::string t) {
        if (id_of_.contains(t)) return;
        id_of_.emplace(t, static_cast<TokenId>(tokens_.size()));
        tokens_.push_back(std::move(t));
    }

    std::vector<std::string> alphabet_;
    std::vector<Merge> merges_;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> id_of_;
    std::unordered_map<std::string, std::size_t> rank_;
};

/// Number of base symbols (characters, and characters with the word-final
/// marker) the corpus would produce.
inline std::set<std::string> base_symbols(std::span<const std::string> corpus) {
    std::set<std::string> base;
    for (const auto& text : corpus) {
        for (const auto& w : split_whitespace(text)) {
            if (detail::special_id(w)) continue;
            for (auto& s : detail::initial_symbols(w)) base.insert(std::move(s));
        }
    }
    return base;
}

/// Greedy BPE training: repeatedly merges the most frequent adjacent pair
/// (ties to the lexicographically smallest) until the vocabulary reaches
/// `vocab_size` or no pair occurs at least twice.
inline Vocabulary train_bpe(std::span<const std::string> corpus, std::size_t vocab_size) {
    std::map<std::string, long> word_freq;
    for (const auto& text : corpus) {
        for (const auto& w : split_whitespace(text)) {
            if (!detail::special_id(w)) ++word_freq[w];
        }
    }
    if (word_freq.empty()) throw TrainingError("train_bpe: empty corpus");

    std::vector<std::pair<std::vector<std::string>, long>> words;
    std::set<std::string> base;
    for (const auto& [w, f] : word_freq) {
        words.emplace_back(detail::initial_symbols(w), f);
        for (const auto& s : words.back().first) base.insert(s);
    }
    const std::size_t floor = base.size() + kSpecialTokens.size();
    if (vocab_size < floor)
        throw ArgumentError("train_bpe: vocab_size " + std::to_string(vocab_size) + " is below the " +
                            std::to_string(floor) + " base symbols and specials");

    std::set<std::string> known(base.begin(), base.end());
    std::vector<Vocabulary::Merge> merges;
    std::size_t size = floor;
    while (size < vocab_size) {
        std::map<std::pair<std::string, std::string>, long> pairs;
        for (const auto& [syms, f] : words) {
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) pairs[{syms[i], syms[i + 1]}] += f;
        }
        const std::pair<std::string, std::string>* best = nullptr;
        long best_count = 1;
        for (const auto& [p, c] : pairs) {
            if (c > best_count) {
                best_count = c;
                best = &p;
            }
        }
        if (!best) break;
        const auto [a, b] = *best;
        merges.emplace_back(a, b);
        if (known.insert(a + b).second) ++size;
        for (auto& [syms, f] : words) {
            std::vector<std::string> next;
            next.reserve(syms.size());
            for (std::size_t i = 0; i < syms.size();) {
                if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
                    next.push_back(a + b);
                    i += 2;
                } else {
                    next.push_back(syms[i]);
                    ++i;
                }
            }
            syms = std::move(next);
        }
    }
    return Vocabulary(std::vector<std::string>(base.begin(), base.end()), std::move(merges));
}

inline Vocabulary load_vocabulary(const std::string& path) {
    try {
        return Vocabulary::from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

}  // namespace agencyrev
