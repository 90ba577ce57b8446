#pragma once

// Automatic evaluation of revisions: target-agency accuracy, a content-token
// overlap proxy for meaning preservation, perplexity under a separate LM,
// bigram repetition, and uniqueness.

#include <json.hpp>

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "bpe.hpp"
#include "common.hpp"
#include "lexicon.hpp"
#include "tagger.hpp"
#include "transformer.hpp"

namespace agencyrev {

/// Lowercase stopword set. Lines starting with `#` are comments.
class Stopwords {
public:
    Stopwords() = default;
    explicit Stopwords(std::span<const std::string> words) {
        for (const auto& w : words) words_.insert(to_lower(w));
    }

    bool contains(std::string_view w) const { return words_.contains(std::string(w)); }
    std::size_t size() const { return words_.size(); }

private:
    std::unordered_set<std::string> words_;
};

inline Stopwords parse_stopwords(std::string_view text) {
    std::vector<std::string> words;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const auto line = trim(text.substr(start, end - start));
        if (!line.empty() && line.front() != '#') {
            for (auto& w : split_whitespace(line)) words.push_back(std::move(w));
        }
        start = end + 1;
    }
    return Stopwords(words);
}

inline Stopwords load_stopwords(const std::string& path) { return parse_stopwords(read_file(path)); }

struct EvalRecord {
    std::string input;
    std::string output;
    AgencyLabel target = AgencyLabel::Equal;
    std::optional<AgencyLabel> output_agency;
};

/// Builds a record, tagging the output. An empty output has no agency.
inline EvalRecord make_record(std::string input, std::string output, AgencyLabel target, const AgencyLexicon& lexicon) {
    EvalRecord r{std::move(input), std::move(output), target, std::nullopt};
    auto toks = word_tokens(r.output);
    if (!toks.empty()) r.output_agency = tag_tokens(std::move(toks), lexicon).sentence_agency;
    return r;
}

/// Fraction of records whose output agency equals the target. Records with
/// no output agency count as misses.
inline double agency_accuracy(std::span<const EvalRecord> records) {
    if (records.empty()) throw ArgumentError("agency_accuracy: no records");
    std::size_t hit = 0;
    for (const auto& r : records) hit += r.output_agency.has_value() && *r.output_agency == r.target;
    return static_cast<double>(hit) / static_cast<double>(records.size());
}

/// Lowercased word tokens minus stopwords and `<VERB>` placeholders.
inline std::vector<std::string> content_tokens(std::string_view text, const Stopwords& stopwords) {
    std::vector<std::string> out;
    for (auto& t : word_tokens(text)) {
        if (t == kVerbToken || stopwords.contains(t)) continue;
        out.push_back(std::move(t));
    }
    return out;
}

/// F1 of the content-token multisets of `input` and `output`. Both empty
/// scores 1, exactly one empty scores 0.
inline double meaning_proxy(std::string_view input, std::string_view output, const Stopwords& stopwords) {
    const auto a = content_tokens(input, stopwords);
    const auto b = content_tokens(output, stopwords);
    if (a.empty() && b.empty()) return 1.0;
    if (a.empty() || b.empty()) return 0.0;
    std::map<std::string, long> ca;
    for (const auto& t : a) ++ca[t];
    long overlap = 0;
    for (const auto& t : b) {
        auto it = ca.find(t);
        if (it != ca.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double p = static_cast<double>(overlap) / static_cast<double>(b.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(a.size());
    return 2.0 * p * r / (p + r);
}

/// True if some word bigram occurs at least twice.
inline bool has_repeated_bigram(std::string_view text) {
    const auto toks = word_tokens(text);
    std::set<std::pair<std::string, std::string>> seen;
    for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
        if (!seen.emplace(toks[i], toks[i + 1]).second) return true;
    }
    return false;
}

inline double repetition_rate(std::span<const std::string> outputs) {
    if (outputs.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& o : outputs) n += has_repeated_bigram(o);
    return static_cast<double>(n) / static_cast<double>(outputs.size());
}

/// Fraction of outputs whose lowercased string occurs exactly once.
inline double uniqueness(std::span<const std::string> outputs) {
    if (outputs.empty()) return 0.0;
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& o : outputs) ++counts[to_lower(o)];
    std::size_t n = 0;
    for (const auto& o : outputs) n += counts[to_lower(o)] == 1;
    return static_cast<double>(n) / static_cast<double>(outputs.size());
}

/// LM input for a plain sentence: `<SEP> text <END>`, scored on every
/// position after the leading separator.
inline std::vector<TokenId> lm_sequence(const Vocabulary& vocab, std::string_view text) {
    std::vector<TokenId> ids{special::Sep};
    const auto body = vocab.encode(text);
    ids.insert(ids.end(), body.begin(), body.end());
    ids.push_back(special::End);
    return ids;
}

struct PerplexityReport {
    double perplexity = 0.0;
    double mean_nll = 0.0;
    std::size_t tokens = 0;
    std::size_t scored = 0;
    std::size_t skipped = 0;  ///< unrepresentable or longer than the LM context
};

/// exp of the mean per-token NLL over all scored outputs.
inline PerplexityReport fluency_ppl(const TransformerModel& lm, const Vocabulary& vocab,
                                    std::span<const std::string> outputs) {
    if (lm.vocab_hash() != vocab.hash()) throw ArgumentError("fluency_ppl: LM was trained with a different vocabulary");
    PerplexityReport rep;
    double total = 0.0;
    for (const auto& o : outputs) {
        std::vector<TokenId> ids;
        try {
            ids = lm_sequence(vocab, o);
        } catch (const ArgumentError&) {
            ++rep.skipped;
            continue;
        }
        if (ids.size() > static_cast<std::size_t>(lm.config().max_seq_len)) {
            ++rep.skipped;
            continue;
        }
        std::vector<bool> mask(ids.size(), true);
        mask[0] = false;
        const auto r = loss(lm, ids, mask);
        for (double nll : r.per_position_nll) total += nll;
        rep.tokens += r.token_count;
        ++rep.scored;
    }
    if (rep.scored == 0) throw ArgumentError("fluency_ppl: no scorable outputs");
    rep.mean_nll = total / static_cast<double>(rep.tokens);
    rep.perplexity = std::exp(rep.mean_nll);
    return rep;
}

struct MetricsReport {
    double accuracy = 0.0;
    double meaning_proxy = 0.0;
    std::optional<double> perplexity;
    double with_rep = 0.0;
    double unique = 0.0;
    std::size_t n = 0;

    nlohmann::json to_json() const {
        nlohmann::json j{{"accuracy", accuracy}, {"meaning_proxy", meaning_proxy}, {"with_rep", with_rep},
                         {"unique", unique},     {"n", n}};
        j["perplexity"] = perplexity ? nlohmann::json(*perplexity) : nlohmann::json(nullptr);
        return j;
    }
};

inline MetricsReport evaluate(std::span<const EvalRecord> records, const Stopwords& stopwords,
                              const TransformerModel* lm = nullptr, const Vocabulary* lm_vocab = nullptr) {
    if (records.empty()) throw ArgumentError("evaluate: no records");
    MetricsReport rep;
    rep.n = records.size();
    rep.accuracy = agency_accuracy(records);
    std::vector<std::string> outputs;
    double meaning = 0.0;
    for (const auto& r : records) {
        meaning += meaning_proxy(r.input, r.output, stopwords);
        outputs.push_back(r.output);
    }
    rep.meaning_proxy = meaning / static_cast<double>(records.size());
    rep.with_rep = repetition_rate(outputs);
    rep.unique = uniqueness(outputs);
    if (lm && lm_vocab) rep.perplexity = fluency_ppl(*lm, *lm_vocab, outputs).perplexity;
    return rep;
}

}  // namespace agencyrev
