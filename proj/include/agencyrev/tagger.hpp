#pragma once

// Sentence-level agency tagging by lexicon majority vote, and masking of
// the majority-label verbs with the reserved `<VERB>` token.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"
#include "lexicon.hpp"

namespace agencyrev {

inline constexpr std::string_view kVerbToken = "<VERB>";

/// Sentences with more agency-verb hits than this are not used for training.
inline constexpr std::size_t kMaxTrainingVerbs = 3;

struct VerbHit {
    std::size_t position;
    std::string lemma;
    AgencyLabel label;

    bool operator==(const VerbHit&) const = default;
};

struct TaggedSentence {
    std::vector<std::string> tokens;
    std::vector<VerbHit> verb_hits;
    std::optional<AgencyLabel> sentence_agency;

    std::string text() const { return join(tokens); }
    std::size_t count(AgencyLabel l) const {
        std::size_t n = 0;
        for (const auto& h : verb_hits) n += h.label == l;
        return n;
    }
};

struct MaskedSentence {
    std::vector<std::string> tokens;
    std::vector<std::size_t> masked_positions;
    std::optional<AgencyLabel> original_agency;

    std::string text() const { return join(tokens); }
};

/// The label with strictly more hits than each other label, if any.
inline std::optional<AgencyLabel> majority_label(const std::vector<VerbHit>& hits) {
    std::array<std::size_t, 3> counts{};
    for (const auto& h : hits) ++counts[index_of(h.label)];
    for (auto l : kAllLabels) {
        const auto c = counts[index_of(l)];
        bool strict = c > 0;
        for (auto o : kAllLabels) {
            if (o != l && counts[index_of(o)] >= c) strict = false;
        }
        if (strict) return l;
    }
    return std::nullopt;
}

/// Tags an already-tokenized sentence. `<VERB>` placeholders never match.
inline TaggedSentence tag_tokens(std::vector<std::string> tokens, const AgencyLexicon& lexicon) {
    TaggedSentence t;
    t.tokens = std::move(tokens);
    for (std::size_t i = 0; i < t.tokens.size(); ++i) {
        if (t.tokens[i] == kVerbToken) continue;
        if (auto lemma = lexicon.lemma_of(t.tokens[i])) {
            t.verb_hits.push_back({i, *lemma, *lexicon.label_of_lemma(*lemma)});
        }
    }
    t.sentence_agency = majority_label(t.verb_hits);
    return t;
}

inline TaggedSentence tag(std::string_view sentence, const AgencyLexicon& lexicon) {
    auto tokens = word_tokens(sentence);
    if (tokens.empty()) throw ArgumentError("tag: empty sentence");
    return tag_tokens(std::move(tokens), lexicon);
}

/// Replaces every hit carrying the sentence's agency with `<VERB>`.
inline MaskedSentence mask(const TaggedSentence& tagged) {
    if (!tagged.sentence_agency) throw PreconditionError("mask: sentence agency is indeterminable");
    MaskedSentence m;
    m.tokens = tagged.tokens;
    m.original_agency = tagged.sentence_agency;
    for (const auto& h : tagged.verb_hits) {
        if (h.label == *tagged.sentence_agency) {
            m.tokens[h.position] = std::string(kVerbToken);
            m.masked_positions.push_back(h.position);
        }
    }
    return m;
}

inline bool eligible_for_training(const TaggedSentence& tagged) {
    return tagged.sentence_agency.has_value() && tagged.verb_hits.size() <= kMaxTrainingVerbs;
}

}  // namespace agencyrev
