#pragma once

// Controlled decoding: the V x 3 agency matrix, logit boosting toward a
// target agency, nucleus filtering, and the sampling loop.

#include <algorithm>
#include <array>
#include <map>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bpe.hpp"
#include "common.hpp"
#include "lexicon.hpp"
#include "tagger.hpp"
#include "training.hpp"
#include "transformer.hpp"

namespace agencyrev {

/// Per-token agency embedding, columns (Positive, Equal, Negative).
class AgencyMatrix {
public:
    using Row = std::array<double, 3>;

    AgencyMatrix() = default;
    explicit AgencyMatrix(std::size_t vocab_size) : rows_(vocab_size, Row{0, 0, 0}) {}

    std::size_t size() const { return rows_.size(); }
    const Row& row(std::size_t id) const { return rows_.at(id); }
    Row& row(std::size_t id) { return rows_.at(id); }

    /// Number of tokens tagged with `label`.
    std::size_t tagged(AgencyLabel label) const {
        std::size_t n = 0;
        for (const auto& r : rows_) n += r[index_of(label)] != 0.0;
        return n;
    }

private:
    std::vector<Row> rows_;
};

/// Marks the first subtoken of every surface form of every lexicon verb with
/// that verb's agency. A subtoken claimed by several labels takes the label
/// with the strictly largest number of contributing forms; ties leave the
/// row empty.
inline AgencyMatrix build_agency_matrix(const AgencyLexicon& lexicon, const Vocabulary& vocab) {
    std::map<TokenId, std::array<int, 3>> votes;
    for (const auto& [lemma, label] : lexicon.entries()) {
        for (const auto& form : lexicon.forms_of(lemma)) {
            if (!vocab.representable(form)) continue;
            const auto id = vocab.first_subtoken(form);
            if (!id) continue;
            ++votes[*id][index_of(label)];
        }
    }
    AgencyMatrix A(vocab.size());
    for (const auto& [id, v] : votes) {
        for (auto l : kAllLabels) {
            const int c = v[index_of(l)];
            bool strict = c > 0;
            for (auto o : kAllLabels) {
                if (o != l && v[index_of(o)] >= c) strict = false;
            }
            if (strict) A.row(static_cast<std::size_t>(id))[index_of(l)] = 1.0;
        }
    }
    return A;
}

/// One-hot target agency and boosting strength.
struct BoostSpec {
    std::array<double, 3> w{0, 0, 0};
    double beta = 0.0;

    static BoostSpec toward(AgencyLabel target, double beta) {
        BoostSpec s;
        s.w[index_of(target)] = 1.0;
        s.beta = beta;
        return s;
    }
};

/// l + beta * (A w). No renormalization.
inline std::vector<double> boost_logits(std::span<const double> logits, const AgencyMatrix& A, const BoostSpec& spec) {
    if (logits.size() != A.size())
        throw ArgumentError("boost_logits: logits have " + std::to_string(logits.size()) + " entries, agency matrix " +
                            std::to_string(A.size()) + " rows");
    std::vector<double> out(logits.begin(), logits.end());
    if (spec.beta == 0.0) return out;
    for (std::size_t k = 0; k < out.size(); ++k) {
        const auto& r = A.row(k);
        const double aw = r[0] * spec.w[0] + r[1] * spec.w[1] + r[2] * spec.w[2];
        if (aw != 0.0) out[k] += spec.beta * aw;
    }
    return out;
}

/// Smallest set of tokens, taken in descending probability order (ties by
/// id), whose cumulative mass reaches top_p. Zero-probability tokens are
/// never included. Returned in that order.
inline std::vector<TokenId> nucleus_filter(std::span<const double> probs, double top_p) {
    std::vector<TokenId> order;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] > 0.0) order.push_back(static_cast<TokenId>(i));
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](TokenId a, TokenId b) { return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)]; });
    if (top_p >= 1.0) return order;
    double mass = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        mass += probs[static_cast<std::size_t>(order[k])];
        if (mass >= top_p) {
            order.resize(k + 1);
            break;
        }
    }
    return order;
}

/// Draws from `probs` restricted to `support`, renormalized.
inline TokenId sample_from(std::span<const double> probs, std::span<const TokenId> support, Rng& rng) {
    if (support.empty()) throw DecodeError("sample: empty support");
    double mass = 0.0;
    for (auto id : support) mass += probs[static_cast<std::size_t>(id)];
    const double u = uniform01(rng) * mass;
    double acc = 0.0;
    for (auto id : support) {
        acc += probs[static_cast<std::size_t>(id)];
        if (u < acc) return id;
    }
    return support.back();
}

struct DecodeConfig {
    double top_p = 0.4;
    double beta = 5.0;
    int max_new_tokens = 40;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("decode config: top_p must be in (0, 1]");
        if (!(beta >= 0.0)) throw ConfigError("decode config: beta must be nonnegative");
        if (max_new_tokens < 0) throw ConfigError("decode config: max_new_tokens must be nonnegative");
    }
    nlohmann::json to_json() const {
        return {{"top_p", top_p}, {"beta", beta}, {"max_new_tokens", max_new_tokens}, {"seed", seed}};
    }
};

struct Generation {
    std::string text;
    std::vector<TokenId> ids;
    bool truncated = false;
};

/// Samples continuation tokens after `prompt` until <END>, the token budget,
/// or the model's context limit. `A == nullptr` disables boosting entirely.
inline Generation generate_ids(const TransformerModel& model, const Vocabulary& vocab, std::vector<TokenId> prompt,
                               AgencyLabel target, const AgencyMatrix* A, const DecodeConfig& config) {
    config.validate();
    if (model.vocab_hash() != vocab.hash() || static_cast<std::size_t>(model.config().vocab_size) != vocab.size())
        throw DecodeError("generate: model was trained with a different vocabulary");
    if (A && A->size() != vocab.size()) throw DecodeError("generate: agency matrix does not match the vocabulary");
    const auto max_len = static_cast<std::size_t>(model.config().max_seq_len);
    if (prompt.size() > max_len) throw ArgumentError("generate: prompt longer than max_seq_len");

    Rng rng(config.seed);
    const auto spec = BoostSpec::toward(target, config.beta);
    Generation g;
    g.truncated = true;
    for (int step = 0; step < config.max_new_tokens && prompt.size() < max_len; ++step) {
        auto logits = forward_last(model, prompt);
        if (A) logits = boost_logits(logits, *A, spec);
        const auto probs = softmax(logits);
        const auto support = nucleus_filter(probs, config.top_p);
        const TokenId next = sample_from(probs, support, rng);
        if (next == special::End) {
            g.truncated = false;
            break;
        }
        g.ids.push_back(next);
        prompt.push_back(next);
    }
    g.text = vocab.decode(g.ids);
    return g;
}

/// Revises a masked sentence toward `target`.
inline Generation generate(const TransformerModel& model, const Vocabulary& vocab, const MaskedSentence& masked_input,
                           AgencyLabel target, const AgencyMatrix* A, const DecodeConfig& config,
                           const std::optional<std::string>& supplied_verb = std::nullopt) {
    return generate_ids(model, vocab, revision_prompt(vocab, masked_input, target, supplied_verb), target, A, config);
}

/// Tags and masks raw `text`, then generates a revision toward `target`.
/// With `supply` set, the nearest target-agency verb is added to the prompt.
inline Generation revise_text(const TransformerModel& model, const Vocabulary& vocab, const AgencyLexicon& lexicon,
                              const AgencyMatrix* A, const DecodeConfig& config, std::string_view text,
                              AgencyLabel target, const EmbeddingProvider* supply = nullptr) {
    const auto tagged = tag(text, lexicon);
    const auto masked = mask(tagged);
    std::optional<std::string> verb;
    if (supply) verb = supplied_verb_for(tagged, masked, target, lexicon, *supply);
    return generate(model, vocab, masked, target, A, config, verb);
}

}  // namespace agencyrev
