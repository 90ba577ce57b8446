#pragma once

// Training-instance construction, agency balancing, and the joint
// reconstruction + paraphrase training loop.
//
// Sequence layout, frozen into every checkpoint:
//
//     masked-source <SEP> [supplied-verb <SEP>] control <SEP> output <END>
//
// with the loss on the output segment (including <END>) only.

#include <json.hpp>

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bpe.hpp"
#include "common.hpp"
#include "lexicon.hpp"
#include "tagger.hpp"
#include "transformer.hpp"

namespace agencyrev {

enum class InstanceKind { Reconstruction, Paraphrase, LanguageModel };

inline std::string_view to_string(InstanceKind k) {
    switch (k) {
        case InstanceKind::Reconstruction: return "recon";
        case InstanceKind::Paraphrase: return "para";
        case InstanceKind::LanguageModel: return "lm";
    }
    return "?";
}

struct TrainingInstance {
    std::vector<TokenId> input_ids;
    std::vector<TokenId> output_ids;
    InstanceKind kind = InstanceKind::Reconstruction;
    AgencyLabel target = AgencyLabel::Equal;
    std::optional<AgencyLabel> source_agency;

    std::vector<TokenId> sequence() const {
        std::vector<TokenId> s = input_ids;
        s.insert(s.end(), output_ids.begin(), output_ids.end());
        return s;
    }
    /// True exactly on output positions.
    std::vector<bool> loss_mask() const {
        std::vector<bool> m(input_ids.size() + output_ids.size(), false);
        std::fill(m.begin() + static_cast<std::ptrdiff_t>(input_ids.size()), m.end(), true);
        return m;
    }
    std::size_t length() const { return input_ids.size() + output_ids.size(); }
};

/// Counters for instances the builders dropped.
struct BuildStats {
    std::size_t built = 0;
    std::size_t ineligible = 0;
    std::size_t too_long = 0;
    std::size_t unrepresentable = 0;
};

inline TokenId control_id(AgencyLabel l) {
    switch (l) {
        case AgencyLabel::Positive: return special::Pos;
        case AgencyLabel::Equal: return special::Equal;
        case AgencyLabel::Negative: return special::Neg;
    }
    return special::Equal;
}

/// Model input for a masked sentence and a target agency.
inline std::vector<TokenId> revision_prompt(const Vocabulary& vocab, const MaskedSentence& masked, AgencyLabel target,
                                            const std::optional<std::string>& supplied_verb = std::nullopt) {
    auto ids = vocab.encode(masked.text());
    ids.push_back(special::Sep);
    if (supplied_verb) {
        const auto v = vocab.encode(*supplied_verb);
        ids.insert(ids.end(), v.begin(), v.end());
        ids.push_back(special::Sep);
    }
    ids.push_back(control_id(target));
    ids.push_back(special::Sep);
    return ids;
}

/// Retrieval for the supplied-verb variant: the target-agency lexicon verb
/// nearest to the first masked verb.
inline std::optional<std::string> supplied_verb_for(const TaggedSentence& tagged, const MaskedSentence& masked,
                                                    AgencyLabel target, const AgencyLexicon& lexicon,
                                                    const EmbeddingProvider& emb) {
    if (masked.masked_positions.empty()) return std::nullopt;
    const auto& verb = tagged.tokens[masked.masked_positions.front()];
    return nearest_verb(lexicon, emb, verb, target);
}

namespace detail {

inline std::optional<TrainingInstance> finish_instance(std::vector<TokenId> input, const std::string& output_text,
                                                       const Vocabulary& vocab, std::size_t max_seq_len,
                                                       BuildStats* stats) {
    std::vector<TokenId> out;
    try {
        out = vocab.encode(output_text);
    } catch (const ArgumentError&) {
        if (stats) ++stats->unrepresentable;
        return std::nullopt;
    }
    out.push_back(special::End);
    if (input.size() + out.size() > max_seq_len) {
        if (stats) ++stats->too_long;
        return std::nullopt;
    }
    TrainingInstance inst;
    inst.input_ids = std::move(input);
    inst.output_ids = std::move(out);
    if (stats) ++stats->built;
    return inst;
}

}  // namespace detail

/// Reconstruction instance: masked sentence plus its own agency in, the
/// original sentence out. nullopt when the sentence is ineligible or too long.
inline std::optional<TrainingInstance> build_recon_instance(std::string_view sentence, const AgencyLexicon& lexicon,
                                                            const Vocabulary& vocab, std::size_t max_seq_len,
                                                            bool supply_verb = false,
                                                            const EmbeddingProvider* emb = nullptr,
                                                            BuildStats* stats = nullptr) {
    if (word_tokens(sentence).empty()) {
        if (stats) ++stats->ineligible;
        return std::nullopt;
    }
    const auto tagged = tag(sentence, lexicon);
    if (!eligible_for_training(tagged)) {
        if (stats) ++stats->ineligible;
        return std::nullopt;
    }
    const auto masked = mask(tagged);
    const auto target = *tagged.sentence_agency;
    std::optional<std::string> verb;
    if (supply_verb) {
        if (!emb) throw ArgumentError("build_recon_instance: supply_verb needs an embedding provider");
        verb = supplied_verb_for(tagged, masked, target, lexicon, *emb);
    }
    std::vector<TokenId> input;
    try {
        input = revision_prompt(vocab, masked, target, verb);
    } catch (const ArgumentError&) {
        if (stats) ++stats->unrepresentable;
        return std::nullopt;
    }
    auto inst = detail::finish_instance(std::move(input), tagged.text(), vocab, max_seq_len, stats);
    if (inst) {
        inst->kind = InstanceKind::Reconstruction;
        inst->target = target;
        inst->source_agency = target;
    }
    return inst;
}

/// Paraphrase instance: masked source plus the target's agency in, the
/// target sentence out. Both sides must be eligible.
inline std::optional<TrainingInstance> build_para_instance(std::string_view src, std::string_view tgt,
                                                           const AgencyLexicon& lexicon, const Vocabulary& vocab,
                                                           std::size_t max_seq_len, bool supply_verb = false,
                                                           const EmbeddingProvider* emb = nullptr,
                                                           BuildStats* stats = nullptr) {
    if (word_tokens(src).empty() || word_tokens(tgt).empty()) {
        if (stats) ++stats->ineligible;
        return std::nullopt;
    }
    const auto ts = tag(src, lexicon);
    const auto tt = tag(tgt, lexicon);
    if (!eligible_for_training(ts) || !eligible_for_training(tt)) {
        if (stats) ++stats->ineligible;
        return std::nullopt;
    }
    const auto masked = mask(ts);
    const auto target = *tt.sentence_agency;
    std::optional<std::string> verb;
    if (supply_verb) {
        if (!emb) throw ArgumentError("build_para_instance: supply_verb needs an embedding provider");
        verb = supplied_verb_for(ts, masked, target, lexicon, *emb);
    }
    std::vector<TokenId> input;
    try {
        input = revision_prompt(vocab, masked, target, verb);
    } catch (const ArgumentError&) {
        if (stats) ++stats->unrepresentable;
        return std::nullopt;
    }
    auto inst = detail::finish_instance(std::move(input), tt.text(), vocab, max_seq_len, stats);
    if (inst) {
        inst->kind = InstanceKind::Paraphrase;
        inst->target = target;
        inst->source_agency = ts.sentence_agency;
    }
    return inst;
}

/// Plain language-model instance (`<SEP> text <END>`), used for the held-out
/// fluency LM.
inline std::optional<TrainingInstance> build_lm_instance(std::string_view text, const Vocabulary& vocab,
                                                         std::size_t max_seq_len, BuildStats* stats = nullptr) {
    const auto words = word_tokens(text);
    if (words.empty()) {
        if (stats) ++stats->ineligible;
        return std::nullopt;
    }
    auto inst = detail::finish_instance({special::Sep}, join(words), vocab, max_seq_len, stats);
    if (inst) inst->kind = InstanceKind::LanguageModel;
    return inst;
}

// ---------------------------------------------------------------------------
// balancing

enum class BalanceMode { PerLabel, PerLabelPair };

/// Downsamples `items` so every cell holds the same number of items (the
/// smallest cell count). Cells are labels (PerLabel, 3 cells) or
/// (source, target) label pairs (PerLabelPair, 9 cells). Selected items keep
/// their input order.
template <class T, class SourceFn, class TargetFn>
std::vector<T> balance(std::span<const T> items, BalanceMode mode, std::uint64_t seed, SourceFn source_of,
                       TargetFn target_of) {
    if (items.empty()) throw BalancingError("balance: empty input");
    const std::size_t ncells = mode == BalanceMode::PerLabel ? 3 : 9;
    std::vector<std::vector<std::size_t>> cells(ncells);
    for (std::size_t i = 0; i < items.size(); ++i) {
        const std::size_t t = index_of(target_of(items[i]));
        const std::size_t cell = mode == BalanceMode::PerLabel ? t : index_of(source_of(items[i])) * 3 + t;
        cells[cell].push_back(i);
    }
    std::string empty;
    for (std::size_t c = 0; c < ncells; ++c) {
        if (!cells[c].empty()) continue;
        if (!empty.empty()) empty += ", ";
        if (mode == BalanceMode::PerLabel) {
            empty += to_string(kAllLabels[c]);
        } else {
            empty += std::string(to_string(kAllLabels[c / 3])) + "->" + std::string(to_string(kAllLabels[c % 3]));
        }
    }
    if (!empty.empty()) throw BalancingError("balance: empty cell(s): " + empty);

    std::size_t quota = items.size();
    for (const auto& c : cells) quota = std::min(quota, c.size());
    Rng rng(seed);
    std::vector<bool> keep(items.size(), false);
    for (auto& c : cells) {
        shuffle(c, rng);
        for (std::size_t k = 0; k < quota; ++k) keep[c[k]] = true;
    }
    std::vector<T> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (keep[i]) out.push_back(items[i]);
    }
    return out;
}

inline std::vector<TrainingInstance> balance_corpus(std::span<const TrainingInstance> instances, BalanceMode mode,
                                                    std::uint64_t seed) {
    return balance<TrainingInstance>(
        instances, mode, seed,
        [](const TrainingInstance& i) {
            if (!i.source_agency) throw BalancingError("balance_corpus: instance without source agency");
            return *i.source_agency;
        },
        [](const TrainingInstance& i) { return i.target; });
}

// ---------------------------------------------------------------------------
// statistics

struct LabelCounts {
    std::size_t pos = 0, neutral = 0, neg = 0;
    std::size_t instances = 0;

    void add(AgencyLabel l) {
        ++instances;
        switch (l) {
            case AgencyLabel::Positive: ++pos; break;
            case AgencyLabel::Equal: ++neutral; break;
            case AgencyLabel::Negative: ++neg; break;
        }
    }
    bool consistent() const { return pos + neutral + neg == instances; }
};

/// Per-split label counts for a corpus family, in the layout
/// `{family: {split: {instances, pos, neutral, neg}}}`.
struct CorpusStats {
    std::map<std::string, std::map<std::string, LabelCounts>> families;

    void validate() const {
        for (const auto& [fam, splits] : families) {
            for (const auto& [split, c] : splits) {
                if (!c.consistent())
                    throw ValidationError("corpus stats: " + fam + "/" + split + " label counts sum to " +
                                          std::to_string(c.pos + c.neutral + c.neg) + ", not " +
                                          std::to_string(c.instances));
            }
        }
    }

    nlohmann::json to_json() const {
        validate();
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [fam, splits] : families) {
            for (const auto& [split, c] : splits) {
                j[fam][split] = {{"instances", c.instances}, {"pos", c.pos}, {"neutral", c.neutral}, {"neg", c.neg}};
            }
        }
        return j;
    }
};

// ---------------------------------------------------------------------------
// training loop

enum class Objective { Joint, ParaOnly, ReconOnly };

inline std::string_view to_string(Objective o) {
    switch (o) {
        case Objective::Joint: return "joint";
        case Objective::ParaOnly: return "para-only";
        case Objective::ReconOnly: return "recon-only";
    }
    return "?";
}

inline std::optional<Objective> parse_objective(std::string_view s) {
    if (s == "joint") return Objective::Joint;
    if (s == "para-only" || s == "paraonly") return Objective::ParaOnly;
    if (s == "recon-only" || s == "recononly") return Objective::ReconOnly;
    return std::nullopt;
}

struct TrainConfig {
    Objective objective = Objective::Joint;
    bool supply_verb = false;
    int epochs = 20;
    int batch_size = 16;
    double lr = 3e-4;
    double weight_decay = 0.01;
    std::uint64_t seed = 1;

    void validate() const {
        if (supply_verb && objective == Objective::ParaOnly)
            throw ConfigError("train config: supply_verb requires a reconstruction term");
        if (epochs < 0 || batch_size <= 0 || !(lr >= 0.0)) throw ConfigError("train config: bad epochs/batch/lr");
    }

    nlohmann::json to_json() const {
        return {{"objective", to_string(objective)}, {"supply_verb", supply_verb}, {"epochs", epochs},
                {"batch_size", batch_size},          {"lr", lr},                   {"weight_decay", weight_decay},
                {"seed", seed}};
    }
};

/// Per-epoch mean losses. Epoch 0 is the untrained model evaluated on the
/// full corpora. A term is NaN when its objective is not in use.
struct EpochLoss {
    int epoch = 0;
    double recon = std::nan("");
    double para = std::nan("");
    double total = 0.0;
};

struct ObjectiveLoss {
    double recon = std::nan("");
    double para = std::nan("");
    double total = 0.0;
};

inline double mean_instance_loss(const TransformerModel& model, std::span<const TrainingInstance> set) {
    if (set.empty()) return std::nan("");
    double s = 0.0;
    for (const auto& inst : set) {
        const auto ids = inst.sequence();
        s += loss(model, ids, inst.loss_mask()).total_loss;
    }
    return s / static_cast<double>(set.size());
}

/// Objective value of frozen parameters: L_recon, L_para and their sum over
/// the terms the objective includes.
inline ObjectiveLoss evaluate_objective(const TransformerModel& model, Objective objective,
                                        std::span<const TrainingInstance> recon, std::span<const TrainingInstance> para) {
    ObjectiveLoss r;
    if (objective != Objective::ParaOnly) r.recon = mean_instance_loss(model, recon);
    if (objective != Objective::ReconOnly) r.para = mean_instance_loss(model, para);
    r.total = (std::isnan(r.recon) ? 0.0 : r.recon) + (std::isnan(r.para) ? 0.0 : r.para);
    return r;
}

struct TrainResult {
    TransformerModel model;
    std::vector<EpochLoss> history;
};

using EpochCallback = std::function<void(const TransformerModel&, const EpochLoss&)>;

namespace detail {

struct Batch {
    InstanceKind kind;
    std::vector<std::size_t> members;
};

inline std::vector<Batch> make_batches(std::size_t n, std::size_t batch_size, InstanceKind kind, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle(order, rng);
    std::vector<Batch> out;
    for (std::size_t i = 0; i < n; i += batch_size) {
        Batch b{kind, {}};
        for (std::size_t k = i; k < std::min(n, i + batch_size); ++k) b.members.push_back(order[k]);
        out.push_back(std::move(b));
    }
    return out;
}

/// Merges two batch lists so each kind is spread evenly in proportion to its
/// count; ties go to the first list.
inline std::vector<Batch> interleave(std::vector<Batch> a, std::vector<Batch> b) {
    std::vector<Batch> out;
    std::size_t ia = 0, ib = 0;
    while (ia < a.size() || ib < b.size()) {
        const bool take_a = ib == b.size() ||
                            (ia < a.size() && (ia + 1) * b.size() <= (ib + 1) * a.size());
        if (take_a) {
            out.push_back(std::move(a[ia++]));
        } else {
            out.push_back(std::move(b[ib++]));
        }
    }
    return out;
}

}  // namespace detail

/// Optimizes the configured objective with AdamW. `model` supplies the
/// initial parameters. `on_epoch` runs after every epoch (checkpointing).
inline TrainResult train(const TrainConfig& config, TransformerModel model, std::span<const TrainingInstance> recon,
                         std::span<const TrainingInstance> para, const EpochCallback& on_epoch = {}) {
    config.validate();
    const bool use_recon = config.objective != Objective::ParaOnly;
    const bool use_para = config.objective != Objective::ReconOnly;
    if (use_recon && recon.empty()) throw ConfigError("train: reconstruction corpus is empty");
    if (use_para && para.empty()) throw ConfigError("train: paraphrase corpus is empty");

    TrainResult result;
    const auto initial = evaluate_objective(model, config.objective, recon, para);
    result.history.push_back({0, initial.recon, initial.para, initial.total});

    AdamW opt(model.params(), {config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
    Rng rng(config.seed);
    const auto bs = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<detail::Batch> rb, pb;
        if (use_recon) rb = detail::make_batches(recon.size(), bs, InstanceKind::Reconstruction, rng);
        if (use_para) pb = detail::make_batches(para.size(), bs, InstanceKind::Paraphrase, rng);
        const auto schedule = detail::interleave(std::move(rb), std::move(pb));

        double rsum = 0, psum = 0;
        std::size_t rn = 0, pn = 0;
        for (const auto& batch : schedule) {
            const auto& set = batch.kind == InstanceKind::Reconstruction ? recon : para;
            ParamSet grads = model.params().zeros_like();
            double bl = 0.0;
            const double w = 1.0 / static_cast<double>(batch.members.size());
            for (auto idx : batch.members) {
                const auto& inst = set[idx];
                const auto ids = inst.sequence();
                bl += accumulate_gradients(model, ids, inst.loss_mask(), grads, w).total_loss * w;
            }
            if (!std::isfinite(bl))
                throw TrainingError("train: loss diverged (non-finite) in epoch " + std::to_string(epoch) +
                                    " after " + std::to_string(opt.steps()) + " steps");
            opt.step(model.params(), grads);
            if (batch.kind == InstanceKind::Reconstruction) {
                rsum += bl;
                ++rn;
            } else {
                psum += bl;
                ++pn;
            }
        }
        EpochLoss el;
        el.epoch = epoch;
        if (rn) el.recon = rsum / static_cast<double>(rn);
        if (pn) el.para = psum / static_cast<double>(pn);
        el.total = (rn ? el.recon : 0.0) + (pn ? el.para : 0.0);
        result.history.push_back(el);
        if (on_epoch) on_epoch(model, el);
    }
    result.model = std::move(model);
    return result;
}

/// Training for the plain LM: same loop, the instances are treated as a
/// single reconstruction-style corpus.
inline TrainResult train_lm(TrainConfig config, TransformerModel model, std::span<const TrainingInstance> lm,
                            const EpochCallback& on_epoch = {}) {
    config.objective = Objective::ReconOnly;
    config.supply_verb = false;
    return train(config, std::move(model), lm, {}, on_epoch);
}

}  // namespace agencyrev
