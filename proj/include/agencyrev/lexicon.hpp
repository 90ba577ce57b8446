#pragma once

// Connotation-frame agency lexicon: loading, inflection index, lookup, and
// embedding-based retrieval of a same-agency verb for the supplied-verb
// variant.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "common.hpp"

namespace agencyrev {

enum class AgencyLabel : std::uint8_t { Positive = 0, Equal = 1, Negative = 2 };

inline constexpr std::array<AgencyLabel, 3> kAllLabels = {AgencyLabel::Positive, AgencyLabel::Equal,
                                                          AgencyLabel::Negative};

inline std::size_t index_of(AgencyLabel l) { return static_cast<std::size_t>(l); }

/// Short name used in files: pos / equal / neg.
inline std::string_view to_string(AgencyLabel l) {
    switch (l) {
        case AgencyLabel::Positive: return "pos";
        case AgencyLabel::Equal: return "equal";
        case AgencyLabel::Negative: return "neg";
    }
    return "?";
}

inline std::optional<AgencyLabel> parse_label(std::string_view s) {
    const std::string l = to_lower(trim(s));
    if (l == "pos" || l == "positive" || l == "+") return AgencyLabel::Positive;
    if (l == "equal" || l == "neutral" || l == "=") return AgencyLabel::Equal;
    if (l == "neg" || l == "negative" || l == "-") return AgencyLabel::Negative;
    return std::nullopt;
}

/// Control token that conditions generation on a target agency.
inline std::string_view control_token(AgencyLabel l) {
    switch (l) {
        case AgencyLabel::Positive: return "<Pos>";
        case AgencyLabel::Equal: return "<Equal>";
        case AgencyLabel::Negative: return "<Neg>";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// inflector

namespace inflect {

inline bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

inline int vowel_groups(std::string_view w) {
    int groups = 0;
    bool prev = false;
    for (char c : w) {
        const bool v = is_vowel(c);
        if (v && !prev) ++groups;
        prev = v;
    }
    return groups;
}

/// Monosyllabic consonant-vowel-consonant ending: the final consonant doubles
/// before -ed / -ing ("beg" -> "begged").
inline bool doubles_final(std::string_view w) {
    if (w.size() < 3) return false;
    const char c1 = w[w.size() - 3], v = w[w.size() - 2], c2 = w.back();
    if (is_vowel(c1) || !is_vowel(v) || is_vowel(c2)) return false;
    if (c2 == 'w' || c2 == 'x' || c2 == 'y') return false;
    return vowel_groups(w) == 1;
}

inline bool consonant_y(std::string_view w) {
    return w.size() >= 2 && w.back() == 'y' && !is_vowel(w[w.size() - 2]);
}

inline std::string third_person(std::string_view w) {
    std::string s(w);
    if (s.ends_with("s") || s.ends_with("sh") || s.ends_with("ch") || s.ends_with("x") || s.ends_with("z") ||
        s.ends_with("o"))
        return s + "es";
    if (consonant_y(s)) return s.substr(0, s.size() - 1) + "ies";
    return s + "s";
}

inline std::string past(std::string_view w) {
    std::string s(w);
    if (s.ends_with("e")) return s + "d";
    if (consonant_y(s)) return s.substr(0, s.size() - 1) + "ied";
    if (doubles_final(s)) return s + s.back() + "ed";
    return s + "ed";
}

inline std::string gerund(std::string_view w) {
    std::string s(w);
    if (s.ends_with("ie")) return s.substr(0, s.size() - 2) + "ying";
    if (s.ends_with("e") && !s.ends_with("ee") && !s.ends_with("ye") && !s.ends_with("oe") && s.size() > 2)
        return s.substr(0, s.size() - 1) + "ing";
    if (doubles_final(s)) return s + s.back() + "ing";
    return s + "ing";
}

/// All surface forms of a lemma: base, -s, past (or the irregular forms when
/// given, which replace the rule-generated past), and -ing.
inline std::vector<std::string> forms(std::string_view lemma, const std::vector<std::string>& irregular = {}) {
    std::vector<std::string> out{std::string(lemma), third_person(lemma)};
    if (irregular.empty()) {
        out.push_back(past(lemma));
    } else {
        out.insert(out.end(), irregular.begin(), irregular.end());
    }
    out.push_back(gerund(lemma));
    std::vector<std::string> uniq;
    for (auto& f : out) {
        if (std::find(uniq.begin(), uniq.end(), f) == uniq.end()) uniq.push_back(f);
    }
    return uniq;
}

}  // namespace inflect

// ---------------------------------------------------------------------------

/// Immutable lemma -> agency map with a surface-form index. Lookups are
/// case-insensitive.
class AgencyLexicon {
public:
    struct Entry {
        std::string lemma;
        AgencyLabel label;
        std::vector<std::string> irregular;
    };

    AgencyLexicon() = default;

    /// Validates and indexes `entries`. A lemma listed twice with different
    /// labels is a ValidationError; an identical repeat is ignored.
    explicit AgencyLexicon(const std::vector<Entry>& entries) {
        for (const auto& e : entries) {
            const std::string lemma = to_lower(e.lemma);
            auto [it, inserted] = labels_.emplace(lemma, e.label);
            if (!inserted && it->second != e.label)
                throw ValidationError("conflicting labels for lemma '" + lemma + "'");
            if (inserted) {
                std::vector<std::string> irr;
                for (auto& f : e.irregular) irr.push_back(to_lower(f));
                forms_[lemma] = inflect::forms(lemma, irr);
            }
        }
        // Precedence when two lemmas share a surface form: a lemma's own base
        // form first, then earlier lemmas in lexicographic order.
        for (const auto& [lemma, _] : labels_) inflections_[lemma] = lemma;
        for (const auto& [lemma, fs] : forms_) {
            for (const auto& f : fs) inflections_.emplace(f, lemma);
        }
    }

    std::optional<AgencyLabel> lookup(std::string_view token) const {
        const auto lemma = lemma_of(token);
        if (!lemma) return std::nullopt;
        return labels_.at(*lemma);
    }

    std::optional<std::string> lemma_of(std::string_view token) const {
        auto it = inflections_.find(to_lower(token));
        if (it == inflections_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<AgencyLabel> label_of_lemma(std::string_view lemma) const {
        auto it = labels_.find(to_lower(lemma));
        if (it == labels_.end()) return std::nullopt;
        return it->second;
    }

    /// Surface forms generated for `lemma` (empty if unknown).
    const std::vector<std::string>& forms_of(std::string_view lemma) const {
        static const std::vector<std::string> none;
        auto it = forms_.find(std::string(lemma));
        return it == forms_.end() ? none : it->second;
    }

    const std::map<std::string, AgencyLabel>& entries() const { return labels_; }
    const std::map<std::string, std::string>& inflections() const { return inflections_; }
    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }

private:
    std::map<std::string, AgencyLabel> labels_;
    std::map<std::string, std::vector<std::string>> forms_;
    std::map<std::string, std::string> inflections_;
};

/// Parses the TSV lexicon format: `lemma<TAB>label[<TAB>irregular,forms]`.
/// Blank lines and `#` comments are skipped.
inline AgencyLexicon parse_lexicon(std::istream& in, const std::string& source = "<stream>") {
    std::vector<AgencyLexicon::Entry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(std::string(trim(col)));
        // tolerate space-separated rows without tabs
        if (cols.size() == 1) cols = split_whitespace(line);
        if (cols.size() < 2 || cols.size() > 3 || cols[0].empty())
            throw ParseError(source + ":" + std::to_string(lineno) + ": expected 'lemma<TAB>label'");
        const auto label = parse_label(cols[1]);
        if (!label)
            throw ParseError(source + ":" + std::to_string(lineno) + ": unknown label '" + cols[1] + "'");
        AgencyLexicon::Entry e{cols[0], *label, {}};
        if (cols.size() == 3 && !cols[2].empty()) {
            std::stringstream fs(cols[2]);
            std::string f;
            while (std::getline(fs, f, ',')) {
                if (!trim(f).empty()) e.irregular.emplace_back(trim(f));
            }
        }
        entries.push_back(std::move(e));
    }
    return AgencyLexicon(entries);
}

inline AgencyLexicon load_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open lexicon: " + path);
    return parse_lexicon(in, path);
}

// ---------------------------------------------------------------------------
// embeddings

/// Word vectors of one fixed dimension, keyed by lowercase surface form.
class EmbeddingProvider {
public:
    explicit EmbeddingProvider(std::size_t dim) : dim_(dim) {
        if (dim == 0) throw ArgumentError("embedding dimension must be positive");
    }

    void add(std::string token, std::vector<double> v) {
        if (v.size() != dim_)
            throw ValidationError("embedding for '" + token + "' has dimension " + std::to_string(v.size()) +
                                  ", expected " + std::to_string(dim_));
        vectors_[to_lower(token)] = std::move(v);
    }

    const std::vector<double>* find(std::string_view token) const {
        auto it = vectors_.find(to_lower(token));
        return it == vectors_.end() ? nullptr : &it->second;
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return vectors_.size(); }

    /// Stored tokens in sorted order.
    std::vector<std::string> tokens() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : vectors_) out.push_back(k);
        std::sort(out.begin(), out.end());
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json vecs = nlohmann::json::object();
        for (const auto& t : tokens()) vecs[t] = vectors_.at(t);
        return {{"dim", dim_}, {"vectors", vecs}};
    }

    static EmbeddingProvider from_json(const nlohmann::json& j) {
        try {
            EmbeddingProvider e(j.at("dim").get<std::size_t>());
            for (const auto& [k, v] : j.at("vectors").items()) e.add(k, v.get<std::vector<double>>());
            return e;
        } catch (const nlohmann::json::exception& ex) {
            throw ParseError(std::string("embeddings json: ") + ex.what());
        }
    }

private:
    std::size_t dim_;
    std::unordered_map<std::string, std::vector<double>> vectors_;
};

/// Reads `token v1 ... vd` lines; the dimension is taken from the first row.
inline EmbeddingProvider load_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open embeddings: " + path);
    std::optional<EmbeddingProvider> emb;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto cols = split_whitespace(line);
        if (cols.empty() || cols[0].front() == '#') continue;
        if (cols.size() < 2) throw ParseError(path + ":" + std::to_string(lineno) + ": no vector components");
        std::vector<double> v;
        for (std::size_t i = 1; i < cols.size(); ++i) {
            try {
                std::size_t used = 0;
                v.push_back(std::stod(cols[i], &used));
                if (used != cols[i].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ParseError(path + ":" + std::to_string(lineno) + ": bad number '" + cols[i] + "'");
            }
        }
        if (!emb) emb.emplace(v.size());
        emb->add(cols[0], std::move(v));
    }
    if (!emb) throw ParseError(path + ": no embeddings");
    return std::move(*emb);
}

/// Positive-PMI co-occurrence matrix over `sentences` (symmetric window),
/// reduced to `rank` dimensions by truncated SVD; rows are U_k * sqrt(S_k).
inline EmbeddingProvider ppmi_embeddings(const std::vector<std::vector<std::string>>& sentences,
                                         std::size_t rank = 50, std::size_t window = 2) {
    std::map<std::string, int> index;
    for (const auto& s : sentences) {
        for (const auto& w : s) index.emplace(w, 0);
    }
    if (index.empty()) throw ArgumentError("ppmi_embeddings: empty corpus");
    int next = 0;
    for (auto& [w, id] : index) id = next++;
    const auto n = static_cast<Eigen::Index>(index.size());

    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n, n);
    for (const auto& s : sentences) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            const int wi = index.at(s[i]);
            const std::size_t lo = i >= window ? i - window : 0;
            const std::size_t hi = std::min(s.size(), i + window + 1);
            for (std::size_t j = lo; j < hi; ++j) {
                if (j != i) counts(wi, index.at(s[j])) += 1.0;
            }
        }
    }
    const double total = counts.sum();
    Eigen::MatrixXd ppmi = Eigen::MatrixXd::Zero(n, n);
    if (total > 0) {
        const Eigen::VectorXd row = counts.rowwise().sum();
        const Eigen::VectorXd col = counts.colwise().sum().transpose();
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                if (counts(i, j) <= 0) continue;
                const double pmi = std::log(counts(i, j) * total / (row(i) * col(j)));
                ppmi(i, j) = std::max(0.0, pmi);
            }
        }
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(ppmi, Eigen::ComputeThinU);
    const auto k = std::min<Eigen::Index>(static_cast<Eigen::Index>(rank), n);
    const Eigen::MatrixXd vecs = svd.matrixU().leftCols(k) * svd.singularValues().head(k).cwiseSqrt().asDiagonal();

    EmbeddingProvider emb(static_cast<std::size_t>(k));
    for (const auto& [w, id] : index) {
        std::vector<double> v(static_cast<std::size_t>(k));
        for (Eigen::Index c = 0; c < k; ++c) v[static_cast<std::size_t>(c)] = vecs(id, c);
        emb.add(w, std::move(v));
    }
    return emb;
}

/// Copy of `emb` restricted to the surface forms of lexicon verbs, which is
/// all verb retrieval ever consults.
inline EmbeddingProvider restrict_to_lexicon(const EmbeddingProvider& emb, const AgencyLexicon& lex) {
    EmbeddingProvider out(emb.dim());
    for (const auto& [form, lemma] : lex.inflections()) {
        if (const auto* v = emb.find(form)) out.add(form, *v);
    }
    return out;
}

/// Cosine similarity; nullopt when either vector has zero norm.
inline std::optional<double> cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ArgumentError("cosine: dimension mismatch");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return std::nullopt;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace detail {

/// Mean vector over whichever surface forms of `lemma` have embeddings.
inline std::optional<std::vector<double>> lemma_vector(const AgencyLexicon& lex, const EmbeddingProvider& emb,
                                                       const std::string& lemma) {
    std::vector<double> acc(emb.dim(), 0.0);
    int found = 0;
    for (const auto& f : lex.forms_of(lemma)) {
        if (const auto* v = emb.find(f)) {
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += (*v)[i];
            ++found;
        }
    }
    if (!found) return std::nullopt;
    for (auto& x : acc) x /= found;
    return acc;
}

}  // namespace detail

/// The `target`-labeled lemma whose embedding is most cosine-similar to
/// `verb`. Ties go to the lexicographically smallest lemma.
inline std::string nearest_verb(const AgencyLexicon& lex, const EmbeddingProvider& emb, std::string_view verb,
                                AgencyLabel target) {
    std::optional<std::vector<double>> query;
    if (const auto* v = emb.find(verb)) {
        query = *v;
    } else if (auto lemma = lex.lemma_of(verb)) {
        query = detail::lemma_vector(lex, emb, *lemma);
    }
    if (!query) throw RetrievalError("no embedding for verb '" + std::string(verb) + "'");

    std::optional<std::string> best;
    double best_sim = -2.0;
    for (const auto& [lemma, label] : lex.entries()) {
        if (label != target) continue;
        const auto cand = detail::lemma_vector(lex, emb, lemma);
        if (!cand) continue;
        const auto sim = cosine(*query, *cand);
        if (!sim) continue;
        if (*sim > best_sim) {
            best_sim = *sim;
            best = lemma;
        }
    }
    if (!best)
        throw RetrievalError("no " + std::string(to_string(target)) + " lexicon verb has a usable embedding");
    return *best;
}

}  // namespace agencyrev
