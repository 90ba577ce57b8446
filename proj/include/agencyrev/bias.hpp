#pragma once

// Gender/agency analysis over screenplays: cue-based parsing, gender
// inference from name and word lists, per-character aggregation, Cohen's d,
// an IRLS logistic regression, and the revise-female-narrations study.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"
#include "lexicon.hpp"
#include "tagger.hpp"

namespace agencyrev {

enum class Gender { Male, Female, Unknown };

inline std::string_view to_string(Gender g) {
    switch (g) {
        case Gender::Male: return "M";
        case Gender::Female: return "F";
        case Gender::Unknown: return "U";
    }
    return "U";
}

// ---------------------------------------------------------------- parsing

struct ScriptParseConfig {
    /// Non-cue lines indented at least this far are dialogue or
    /// parentheticals.
    std::size_t dialogue_indent = 6;
    std::size_t max_cue_tokens = 4;
};

struct ParseCoverage {
    std::size_t lines = 0;
    std::size_t blank = 0;
    std::size_t cues = 0;
    std::size_t headings = 0;  ///< scene headings, transitions, titles
    std::size_t dialogue = 0;
    std::size_t narration = 0;
};

struct ParsedScript {
    /// Distinct cue names, lowercased, in first-appearance order.
    std::vector<std::string> characters;
    std::vector<std::string> narration;
    ParseCoverage coverage;
};

namespace detail {

inline std::size_t indent_of(std::string_view line) {
    std::size_t n = 0;
    for (char c : line) {
        if (c == ' ') ++n;
        else if (c == '\t') n += 8;
        else break;
    }
    return n;
}

inline std::string strip_parentheticals(std::string_view s) {
    std::string out;
    int depth = 0;
    for (char c : s) {
        if (c == '(') ++depth;
        else if (c == ')') depth = std::max(0, depth - 1);
        else if (depth == 0) out += c;
    }
    return out;
}

inline bool all_caps(std::string_view t) {
    bool has_alpha = false;
    for (char c : t) {
        const auto u = static_cast<unsigned char>(c);
        if (std::islower(u)) return false;
        if (std::isalpha(u)) has_alpha = true;
    }
    return has_alpha;
}

inline bool is_heading(std::string_view t) {
    for (std::string_view p : {"INT.", "EXT.", "INT/EXT", "I/E", "INT ", "EXT "}) {
        if (t.starts_with(p)) return true;
    }
    return false;
}

/// Cue name for a line, or nullopt. A cue is an all-caps line of at most
/// `max_tokens` tokens, not a scene heading and not a transition or title
/// (anything with a colon).
inline std::optional<std::string> cue_name(std::string_view line, std::size_t max_tokens) {
    const auto t = trim(line);
    if (t.empty() || is_heading(t) || t.find(':') != std::string_view::npos) return std::nullopt;
    const auto body = strip_parentheticals(t);
    if (!all_caps(body)) return std::nullopt;
    const auto toks = split_whitespace(body);
    if (toks.empty() || toks.size() > max_tokens) return std::nullopt;
    return to_lower(join(toks));
}

inline const std::set<std::string>& abbreviations() {
    static const std::set<std::string> a{"mr.", "mrs.", "ms.", "dr.", "st.", "jr.", "sr.", "vs.", "prof.", "e.g.", "i.e."};
    return a;
}

}  // namespace detail

/// Rule-based sentence splitter: breaks after `.`, `!` or `?` (plus any
/// closing quotes) followed by whitespace, except after a known
/// abbreviation.
inline std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        const auto t = trim(cur);
        if (!t.empty()) out.emplace_back(t);
        cur.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        cur += is_space(c) ? ' ' : c;
        if (c != '.' && c != '!' && c != '?') continue;
        std::size_t j = i + 1;
        while (j < text.size() && (text[j] == '.' || text[j] == '!' || text[j] == '?' || text[j] == '"' || text[j] == '\'')) {
            cur += text[j];
            ++j;
        }
        i = j - 1;
        if (j < text.size() && !is_space(text[j])) continue;
        const auto words = split_whitespace(cur);
        if (c == '.' && !words.empty() && detail::abbreviations().contains(to_lower(words.back()))) continue;
        flush();
    }
    flush();
    return out;
}

inline ParsedScript parse_script(std::string_view text, const ScriptParseConfig& config = {}) {
    ParsedScript ps;
    std::set<std::string> seen;
    std::string block;
    auto end_block = [&] {
        for (auto& s : split_sentences(block)) ps.narration.push_back(std::move(s));
        block.clear();
    };
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const auto line = text.substr(start, end - start);
        start = end + 1;
        ++ps.coverage.lines;
        const auto t = trim(line);
        if (t.empty()) {
            ++ps.coverage.blank;
            end_block();
            continue;
        }
        if (detail::is_heading(t) || (detail::all_caps(t) && t.find(':') != std::string_view::npos)) {
            ++ps.coverage.headings;
            end_block();
            continue;
        }
        if (auto cue = detail::cue_name(line, config.max_cue_tokens)) {
            ++ps.coverage.cues;
            end_block();
            if (seen.insert(*cue).second) ps.characters.push_back(*cue);
            continue;
        }
        if (detail::indent_of(line) >= config.dialogue_indent) {
            ++ps.coverage.dialogue;
            end_block();
            continue;
        }
        ++ps.coverage.narration;
        if (!block.empty()) block += ' ';
        block += t;
    }
    end_block();
    return ps;
}

// ---------------------------------------------------------------- gender

/// Name and gendered-word lists, both `word<TAB>M|F`.
struct GenderResources {
    std::unordered_map<std::string, Gender> names;
    std::unordered_map<std::string, Gender> words;
};

inline std::unordered_map<std::string, Gender> parse_gender_list(std::string_view text, const std::string& source) {
    std::unordered_map<std::string, Gender> out;
    std::size_t start = 0, lineno = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const auto line = trim(text.substr(start, end - start));
        start = end + 1;
        ++lineno;
        if (line.empty() || line.front() == '#') continue;
        const auto f = split_whitespace(line);
        if (f.size() != 2 || (f[1] != "M" && f[1] != "F"))
            throw ParseError(source + ":" + std::to_string(lineno) + ": expected 'word<TAB>M|F'");
        out[to_lower(f[0])] = f[1] == "M" ? Gender::Male : Gender::Female;
    }
    return out;
}

inline GenderResources load_gender_resources(const std::string& names_path, const std::string& words_path) {
    return {parse_gender_list(read_file(names_path), names_path), parse_gender_list(read_file(words_path), words_path)};
}

/// Name-list match on any token first, then gendered-word match, else
/// Unknown.
inline Gender infer_gender(std::string_view name, const GenderResources& res) {
    const auto toks = word_tokens(name);
    for (const auto& t : toks) {
        if (auto it = res.names.find(t); it != res.names.end()) return it->second;
    }
    for (const auto& t : toks) {
        if (auto it = res.words.find(t); it != res.words.end()) return it->second;
    }
    return Gender::Unknown;
}

// ---------------------------------------------------------------- attribution

/// Case-insensitive whole-word match of a (possibly multi-word) name.
inline bool mentions(std::span<const std::string> sentence_tokens, std::span<const std::string> name_tokens) {
    if (name_tokens.empty() || name_tokens.size() > sentence_tokens.size()) return false;
    for (std::size_t i = 0; i + name_tokens.size() <= sentence_tokens.size(); ++i) {
        if (std::equal(name_tokens.begin(), name_tokens.end(), sentence_tokens.begin() + static_cast<std::ptrdiff_t>(i)))
            return true;
    }
    return false;
}

/// For each character, the indices of the sentences that mention it.
inline std::vector<std::vector<std::size_t>> attribute_sentences(std::span<const std::string> sentences,
                                                                 std::span<const std::string> characters) {
    std::vector<std::vector<std::string>> names;
    for (const auto& c : characters) names.push_back(word_tokens(c));
    std::vector<std::vector<std::size_t>> out(characters.size());
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        const auto toks = word_tokens(sentences[s]);
        for (std::size_t c = 0; c < characters.size(); ++c) {
            if (mentions(toks, names[c])) out[c].push_back(s);
        }
    }
    return out;
}

// ---------------------------------------------------------------- aggregation

struct CharacterProfile {
    std::string script;
    std::string name;
    Gender gender = Gender::Unknown;
    long n_narr = 0;
    long n_words = 0;
    long n_verbs = 0;
    long pos_agency = 0;
    long neg_agency = 0;

    bool operator==(const CharacterProfile&) const = default;
};

inline CharacterProfile aggregate_one(std::string name, Gender gender, std::span<const std::string> sentences,
                                      std::span<const std::size_t> attributed, const AgencyLexicon& lexicon) {
    CharacterProfile p;
    p.name = std::move(name);
    p.gender = gender;
    for (auto idx : attributed) {
        auto toks = word_tokens(sentences[idx]);
        ++p.n_narr;
        p.n_words += static_cast<long>(toks.size());
        const auto t = tag_tokens(std::move(toks), lexicon);
        p.n_verbs += static_cast<long>(t.verb_hits.size());
        p.pos_agency += static_cast<long>(t.count(AgencyLabel::Positive));
        p.neg_agency += static_cast<long>(t.count(AgencyLabel::Negative));
    }
    return p;
}

/// Profiles for every character of one parsed script.
inline std::vector<CharacterProfile> aggregate(const ParsedScript& script, std::span<const std::string> sentences,
                                               const GenderResources& res, const AgencyLexicon& lexicon,
                                               const std::string& script_id = "") {
    const auto attr = attribute_sentences(sentences, script.characters);
    std::vector<CharacterProfile> out;
    for (std::size_t c = 0; c < script.characters.size(); ++c) {
        auto p = aggregate_one(script.characters[c], infer_gender(script.characters[c], res), sentences, attr[c], lexicon);
        p.script = script_id;
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------- statistics

/// (mean_a - mean_b) / pooled sd with n-1 denominators.
inline double cohens_d(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw ArgumentError("cohens_d: each group needs at least 2 values");
    auto moments = [](std::span<const double> x) {
        double m = 0;
        for (double v : x) m += v;
        m /= static_cast<double>(x.size());
        double ss = 0;
        for (double v : x) ss += (v - m) * (v - m);
        return std::pair{m, ss};
    };
    const auto [ma, ssa] = moments(a);
    const auto [mb, ssb] = moments(b);
    const double pooled = std::sqrt((ssa + ssb) / static_cast<double>(a.size() + b.size() - 2));
    if (pooled == 0.0) throw PreconditionError("cohens_d: pooled standard deviation is zero");
    return (ma - mb) / pooled;
}

/// Centers each column and scales it to unit sample (n-1) standard
/// deviation. Constant columns are rejected.
inline Eigen::MatrixXd zscore(const Eigen::MatrixXd& X) {
    if (X.rows() < 2) throw PreconditionError("zscore: need at least 2 rows");
    Eigen::MatrixXd Z(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double m = X.col(j).mean();
        Eigen::VectorXd c = X.col(j).array() - m;
        const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(X.rows() - 1));
        if (!(sd > 0.0)) throw PreconditionError("zscore: column " + std::to_string(j) + " is constant");
        Z.col(j) = c / sd;
        // One correction pass pulls the mean and sd to within rounding.
        const double m2 = Z.col(j).mean();
        Z.col(j).array() -= m2;
        const double sd2 = std::sqrt(Z.col(j).squaredNorm() / static_cast<double>(X.rows() - 1));
        Z.col(j) /= sd2;
    }
    return Z;
}

struct RegressionResult {
    std::vector<std::string> names;  ///< "intercept" first
    std::vector<double> coefficients;
    std::vector<double> std_errors;
    bool converged = false;
    bool separation = false;
    int iterations = 0;
    double log_likelihood = 0.0;

    std::optional<double> coefficient(std::string_view name) const {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] == name) return coefficients[i];
        }
        return std::nullopt;
    }

    nlohmann::json to_json() const {
        nlohmann::json coefs = nlohmann::json::object();
        for (std::size_t i = 0; i < names.size(); ++i) {
            const double z = std_errors[i] > 0 ? coefficients[i] / std_errors[i] : 0.0;
            coefs[names[i]] = {{"coef", coefficients[i]}, {"se", std_errors[i]}, {"z", z}};
        }
        return {{"coefficients", coefs},          {"converged", converged},
                {"separation", separation},       {"iterations", iterations},
                {"log_likelihood", log_likelihood}};
    }
};

struct LogisticOptions {
    int max_iterations = 100;
    double score_tolerance = 1e-8;
    double ridge = 1e-8;
    /// On separated data the iterates diverge; they are stopped once any
    /// |coefficient| passes this bound.
    double divergence_bound = 30.0;
};

namespace detail {

/// max sum(A d) subject to A d >= 0 and |d_j| <= 1, by a dense simplex with
/// Bland's rule. With A = diag(2y - 1) [1 X], a positive optimum is a
/// direction along which the likelihood keeps rising forever: the outcome is
/// completely or quasi-completely separated and no finite MLE exists.
inline double separation_margin(const Eigen::MatrixXd& A) {
    const Eigen::Index n = A.rows(), k = A.cols();
    const Eigen::Index nv = 2 * k, m = n + nv, rhs = nv + m;
    // Variables d = p - q with 0 <= p, q <= 1; one slack per row.
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m + 1, rhs + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        T.block(i, 0, 1, k) = -A.row(i);
        T.block(i, k, 1, k) = A.row(i);
        T(i, nv + i) = 1.0;
    }
    for (Eigen::Index j = 0; j < nv; ++j) {
        T(n + j, j) = 1.0;
        T(n + j, nv + n + j) = 1.0;
        T(n + j, rhs) = 1.0;
    }
    const Eigen::RowVectorXd c = A.colwise().sum();
    T.block(m, 0, 1, k) = -c;
    T.block(m, k, 1, k) = c;
    std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) basis[static_cast<std::size_t>(i)] = nv + i;

    constexpr double eps = 1e-11;
    for (;;) {
        Eigen::Index enter = -1;
        for (Eigen::Index j = 0; j < rhs; ++j) {
            if (T(m, j) < -eps) {
                enter = j;
                break;
            }
        }
        if (enter < 0) break;
        Eigen::Index leave = -1;
        double best = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (T(i, enter) <= eps) continue;
            const double ratio = T(i, rhs) / T(i, enter);
            if (leave < 0 || ratio < best - eps ||
                (ratio <= best + eps && basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
                leave = i;
                best = ratio;
            }
        }
        if (leave < 0) break;  // cannot happen: the box bounds every direction
        T.row(leave) /= T(leave, enter);
        for (Eigen::Index i = 0; i <= m; ++i) {
            if (i != leave && T(i, enter) != 0.0) T.row(i) -= T(i, enter) * T.row(leave);
        }
        basis[static_cast<std::size_t>(leave)] = enter;
    }
    return T(m, rhs);
}

}  // namespace detail

/// Maximum-likelihood logistic regression by Newton-Raphson (IRLS). An
/// intercept column is prepended to `X`.
inline RegressionResult logistic_fit(std::span<const double> y, const Eigen::MatrixXd& X,
                                     std::vector<std::string> predictor_names, const LogisticOptions& opt = {}) {
    const auto n = X.rows();
    if (static_cast<std::size_t>(n) != y.size()) throw ArgumentError("logistic_fit: outcome and design sizes differ");
    if (predictor_names.size() != static_cast<std::size_t>(X.cols()))
        throw ArgumentError("logistic_fit: predictor name count does not match the design");
    double ones = 0;
    for (double v : y) {
        if (v != 0.0 && v != 1.0) throw ArgumentError("logistic_fit: outcome must be 0/1");
        ones += v;
    }
    if (ones == 0 || ones == static_cast<double>(n)) throw PreconditionError("logistic_fit: outcome has a single class");

    Eigen::MatrixXd D(n, X.cols() + 1);
    D.col(0).setOnes();
    D.rightCols(X.cols()) = X;
    const Eigen::Map<const Eigen::VectorXd> Y(y.data(), n);
    const auto k = D.cols();

    RegressionResult r;
    r.names.push_back("intercept");
    for (auto& s : predictor_names) r.names.push_back(std::move(s));

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
    Eigen::MatrixXd info(k, k);
    auto evaluate = [&](const Eigen::VectorXd& b, Eigen::VectorXd& score) {
        const Eigen::VectorXd eta = D * b;
        Eigen::VectorXd p(n), w(n);
        double ll = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            p(i) = 1.0 / (1.0 + std::exp(-eta(i)));
            w(i) = p(i) * (1.0 - p(i));
            // log(1+e^eta) computed stably
            const double sp = eta(i) > 0 ? eta(i) + std::log1p(std::exp(-eta(i))) : std::log1p(std::exp(eta(i)));
            ll += Y(i) * eta(i) - sp;
        }
        score = D.transpose() * (Y - p);
        info = D.transpose() * w.asDiagonal() * D;
        info.diagonal().array() += opt.ridge;
        return ll;
    };

    const Eigen::MatrixXd signed_design = (2.0 * Y.array() - 1.0).matrix().asDiagonal() * D;
    r.separation = detail::separation_margin(signed_design) > 1e-7;

    Eigen::VectorXd score(k);
    r.log_likelihood = evaluate(beta, score);
    for (int it = 0; it < opt.max_iterations; ++it) {
        if (!r.separation && score.cwiseAbs().maxCoeff() < opt.score_tolerance) {
            r.converged = true;
            break;
        }
        beta += info.ldlt().solve(score);
        ++r.iterations;
        r.log_likelihood = evaluate(beta, score);
        if (!beta.allFinite()) break;
        if (r.separation && beta.cwiseAbs().maxCoeff() > opt.divergence_bound) break;
    }
    if (!r.converged && !r.separation && beta.allFinite() && score.cwiseAbs().maxCoeff() < opt.score_tolerance)
        r.converged = true;

    const Eigen::MatrixXd cov = info.inverse();
    for (Eigen::Index i = 0; i < k; ++i) {
        r.coefficients.push_back(beta(i));
        r.std_errors.push_back(std::sqrt(std::max(0.0, cov(i, i))));
    }
    return r;
}

inline const std::vector<std::string>& regression_predictors() {
    static const std::vector<std::string> names{"pos_agency", "neg_agency", "n_words", "n_verbs", "n_narr"};
    return names;
}

/// Gender regression over known-gender profiles: M = 1, F = 0, predictors
/// z-scored within the sample.
inline RegressionResult gender_regression(std::span<const CharacterProfile> profiles, const LogisticOptions& opt = {}) {
    std::vector<const CharacterProfile*> rows;
    for (const auto& p : profiles) {
        if (p.gender != Gender::Unknown) rows.push_back(&p);
    }
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), 5);
    std::vector<double> y;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& p = *rows[i];
        const auto r = static_cast<Eigen::Index>(i);
        X(r, 0) = static_cast<double>(p.pos_agency);
        X(r, 1) = static_cast<double>(p.neg_agency);
        X(r, 2) = static_cast<double>(p.n_words);
        X(r, 3) = static_cast<double>(p.n_verbs);
        X(r, 4) = static_cast<double>(p.n_narr);
        y.push_back(p.gender == Gender::Male ? 1.0 : 0.0);
    }
    return logistic_fit(y, zscore(X), regression_predictors(), opt);
}

// ---------------------------------------------------------------- study

struct GroupMeans {
    std::size_t characters = 0;
    double pos_agency = 0.0;
    double neg_agency = 0.0;

    nlohmann::json to_json() const {
        return {{"characters", characters}, {"mean_pos_agency", pos_agency}, {"mean_neg_agency", neg_agency}};
    }
};

inline GroupMeans group_means(std::span<const CharacterProfile> profiles, Gender g) {
    GroupMeans m;
    for (const auto& p : profiles) {
        if (p.gender != g) continue;
        ++m.characters;
        m.pos_agency += static_cast<double>(p.pos_agency);
        m.neg_agency += static_cast<double>(p.neg_agency);
    }
    if (m.characters) {
        m.pos_agency /= static_cast<double>(m.characters);
        m.neg_agency /= static_cast<double>(m.characters);
    }
    return m;
}

struct Script {
    std::string id;
    std::string text;
};

/// Rewrites one sentence toward a target agency. Returns nullopt to keep the
/// original (a rejected or truncated revision).
using SentenceReviser = std::function<std::optional<std::string>(const std::string& sentence, AgencyLabel target)>;

struct StudyOptions {
    ScriptParseConfig parse;
    LogisticOptions logistic;
};

struct StudyReport {
    std::vector<CharacterProfile> before;
    std::vector<CharacterProfile> after;
    GroupMeans female_before, female_after, male_before, male_after;
    std::optional<RegressionResult> regression_before, regression_after;
    std::string regression_before_error, regression_after_error;
    std::size_t candidates = 0;  ///< female-attributed sentences with a determinate agency
    std::size_t revised = 0;
    std::size_t kept = 0;        ///< reviser declined
    std::size_t failed = 0;      ///< reviser threw

    /// F mean positive agency up, F mean negative agency down, both fits
    /// converged, and the positive-agency coefficient changed sign.
    bool direction_holds() const {
        if (female_before.characters == 0) return false;
        if (!(female_after.pos_agency > female_before.pos_agency)) return false;
        if (!(female_after.neg_agency < female_before.neg_agency)) return false;
        if (!regression_before || !regression_after) return false;
        if (!regression_before->converged || !regression_after->converged) return false;
        const double b = *regression_before->coefficient("pos_agency");
        const double a = *regression_after->coefficient("pos_agency");
        return (b > 0 && a < 0) || (b < 0 && a > 0);
    }

    nlohmann::json to_json() const {
        auto reg = [](const std::optional<RegressionResult>& r, const std::string& err) {
            return r ? r->to_json() : nlohmann::json{{"error", err}};
        };
        return {{"gender_coding", {{"M", 1}, {"F", 0}}},
                {"female", {{"before", female_before.to_json()}, {"after", female_after.to_json()}}},
                {"male", {{"before", male_before.to_json()}, {"after", male_after.to_json()}}},
                {"regression", {{"before", reg(regression_before, regression_before_error)},
                                {"after", reg(regression_after, regression_after_error)}}},
                {"revision", {{"candidates", candidates}, {"revised", revised}, {"kept", kept}, {"failed", failed}}},
                {"direction_holds", direction_holds()}};
    }
};

/// Profiles every script, revises each narration sentence that mentions a
/// female character toward positive agency, and re-profiles. A revised
/// sentence keeps the attribution of the sentence it replaces.
inline StudyReport debias_study(std::span<const Script> scripts, const GenderResources& res,
                                const AgencyLexicon& lexicon, const SentenceReviser& revise,
                                const StudyOptions& options = {}) {
    StudyReport rep;
    for (const auto& script : scripts) {
        const auto parsed = parse_script(script.text, options.parse);
        const auto& sentences = parsed.narration;
        const auto attr = attribute_sentences(sentences, parsed.characters);
        std::vector<Gender> genders;
        for (const auto& c : parsed.characters) genders.push_back(infer_gender(c, res));

        std::vector<bool> female(sentences.size(), false);
        for (std::size_t c = 0; c < parsed.characters.size(); ++c) {
            if (genders[c] != Gender::Female) continue;
            for (auto s : attr[c]) female[s] = true;
        }
        std::vector<std::string> revised = sentences;
        for (std::size_t s = 0; s < sentences.size(); ++s) {
            if (!female[s]) continue;
            if (!tag_tokens(word_tokens(sentences[s]), lexicon).sentence_agency) continue;
            ++rep.candidates;
            try {
                if (auto out = revise(sentences[s], AgencyLabel::Positive)) {
                    revised[s] = std::move(*out);
                    ++rep.revised;
                } else {
                    ++rep.kept;
                }
            } catch (const Error&) {
                ++rep.failed;
            }
        }
        for (std::size_t c = 0; c < parsed.characters.size(); ++c) {
            auto b = aggregate_one(parsed.characters[c], genders[c], sentences, attr[c], lexicon);
            auto a = aggregate_one(parsed.characters[c], genders[c], revised, attr[c], lexicon);
            b.script = a.script = script.id;
            rep.before.push_back(std::move(b));
            rep.after.push_back(std::move(a));
        }
    }
    rep.female_before = group_means(rep.before, Gender::Female);
    rep.female_after = group_means(rep.after, Gender::Female);
    rep.male_before = group_means(rep.before, Gender::Male);
    rep.male_after = group_means(rep.after, Gender::Male);
    try {
        rep.regression_before = gender_regression(rep.before, options.logistic);
    } catch (const Error& e) {
        rep.regression_before_error = e.what();
    }
    try {
        rep.regression_after = gender_regression(rep.after, options.logistic);
    } catch (const Error& e) {
        rep.regression_after_error = e.what();
    }
    return rep;
}

}  // namespace agencyrev
