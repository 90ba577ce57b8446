#pragma once

// Shared test helpers: fixture readers and the finite-difference oracle.

#include <agencyrev/agencyrev.hpp>

#include <json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace testsupport {

inline std::string data_path(const std::string& name) { return std::string(AGENCYREV_DATA_DIR) + "/" + name; }

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
    std::vector<nlohmann::json> out;
    std::ifstream in(path);
    for (std::string line; std::getline(in, line);) {
        if (!agencyrev::trim(line).empty()) out.push_back(nlohmann::json::parse(line));
    }
    return out;
}

inline std::vector<std::string> story_texts(const std::string& file = "story.jsonl") {
    std::vector<std::string> out;
    for (const auto& j : read_jsonl(data_path(file))) out.push_back(j.at("text").get<std::string>());
    return out;
}

inline const agencyrev::AgencyLexicon& shipped_lexicon() {
    static const auto lex = agencyrev::load_lexicon(data_path("lexicon.tsv"));
    return lex;
}

struct GradCheck {
    std::size_t checked = 0;
    std::size_t passed = 0;
    double worst = 0.0;
    double pass_fraction() const { return checked ? static_cast<double>(passed) / static_cast<double>(checked) : 0.0; }
};

/// Central differences on every parameter. A parameter passes when the
/// relative error is below `tol`, or both values are below `floor` in
/// magnitude.
inline GradCheck finite_difference_check(agencyrev::TransformerModel& model, const std::vector<agencyrev::TokenId>& ids,
                                         const std::vector<bool>& mask, double eps = 1e-4, double tol = 1e-3,
                                         double floor = 1e-9) {
    const auto analytic = agencyrev::backward(model, ids, mask);
    GradCheck r;
    auto& ps = model.params();
    for (std::size_t i = 0; i < ps.tensors.size(); ++i) {
        for (std::size_t k = 0; k < ps.tensors[i].size(); ++k) {
            double& p = ps.tensors[i].data[k];
            const double orig = p;
            p = orig + eps;
            const double up = agencyrev::loss(model, ids, mask).total_loss;
            p = orig - eps;
            const double down = agencyrev::loss(model, ids, mask).total_loss;
            p = orig;
            const double numeric = (up - down) / (2 * eps);
            const double a = analytic.tensors[i].data[k];
            const double denom = std::abs(a) + std::abs(numeric);
            const double rel = denom > 0 ? std::abs(a - numeric) / denom : 0.0;
            ++r.checked;
            if (rel < tol || (std::abs(a) < floor && std::abs(numeric) < floor)) {
                ++r.passed;
            } else {
                r.worst = std::max(r.worst, rel);
            }
        }
    }
    return r;
}

struct SyntheticLogistic {
    Eigen::MatrixXd X;
    std::vector<double> y;
};

/// n rows of standard-normal predictors with outcomes drawn from the
/// logistic model with coefficients `beta` (intercept first).
inline SyntheticLogistic synthetic_logistic(std::size_t n, const std::vector<double>& beta, std::uint64_t seed) {
    agencyrev::Rng rng(seed);
    const auto p = static_cast<Eigen::Index>(beta.size() - 1);
    SyntheticLogistic d{Eigen::MatrixXd(static_cast<Eigen::Index>(n), p), {}};
    for (std::size_t i = 0; i < n; ++i) {
        double eta = beta[0];
        for (Eigen::Index j = 0; j < p; ++j) {
            const double x = agencyrev::normal(rng);
            d.X(static_cast<Eigen::Index>(i), j) = x;
            eta += beta[static_cast<std::size_t>(j + 1)] * x;
        }
        d.y.push_back(agencyrev::uniform01(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0);
    }
    return d;
}

/// Fresh scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("agencyrev_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct CliRun {
    int code = -1;
    std::string out, err;
};

/// Runs the command-line tool with `args`, capturing both streams.
inline CliRun run_cli(const std::vector<std::string>& args, const TempDir& scratch) {
    std::string cmd = "'" + std::string(AGENCYREV_CLI) + "'";
    for (const auto& a : args) cmd += " '" + a + "'";
    const auto out = scratch / "stdout.txt";
    const auto err = scratch / "stderr.txt";
    cmd += " >'" + out + "' 2>'" + err + "'";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

}  // namespace testsupport
