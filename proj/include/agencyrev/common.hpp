#pragma once

// Shared plumbing: error taxonomy, hashing, deterministic RNG helpers and
// the word normalizer used by the tagger and the metrics.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace agencyrev {

/// Base class for every error raised by the library. `category()` drives
/// the CLI exit code (config=2, data=3, runtime=4).
class Error : public std::runtime_error {
public:
    enum class Category { Config = 2, Data = 3, Runtime = 4 };
    Error(Category c, const std::string& what) : std::runtime_error(what), category_(c) {}
    Category category() const noexcept { return category_; }

private:
    Category category_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(Category::Config, w) {}
};
struct ParseError : Error {
    explicit ParseError(const std::string& w) : Error(Category::Data, w) {}
};
struct ValidationError : Error {
    explicit ValidationError(const std::string& w) : Error(Category::Data, w) {}
};
struct BalancingError : Error {
    explicit BalancingError(const std::string& w) : Error(Category::Data, w) {}
};
struct ArgumentError : Error {
    explicit ArgumentError(const std::string& w) : Error(Category::Runtime, w) {}
};
struct PreconditionError : Error {
    explicit PreconditionError(const std::string& w) : Error(Category::Runtime, w) {}
};
struct RetrievalError : Error {
    explicit RetrievalError(const std::string& w) : Error(Category::Runtime, w) {}
};
struct TrainingError : Error {
    explicit TrainingError(const std::string& w) : Error(Category::Runtime, w) {}
};
struct DecodeError : Error {
    explicit DecodeError(const std::string& w) : Error(Category::Runtime, w) {}
};

// ---------------------------------------------------------------------------
// hashing

/// 64-bit FNV-1a. Used for content hashes embedded in artifacts; not
/// cryptographic.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

// ---------------------------------------------------------------------------
// randomness
//
// std::mt19937_64 is fully specified by the standard; the distributions are
// not, so the helpers below are written out to keep streams identical across
// standard libraries.

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
    if (n == 0) throw ArgumentError("uniform_below: empty range");
    unsigned __int128 m = static_cast<unsigned __int128>(rng()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
        const std::uint64_t threshold = (0 - n) % n;
        while (low < threshold) {
            m = static_cast<unsigned __int128>(rng()) * n;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

/// Box-Muller normal deviate.
inline double normal(Rng& rng, double mean = 0.0, double sd = 1.0) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_below(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

/// Derives an independent seed for a sub-stream (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// text

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

inline std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) ++i;
        const std::size_t start = i;
        while (i < s.size() && !is_space(s[i])) ++i;
        if (i > start) out.emplace_back(s.substr(start, i - start));
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

inline bool is_ascii_punct(char c) {
    const auto u = static_cast<unsigned char>(c);
    return u < 128 && std::ispunct(u);
}

/// Word tokenizer shared by tagging and metrics: lowercase, split on
/// whitespace, strip leading/trailing ASCII punctuation. Tokens that become
/// empty are dropped. Special tokens such as `<VERB>` pass through intact.
inline std::vector<std::string> word_tokens(std::string_view text) {
    std::vector<std::string> out;
    for (auto& raw : split_whitespace(text)) {
        if (raw.size() > 2 && raw.front() == '<' && raw.back() == '>') {
            out.push_back(raw);
            continue;
        }
        std::string_view w = raw;
        while (!w.empty() && is_ascii_punct(w.front())) w.remove_prefix(1);
        while (!w.empty() && is_ascii_punct(w.back())) w.remove_suffix(1);
        if (!w.empty()) out.push_back(to_lower(w));
    }
    return out;
}

inline std::string join(std::span<const std::string> words, std::string_view sep = " ") {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += sep;
        out += words[i];
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

}  // namespace agencyrev
