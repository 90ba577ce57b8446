#pragma once

// Small pre-layer-norm decoder-only transformer with hand-written backward
// pass, AdamW, and a bit-exact binary checkpoint format.
//
// Storage is double precision throughout. The tensor order set up by the
// TransformerModel constructor is part of the checkpoint format.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bpe.hpp"
#include "common.hpp"

namespace agencyrev {

struct ModelConfig {
    int vocab_size = 0;
    int max_seq_len = 64;
    int embed_dim = 64;
    int n_heads = 4;
    int n_layers = 2;
    double dropout_rate = 0.0;

    void validate() const {
        if (vocab_size <= 0 || max_seq_len <= 0 || embed_dim <= 0 || n_heads <= 0 || n_layers <= 0)
            throw ConfigError("model config: sizes must be positive");
        if (embed_dim % n_heads != 0) throw ConfigError("model config: embed_dim must be divisible by n_heads");
        if (max_seq_len < 2) throw ConfigError("model config: max_seq_len must be at least 2");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("model config: dropout_rate must be in [0,1)");
    }

    int head_dim() const { return embed_dim / n_heads; }

    nlohmann::json to_json() const {
        return {{"vocab_size", vocab_size}, {"max_seq_len", max_seq_len}, {"embed_dim", embed_dim},
                {"n_heads", n_heads},       {"n_layers", n_layers},       {"dropout_rate", dropout_rate}};
    }
    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.vocab_size = j.at("vocab_size").get<int>();
        c.max_seq_len = j.at("max_seq_len").get<int>();
        c.embed_dim = j.at("embed_dim").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.n_layers = j.at("n_layers").get<int>();
        c.dropout_rate = j.value("dropout_rate", 0.0);
        c.validate();
        return c;
    }
    bool operator==(const ModelConfig&) const = default;
};

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        data.assign(n, fill);
    }
    std::size_t size() const { return data.size(); }
    bool operator==(const Tensor&) const = default;
};

/// Named tensors in a fixed order; used for parameters, gradients and
/// optimizer moments alike.
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;

    ParamSet zeros_like() const {
        ParamSet z;
        z.names = names;
        for (const auto& t : tensors) z.tensors.emplace_back(t.shape);
        return z;
    }
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.size();
        return n;
    }
    void scale(double s) {
        for (auto& t : tensors) {
            for (auto& x : t.data) x *= s;
        }
    }
    void add(const ParamSet& o) {
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            for (std::size_t k = 0; k < tensors[i].size(); ++k) tensors[i].data[k] += o.tensors[i].data[k];
        }
    }
    bool operator==(const ParamSet&) const = default;
};

namespace slot {
// per-layer tensor offsets
inline constexpr std::size_t Ln1G = 0, Ln1B = 1, Wqkv = 2, Bqkv = 3, Wo = 4, Bo = 5, Ln2G = 6, Ln2B = 7, W1 = 8,
                             B1 = 9, W2 = 10, B2 = 11, PerLayer = 12;
}  // namespace slot

class TransformerModel {
public:
    TransformerModel() = default;

    /// Zero-initialized model (layer-norm scales are one).
    explicit TransformerModel(const ModelConfig& cfg, std::uint64_t vocab_hash = 0) : config_(cfg), vocab_hash_(vocab_hash) {
        cfg.validate();
        const auto V = static_cast<std::size_t>(cfg.vocab_size), T = static_cast<std::size_t>(cfg.max_seq_len),
                   D = static_cast<std::size_t>(cfg.embed_dim);
        auto add = [&](std::string name, std::vector<std::size_t> shape, double fill = 0.0) {
            params_.names.push_back(std::move(name));
            params_.tensors.emplace_back(std::move(shape), fill);
        };
        add("wte", {V, D});
        add("wpe", {T, D});
        for (int l = 0; l < cfg.n_layers; ++l) {
            const std::string p = "h" + std::to_string(l) + ".";
            add(p + "ln1.g", {D}, 1.0);
            add(p + "ln1.b", {D});
            add(p + "attn.w_qkv", {D, 3 * D});
            add(p + "attn.b_qkv", {3 * D});
            add(p + "attn.w_o", {D, D});
            add(p + "attn.b_o", {D});
            add(p + "ln2.g", {D}, 1.0);
            add(p + "ln2.b", {D});
            add(p + "mlp.w_in", {D, 4 * D});
            add(p + "mlp.b_in", {4 * D});
            add(p + "mlp.w_out", {4 * D, D});
            add(p + "mlp.b_out", {D});
        }
        add("lnf.g", {D}, 1.0);
        add("lnf.b", {D});
        add("w_out", {D, V});
    }

    /// normal(0, std) for every weight matrix, zeros for biases and shifts,
    /// ones for layer-norm scales.
    void init_normal(std::uint64_t seed, double std = 0.02) {
        Rng rng(seed);
        for (std::size_t i = 0; i < params_.tensors.size(); ++i) {
            auto& t = params_.tensors[i];
            if (t.shape.size() == 2) {
                for (auto& x : t.data) x = normal(rng, 0.0, std);
            } else if (params_.names[i].ends_with(".g")) {
                std::fill(t.data.begin(), t.data.end(), 1.0);
            } else {
                std::fill(t.data.begin(), t.data.end(), 0.0);
            }
        }
    }

    const ModelConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    std::uint64_t vocab_hash() const { return vocab_hash_; }
    void set_vocab_hash(std::uint64_t h) { vocab_hash_ = h; }

    Tensor& layer(int l, std::size_t s) { return params_.tensors[2 + static_cast<std::size_t>(l) * slot::PerLayer + s]; }
    const Tensor& layer(int l, std::size_t s) const {
        return params_.tensors[2 + static_cast<std::size_t>(l) * slot::PerLayer + s];
    }
    const Tensor& wte() const { return params_.tensors[0]; }
    const Tensor& wpe() const { return params_.tensors[1]; }
    const Tensor& lnf_g() const { return params_.tensors[params_.tensors.size() - 3]; }
    const Tensor& lnf_b() const { return params_.tensors[params_.tensors.size() - 2]; }
    const Tensor& w_out() const { return params_.tensors.back(); }

    bool operator==(const TransformerModel&) const = default;

private:
    ModelConfig config_;
    std::uint64_t vocab_hash_ = 0;
    ParamSet params_;
};

// ---------------------------------------------------------------------------
// kernels (row-major, double)

namespace kernel {

/// y[T x out] = x[T x in] * W[in x out] + b
inline void linear(const double* x, std::size_t T, std::size_t in, const Tensor& W, const Tensor* b, double* y) {
    const std::size_t out = W.shape[1];
    for (std::size_t t = 0; t < T; ++t) {
        double* yr = y + t * out;
        if (b) {
            std::copy(b->data.begin(), b->data.end(), yr);
        } else {
            std::fill(yr, yr + out, 0.0);
        }
        const double* xr = x + t * in;
        for (std::size_t i = 0; i < in; ++i) {
            const double xi = xr[i];
            const double* wr = W.data.data() + i * out;
            for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wr[o];
        }
    }
}

/// Accumulates dW += x^T dy, db += sum dy, and writes dx = dy W^T (dx may be
/// null when not needed).
inline void linear_backward(const double* x, const double* dy, std::size_t T, std::size_t in, const Tensor& W,
                            Tensor& dW, Tensor* db, double* dx) {
    const std::size_t out = W.shape[1];
    for (std::size_t t = 0; t < T; ++t) {
        const double* dyr = dy + t * out;
        const double* xr = x + t * in;
        if (db) {
            for (std::size_t o = 0; o < out; ++o) db->data[o] += dyr[o];
        }
        for (std::size_t i = 0; i < in; ++i) {
            const double xi = xr[i];
            double* dwr = dW.data.data() + i * out;
            const double* wr = W.data.data() + i * out;
            double acc = 0.0;
            for (std::size_t o = 0; o < out; ++o) {
                dwr[o] += xi * dyr[o];
                acc += dyr[o] * wr[o];
            }
            if (dx) dx[t * in + i] = acc;
        }
    }
}

inline constexpr double kLnEps = 1e-5;

/// Layer norm over rows; stores normalized rows and reciprocal std for the
/// backward pass.
inline void layer_norm(const double* x, std::size_t T, std::size_t D, const Tensor& g, const Tensor& b, double* y,
                       double* xhat, double* rstd) {
    for (std::size_t t = 0; t < T; ++t) {
        const double* xr = x + t * D;
        double mean = 0.0;
        for (std::size_t i = 0; i < D; ++i) mean += xr[i];
        mean /= static_cast<double>(D);
        double var = 0.0;
        for (std::size_t i = 0; i < D; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= static_cast<double>(D);
        const double rs = 1.0 / std::sqrt(var + kLnEps);
        rstd[t] = rs;
        for (std::size_t i = 0; i < D; ++i) {
            const double h = (xr[i] - mean) * rs;
            xhat[t * D + i] = h;
            y[t * D + i] = h * g.data[i] + b.data[i];
        }
    }
}

/// dx += layer-norm backward of dy.
inline void layer_norm_backward(const double* dy, const double* xhat, const double* rstd, std::size_t T,
                                std::size_t D, const Tensor& g, Tensor& dg, Tensor& db, double* dx) {
    for (std::size_t t = 0; t < T; ++t) {
        const double* dyr = dy + t * D;
        const double* hr = xhat + t * D;
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t i = 0; i < D; ++i) {
            const double dh = dyr[i] * g.data[i];
            dg.data[i] += dyr[i] * hr[i];
            db.data[i] += dyr[i];
            mean_dh += dh;
            mean_dh_h += dh * hr[i];
        }
        mean_dh /= static_cast<double>(D);
        mean_dh_h /= static_cast<double>(D);
        for (std::size_t i = 0; i < D; ++i) {
            const double dh = dyr[i] * g.data[i];
            dx[t * D + i] += rstd[t] * (dh - mean_dh - hr[i] * mean_dh_h);
        }
    }
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

inline double gelu_grad(double x) {
    const double u = kGeluC * (x + 0.044715 * x * x * x);
    const double th = std::tanh(u);
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// forward / backward

struct LayerCache {
    std::vector<double> x_in, ln1_hat, ln1_rstd, a1, qkv, probs, ctx, x_mid, ln2_hat, ln2_rstd, a2, h_pre, h_act;
};

struct ForwardCache {
    std::size_t T = 0;
    std::vector<LayerCache> layers;
    std::vector<double> x_final, lnf_hat, lnf_rstd, y;
};

namespace detail {

inline void check_ids(const TransformerModel& m, std::span<const TokenId> ids) {
    const auto& c = m.config();
    if (ids.empty()) throw ArgumentError("forward: empty sequence");
    if (ids.size() > static_cast<std::size_t>(c.max_seq_len))
        throw ArgumentError("forward: sequence length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                            std::to_string(c.max_seq_len));
    for (auto id : ids) {
        if (id < 0 || id >= c.vocab_size) throw ArgumentError("forward: token id " + std::to_string(id) + " out of range");
    }
}

/// Runs the trunk (everything up to the final layer norm) and fills cache.y.
inline void trunk_forward(const TransformerModel& m, std::span<const TokenId> ids, ForwardCache& cache) {
    check_ids(m, ids);
    const auto& c = m.config();
    const std::size_t T = ids.size(), D = static_cast<std::size_t>(c.embed_dim),
                      H = static_cast<std::size_t>(c.n_heads), hd = static_cast<std::size_t>(c.head_dim());
    cache.T = T;
    cache.layers.resize(static_cast<std::size_t>(c.n_layers));

    std::vector<double> x(T * D);
    for (std::size_t t = 0; t < T; ++t) {
        const double* e = m.wte().data.data() + static_cast<std::size_t>(ids[t]) * D;
        const double* p = m.wpe().data.data() + t * D;
        for (std::size_t i = 0; i < D; ++i) x[t * D + i] = e[i] + p[i];
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    for (int l = 0; l < c.n_layers; ++l) {
        auto& L = cache.layers[static_cast<std::size_t>(l)];
        L.x_in = x;
        L.ln1_hat.resize(T * D);
        L.ln1_rstd.resize(T);
        L.a1.resize(T * D);
        kernel::layer_norm(x.data(), T, D, m.layer(l, slot::Ln1G), m.layer(l, slot::Ln1B), L.a1.data(),
                           L.ln1_hat.data(), L.ln1_rstd.data());
        L.qkv.resize(T * 3 * D);
        kernel::linear(L.a1.data(), T, D, m.layer(l, slot::Wqkv), &m.layer(l, slot::Bqkv), L.qkv.data());

        L.probs.assign(H * T * T, 0.0);
        L.ctx.assign(T * D, 0.0);
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < T; ++i) {
                const double* q = L.qkv.data() + i * 3 * D + h * hd;
                double* pr = L.probs.data() + (h * T + i) * T;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j <= i; ++j) {
                    const double* k = L.qkv.data() + j * 3 * D + D + h * hd;
                    double s = 0.0;
                    for (std::size_t d = 0; d < hd; ++d) s += q[d] * k[d];
                    pr[j] = s * scale;
                    mx = std::max(mx, pr[j]);
                }
                double sum = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    pr[j] = std::exp(pr[j] - mx);
                    sum += pr[j];
                }
                double* out = L.ctx.data() + i * D + h * hd;
                for (std::size_t j = 0; j <= i; ++j) {
                    pr[j] /= sum;
                    const double* v = L.qkv.data() + j * 3 * D + 2 * D + h * hd;
                    for (std::size_t d = 0; d < hd; ++d) out[d] += pr[j] * v[d];
                }
            }
        }
        std::vector<double> attn_out(T * D);
        kernel::linear(L.ctx.data(), T, D, m.layer(l, slot::Wo), &m.layer(l, slot::Bo), attn_out.data());
        for (std::size_t k = 0; k < T * D; ++k) x[k] += attn_out[k];
        L.x_mid = x;

        L.ln2_hat.resize(T * D);
        L.ln2_rstd.resize(T);
        L.a2.resize(T * D);
        kernel::layer_norm(x.data(), T, D, m.layer(l, slot::Ln2G), m.layer(l, slot::Ln2B), L.a2.data(),
                           L.ln2_hat.data(), L.ln2_rstd.data());
        L.h_pre.resize(T * 4 * D);
        kernel::linear(L.a2.data(), T, D, m.layer(l, slot::W1), &m.layer(l, slot::B1), L.h_pre.data());
        L.h_act.resize(T * 4 * D);
        for (std::size_t k = 0; k < L.h_pre.size(); ++k) L.h_act[k] = kernel::gelu(L.h_pre[k]);
        std::vector<double> mlp_out(T * D);
        kernel::linear(L.h_act.data(), T, 4 * D, m.layer(l, slot::W2), &m.layer(l, slot::B2), mlp_out.data());
        for (std::size_t k = 0; k < T * D; ++k) x[k] += mlp_out[k];
    }
    cache.x_final = x;
    cache.lnf_hat.resize(T * D);
    cache.lnf_rstd.resize(T);
    cache.y.resize(T * D);
    kernel::layer_norm(x.data(), T, D, m.lnf_g(), m.lnf_b(), cache.y.data(), cache.lnf_hat.data(),
                       cache.lnf_rstd.data());
}

inline std::vector<double> logits_row(const TransformerModel& m, const ForwardCache& cache, std::size_t t) {
    const std::size_t D = static_cast<std::size_t>(m.config().embed_dim);
    std::vector<double> row(static_cast<std::size_t>(m.config().vocab_size));
    kernel::linear(cache.y.data() + t * D, 1, D, m.w_out(), nullptr, row.data());
    return row;
}

}  // namespace detail

/// Logits matrix, one row of size V per input position. Row i is the
/// next-token distribution after ids[0..i].
inline std::vector<std::vector<double>> forward(const TransformerModel& model, std::span<const TokenId> ids) {
    ForwardCache cache;
    detail::trunk_forward(model, ids, cache);
    std::vector<std::vector<double>> out;
    out.reserve(ids.size());
    for (std::size_t t = 0; t < ids.size(); ++t) out.push_back(detail::logits_row(model, cache, t));
    return out;
}

/// Logits of the last position only.
inline std::vector<double> forward_last(const TransformerModel& model, std::span<const TokenId> ids) {
    ForwardCache cache;
    detail::trunk_forward(model, ids, cache);
    return detail::logits_row(model, cache, ids.size() - 1);
}

/// Numerically stable log-sum-exp.
inline double log_sum_exp(std::span<const double> row) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    return mx + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> row) {
    const double lse = log_sum_exp(row);
    std::vector<double> p(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) p[i] = std::exp(row[i] - lse);
    return p;
}

struct LossReport {
    double total_loss = 0.0;
    std::size_t token_count = 0;
    std::vector<double> per_position_nll;  // one entry per supervised position, in order
};

namespace detail {

inline std::vector<std::size_t> supervised_positions(std::span<const TokenId> ids, const std::vector<bool>& target_mask) {
    if (target_mask.size() != ids.size()) throw ArgumentError("loss: target_mask length differs from ids");
    if (!target_mask.empty() && target_mask[0]) throw ArgumentError("loss: position 0 has no preceding context");
    std::vector<std::size_t> pos;
    for (std::size_t i = 1; i < ids.size(); ++i) {
        if (target_mask[i]) pos.push_back(i);
    }
    if (pos.empty()) throw ArgumentError("loss: no supervised positions");
    return pos;
}

}  // namespace detail

/// Mean next-token NLL over positions i with target_mask[i]; ids[i] is
/// predicted from logits row i-1.
inline LossReport loss(const TransformerModel& model, std::span<const TokenId> ids, const std::vector<bool>& target_mask) {
    const auto pos = detail::supervised_positions(ids, target_mask);
    ForwardCache cache;
    detail::trunk_forward(model, ids, cache);
    LossReport r;
    r.token_count = pos.size();
    double sum = 0.0;
    for (auto i : pos) {
        const auto row = detail::logits_row(model, cache, i - 1);
        const double nll = log_sum_exp(row) - row[static_cast<std::size_t>(ids[i])];
        r.per_position_nll.push_back(nll);
        sum += nll;
    }
    r.total_loss = sum / static_cast<double>(pos.size());
    return r;
}

/// Adds scale * d(loss)/d(params) into `grads` and returns the loss.
inline LossReport accumulate_gradients(const TransformerModel& model, std::span<const TokenId> ids,
                                       const std::vector<bool>& target_mask, ParamSet& grads, double scale = 1.0) {
    const auto pos = detail::supervised_positions(ids, target_mask);
    const auto& c = model.config();
    const std::size_t T = ids.size(), D = static_cast<std::size_t>(c.embed_dim), V = static_cast<std::size_t>(c.vocab_size),
                      H = static_cast<std::size_t>(c.n_heads), hd = static_cast<std::size_t>(c.head_dim());
    ForwardCache cache;
    detail::trunk_forward(model, ids, cache);

    auto& gt = grads.tensors;
    const std::size_t last = gt.size() - 1;
    LossReport r;
    r.token_count = pos.size();
    const double w = scale / static_cast<double>(pos.size());

    // output projection and softmax cross-entropy
    std::vector<double> dy(T * D, 0.0);
    double sum = 0.0;
    for (auto i : pos) {
        const std::size_t t = i - 1;
        const auto row = detail::logits_row(model, cache, t);
        const double lse = log_sum_exp(row);
        const double nll = lse - row[static_cast<std::size_t>(ids[i])];
        r.per_position_nll.push_back(nll);
        sum += nll;
        std::vector<double> dlog(V);
        for (std::size_t v = 0; v < V; ++v) dlog[v] = std::exp(row[v] - lse) * w;
        dlog[static_cast<std::size_t>(ids[i])] -= w;
        std::vector<double> dyt(D);
        kernel::linear_backward(cache.y.data() + t * D, dlog.data(), 1, D, model.w_out(), gt[last], nullptr, dyt.data());
        for (std::size_t d = 0; d < D; ++d) dy[t * D + d] += dyt[d];
    }
    r.total_loss = sum / static_cast<double>(pos.size());

    std::vector<double> dx(T * D, 0.0);
    kernel::layer_norm_backward(dy.data(), cache.lnf_hat.data(), cache.lnf_rstd.data(), T, D, model.lnf_g(),
                                gt[last - 2], gt[last - 1], dx.data());

    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int l = c.n_layers - 1; l >= 0; --l) {
        const auto& L = cache.layers[static_cast<std::size_t>(l)];
        auto G = [&](std::size_t s) -> Tensor& { return gt[2 + static_cast<std::size_t>(l) * slot::PerLayer + s]; };

        // MLP block: x = x_mid + W2(gelu(W1 ln2(x_mid)))
        std::vector<double> dh_act(T * 4 * D);
        kernel::linear_backward(L.h_act.data(), dx.data(), T, 4 * D, model.layer(l, slot::W2), G(slot::W2), &G(slot::B2),
                                dh_act.data());
        for (std::size_t k = 0; k < dh_act.size(); ++k) dh_act[k] *= kernel::gelu_grad(L.h_pre[k]);
        std::vector<double> da2(T * D);
        kernel::linear_backward(L.a2.data(), dh_act.data(), T, D, model.layer(l, slot::W1), G(slot::W1), &G(slot::B1),
                                da2.data());
        kernel::layer_norm_backward(da2.data(), L.ln2_hat.data(), L.ln2_rstd.data(), T, D, model.layer(l, slot::Ln2G),
                                    G(slot::Ln2G), G(slot::Ln2B), dx.data());

        // attention block: x_mid = x_in + Wo(attn(ln1(x_in)))
        std::vector<double> dctx(T * D);
        kernel::linear_backward(L.ctx.data(), dx.data(), T, D, model.layer(l, slot::Wo), G(slot::Wo), &G(slot::Bo),
                                dctx.data());
        std::vector<double> dqkv(T * 3 * D, 0.0);
        std::vector<double> dp(T);
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t i = 0; i < T; ++i) {
                const double* pr = L.probs.data() + (h * T + i) * T;
                const double* dc = dctx.data() + i * D + h * hd;
                double dot = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double* v = L.qkv.data() + j * 3 * D + 2 * D + h * hd;
                    double* dv = dqkv.data() + j * 3 * D + 2 * D + h * hd;
                    double s = 0.0;
                    for (std::size_t d = 0; d < hd; ++d) {
                        s += dc[d] * v[d];
                        dv[d] += pr[j] * dc[d];
                    }
                    dp[j] = s;
                    dot += pr[j] * s;
                }
                const double* q = L.qkv.data() + i * 3 * D + h * hd;
                double* dq = dqkv.data() + i * 3 * D + h * hd;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double ds = pr[j] * (dp[j] - dot) * att_scale;
                    const double* k = L.qkv.data() + j * 3 * D + D + h * hd;
                    double* dk = dqkv.data() + j * 3 * D + D + h * hd;
                    for (std::size_t d = 0; d < hd; ++d) {
                        dq[d] += ds * k[d];
                        dk[d] += ds * q[d];
                    }
                }
            }
        }
        std::vector<double> da1(T * D);
        kernel::linear_backward(L.a1.data(), dqkv.data(), T, D, model.layer(l, slot::Wqkv), G(slot::Wqkv),
                                &G(slot::Bqkv), da1.data());
        kernel::layer_norm_backward(da1.data(), L.ln1_hat.data(), L.ln1_rstd.data(), T, D, model.layer(l, slot::Ln1G),
                                    G(slot::Ln1G), G(slot::Ln1B), dx.data());
    }

    for (std::size_t t = 0; t < T; ++t) {
        double* de = gt[0].data.data() + static_cast<std::size_t>(ids[t]) * D;
        double* dpp = gt[1].data.data() + t * D;
        for (std::size_t d = 0; d < D; ++d) {
            de[d] += dx[t * D + d];
            dpp[d] += dx[t * D + d];
        }
    }
    return r;
}

/// Exact gradients of `loss(model, ids, target_mask).total_loss`.
inline ParamSet backward(const TransformerModel& model, std::span<const TokenId> ids, const std::vector<bool>& target_mask,
                         double scale = 1.0) {
    ParamSet g = model.params().zeros_like();
    accumulate_gradients(model, ids, target_mask, g, scale);
    return g;
}

// ---------------------------------------------------------------------------
// optimizer

/// AdamW with decoupled weight decay applied to rank-2 tensors only.
class AdamW {
public:
    struct Options {
        double lr = 3e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.01;
    };

    AdamW(const ParamSet& params, Options opt) : opt_(opt), m_(params.zeros_like()), v_(params.zeros_like()) {}

    void step(ParamSet& params, const ParamSet& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.tensors.size(); ++i) {
            auto& p = params.tensors[i].data;
            const auto& g = grads.tensors[i].data;
            auto& m = m_.tensors[i].data;
            auto& v = v_.tensors[i].data;
            const bool decay = params.tensors[i].shape.size() == 2 && opt_.weight_decay != 0.0;
            for (std::size_t k = 0; k < p.size(); ++k) {
                m[k] = opt_.beta1 * m[k] + (1.0 - opt_.beta1) * g[k];
                v[k] = opt_.beta2 * v[k] + (1.0 - opt_.beta2) * g[k] * g[k];
                const double mhat = m[k] / bc1;
                const double vhat = v[k] / bc2;
                if (decay) p[k] -= opt_.lr * opt_.weight_decay * p[k];
                p[k] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
            }
        }
    }

    Options& options() { return opt_; }
    long steps() const { return t_; }

private:
    Options opt_;
    ParamSet m_, v_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// checkpoint
//
// Layout (little-endian):
//   "AGRVCKPT" | u32 version | u64 header length | header JSON |
//   u32 tensor count | per tensor: u32 name length, name, u32 rank,
//   u64 dims[rank], f64 data[...]

namespace detail {

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T get(std::string_view& in) {
    if (in.size() < sizeof(T)) throw ParseError("checkpoint: truncated");
    T v;
    std::memcpy(&v, in.data(), sizeof(T));
    in.remove_prefix(sizeof(T));
    return v;
}

inline constexpr std::string_view kCheckpointMagic = "AGRVCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace detail

/// Serializes the model. `extra` is stored verbatim in the header (training
/// layout flags, run metadata).
inline std::string serialize_checkpoint(const TransformerModel& model, const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json header;
    header["config"] = model.config().to_json();
    header["vocab_hash"] = hex64(model.vocab_hash());
    header["extra"] = extra;
    const std::string h = header.dump();

    std::string out(detail::kCheckpointMagic);
    detail::put<std::uint32_t>(out, detail::kCheckpointVersion);
    detail::put<std::uint64_t>(out, h.size());
    out += h;
    const auto& ps = model.params();
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ps.tensors.size()));
    for (std::size_t i = 0; i < ps.tensors.size(); ++i) {
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ps.names[i].size()));
        out += ps.names[i];
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ps.tensors[i].shape.size()));
        for (auto d : ps.tensors[i].shape) detail::put<std::uint64_t>(out, d);
        out.append(reinterpret_cast<const char*>(ps.tensors[i].data.data()), ps.tensors[i].data.size() * sizeof(double));
    }
    return out;
}

struct Checkpoint {
    TransformerModel model;
    nlohmann::json extra;
};

inline Checkpoint deserialize_checkpoint(std::string_view in) {
    if (!in.starts_with(detail::kCheckpointMagic)) throw ParseError("checkpoint: bad magic");
    in.remove_prefix(detail::kCheckpointMagic.size());
    const auto version = detail::get<std::uint32_t>(in);
    if (version != detail::kCheckpointVersion) throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    const auto hlen = detail::get<std::uint64_t>(in);
    if (in.size() < hlen) throw ParseError("checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(in.substr(0, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint header: ") + e.what());
    }
    in.remove_prefix(hlen);
    const auto cfg = ModelConfig::from_json(header.at("config"));
    const auto vh = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
    Checkpoint ck{TransformerModel(cfg, vh), header.value("extra", nlohmann::json::object())};
    auto& ps = ck.model.params();
    const auto n = detail::get<std::uint32_t>(in);
    if (n != ps.tensors.size()) throw ParseError("checkpoint: tensor count does not match config");
    for (std::size_t i = 0; i < n; ++i) {
        const auto nlen = detail::get<std::uint32_t>(in);
        if (in.size() < nlen) throw ParseError("checkpoint: truncated name");
        const std::string name(in.substr(0, nlen));
        in.remove_prefix(nlen);
        if (name != ps.names[i]) throw ParseError("checkpoint: expected tensor " + ps.names[i] + ", found " + name);
        const auto rank = detail::get<std::uint32_t>(in);
        std::vector<std::size_t> shape;
        for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(detail::get<std::uint64_t>(in));
        if (shape != ps.tensors[i].shape) throw ParseError("checkpoint: shape mismatch for " + name);
        const std::size_t bytes = ps.tensors[i].data.size() * sizeof(double);
        if (in.size() < bytes) throw ParseError("checkpoint: truncated tensor " + name);
        std::memcpy(ps.tensors[i].data.data(), in.data(), bytes);
        in.remove_prefix(bytes);
    }
    if (!in.empty()) throw ParseError("checkpoint: trailing bytes");
    return ck;
}

inline void save_checkpoint(const std::string& path, const TransformerModel& model,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    const auto bytes = serialize_checkpoint(model, extra);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace agencyrev
