#include <gtest/gtest.h>

#include "support.hpp"

#include <cmath>
#include <numeric>

using namespace agencyrev;

namespace {

ModelConfig tiny(int layers = 1) {
    ModelConfig c;
    c.vocab_size = 16;
    c.max_seq_len = 8;
    c.embed_dim = 8;
    c.n_heads = 2;
    c.n_layers = layers;
    return c;
}

std::vector<TokenId> random_ids(Rng& rng, std::size_t n, int V) {
    std::vector<TokenId> ids(n);
    for (auto& id : ids) id = static_cast<TokenId>(uniform_below(rng, static_cast<std::uint64_t>(V)));
    return ids;
}

std::vector<bool> tail_mask(std::size_t n, std::size_t from) {
    std::vector<bool> m(n, false);
    for (std::size_t i = from; i < n; ++i) m[i] = true;
    return m;
}

}  // namespace

TEST(Transformer, ConfigValidation) {
    auto c = tiny();
    c.embed_dim = 9;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.max_seq_len = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.dropout_rate = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(ModelConfig::from_json(tiny().to_json()), tiny());
}

TEST(Transformer, ZeroWeightsGiveZeroLogitsAndLnVLoss) {
    const TransformerModel m(tiny());
    const std::vector<TokenId> ids{3, 1, 4, 1, 5};
    for (const auto& row : forward(m, ids)) {
        for (double x : row) EXPECT_EQ(x, 0.0);
    }
    const auto r = loss(m, ids, tail_mask(ids.size(), 1));
    EXPECT_EQ(r.token_count, 4u);
    for (double nll : r.per_position_nll) EXPECT_NEAR(nll, std::log(16.0), 1e-12);
    EXPECT_NEAR(r.total_loss, std::log(16.0), 1e-12);
}

TEST(Transformer, HandSetTwoTokenLogits) {
    ModelConfig c = tiny();
    c.vocab_size = 2;
    TransformerModel m(c);
    // Trunk output is zero, so the final layer norm emits its shift vector.
    auto& ps = m.params();
    ps.tensors[ps.tensors.size() - 2].data[0] = 1.0;
    ps.tensors.back().data[0] = std::log(3.0);  // w_out[0][0]
    const std::vector<TokenId> ids{1, 0};
    const auto row = forward(m, ids)[0];
    EXPECT_NEAR(row[0], std::log(3.0), 1e-15);
    EXPECT_EQ(row[1], 0.0);
    EXPECT_NEAR(loss(m, ids, {false, true}).total_loss, std::log(4.0 / 3.0), 1e-12);

    ps.tensors.back().data[0] = 1000.0;
    EXPECT_EQ(loss(m, ids, {false, true}).total_loss, 0.0);
}

TEST(Transformer, SoftmaxRowsNormalize) {
    TransformerModel m(tiny(2));
    m.init_normal(7, 0.5);
    Rng rng(1);
    const auto ids = random_ids(rng, 8, 16);
    for (const auto& row : forward(m, ids)) {
        const auto p = softmax(row);
        EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    }
}

TEST(Transformer, InputErrors) {
    const TransformerModel m(tiny());
    EXPECT_THROW(forward(m, std::vector<TokenId>(9, 1)), ArgumentError);
    EXPECT_THROW(forward(m, std::vector<TokenId>{16}), ArgumentError);
    EXPECT_THROW(forward(m, std::vector<TokenId>{}), ArgumentError);
    const std::vector<TokenId> ids{1, 2, 3};
    EXPECT_THROW(loss(m, ids, {false, false, false}), ArgumentError);
    EXPECT_THROW(loss(m, ids, {true, true, true}), ArgumentError);
    EXPECT_THROW(loss(m, ids, {false, true}), ArgumentError);
}

TEST(Transformer, CausalityForOneAndTwoLayers) {
    for (int layers : {1, 2}) {
        TransformerModel m(tiny(layers));
        m.init_normal(static_cast<std::uint64_t>(layers), 0.5);
        Rng rng(4);
        const auto ids = random_ids(rng, 8, 16);
        const auto base = forward(m, ids);
        for (std::size_t j = 0; j < ids.size(); ++j) {
            auto alt = ids;
            alt[j] = static_cast<TokenId>((alt[j] + 5) % 16);
            const auto out = forward(m, alt);
            for (std::size_t i = 0; i < j; ++i) ASSERT_EQ(out[i], base[i]) << "layers " << layers << " j " << j;
            if (j + 1 < ids.size()) EXPECT_NE(out[j], base[j]);
        }
    }
}

TEST(Transformer, GradientsMatchFiniteDifferences) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        TransformerModel m(tiny());
        m.init_normal(seed, 0.3);
        Rng rng(seed + 100);
        const auto ids = random_ids(rng, 8, 16);
        const auto r = testsupport::finite_difference_check(m, ids, tail_mask(8, 3));
        EXPECT_GE(r.pass_fraction(), 0.99) << "seed " << seed << " worst " << r.worst;
    }
}

TEST(Transformer, TwoLayerGradientsMatchFiniteDifferences) {
    TransformerModel m(tiny(2));
    m.init_normal(9, 0.3);
    Rng rng(9);
    const auto ids = random_ids(rng, 6, 16);
    const auto r = testsupport::finite_difference_check(m, ids, tail_mask(6, 1));
    EXPECT_GE(r.pass_fraction(), 0.99) << r.worst;
}

TEST(Transformer, AbsentTokenEmbeddingRowsHaveZeroGradient) {
    TransformerModel m(tiny());
    m.init_normal(5, 0.3);
    const std::vector<TokenId> ids{1, 2, 3, 2};
    const auto g = backward(m, ids, tail_mask(4, 1));
    const auto D = static_cast<std::size_t>(m.config().embed_dim);
    for (std::size_t tok = 0; tok < 16; ++tok) {
        const bool present = tok >= 1 && tok <= 3;
        double norm = 0;
        for (std::size_t d = 0; d < D; ++d) norm += std::abs(g.tensors[0].data[tok * D + d]);
        if (present) {
            EXPECT_GT(norm, 0.0) << tok;
        } else {
            EXPECT_EQ(norm, 0.0) << tok;
        }
    }
    // Position rows beyond the sequence are never touched either.
    for (std::size_t k = 4 * D; k < g.tensors[1].size(); ++k) EXPECT_EQ(g.tensors[1].data[k], 0.0);
}

TEST(Transformer, GradientIsLinearInScale) {
    TransformerModel m(tiny());
    m.init_normal(6, 0.3);
    const std::vector<TokenId> ids{4, 5, 6, 7, 8};
    const auto g1 = backward(m, ids, tail_mask(5, 2));
    const auto g2 = backward(m, ids, tail_mask(5, 2), 2.0);
    for (std::size_t i = 0; i < g1.tensors.size(); ++i) {
        for (std::size_t k = 0; k < g1.tensors[i].size(); ++k) {
            EXPECT_NEAR(g2.tensors[i].data[k], 2 * g1.tensors[i].data[k], 1e-15 + 1e-12 * std::abs(g1.tensors[i].data[k]));
        }
    }
}

TEST(Transformer, LossInvariantUnderVocabularyRelabeling) {
    TransformerModel m(tiny());
    m.init_normal(8, 0.5);
    const std::vector<TokenId> ids{0, 5, 9, 5, 15, 2};
    std::vector<TokenId> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(3);
    shuffle(perm, rng);

    TransformerModel p = m;
    const auto D = static_cast<std::size_t>(m.config().embed_dim);
    auto& wte = p.params().tensors[0].data;
    auto& wout = p.params().tensors.back().data;
    for (std::size_t v = 0; v < 16; ++v) {
        const auto pv = static_cast<std::size_t>(perm[v]);
        for (std::size_t d = 0; d < D; ++d) {
            wte[pv * D + d] = m.params().tensors[0].data[v * D + d];
            wout[d * 16 + pv] = m.params().tensors.back().data[d * 16 + v];
        }
    }
    std::vector<TokenId> relabeled;
    for (auto id : ids) relabeled.push_back(perm[static_cast<std::size_t>(id)]);
    const auto mask = tail_mask(ids.size(), 1);
    EXPECT_NEAR(loss(p, relabeled, mask).total_loss, loss(m, ids, mask).total_loss, 1e-12);
}

TEST(AdamW, HandExample) {
    ParamSet p;
    p.names = {"w"};
    p.tensors.emplace_back(std::vector<std::size_t>{1}, 1.0);
    ParamSet g = p.zeros_like();
    g.tensors[0].data[0] = 1.0;
    AdamW opt(p, {.lr = 0.1, .beta1 = 0.0, .beta2 = 0.0, .eps = 1e-8, .weight_decay = 0.0});
    opt.step(p, g);
    EXPECT_NEAR(p.tensors[0].data[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
    EXPECT_NEAR(p.tensors[0].data[0], 0.9, 1e-8);
}

TEST(AdamW, NoOpCases) {
    TransformerModel m(tiny());
    m.init_normal(2);
    const auto before = m.params();
    {
        AdamW opt(m.params(), {.lr = 0.1, .weight_decay = 0.0});
        opt.step(m.params(), m.params().zeros_like());
        EXPECT_EQ(m.params(), before);
    }
    {
        AdamW opt(m.params(), {.lr = 0.0, .weight_decay = 0.5});
        const std::vector<TokenId> ids{1, 2, 3};
        opt.step(m.params(), backward(m, ids, tail_mask(3, 1)));
        EXPECT_EQ(m.params(), before);
    }
}

TEST(AdamW, DecayOnlyTouchesMatrices) {
    TransformerModel m(tiny());
    m.init_normal(2);
    auto& ps = m.params();
    for (auto& t : ps.tensors) {
        for (auto& x : t.data) x = 1.0;
    }
    AdamW opt(ps, {.lr = 0.1, .weight_decay = 0.5});
    opt.step(ps, ps.zeros_like());
    for (const auto& t : ps.tensors) {
        EXPECT_DOUBLE_EQ(t.data[0], t.shape.size() == 2 ? 0.95 : 1.0);
    }
}

TEST(Checkpoint, RoundTripIsBitExact) {
    TransformerModel m(tiny(2), 0x1234abcdULL);
    m.init_normal(11);
    const nlohmann::json extra{{"kind", "lm"}};
    const auto bytes = serialize_checkpoint(m, extra);
    const auto ck = deserialize_checkpoint(bytes);
    EXPECT_EQ(ck.model, m);
    EXPECT_EQ(ck.model.vocab_hash(), 0x1234abcdULL);
    EXPECT_EQ(ck.extra, extra);
    EXPECT_EQ(serialize_checkpoint(ck.model, ck.extra), bytes);
}

TEST(Checkpoint, CorruptInputsAreParseErrors) {
    TransformerModel m(tiny());
    const auto bytes = serialize_checkpoint(m);
    EXPECT_THROW(deserialize_checkpoint("NOTACKPT"), ParseError);
    EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
    EXPECT_THROW(deserialize_checkpoint(bytes + "x"), ParseError);
    auto bad_version = bytes;
    bad_version[8] = 9;
    EXPECT_THROW(deserialize_checkpoint(bad_version), ParseError);
    EXPECT_THROW(load_checkpoint("/nonexistent/model.ckpt"), ConfigError);
}
