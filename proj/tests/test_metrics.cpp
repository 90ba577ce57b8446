#include <gtest/gtest.h>

#include "support.hpp"

#include <algorithm>
#include <cmath>

using namespace agencyrev;

namespace {

const Stopwords& shipped_stopwords() {
    static const auto s = load_stopwords(testsupport::data_path("stopwords.txt"));
    return s;
}

std::string random_sentence(Rng& rng) {
    static const std::vector<std::string> words{"the", "dog", "ran", "The", "cat", "sat", "home"};
    const auto n = 1 + uniform_below(rng, 6);
    std::vector<std::string> w;
    for (std::uint64_t i = 0; i < n; ++i) w.push_back(words[uniform_below(rng, words.size())]);
    return join(w);
}

bool repeated_bigram_oracle(const std::string& s) {
    const auto t = word_tokens(s);
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
        for (std::size_t j = i + 1; j + 1 < t.size(); ++j) {
            if (t[i] == t[j] && t[i + 1] == t[j + 1]) return true;
        }
    }
    return false;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

TEST(Stopwords, ParsesCommentsAndCase) {
    const auto s = parse_stopwords("# c\nThe a\n\n  of\n");
    EXPECT_EQ(s.size(), 3u);
    EXPECT_TRUE(s.contains("the"));
    EXPECT_FALSE(s.contains("#"));
    EXPECT_GT(shipped_stopwords().size(), 50u);
}

TEST(Accuracy, Examples) {
    std::vector<EvalRecord> r{{"a", "b", AgencyLabel::Positive, AgencyLabel::Positive},
                              {"a", "b", AgencyLabel::Negative, AgencyLabel::Negative}};
    EXPECT_EQ(agency_accuracy(r), 1.0);
    r.push_back({"a", "b", AgencyLabel::Negative, std::nullopt});
    r.push_back({"a", "b", AgencyLabel::Equal, AgencyLabel::Negative});
    r.push_back({"a", "", AgencyLabel::Equal, std::nullopt});
    EXPECT_DOUBLE_EQ(agency_accuracy(r), 2.0 / 5.0);
    EXPECT_THROW(agency_accuracy(std::vector<EvalRecord>{}), ArgumentError);
}

TEST(Accuracy, RecordsAreTaggedNotTrusted) {
    const auto& lex = testsupport::shipped_lexicon();
    EXPECT_EQ(make_record("x", "sam fought for the village", AgencyLabel::Positive, lex).output_agency,
              lex.lookup("fought"));
    EXPECT_EQ(make_record("x", "", AgencyLabel::Positive, lex).output_agency, std::nullopt);
    EXPECT_EQ(make_record("x", "the doctor is here", AgencyLabel::Positive, lex).output_agency, std::nullopt);
}

TEST(Accuracy, IdentityTransformScoresOne) {
    const auto& lex = testsupport::shipped_lexicon();
    std::vector<EvalRecord> recs;
    for (const auto& s : testsupport::story_texts()) {
        const auto t = tag(s, lex);
        if (!eligible_for_training(t)) continue;
        recs.push_back(make_record(s, s, *t.sentence_agency, lex));
    }
    ASSERT_GT(recs.size(), 100u);
    EXPECT_EQ(agency_accuracy(recs), 1.0);
}

TEST(MeaningProxy, PinnedFixtures) {
    const auto& sw = shipped_stopwords();
    struct Case {
        std::string in, out;
        double expected;
    };
    // Expected values computed by hand from the shipped stopword list.
    const std::vector<Case> cases{
        {"after the party i headed home", "after the party i stayed home", 0.75},  // 3 of 4 each side
        {"sam fought for the village", "sam fought for the village", 1.0},
        {"sam fought", "emma cried", 0.0},
        {"the a of", "to in on", 1.0},                                // both sides empty
        {"the dog", "of", 0.0},                                       // one side empty
        {"mey <VERB> about being a doctor", "mey daydreamed about being a doctor", 0.8},  // 2 vs 3: 2*(2/3*1)/(2/3+1)
        {"dog dog cat", "dog cat cat", 2.0 / 3.0},                    // multiset overlap 2 of 3
        {"Dog, barked!", "the dog barked", 1.0},                      // case and punctuation
        {"red blue green yellow", "red", 0.4},                        // p=1, r=1/4
        {"alpha beta", "beta gamma delta", 0.4},                      // p=1/3, r=1/2
    };
    for (const auto& c : cases) {
        EXPECT_NEAR(meaning_proxy(c.in, c.out, sw), c.expected, 1e-9) << c.in << " | " << c.out;
        EXPECT_NEAR(meaning_proxy(c.out, c.in, sw), meaning_proxy(c.in, c.out, sw), 1e-15);
    }
}

TEST(Repetition, Examples) {
    EXPECT_TRUE(has_repeated_bigram("the dog the dog ran"));
    EXPECT_FALSE(has_repeated_bigram("the dog ran home fast"));
    EXPECT_TRUE(has_repeated_bigram("it it it it looked quite sharp"));
    EXPECT_FALSE(has_repeated_bigram(""));
    const std::vector<std::string> outs{"a b a b", "a b c", "x y x y z"};
    EXPECT_DOUBLE_EQ(repetition_rate(outs), 2.0 / 3.0);
}

TEST(Uniqueness, Examples) {
    EXPECT_EQ(uniqueness(std::vector<std::string>{"a", "a", "a"}), 0.0);
    EXPECT_EQ(uniqueness(std::vector<std::string>{"a", "b", "c"}), 1.0);
    EXPECT_DOUBLE_EQ(uniqueness(std::vector<std::string>{"a", "a", "b"}), 1.0 / 3.0);
    EXPECT_EQ(uniqueness(std::vector<std::string>{"A", "a"}), 0.0);
}

TEST(Metrics, MatchBruteForceOnRandomFixtures) {
    Rng rng(42);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = 1 + uniform_below(rng, 8);
        std::vector<std::string> outs;
        std::vector<EvalRecord> recs;
        for (std::uint64_t i = 0; i < n; ++i) {
            outs.push_back(random_sentence(rng));
            std::optional<AgencyLabel> got;
            const auto pick = uniform_below(rng, 4);
            if (pick < 3) got = kAllLabels[pick];
            recs.push_back({"", outs.back(), kAllLabels[uniform_below(rng, 3)], got});
        }
        std::size_t rep = 0, uniq = 0, hit = 0;
        for (std::size_t i = 0; i < outs.size(); ++i) {
            rep += repeated_bigram_oracle(outs[i]);
            std::size_t same = 0;
            for (std::size_t j = 0; j < outs.size(); ++j) same += lower(outs[i]) == lower(outs[j]);
            uniq += same == 1;
            hit += recs[i].output_agency.has_value() && *recs[i].output_agency == recs[i].target;
        }
        const double N = static_cast<double>(n);
        ASSERT_EQ(repetition_rate(outs), static_cast<double>(rep) / N);
        ASSERT_EQ(uniqueness(outs), static_cast<double>(uniq) / N);
        ASSERT_EQ(agency_accuracy(recs), static_cast<double>(hit) / N);

        auto shuffled = recs;
        shuffle(shuffled, rng);
        ASSERT_EQ(agency_accuracy(shuffled), agency_accuracy(recs));
    }
}

TEST(Perplexity, UniformLmGivesVocabularySize) {
    const auto v = train_bpe(testsupport::story_texts(), 300);
    ModelConfig c;
    c.vocab_size = static_cast<int>(v.size());
    c.max_seq_len = 64;
    c.embed_dim = 8;
    c.n_heads = 2;
    c.n_layers = 1;
    const TransformerModel lm(c, v.hash());
    const std::vector<std::string> outs{"sam fought for the village", "emma cried about the contest"};
    const auto r = fluency_ppl(lm, v, outs);
    EXPECT_NEAR(r.perplexity, static_cast<double>(v.size()), 1e-6 * static_cast<double>(v.size()));
    EXPECT_EQ(r.scored, 2u);
    EXPECT_EQ(r.tokens, v.encode(outs[0]).size() + v.encode(outs[1]).size() + 2);
}

TEST(Perplexity, ErrorsAndSkips) {
    const auto v = train_bpe(testsupport::story_texts(), 300);
    ModelConfig c;
    c.vocab_size = static_cast<int>(v.size());
    c.max_seq_len = 8;
    c.embed_dim = 8;
    c.n_heads = 2;
    c.n_layers = 1;
    TransformerModel lm(c, v.hash());
    EXPECT_THROW(fluency_ppl(lm, v, std::vector<std::string>{}), ArgumentError);
    const std::vector<std::string> outs{"sam", "zoë", "sam fought for the village and the garden in the morning"};
    const auto r = fluency_ppl(lm, v, outs);
    EXPECT_EQ(r.scored, 1u);
    EXPECT_EQ(r.skipped, 2u);
    lm.set_vocab_hash(1);
    EXPECT_THROW(fluency_ppl(lm, v, outs), ArgumentError);
}

TEST(Perplexity, TrainedLmPrefersRealWordOrder) {
    const auto texts = testsupport::story_texts();
    const std::vector<std::string> train_text(texts.begin(), texts.begin() + 60);
    const auto v = train_bpe(texts, 400);
    std::vector<TrainingInstance> lm_set;
    for (const auto& t : train_text) {
        if (auto inst = build_lm_instance(t, v, 48)) lm_set.push_back(*inst);
    }
    ModelConfig c;
    c.vocab_size = static_cast<int>(v.size());
    c.max_seq_len = 48;
    c.embed_dim = 16;
    c.n_heads = 2;
    c.n_layers = 1;
    TransformerModel lm(c, v.hash());
    lm.init_normal(1);
    TrainConfig tc;
    tc.epochs = 8;
    tc.batch_size = 8;
    tc.lr = 3e-3;
    lm = train_lm(tc, lm, lm_set).model;

    std::vector<std::string> reversed;
    for (const auto& t : train_text) {
        auto w = split_whitespace(t);
        std::reverse(w.begin(), w.end());
        reversed.push_back(join(w));
    }
    EXPECT_LT(fluency_ppl(lm, v, train_text).perplexity, fluency_ppl(lm, v, reversed).perplexity);
}

TEST(Evaluate, ReportFields) {
    const auto& lex = testsupport::shipped_lexicon();
    std::vector<EvalRecord> recs{make_record("sam fought for the village", "sam fought for the village", AgencyLabel::Positive, lex),
                                 make_record("emma cried", "emma cried cried", AgencyLabel::Positive, lex)};
    const auto rep = evaluate(recs, shipped_stopwords());
    EXPECT_EQ(rep.n, 2u);
    EXPECT_EQ(rep.unique, 1.0);
    EXPECT_EQ(rep.with_rep, 0.0);
    EXPECT_FALSE(rep.perplexity.has_value());
    EXPECT_TRUE(rep.to_json()["perplexity"].is_null());
    EXPECT_THROW(evaluate(std::vector<EvalRecord>{}, shipped_stopwords()), ArgumentError);
}
