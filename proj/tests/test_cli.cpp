#include <gtest/gtest.h>

#include "support.hpp"

#include <filesystem>
#include <map>
#include <memory>

using namespace agencyrev;
using nlohmann::json;
using testsupport::CliRun;
using testsupport::run_cli;
using testsupport::slurp;
using testsupport::TempDir;

namespace fs = std::filesystem;

namespace {

std::string data(const std::string& name) { return testsupport::data_path(name); }

std::vector<std::string> prepare_args(const std::string& out, const std::string& seed = "1") {
    return {"prepare", "--story", data("story.jsonl"), "--para", data("paraphrase.jsonl"), "--lexicon",
            data("lexicon.tsv"), "--out", out, "--vocab-size", "300", "--seed", seed};
}

std::vector<std::string> train_args(const std::string& prepared, const std::string& out) {
    return {"train", "--data", prepared, "--lexicon", data("lexicon.tsv"), "--out", out, "--epochs", "1",
            "--embed-dim", "16", "--heads", "2", "--layers", "1", "--max-seq-len", "64", "--seed", "4"};
}

void write(const std::string& path, const std::string& content) {
    std::ofstream(path, std::ios::binary) << content;
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path().string());
    return out;
}

/// One prepared corpus and one small trained model shared by the suite.
class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = std::make_unique<TempDir>("cli");
        const auto r = run_cli(prepare_args(*dir_ / "prep"), *dir_);
        ASSERT_EQ(r.code, 0) << r.err;
        const auto t = run_cli(train_args(*dir_ / "prep", *dir_ / "model.ckpt"), *dir_);
        ASSERT_EQ(t.code, 0) << t.err;
    }
    static void TearDownTestSuite() { dir_.reset(); }

    static const TempDir& dir() { return *dir_; }
    static std::string prep() { return *dir_ / "prep"; }
    static std::string model() { return *dir_ / "model.ckpt"; }

private:
    static inline std::unique_ptr<TempDir> dir_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run_cli({}, dir()).code, 2);
    EXPECT_EQ(run_cli({"bogus"}, dir()).code, 2);
    EXPECT_EQ(run_cli({"prepare", "--story", data("story.jsonl")}, dir()).code, 2);
    EXPECT_EQ(run_cli({"revise", "--checkpoint", model(), "--lexicon", data("lexicon.tsv"), "--input", "x", "--output",
                       "y", "--top-p", "0"},
                      dir())
                  .code,
              2);
}

TEST_F(Cli, MissingLexiconExitsTwo) {
    TempDir t("cli_missing");
    auto args = prepare_args(t / "out");
    args[6] = t / "no_such_lexicon.tsv";
    const auto r = run_cli(args, t);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("lexicon"), std::string::npos) << r.err;
}

TEST_F(Cli, MalformedDataExitsThree) {
    TempDir t("cli_bad");
    write(t / "story.jsonl", "{\"text\": \"sam fought\"}\n{not json\n");
    auto args = prepare_args(t / "out");
    args[2] = t / "story.jsonl";
    EXPECT_EQ(run_cli(args, t).code, 3);

    write(t / "story.jsonl", "{\"body\": \"sam fought\"}\n");
    EXPECT_EQ(run_cli(args, t).code, 3);

    write(t / "lex.tsv", "fight\tsideways\n");
    args = prepare_args(t / "out");
    args[6] = t / "lex.tsv";
    EXPECT_EQ(run_cli(args, t).code, 3);
}

TEST_F(Cli, PrepareWritesStatsSchema) {
    const auto report = json::parse(slurp(prep() + "/stats.json"));
    EXPECT_EQ(report["meta"]["command"], "prepare");
    EXPECT_EQ(report["meta"]["seed"], 1);
    EXPECT_TRUE(report["meta"]["config_hash"].is_string());
    EXPECT_TRUE(report["meta"]["vocab_hash"].is_string());
    EXPECT_TRUE(report["meta"]["checkpoint_hash"].is_null());
    EXPECT_LE(report["vocab_size"].get<int>(), 300);
    for (const char* split : {"train", "dev", "test"}) {
        const auto& c = report["stats"]["story"][split];
        ASSERT_TRUE(c.is_object()) << split;
        EXPECT_EQ(c["instances"].get<int>(), c["pos"].get<int>() + c["neutral"].get<int>() + c["neg"].get<int>());
        // Balanced: every label cell holds the same count.
        EXPECT_EQ(c["pos"], c["neg"]);
        EXPECT_EQ(c["pos"], c["neutral"]);
        EXPECT_TRUE(fs::exists(prep() + "/recon_" + split + ".jsonl.meta.json"));
    }
    EXPECT_TRUE(report["stats"]["para"]["train"].is_object());
    EXPECT_TRUE(report["dropped"].contains("story_ineligible"));

    std::size_t rows = 0;
    for (const auto& j : testsupport::read_jsonl(prep() + "/recon_train.jsonl")) {
        ++rows;
        const auto t = tag(j["text"].get<std::string>(), testsupport::shipped_lexicon());
        ASSERT_TRUE(t.sentence_agency);
        EXPECT_EQ(to_string(*t.sentence_agency), j["agency"].get<std::string>());
    }
    EXPECT_EQ(rows, report["stats"]["story"]["train"]["instances"].get<std::size_t>());
    EXPECT_NO_THROW(load_vocabulary(prep() + "/vocab.json"));
}

TEST_F(Cli, PrepareIsDeterministicAndSeeded) {
    TempDir t("cli_det");
    ASSERT_EQ(run_cli(prepare_args(t / "a"), t).code, 0);
    EXPECT_EQ(dir_contents(t / "a"), dir_contents(prep()));
    ASSERT_EQ(run_cli(prepare_args(t / "b", "2"), t).code, 0);
    EXPECT_NE(slurp(t / "b/recon_train.jsonl"), slurp(prep() + "/recon_train.jsonl"));
}

TEST_F(Cli, TrainWritesCheckpointAndHistory) {
    const auto history = slurp(model() + ".history.csv");
    EXPECT_EQ(history.rfind("epoch,recon,para,total\n", 0), 0u);
    EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 3);  // header, untrained, epoch 1
    const auto ck = load_checkpoint(model());
    EXPECT_EQ(ck.extra["kind"], "revision");
    EXPECT_EQ(ck.extra["objective"], "joint");
    EXPECT_EQ(ck.model.config().embed_dim, 16);
    const auto meta = json::parse(slurp(model() + ".history.csv.meta.json"));
    EXPECT_EQ(meta["checkpoint_hash"], hex64(fnv1a(slurp(model()))));
}

TEST_F(Cli, TrainRejectsBadObjectiveAndMissingData) {
    auto args = train_args(prep(), dir() / "x.ckpt");
    args.push_back("--objective");
    args.push_back("sideways");
    EXPECT_EQ(run_cli(args, dir()).code, 2);
    EXPECT_EQ(run_cli(train_args(dir() / "nowhere", dir() / "x.ckpt"), dir()).code, 2);
}

TEST_F(Cli, ReviseIsDeterministicAndTagsOutputs) {
    TempDir t("cli_rev");
    write(t / "req.jsonl",
          "{\"text\": \"mey daydreamed about being a doctor\", \"target\": \"pos\"}\n"
          "{\"text\": \"sam fought for the village\", \"target\": \"neg\"}\n"
          "{\"text\": \"the doctor is here\", \"target\": \"pos\"}\n");
    const std::vector<std::string> base{"revise", "--checkpoint", model(), "--lexicon", data("lexicon.tsv"),
                                        "--input", t / "req.jsonl", "--seed", "9", "--max-new-tokens", "12"};
    auto a = base, b = base;
    a.insert(a.end(), {"--output", t / "a.jsonl"});
    b.insert(b.end(), {"--output", t / "b.jsonl"});
    ASSERT_EQ(run_cli(a, t).code, 0);
    ASSERT_EQ(run_cli(b, t).code, 0);
    EXPECT_EQ(slurp(t / "a.jsonl"), slurp(t / "b.jsonl"));
    EXPECT_EQ(slurp(t / "a.jsonl.meta.json"), slurp(t / "b.jsonl.meta.json"));

    const auto rows = testsupport::read_jsonl(t / "a.jsonl");
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_TRUE(rows[2].contains("error"));  // nothing to mask
    for (const auto& r : rows) {
        ASSERT_TRUE(r.contains("output"));
        const auto out = r["output"].get<std::string>();
        const auto got = trim(out).empty() ? std::nullopt : tag(out, testsupport::shipped_lexicon()).sentence_agency;
        if (got) {
            EXPECT_EQ(r["output_agency"], std::string(to_string(*got)));
        } else {
            EXPECT_TRUE(r["output_agency"].is_null());
        }
    }
}

TEST_F(Cli, ReviseRejectsWrongCheckpoints) {
    TempDir t("cli_ck");
    write(t / "req.jsonl", "{\"text\": \"sam fought\", \"target\": \"neg\"}\n");
    write(t / "junk.ckpt", "AGRVCKPT not really");
    const std::vector<std::string> args{"revise", "--checkpoint", t / "junk.ckpt", "--lexicon", data("lexicon.tsv"),
                                        "--input", t / "req.jsonl", "--output", t / "o.jsonl"};
    EXPECT_EQ(run_cli(args, t).code, 3);
    auto missing = args;
    missing[2] = t / "absent.ckpt";
    EXPECT_EQ(run_cli(missing, t).code, 2);

    write(t / "badreq.jsonl", "{\"text\": \"sam fought\", \"target\": \"upward\"}\n");
    auto badreq = args;
    badreq[2] = model();
    badreq[6] = t / "badreq.jsonl";
    EXPECT_EQ(run_cli(badreq, t).code, 3);
}

TEST_F(Cli, EvaluateIdentityRevisionScoresOne) {
    TempDir t("cli_eval");
    std::string rows;
    for (const auto& s : testsupport::story_texts("story_dev.jsonl")) {
        const auto tg = tag(s, testsupport::shipped_lexicon());
        if (!tg.sentence_agency) continue;
        rows += json{{"text", s}, {"target", to_string(*tg.sentence_agency)}, {"output", s}}.dump() + "\n";
    }
    write(t / "resp.jsonl", rows);
    const auto r = run_cli({"evaluate", "--input", t / "resp.jsonl", "--lexicon", data("lexicon.tsv"), "--stopwords",
                            data("stopwords.txt"), "--output", t / "m.json", "--csv", t / "m.csv"},
                           t);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto m = json::parse(slurp(t / "m.json"))["metrics"];
    EXPECT_EQ(m["accuracy"].get<double>(), 1.0);
    EXPECT_NEAR(m["meaning_proxy"].get<double>(), 1.0, 1e-12);
    EXPECT_TRUE(m["perplexity"].is_null());
    EXPECT_EQ(slurp(t / "m.csv").rfind("index,target,output_agency,correct,meaning_proxy,repeated_bigram\n", 0), 0u);
}

TEST_F(Cli, EvaluateWithLanguageModel) {
    TempDir t("cli_lm");
    const auto r = run_cli({"train-lm", "--data", prep(), "--out", t / "lm.ckpt", "--epochs", "1", "--embed-dim", "16",
                            "--heads", "2", "--layers", "1"},
                           t);
    ASSERT_EQ(r.code, 0) << r.err;
    write(t / "resp.jsonl", "{\"text\": \"sam fought\", \"target\": \"pos\", \"output\": \"sam fought for the village\"}\n");
    std::vector<std::string> args{"evaluate", "--input", t / "resp.jsonl", "--lexicon", data("lexicon.tsv"),
                                  "--stopwords", data("stopwords.txt"), "--output", t / "m.json", "--lm", t / "lm.ckpt"};
    ASSERT_EQ(run_cli(args, t).code, 0);
    const auto m = json::parse(slurp(t / "m.json"));
    EXPECT_GT(m["metrics"]["perplexity"].get<double>(), 1.0);
    EXPECT_EQ(m["meta"]["checkpoint_hash"], hex64(fnv1a(slurp(t / "lm.ckpt"))));

    args.back() = model();  // a revision model is not a fluency LM
    EXPECT_EQ(run_cli(args, t).code, 3);
}

TEST_F(Cli, AnalyzeBiasWithoutModelRevisesNothing) {
    TempDir t("cli_bias");
    const auto r = run_cli({"analyze-bias", "--scripts", data("scripts"), "--lexicon", data("lexicon.tsv"), "--names",
                            data("names.tsv"), "--gendered-words", data("gendered_words.tsv"), "--output",
                            t / "s.json", "--csv", t / "s.csv"},
                           t);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto s = json::parse(slurp(t / "s.json"));
    EXPECT_EQ(s["scripts"], 10);
    EXPECT_GT(s["study"]["revision"]["candidates"].get<int>(), 0);
    EXPECT_EQ(s["study"]["revision"]["revised"], 0);
    EXPECT_EQ(s["study"]["female"]["before"], s["study"]["female"]["after"]);
    EXPECT_FALSE(s["study"]["direction_holds"].get<bool>());
    EXPECT_EQ(slurp(t / "s.csv").rfind("script,name,gender,phase,", 0), 0u);
}

TEST_F(Cli, AnalyzeBiasRejectsEmptyScriptDirectory) {
    TempDir t("cli_noscripts");
    fs::create_directories(t.path() / "empty");
    const auto r = run_cli({"analyze-bias", "--scripts", t / "empty", "--lexicon", data("lexicon.tsv"), "--names",
                            data("names.tsv"), "--gendered-words", data("gendered_words.tsv"), "--output", t / "s.json"},
                           t);
    EXPECT_EQ(r.code, 3);
}
