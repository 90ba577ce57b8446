// agencyrev: corpus preparation, training, revision, evaluation and the
// screenplay bias study, as subcommands of one binary.
//
// Exit codes: 0 ok, 2 configuration/usage, 3 data, 4 runtime.

#include <CLI11.hpp>
#include <json.hpp>

#include <agencyrev/agencyrev.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace agencyrev;

namespace {

// ---------------------------------------------------------------- io

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw ConfigError(what + ": no path given");
    if (!fs::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

void require_dir(const std::string& path, const std::string& what) {
    if (!fs::is_directory(path)) throw ConfigError(what + " is not a directory: " + path);
}

void write_text(const std::string& path, const std::string& content) {
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    out << content;
}

std::string file_hash(const std::string& path) { return hex64(fnv1a(read_file(path))); }

std::vector<json> read_jsonl(const std::string& path) {
    std::vector<json> out;
    std::size_t lineno = 0;
    for (const auto& line : read_lines(path)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::string get_string(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_string()) throw ParseError(where + ": missing string field '" + key + "'");
    return j[key].get<std::string>();
}

AgencyLabel get_label(const json& j, const char* key, const std::string& where) {
    const auto s = get_string(j, key, where);
    auto l = parse_label(s);
    if (!l) throw ParseError(where + ": unknown agency label '" + s + "'");
    return *l;
}

std::string dump_jsonl(const std::vector<json>& rows) {
    std::string out;
    for (const auto& r : rows) {
        out += r.dump();
        out += '\n';
    }
    return out;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------- provenance

/// Provenance block embedded in (or written next to) every artifact.
struct Meta {
    std::string command;
    std::uint64_t seed = 0;
    json config;
    std::optional<std::string> vocab_hash;
    std::optional<std::string> checkpoint_hash;

    json to_json() const {
        json j{{"command", command}, {"seed", seed}, {"config_hash", hex64(fnv1a(config.dump()))}, {"config", config}};
        j["vocab_hash"] = vocab_hash ? json(*vocab_hash) : json(nullptr);
        j["checkpoint_hash"] = checkpoint_hash ? json(*checkpoint_hash) : json(nullptr);
        return j;
    }
};

void write_with_sidecar(const std::string& path, const std::string& content, const Meta& meta) {
    write_text(path, content);
    write_text(path + ".meta.json", meta.to_json().dump(2) + "\n");
}

/// A checkpoint together with what it was trained with.
struct LoadedModel {
    TransformerModel model;
    Vocabulary vocab;
    json extra;
    std::string hash;
};

LoadedModel load_model(const std::string& path) {
    require_file(path, "checkpoint");
    const auto bytes = read_file(path);
    auto ck = deserialize_checkpoint(bytes);
    if (!ck.extra.contains("vocab")) throw ParseError(path + ": checkpoint carries no vocabulary");
    auto vocab = Vocabulary::from_json(ck.extra["vocab"]);
    if (vocab.hash() != ck.model.vocab_hash()) throw ValidationError(path + ": embedded vocabulary hash mismatch");
    return {std::move(ck.model), std::move(vocab), std::move(ck.extra), hex64(fnv1a(bytes))};
}

// ---------------------------------------------------------------- prepare

struct PrepareArgs {
    std::string story, para, lexicon, out;
    std::size_t vocab_size = 600;
    bool balance = true;
    std::uint64_t seed = 1;
};

template <class T>
std::vector<std::vector<T>> split(std::vector<T> items, std::span<const double> fractions, Rng& rng) {
    shuffle(items, rng);
    std::vector<std::vector<T>> out;
    std::size_t begin = 0;
    double acc = 0.0;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
        acc += fractions[k];
        const std::size_t end =
            k + 1 == fractions.size() ? items.size() : static_cast<std::size_t>(std::llround(acc * static_cast<double>(items.size())));
        out.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(begin), items.begin() + static_cast<std::ptrdiff_t>(end));
        begin = end;
    }
    return out;
}

struct StoryRow {
    std::string text;
    AgencyLabel agency;
};
struct ParaRow {
    std::string src, tgt;
    AgencyLabel source, target;
};

int cmd_prepare(const PrepareArgs& a) {
    require_file(a.story, "story corpus");
    require_file(a.para, "paraphrase corpus");
    require_file(a.lexicon, "lexicon");
    if (a.out.empty()) throw ConfigError("--out is required");
    const auto lex = load_lexicon(a.lexicon);

    json dropped{{"story_ineligible", 0}, {"para_ineligible", 0}};
    std::vector<StoryRow> story;
    for (const auto& j : read_jsonl(a.story)) {
        const auto text = join(word_tokens(get_string(j, "text", a.story)));
        if (text.empty()) {
            dropped["story_ineligible"] = dropped["story_ineligible"].get<int>() + 1;
            continue;
        }
        const auto t = tag(text, lex);
        if (!eligible_for_training(t)) {
            dropped["story_ineligible"] = dropped["story_ineligible"].get<int>() + 1;
            continue;
        }
        story.push_back({text, *t.sentence_agency});
    }
    std::vector<ParaRow> para;
    for (const auto& j : read_jsonl(a.para)) {
        const auto src = join(word_tokens(get_string(j, "src", a.para)));
        const auto tgt = join(word_tokens(get_string(j, "tgt", a.para)));
        if (src.empty() || tgt.empty()) {
            dropped["para_ineligible"] = dropped["para_ineligible"].get<int>() + 1;
            continue;
        }
        const auto ts = tag(src, lex);
        const auto tt = tag(tgt, lex);
        if (!eligible_for_training(ts) || !eligible_for_training(tt)) {
            dropped["para_ineligible"] = dropped["para_ineligible"].get<int>() + 1;
            continue;
        }
        para.push_back({src, tgt, *ts.sentence_agency, *tt.sentence_agency});
    }
    if (story.empty()) throw ValidationError(a.story + ": no eligible sentences");
    if (para.empty()) throw ValidationError(a.para + ": no eligible pairs");

    Rng rng(derive_seed(a.seed, 1));
    static constexpr std::array<double, 3> story_frac{0.80, 0.13, 0.07};
    static constexpr std::array<double, 2> para_frac{0.80, 0.20};
    static const std::array<std::string, 3> split_names{"train", "dev", "test"};
    auto story_splits = split(story, story_frac, rng);
    auto para_splits = split(para, para_frac, rng);
    if (a.balance) {
        for (std::size_t k = 0; k < story_splits.size(); ++k) {
            story_splits[k] = balance<StoryRow>(
                story_splits[k], BalanceMode::PerLabel, derive_seed(a.seed, 10 + k),
                [](const StoryRow& r) { return r.agency; }, [](const StoryRow& r) { return r.agency; });
        }
        for (std::size_t k = 0; k < para_splits.size(); ++k) {
            para_splits[k] = balance<ParaRow>(
                para_splits[k], BalanceMode::PerLabelPair, derive_seed(a.seed, 20 + k),
                [](const ParaRow& r) { return r.source; }, [](const ParaRow& r) { return r.target; });
        }
    }

    std::vector<std::string> bpe_corpus;
    for (const auto& r : story_splits[0]) bpe_corpus.push_back(r.text);
    for (const auto& r : para_splits[0]) {
        bpe_corpus.push_back(r.src);
        bpe_corpus.push_back(r.tgt);
    }
    const auto vocab = train_bpe(bpe_corpus, a.vocab_size);

    Meta meta;
    meta.command = "prepare";
    meta.seed = a.seed;
    meta.config = {{"vocab_size", a.vocab_size},
                   {"balance", a.balance},
                   {"inputs", {{"story", file_hash(a.story)}, {"para", file_hash(a.para)}, {"lexicon", file_hash(a.lexicon)}}}};
    meta.vocab_hash = hex64(vocab.hash());

    CorpusStats stats;
    for (std::size_t k = 0; k < story_splits.size(); ++k) {
        std::vector<json> rows;
        auto& c = stats.families["story"][split_names[k]];
        for (const auto& r : story_splits[k]) {
            rows.push_back({{"text", r.text}, {"agency", to_string(r.agency)}});
            c.add(r.agency);
        }
        write_with_sidecar((fs::path(a.out) / ("recon_" + split_names[k] + ".jsonl")).string(), dump_jsonl(rows), meta);
    }
    for (std::size_t k = 0; k < para_splits.size(); ++k) {
        std::vector<json> rows;
        auto& c = stats.families["para"][split_names[k]];
        for (const auto& r : para_splits[k]) {
            rows.push_back({{"src", r.src}, {"tgt", r.tgt}, {"source_agency", to_string(r.source)},
                            {"target_agency", to_string(r.target)}});
            c.add(r.target);
        }
        write_with_sidecar((fs::path(a.out) / ("para_" + split_names[k] + ".jsonl")).string(), dump_jsonl(rows), meta);
    }
    write_text((fs::path(a.out) / "vocab.json").string(), vocab.to_json().dump(2) + "\n");
    json report{{"meta", meta.to_json()}, {"stats", stats.to_json()}, {"dropped", dropped}, {"vocab_size", vocab.size()}};
    write_text((fs::path(a.out) / "stats.json").string(), report.dump(2) + "\n");
    std::cout << report["stats"].dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string data, lexicon, out, history, embeddings;
    std::string objective = "joint";
    bool supply_verb = false;
    int epochs = 20, batch_size = 16;
    double lr = 1e-3, weight_decay = 0.01;
    int embed_dim = 48, n_heads = 4, n_layers = 2, max_seq_len = 64;
    std::uint64_t seed = 1;
};

ModelConfig model_config(const TrainArgs& a, const Vocabulary& vocab) {
    ModelConfig mc;
    mc.vocab_size = static_cast<int>(vocab.size());
    mc.max_seq_len = a.max_seq_len;
    mc.embed_dim = a.embed_dim;
    mc.n_heads = a.n_heads;
    mc.n_layers = a.n_layers;
    mc.validate();
    return mc;
}

TrainConfig train_config(const TrainArgs& a) {
    TrainConfig tc;
    auto obj = parse_objective(a.objective);
    if (!obj) throw ConfigError("unknown objective '" + a.objective + "' (joint, para-only, recon-only)");
    tc.objective = *obj;
    tc.supply_verb = a.supply_verb;
    tc.epochs = a.epochs;
    tc.batch_size = a.batch_size;
    tc.lr = a.lr;
    tc.weight_decay = a.weight_decay;
    tc.seed = derive_seed(a.seed, 2);
    tc.validate();
    return tc;
}

std::string history_csv(const std::vector<EpochLoss>& history) {
    std::string out = "epoch,recon,para,total\n";
    for (const auto& e : history)
        out += std::to_string(e.epoch) + "," + fmt(e.recon) + "," + fmt(e.para) + "," + fmt(e.total) + "\n";
    return out;
}

void save_trained(const TrainArgs& a, const TrainResult& res, const Vocabulary& vocab, json extra, Meta meta) {
    extra["vocab"] = vocab.to_json();
    extra["meta"] = meta.to_json();
    save_checkpoint(a.out, res.model, extra);
    meta.checkpoint_hash = file_hash(a.out);
    write_with_sidecar(a.history.empty() ? a.out + ".history.csv" : a.history, history_csv(res.history), meta);
}

int cmd_train(const TrainArgs& a) {
    require_dir(a.data, "--data");
    require_file(a.lexicon, "lexicon");
    const auto vpath = (fs::path(a.data) / "vocab.json").string();
    const auto rpath = (fs::path(a.data) / "recon_train.jsonl").string();
    const auto ppath = (fs::path(a.data) / "para_train.jsonl").string();
    require_file(vpath, "vocabulary");
    require_file(rpath, "reconstruction corpus");
    require_file(ppath, "paraphrase corpus");
    if (!a.embeddings.empty()) require_file(a.embeddings, "embeddings");
    if (a.out.empty()) throw ConfigError("--out is required");
    const auto tc = train_config(a);
    const auto lex = load_lexicon(a.lexicon);
    const auto vocab = load_vocabulary(vpath);
    const auto mc = model_config(a, vocab);

    std::vector<std::string> recon_text;
    for (const auto& j : read_jsonl(rpath)) recon_text.push_back(get_string(j, "text", rpath));
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& j : read_jsonl(ppath)) pairs.emplace_back(get_string(j, "src", ppath), get_string(j, "tgt", ppath));

    std::optional<EmbeddingProvider> emb;
    if (a.supply_verb) {
        if (!a.embeddings.empty()) {
            emb = restrict_to_lexicon(load_embeddings(a.embeddings), lex);
        } else {
            std::vector<std::vector<std::string>> sents;
            for (const auto& t : recon_text) sents.push_back(word_tokens(t));
            for (const auto& [s, t] : pairs) {
                sents.push_back(word_tokens(s));
                sents.push_back(word_tokens(t));
            }
            emb = restrict_to_lexicon(ppmi_embeddings(sents), lex);
        }
    }
    const auto seq = static_cast<std::size_t>(mc.max_seq_len);
    BuildStats bs;
    std::vector<TrainingInstance> recon, para;
    for (const auto& t : recon_text) {
        if (auto i = build_recon_instance(t, lex, vocab, seq, a.supply_verb, emb ? &*emb : nullptr, &bs)) recon.push_back(*i);
    }
    for (const auto& [s, t] : pairs) {
        if (auto i = build_para_instance(s, t, lex, vocab, seq, a.supply_verb, emb ? &*emb : nullptr, &bs)) para.push_back(*i);
    }

    Meta meta;
    meta.command = "train";
    meta.seed = a.seed;
    meta.config = {{"train", tc.to_json()},
                   {"model", mc.to_json()},
                   {"inputs", {{"recon", file_hash(rpath)}, {"para", file_hash(ppath)}, {"lexicon", file_hash(a.lexicon)}}}};
    if (!a.embeddings.empty()) meta.config["inputs"]["embeddings"] = file_hash(a.embeddings);
    meta.vocab_hash = hex64(vocab.hash());

    TransformerModel model(mc, vocab.hash());
    model.init_normal(derive_seed(a.seed, 3));
    const auto res = train(tc, std::move(model), recon, para, [](const TransformerModel&, const EpochLoss& e) {
        std::cerr << "epoch " << e.epoch << " recon " << fmt(e.recon) << " para " << fmt(e.para) << "\n";
    });
    json extra{{"kind", "revision"},
               {"objective", to_string(tc.objective)},
               {"supply_verb", tc.supply_verb},
               {"built", {{"recon", recon.size()}, {"para", para.size()}, {"too_long", bs.too_long},
                          {"unrepresentable", bs.unrepresentable}, {"ineligible", bs.ineligible}}}};
    if (emb) extra["embeddings"] = emb->to_json();
    save_trained(a, res, vocab, extra, meta);
    return 0;
}

int cmd_train_lm(const TrainArgs& a) {
    require_dir(a.data, "--data");
    const auto vpath = (fs::path(a.data) / "vocab.json").string();
    const auto rpath = (fs::path(a.data) / "recon_train.jsonl").string();
    require_file(vpath, "vocabulary");
    require_file(rpath, "text corpus");
    if (a.out.empty()) throw ConfigError("--out is required");
    const auto tc = train_config(a);
    const auto vocab = load_vocabulary(vpath);
    const auto mc = model_config(a, vocab);
    std::vector<TrainingInstance> lm;
    for (const auto& j : read_jsonl(rpath)) {
        if (auto i = build_lm_instance(get_string(j, "text", rpath), vocab, static_cast<std::size_t>(mc.max_seq_len)))
            lm.push_back(*i);
    }
    Meta meta;
    meta.command = "train-lm";
    meta.seed = a.seed;
    meta.config = {{"train", tc.to_json()}, {"model", mc.to_json()}, {"inputs", {{"text", file_hash(rpath)}}}};
    meta.vocab_hash = hex64(vocab.hash());
    TransformerModel model(mc, vocab.hash());
    model.init_normal(derive_seed(a.seed, 3));
    const auto res = train_lm(tc, std::move(model), lm, [](const TransformerModel&, const EpochLoss& e) {
        std::cerr << "epoch " << e.epoch << " lm " << fmt(e.recon) << "\n";
    });
    save_trained(a, res, vocab, {{"kind", "lm"}}, meta);
    return 0;
}

// ---------------------------------------------------------------- revise

struct DecodeArgs {
    double beta = 5.0;
    double top_p = 0.4;
    int max_new_tokens = 40;
    bool no_boost = false;
    std::uint64_t seed = 1;

    DecodeConfig config(std::uint64_t stream) const {
        DecodeConfig c;
        c.beta = beta;
        c.top_p = top_p;
        c.max_new_tokens = max_new_tokens;
        c.seed = derive_seed(seed, stream);
        c.validate();
        return c;
    }
    json to_json() const {
        return {{"beta", beta}, {"top_p", top_p}, {"max_new_tokens", max_new_tokens}, {"boost", !no_boost}};
    }
};

struct ReviseArgs {
    std::string checkpoint, lexicon, input, output, embeddings;
    DecodeArgs decode;
};

std::optional<EmbeddingProvider> supply_embeddings(const LoadedModel& m, const std::string& override_path,
                                                   const AgencyLexicon& lex) {
    if (!m.extra.value("supply_verb", false)) return std::nullopt;
    if (!override_path.empty()) return restrict_to_lexicon(load_embeddings(override_path), lex);
    if (!m.extra.contains("embeddings")) throw ValidationError("checkpoint needs supplied verbs but has no embeddings");
    return EmbeddingProvider::from_json(m.extra["embeddings"]);
}

int cmd_revise(const ReviseArgs& a) {
    require_file(a.lexicon, "lexicon");
    require_file(a.input, "revision requests");
    if (!a.embeddings.empty()) require_file(a.embeddings, "embeddings");
    if (a.output.empty()) throw ConfigError("--output is required");
    a.decode.config(0);
    const auto m = load_model(a.checkpoint);
    if (m.extra.value("kind", "") != "revision") throw ValidationError(a.checkpoint + ": not a revision model");
    const auto lex = load_lexicon(a.lexicon);
    const auto emb = supply_embeddings(m, a.embeddings, lex);
    const auto A = build_agency_matrix(lex, m.vocab);
    const AgencyMatrix* boost = a.decode.no_boost ? nullptr : &A;

    std::vector<json> rows;
    const auto requests = read_jsonl(a.input);
    for (std::size_t i = 0; i < requests.size(); ++i) {
        const auto where = a.input + ":" + std::to_string(i + 1);
        const auto text = get_string(requests[i], "text", where);
        const auto target = get_label(requests[i], "target", where);
        json r{{"text", text}, {"target", to_string(target)}};
        try {
            const auto g = revise_text(m.model, m.vocab, lex, boost, a.decode.config(i), text, target, emb ? &*emb : nullptr);
            r["output"] = g.text;
            r["truncated"] = g.truncated;
        } catch (const Error& e) {
            if (e.category() == Error::Category::Config) throw;
            r["output"] = "";
            r["truncated"] = false;
            r["error"] = e.what();
        }
        const auto rec = make_record(text, r["output"].get<std::string>(), target, lex);
        r["output_agency"] = rec.output_agency ? json(to_string(*rec.output_agency)) : json(nullptr);
        rows.push_back(std::move(r));
    }
    Meta meta;
    meta.command = "revise";
    meta.seed = a.decode.seed;
    meta.config = {{"decode", a.decode.to_json()},
                   {"inputs", {{"requests", file_hash(a.input)}, {"lexicon", file_hash(a.lexicon)}}}};
    meta.vocab_hash = hex64(m.vocab.hash());
    meta.checkpoint_hash = m.hash;
    write_with_sidecar(a.output, dump_jsonl(rows), meta);
    return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string input, lexicon, stopwords, lm, output, csv;
};

int cmd_evaluate(const EvaluateArgs& a) {
    require_file(a.input, "responses");
    require_file(a.lexicon, "lexicon");
    require_file(a.stopwords, "stopword list");
    if (!a.lm.empty()) require_file(a.lm, "language model");
    if (a.output.empty()) throw ConfigError("--output is required");
    const auto lex = load_lexicon(a.lexicon);
    const auto stop = load_stopwords(a.stopwords);

    std::vector<EvalRecord> records;
    const auto rows = read_jsonl(a.input);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto where = a.input + ":" + std::to_string(i + 1);
        const auto input = get_string(rows[i], "text", where);
        const auto output = rows[i].contains("output") && rows[i]["output"].is_string() ? rows[i]["output"].get<std::string>() : "";
        records.push_back(make_record(input, output, get_label(rows[i], "target", where), lex));
    }
    if (records.empty()) throw ValidationError(a.input + ": no records");

    Meta meta;
    meta.command = "evaluate";
    meta.config = {{"inputs", {{"responses", file_hash(a.input)}, {"lexicon", file_hash(a.lexicon)},
                               {"stopwords", file_hash(a.stopwords)}}}};
    std::optional<LoadedModel> lm;
    if (!a.lm.empty()) {
        lm = load_model(a.lm);
        if (lm->extra.value("kind", "") != "lm") throw ValidationError(a.lm + ": not a language model checkpoint");
        meta.vocab_hash = hex64(lm->vocab.hash());
        meta.checkpoint_hash = lm->hash;
    }
    const auto report = evaluate(records, stop, lm ? &lm->model : nullptr, lm ? &lm->vocab : nullptr);
    json out{{"meta", meta.to_json()}, {"metrics", report.to_json()}};
    write_text(a.output, out.dump(2) + "\n");

    if (!a.csv.empty()) {
        std::string csv = "index,target,output_agency,correct,meaning_proxy,repeated_bigram\n";
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            const bool ok = r.output_agency && *r.output_agency == r.target;
            csv += std::to_string(i) + "," + std::string(to_string(r.target)) + "," +
                   (r.output_agency ? std::string(to_string(*r.output_agency)) : "none") + "," + (ok ? "1" : "0") +
                   "," + fmt(meaning_proxy(r.input, r.output, stop)) + "," +
                   (has_repeated_bigram(r.output) ? "1" : "0") + "\n";
        }
        write_with_sidecar(a.csv, csv, meta);
    }
    std::cout << report.to_json().dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------- analyze-bias

struct BiasArgs {
    std::string scripts, lexicon, names, gendered_words, checkpoint, output, csv;
    std::size_t dialogue_indent = 6, max_cue_tokens = 4;
    bool keep_truncated = false;
    DecodeArgs decode;
};

std::vector<Script> load_scripts(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    std::vector<Script> out;
    for (const auto& f : files) out.push_back({fs::path(f).stem().string(), read_file(f)});
    return out;
}

int cmd_analyze_bias(const BiasArgs& a) {
    require_dir(a.scripts, "--scripts");
    require_file(a.lexicon, "lexicon");
    require_file(a.names, "name list");
    require_file(a.gendered_words, "gendered-word list");
    if (a.output.empty()) throw ConfigError("--output is required");
    a.decode.config(0);
    const auto lex = load_lexicon(a.lexicon);
    const auto res = load_gender_resources(a.names, a.gendered_words);
    const auto scripts = load_scripts(a.scripts);
    if (scripts.empty()) throw ValidationError(a.scripts + ": no .txt scripts");

    Meta meta;
    meta.command = "analyze-bias";
    meta.seed = a.decode.seed;
    json inputs{{"lexicon", file_hash(a.lexicon)}, {"names", file_hash(a.names)}, {"gendered_words", file_hash(a.gendered_words)}};
    for (const auto& s : scripts) inputs["scripts"][s.id] = hex64(fnv1a(s.text));
    meta.config = {{"decode", a.decode.to_json()},
                   {"dialogue_indent", a.dialogue_indent},
                   {"max_cue_tokens", a.max_cue_tokens},
                   {"keep_truncated", a.keep_truncated},
                   {"inputs", inputs}};

    std::optional<LoadedModel> m;
    std::optional<EmbeddingProvider> emb;
    AgencyMatrix A;
    if (!a.checkpoint.empty()) {
        m = load_model(a.checkpoint);
        if (m->extra.value("kind", "") != "revision") throw ValidationError(a.checkpoint + ": not a revision model");
        emb = supply_embeddings(*m, "", lex);
        A = build_agency_matrix(lex, m->vocab);
        meta.vocab_hash = hex64(m->vocab.hash());
        meta.checkpoint_hash = m->hash;
    }
    std::uint64_t stream = 0;
    SentenceReviser reviser = [&](const std::string& sentence, AgencyLabel target) -> std::optional<std::string> {
        if (!m) return std::nullopt;
        const auto g = revise_text(m->model, m->vocab, lex, a.decode.no_boost ? nullptr : &A, a.decode.config(stream++),
                                   sentence, target, emb ? &*emb : nullptr);
        if (g.truncated && !a.keep_truncated) return std::nullopt;
        return g.text;
    };
    StudyOptions opt;
    opt.parse.dialogue_indent = a.dialogue_indent;
    opt.parse.max_cue_tokens = a.max_cue_tokens;
    const auto study = debias_study(scripts, res, lex, reviser, opt);

    json out{{"meta", meta.to_json()}, {"study", study.to_json()}, {"scripts", scripts.size()}};
    write_text(a.output, out.dump(2) + "\n");
    if (!a.csv.empty()) {
        std::string csv = "script,name,gender,phase,n_narr,n_words,n_verbs,pos_agency,neg_agency\n";
        auto rows = [&](const std::vector<CharacterProfile>& ps, const char* phase) {
            for (const auto& p : ps) {
                csv += p.script + "," + p.name + "," + std::string(to_string(p.gender)) + "," + phase + "," +
                       std::to_string(p.n_narr) + "," + std::to_string(p.n_words) + "," + std::to_string(p.n_verbs) +
                       "," + std::to_string(p.pos_agency) + "," + std::to_string(p.neg_agency) + "\n";
            }
        };
        rows(study.before, "before");
        rows(study.after, "after");
        write_with_sidecar(a.csv, csv, meta);
    }
    std::cout << out["study"].dump(2) << "\n";
    return 0;
}

void add_decode_flags(CLI::App* cmd, DecodeArgs& d) {
    cmd->add_option("--beta", d.beta, "Boosting strength added to target-agency verb logits")->capture_default_str();
    cmd->add_option("--top-p", d.top_p, "Nucleus sampling mass in (0, 1]")->capture_default_str();
    cmd->add_option("--max-new-tokens", d.max_new_tokens, "Generation budget per sentence")->capture_default_str();
    cmd->add_flag("--no-boost", d.no_boost, "Disable agency boosting entirely");
    cmd->add_option("--seed", d.seed, "Sampling seed")->capture_default_str();
}

void add_train_flags(CLI::App* cmd, TrainArgs& t) {
    cmd->add_option("--data", t.data, "Directory written by `prepare`")->required();
    cmd->add_option("--out", t.out, "Checkpoint path")->required();
    cmd->add_option("--history", t.history, "Loss-history CSV (default: <out>.history.csv)");
    cmd->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--batch-size", t.batch_size, "Instances per optimizer step")->capture_default_str();
    cmd->add_option("--lr", t.lr, "AdamW learning rate")->capture_default_str();
    cmd->add_option("--weight-decay", t.weight_decay, "AdamW decoupled weight decay")->capture_default_str();
    cmd->add_option("--embed-dim", t.embed_dim, "Model width")->capture_default_str();
    cmd->add_option("--heads", t.n_heads, "Attention heads")->capture_default_str();
    cmd->add_option("--layers", t.n_layers, "Transformer blocks")->capture_default_str();
    cmd->add_option("--max-seq-len", t.max_seq_len, "Context length")->capture_default_str();
    cmd->add_option("--seed", t.seed, "Initialization and shuffling seed")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Agency-controlled sentence revision and screenplay agency analysis"};
    app.require_subcommand(1);

    PrepareArgs pa;
    auto* prep = app.add_subcommand("prepare", "Filter, split and balance corpora; train the BPE vocabulary");
    prep->add_option("--story", pa.story, "Story JSONL ({\"text\"})")->required();
    prep->add_option("--para", pa.para, "Paraphrase JSONL ({\"src\",\"tgt\"})")->required();
    prep->add_option("--lexicon", pa.lexicon, "Agency lexicon TSV")->required();
    prep->add_option("--out", pa.out, "Output directory")->required();
    prep->add_option("--vocab-size", pa.vocab_size, "BPE vocabulary size")->capture_default_str();
    prep->add_flag("!--no-balance", pa.balance, "Skip agency balancing of the splits");
    prep->add_option("--seed", pa.seed, "Split and balancing seed")->capture_default_str();

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "Train the revision model");
    add_train_flags(tr, ta);
    tr->add_option("--lexicon", ta.lexicon, "Agency lexicon TSV")->required();
    tr->add_option("--objective", ta.objective, "joint, para-only or recon-only")->capture_default_str();
    tr->add_flag("--supply-verb", ta.supply_verb, "Add a retrieved target-agency verb to every input");
    tr->add_option("--embeddings", ta.embeddings, "Word vectors for verb retrieval (default: PPMI on the corpus)");

    TrainArgs la;
    la.epochs = 10;
    auto* trlm = app.add_subcommand("train-lm", "Train the held-out fluency language model on raw training text");
    add_train_flags(trlm, la);

    ReviseArgs ra;
    auto* rev = app.add_subcommand("revise", "Revise sentences toward a target agency");
    rev->add_option("--checkpoint", ra.checkpoint, "Revision model checkpoint")->required();
    rev->add_option("--lexicon", ra.lexicon, "Agency lexicon TSV")->required();
    rev->add_option("--input", ra.input, "Requests JSONL ({\"text\",\"target\"})")->required();
    rev->add_option("--output", ra.output, "Responses JSONL")->required();
    rev->add_option("--embeddings", ra.embeddings, "Override the checkpoint's retrieval vectors");
    add_decode_flags(rev, ra.decode);

    EvaluateArgs ea;
    auto* ev = app.add_subcommand("evaluate", "Score revision responses");
    ev->add_option("--input", ea.input, "Responses JSONL")->required();
    ev->add_option("--lexicon", ea.lexicon, "Agency lexicon TSV")->required();
    ev->add_option("--stopwords", ea.stopwords, "Stopword list")->required();
    ev->add_option("--lm", ea.lm, "Fluency LM checkpoint from train-lm (omit to skip perplexity)");
    ev->add_option("--output", ea.output, "Metrics report JSON")->required();
    ev->add_option("--csv", ea.csv, "Per-record CSV");

    BiasArgs ba;
    auto* bias = app.add_subcommand("analyze-bias", "Gender/agency study over screenplays, before and after revision");
    bias->add_option("--scripts", ba.scripts, "Directory of .txt screenplays")->required();
    bias->add_option("--lexicon", ba.lexicon, "Agency lexicon TSV")->required();
    bias->add_option("--names", ba.names, "Gendered name list (name<TAB>M|F)")->required();
    bias->add_option("--gendered-words", ba.gendered_words, "Gendered word list (word<TAB>M|F)")->required();
    bias->add_option("--checkpoint", ba.checkpoint, "Revision model (omit to analyze without revising)");
    bias->add_option("--output", ba.output, "Study report JSON")->required();
    bias->add_option("--csv", ba.csv, "Per-character profiles CSV");
    bias->add_option("--dialogue-indent", ba.dialogue_indent, "Indent at which non-cue lines count as dialogue")
        ->capture_default_str();
    bias->add_option("--max-cue-tokens", ba.max_cue_tokens, "Longest all-caps line treated as a character cue")
        ->capture_default_str();
    bias->add_flag("--keep-truncated", ba.keep_truncated, "Accept revisions that never emitted an end token");
    add_decode_flags(bias, ba.decode);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*prep) return cmd_prepare(pa);
        if (*tr) return cmd_train(ta);
        if (*trlm) return cmd_train_lm(la);
        if (*rev) return cmd_revise(ra);
        if (*ev) return cmd_evaluate(ea);
        if (*bias) return cmd_analyze_bias(ba);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
