// Revises a few sentences toward a target agency, with and without boosting.
//
//   revise_demo <checkpoint>     use a model written by `agencyrev train`
//   revise_demo --data <dir>     train a small model on <dir> first (slow)

#include <agencyrev/agencyrev.hpp>

#include <iostream>

using namespace agencyrev;

namespace {

std::vector<std::string> jsonl_field(const std::string& path, const char* key) {
    std::vector<std::string> out;
    for (const auto& line : read_lines(path)) {
        if (!trim(line).empty()) out.push_back(nlohmann::json::parse(line).at(key).get<std::string>());
    }
    return out;
}

struct Loaded {
    TransformerModel model;
    Vocabulary vocab;
};

Loaded train_small(const std::string& dir, const AgencyLexicon& lex) {
    const auto story = jsonl_field(dir + "/story.jsonl", "text");
    const auto src = jsonl_field(dir + "/paraphrase.jsonl", "src");
    const auto tgt = jsonl_field(dir + "/paraphrase.jsonl", "tgt");
    std::vector<std::string> corpus;
    for (const auto* set : {&story, &src, &tgt}) {
        for (const auto& s : *set) corpus.push_back(join(word_tokens(s)));
    }
    auto vocab = train_bpe(corpus, 600);
    std::vector<TrainingInstance> recon, para;
    for (const auto& s : story) {
        if (auto i = build_recon_instance(s, lex, vocab, 64)) recon.push_back(*i);
    }
    for (std::size_t k = 0; k < src.size(); ++k) {
        if (auto i = build_para_instance(src[k], tgt[k], lex, vocab, 64, false, nullptr, nullptr)) para.push_back(*i);
    }
    ModelConfig mc;
    mc.vocab_size = static_cast<int>(vocab.size());
    mc.max_seq_len = 64;
    mc.embed_dim = 48;
    TransformerModel model(mc, vocab.hash());
    model.init_normal(7);
    TrainConfig tc;
    tc.epochs = 10;
    tc.lr = 1e-3;
    auto res = train(tc, std::move(model), recon, para, [](const TransformerModel&, const EpochLoss& e) {
        std::cerr << "epoch " << e.epoch << " recon " << e.recon << " para " << e.para << "\n";
    });
    return {std::move(res.model), std::move(vocab)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::string data = AGENCYREV_DATA_DIR;
    if (argc < 2) {
        std::cerr << "usage: revise_demo <checkpoint> | --data <dir>\n";
        return 2;
    }
    try {
        const auto lex = load_lexicon(data + "/lexicon.tsv");
        std::optional<Loaded> m;
        if (std::string(argv[1]) == "--data") {
            m = train_small(argc > 2 ? argv[2] : data, lex);
        } else {
            auto ck = load_checkpoint(argv[1]);
            auto vocab = Vocabulary::from_json(ck.extra.at("vocab"));
            m = Loaded{std::move(ck.model), std::move(vocab)};
        }
        const auto A = build_agency_matrix(lex, m->vocab);
        const std::vector<std::pair<std::string, AgencyLabel>> requests{
            {"mey daydreamed about being a doctor", AgencyLabel::Positive},
            {"darla ordered a soft drink", AgencyLabel::Positive},
            {"sam fought for the village", AgencyLabel::Negative},
            {"emma worried about the exam on monday", AgencyLabel::Positive},
        };
        for (std::size_t i = 0; i < requests.size(); ++i) {
            const auto& [text, target] = requests[i];
            std::cout << text << "  -> " << to_string(target) << "\n";
            for (bool boost : {false, true}) {
                DecodeConfig dc;
                dc.seed = i;
                const auto g = revise_text(m->model, m->vocab, lex, boost ? &A : nullptr, dc, text, target);
                const auto got = tag(g.text, lex).sentence_agency;
                std::cout << (boost ? "  boost   " : "  noBoost ") << g.text << "  ["
                          << (got ? std::string(to_string(*got)) : "none") << (g.truncated ? ", truncated" : "") << "]\n";
            }
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.category());
    }
    return 0;
}
