#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vlpt/data.hpp"
#include "vlpt/downstream.hpp"
#include "vlpt/model.hpp"

using namespace vlpt;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.hidden_size = 8;
    cfg.encoder_blocks = 1;
    cfg.decoder_blocks = 1;
    cfg.heads = 2;
    cfg.max_tokens = 10;
    cfg.max_frames = 4;
    cfg.vocab_size = 24;
    cfg.frame_feature_dim = 4;
    return cfg;
}

Dataset tiny_dataset(int n = 8, double noise = 0.1) {
    SyntheticSpec spec;
    spec.vocab_size = 24;
    spec.num_records = n;
    spec.topics = 2;
    spec.noise = noise;
    spec.seed = 33;
    spec.frame_feature_dim = 4;
    spec.max_tokens = 10;
    spec.max_frames = 4;
    return generate_synthetic(spec);
}

// Log-probability of token `tok` given the decoder's last-row logits.
double token_log_prob(const Tensor& logits, int tok) {
    const int last = logits.rows() - 1;
    double mx = logits.at(last, 0);
    for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(last, j));
    double sum = 0.0;
    for (int j = 0; j < logits.cols(); ++j) sum += std::exp(logits.at(last, j) - mx);
    return logits.at(last, tok) - (mx + std::log(sum));
}

// Length-normalized score of a full [CLS]... sequence under the model.
double sequence_score(const ModelParams& p, const VideoTextRecord& rec,
                      const std::vector<int>& tokens) {
    TextInput text = make_text_input(rec.token_ids);
    FrameInput frames;
    frames.features = rec.frame_features;
    frames.real.assign(static_cast<std::size_t>(rec.frame_features.rows()), 1);
    EncodedPair ctx = encode_pair(p, text, frames);
    double lp = 0.0;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
        std::vector<int> prefix(tokens.begin(), tokens.begin() + static_cast<long>(t));
        lp += token_log_prob(decode_logits(p, prefix, ctx), tokens[t]);
    }
    Tape::instance().clear();
    return lp / static_cast<double>(tokens.size() - 1);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}   // namespace

TEST_CASE("score_pair is cosine similarity with a zero-norm guard") {
    Tensor a = Tensor::from({1, 3}, {1.0, 2.0, -2.0});
    Tensor b = Tensor::from({1, 3}, {2.0, 4.0, -4.0});
    CHECK(score_pair(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(score_pair(a, b) == doctest::Approx(1.0).epsilon(1e-12));

    Tensor x = Tensor::from({1, 2}, {1.0, 0.0});
    Tensor y = Tensor::from({1, 2}, {0.0, 1.0});
    CHECK(score_pair(x, y) == 0.0);
    CHECK(score_pair(a, b) == score_pair(b, a));

    Tensor z = Tensor::from({1, 3}, {0.0, 0.0, 0.0});
    CHECK_THROWS_WITH_AS(score_pair(a, z), doctest::Contains("zero-norm"), std::runtime_error);
    CHECK_THROWS_WITH_AS(score_pair(a, x), doctest::Contains("dimensions differ"), std::runtime_error);
}

TEST_CASE("recall_at_k counts ranks and is monotone in k") {
    std::vector<int> ranks{1, 5};
    CHECK(recall_at_k(ranks, 1) == 0.5);
    CHECK(recall_at_k(ranks, 4) == 0.5);
    CHECK(recall_at_k(ranks, 5) == 1.0);
    CHECK(recall_at_k(ranks, 10) == 1.0);
    double prev = 0.0;
    for (int k = 1; k <= 6; ++k) {
        const double r = recall_at_k(ranks, k);
        CHECK(r >= prev);
        prev = r;
    }
    CHECK_THROWS_WITH_AS(recall_at_k(ranks, 0), doctest::Contains("k must be >= 1"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(recall_at_k({}, 1), doctest::Contains("no queries"), std::runtime_error);
}

TEST_CASE("retrieval ranks are valid, deterministic, and validated") {
    Dataset ds = tiny_dataset();
    ModelParams p = ModelParams::init(tiny_config(), 7);
    for (RetrievalMode mode : {RetrievalMode::text, RetrievalMode::image}) {
        std::vector<int> ranks = retrieval_ranks(mode, ds, p, 5, 9);
        REQUIRE(ranks.size() == ds.records.size());
        for (int r : ranks) {
            CHECK(r >= 1);
            CHECK(r <= 6);   // positive + 5 negatives
        }
        CHECK(ranks == retrieval_ranks(mode, ds, p, 5, 9));
        // More negatives than other records: candidate lists saturate at n.
        std::vector<int> all = retrieval_ranks(mode, ds, p, 100, 9);
        for (int r : all) CHECK(r <= static_cast<int>(ds.records.size()));
    }

    Dataset one;
    one.records.push_back(ds.records[0]);
    CHECK_THROWS_WITH_AS(retrieval_ranks(RetrievalMode::text, one, p, 5, 9),
                         doctest::Contains("at least two records"), std::runtime_error);
    CHECK_THROWS_WITH_AS(retrieval_ranks(RetrievalMode::text, ds, p, 0, 9),
                         doctest::Contains("at least one negative"), std::runtime_error);
}

TEST_CASE("image retrieval requires a product image feature") {
    Dataset ds = tiny_dataset();
    ds.records[2].product_image.clear();
    ModelParams p = ModelParams::init(tiny_config(), 7);
    CHECK_THROWS_WITH_AS(retrieval_ranks(RetrievalMode::image, ds, p, 3, 1),
                         doctest::Contains("no product image"), std::runtime_error);
}

TEST_CASE("retrieval fine-tuning updates the encoder in place") {
    Dataset ds = tiny_dataset(6);
    ModelParams p = ModelParams::init(tiny_config(), 7);
    const std::vector<double> before = p.token_emb.data();
    TrainConfig cfg;
    cfg.model = p.cfg;
    cfg.batch_size = 3;
    cfg.epochs = 1;
    cfg.learning_rate = 1e-3;
    finetune_retrieval(RetrievalMode::text, ds, p, cfg);
    CHECK(p.token_emb.data() != before);
    CHECK(Tape::instance().empty());

    Dataset empty;
    CHECK_THROWS_WITH_AS(finetune_retrieval(RetrievalMode::text, empty, p, cfg),
                         doctest::Contains("dataset is empty"), std::runtime_error);
}

TEST_CASE("beam width 1 reproduces greedy decoding exactly") {
    Dataset ds = tiny_dataset(4);
    ModelParams p = ModelParams::init(tiny_config(), 13);
    for (const auto& rec : ds.records) {
        // Greedy reference: argmax token by token.
        TextInput text = make_text_input(rec.token_ids);
        FrameInput frames;
        frames.features = rec.frame_features;
        frames.real.assign(static_cast<std::size_t>(rec.frame_features.rows()), 1);
        EncodedPair ctx = encode_pair(p, text, frames);
        std::vector<int> greedy{kCls};
        while (static_cast<int>(greedy.size()) < 8) {
            Tensor logits = decode_logits(p, greedy, ctx);
            const int last = logits.rows() - 1;
            int best = 0;
            for (int j = 1; j < logits.cols(); ++j) {
                if (logits.at(last, j) > logits.at(last, best)) best = j;
            }
            greedy.push_back(best);
            if (best == kSep) break;
        }
        Tape::instance().clear();
        CHECK(caption_generate(p, rec, 1, 8) == greedy);
    }
}

TEST_CASE("wider beams never score worse than greedy") {
    Dataset ds = tiny_dataset(4);
    ModelParams p = ModelParams::init(tiny_config(), 13);
    for (const auto& rec : ds.records) {
        std::vector<int> b1 = caption_generate(p, rec, 1, 8);
        std::vector<int> b5 = caption_generate(p, rec, 5, 8);
        CHECK(b1.front() == kCls);
        CHECK(b5.front() == kCls);
        CHECK(sequence_score(p, rec, b5) >= sequence_score(p, rec, b1) - 1e-12);
    }
    CHECK_THROWS_WITH_AS(caption_generate(p, ds.records[0], 0, 8),
                         doctest::Contains("beam width"), std::runtime_error);
    CHECK_THROWS_WITH_AS(caption_generate(p, ds.records[0], 2, 1),
                         doctest::Contains("max_len"), std::runtime_error);
}

TEST_CASE("BLEU and ROUGE-L hit the closed-form reference values") {
    std::vector<std::vector<int>> hyp{{4, 5, 6, 7}};
    std::vector<std::vector<int>> ref{{4, 5, 6, 7}};
    TextGenScores exact = text_gen_metrics(hyp, ref);
    CHECK(exact.bleu1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(exact.bleu4 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(exact.rouge_l == doctest::Approx(1.0).epsilon(1e-12));

    TextGenScores disjoint = text_gen_metrics({{4, 5, 6}}, {{7, 8, 9}});
    CHECK(disjoint.bleu1 == 0.0);
    CHECK(disjoint.bleu4 == 0.0);
    CHECK(disjoint.rouge_l == 0.0);

    // All unigrams match but the hypothesis is one token short: the brevity
    // penalty alone sets BLEU-1 to e^(1 - 5/4).
    TextGenScores bp = text_gen_metrics({{4, 5, 6, 7}}, {{4, 5, 6, 7, 8}});
    CHECK(bp.bleu1 == doctest::Approx(std::exp(1.0 - 5.0 / 4.0)).epsilon(1e-6));
    CHECK(bp.bleu1 == doctest::Approx(0.7788007830714049).epsilon(1e-6));

    // ROUGE-L with LCS 3 of hyp-4 / ref-5 and beta = 1.2.
    TextGenScores partial = text_gen_metrics({{4, 9, 5, 6}}, {{4, 5, 6, 7, 8}});
    const double prec = 3.0 / 4.0, rec = 3.0 / 5.0, b2 = 1.44;
    CHECK(partial.rouge_l == doctest::Approx((1 + b2) * prec * rec / (rec + b2 * prec)).epsilon(1e-12));

    CHECK_THROWS_WITH_AS(text_gen_metrics({}, {}), doctest::Contains("empty reference"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(text_gen_metrics({{1}}, {{1}, {2}}), doctest::Contains("count mismatch"),
                         std::runtime_error);
}

TEST_CASE("classification validates label ranges and reports per-head accuracy") {
    Dataset ds = tiny_dataset(6);
    ModelParams p = ModelParams::init(tiny_config(), 5);
    TrainConfig cfg;
    cfg.model = p.cfg;
    cfg.batch_size = 3;
    cfg.epochs = 1;
    cfg.learning_rate = 1e-3;

    ClassHeadSpec plot;
    plot.plot_classes = 2;
    ClassifyResult r = finetune_classify(plot, ds, ds, p, cfg);
    CHECK(r.plot_accuracy >= 0.0);
    CHECK(r.plot_accuracy <= 1.0);
    CHECK(r.top_accuracy == -1.0);

    ClassHeadSpec dual;
    dual.product_dual = true;
    dual.top_classes = 2;
    dual.leaf_classes = 2;
    ClassifyResult d = finetune_classify(dual, ds, ds, p, cfg);
    CHECK(d.top_accuracy >= 0.0);
    CHECK(d.leaf_accuracy >= 0.0);
    CHECK(d.plot_accuracy == -1.0);

    ClassHeadSpec tight;
    tight.plot_classes = 1;   // topic 1 labels now fall outside [0,1)
    CHECK_THROWS_WITH_AS(finetune_classify(tight, ds, ds, p, cfg),
                         doctest::Contains("outside [0,1)"), std::runtime_error);

    ModelParams fresh = ModelParams::init(tiny_config(), 5);
    CHECK_THROWS_WITH_AS(evaluate_classify(plot, ds, fresh), doctest::Contains("plot head missing"),
                         std::runtime_error);
}

TEST_CASE("embedding export writes one full-precision row per record") {
    Dataset ds = tiny_dataset(5);
    ModelParams p = ModelParams::init(tiny_config(), 3);
    const std::string path = "/tmp/vlpt_emb_test.tsv";
    export_embeddings(ds, p, path);
    const std::string first = slurp(path);

    std::istringstream lines(first);
    std::string line;
    int rows = 0;
    while (std::getline(lines, line)) {
        REQUIRE(rows < static_cast<int>(ds.records.size()));
        CHECK(line.rfind(ds.records[static_cast<std::size_t>(rows)].id + "\t", 0) == 0);
        CHECK(std::count(line.begin(), line.end(), '\t') == p.cfg.hidden_size);
        ++rows;
    }
    CHECK(rows == static_cast<int>(ds.records.size()));

    export_embeddings(ds, p, path);
    CHECK(slurp(path) == first);
    std::remove(path.c_str());
}
