#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "vlpt/augment.hpp"
#include "vlpt/config.hpp"
#include "vlpt/data.hpp"
#include "vlpt/momentum.hpp"
#include "vlpt/objectives.hpp"
#include "vlpt/rng.hpp"

using namespace vlpt;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.hidden_size = 8;
    cfg.encoder_blocks = 1;
    cfg.decoder_blocks = 1;
    cfg.heads = 2;
    cfg.max_tokens = 8;
    cfg.max_frames = 4;
    cfg.vocab_size = 16;
    cfg.frame_feature_dim = 4;
    return cfg;
}

std::vector<VideoTextRecord> tiny_batch(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<VideoTextRecord> out;
    for (int i = 0; i < n; ++i) {
        VideoTextRecord r;
        r.id = "r" + std::to_string(i);
        r.token_ids = {kCls, 4 + i, 5 + i, 6 + i, 7, kSep};
        const int m = 2 + (i % 3);
        std::vector<double> feats(static_cast<std::size_t>(m) * 4);
        for (auto& v : feats) v = rng.normal();
        r.frame_features = Tensor::from({m, 4}, std::move(feats));
        out.push_back(std::move(r));
    }
    return out;
}

TrainConfig tiny_train(const char* preset) {
    TrainConfig cfg;
    cfg.model = tiny_config();
    cfg.tasks = TaskFlags::preset(preset);
    cfg.queue_capacity = 32;
    return cfg;
}

struct LossSetup {
    ModelParams query;
    ModelParams key;
    std::vector<VideoTextRecord> records;
    AugmentedBatch batch;
    std::vector<EncodedPair> key_enc;
    MemoryQueue frames{32, 8};
    MemoryQueue visual{32, 8};
    MemoryQueue textual{32, 8};

    explicit LossSetup(const TrainConfig& cfg, int n = 3, std::uint64_t seed = 5)
        : query(ModelParams::init(cfg.model, seed)),
          key(init_key(query)),
          records(tiny_batch(n, seed)),
          batch(augment_batch(records, cfg, Rng(seed))) {
        for (const auto& r : records) key_enc.push_back(key_forward(key, r));
    }

    QueueSet queues() { return QueueSet{&frames, &visual, &textual}; }

    void fill_queues() {
        for (const auto& e : key_enc) {
            frames.push_rows(e.f_e);
            visual.push_rows(e.r_v);
            textual.push_rows(e.r_t);
        }
    }
};

}   // namespace

TEST_CASE("InfoNCE closed forms on constructed geometries") {
    // q == k+, all K negatives orthogonal: loss = ln(1 + K e^{-1/tau}).
    Tensor q = Tensor::from({1, 4}, {1, 0, 0, 0}, true);
    Tensor k_pos = Tensor::from({1, 4}, {1, 0, 0, 0});
    Tensor negs = Tensor::from({3, 4}, {0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});

    for (double tau : {1.0, 0.7, 0.25}) {
        const double expected = std::log(1.0 + 3.0 * std::exp(-1.0 / tau));
        CHECK(info_nce(q, k_pos, negs, tau).value() == doctest::Approx(expected).epsilon(1e-9));
        Tape::instance().clear();
    }
    // K = 1, tau = 1 special value ln(1 + e^{-1}).
    Tensor one_neg = Tensor::from({1, 4}, {0, 1, 0, 0});
    CHECK(info_nce(q, k_pos, one_neg, 1.0).value() ==
          doctest::Approx(0.31326168751822286).epsilon(1e-9));
    Tape::instance().clear();

    // q orthogonal to everything: uniform logits -> ln(K + 1).
    Tensor q_orth = Tensor::from({1, 4}, {0, 0, 0, 1}, true);
    Tensor negs_flat = Tensor::from({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
    Tensor k_flat = Tensor::from({1, 4}, {0.5, 0.5, 0, 0});
    CHECK(info_nce(q_orth, k_flat, negs_flat, 0.7).value() ==
          doctest::Approx(std::log(3.0)).epsilon(1e-9));
    Tape::instance().clear();
}

TEST_CASE("InfoNCE pushes gradient into the query only") {
    Tensor q = Tensor::from({1, 2}, {0.5, -0.2}, true);
    Tensor k_pos = Tensor::from({1, 2}, {1.0, 0.0}, true);
    Tensor negs = Tensor::from({2, 2}, {0.0, 1.0, -1.0, 0.0}, true);
    backward(info_nce(q, k_pos, negs, 0.7));
    CHECK(q.has_grad());
    bool q_nonzero = false;
    for (double g : q.grad()) q_nonzero = q_nonzero || g != 0.0;
    CHECK(q_nonzero);
    CHECK_FALSE(k_pos.has_grad());
    CHECK_FALSE(negs.has_grad());
}

TEST_CASE("InfoNCE input validation") {
    Tensor q = Tensor::from({1, 2}, {1, 0});
    Tensor k = Tensor::from({1, 2}, {0, 1});
    CHECK_THROWS_WITH_AS(info_nce(q, k, Tensor(), 0.7), doctest::Contains("empty negative set"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(info_nce(q, k, Tensor::from({1, 2}, {1, 1}), 0.0),
                         doctest::Contains("temperature must be > 0"), std::runtime_error);
    CHECK_THROWS_WITH_AS(info_nce(q, k, Tensor::from({1, 3}, {1, 1, 1}), 0.7),
                         doctest::Contains("dimension mismatch"), std::runtime_error);
}

TEST_CASE("empty logits pool contributes a constant zero") {
    CHECK(mean_cross_entropy_or_zero(Tensor(), {}).value() == 0.0);
}

TEST_CASE("M1 preset: total is exactly mlm + msg") {
    TrainConfig cfg = tiny_train("M1");
    LossSetup s(cfg);
    LossBundle b = compute_losses(s.query, s.records, s.batch, {}, s.queues(), cfg, Rng(1));
    CHECK(b.msom.value() == 0.0);
    CHECK(b.mfom.value() == 0.0);
    CHECK(b.intra_mfm.value() == 0.0);
    CHECK(b.inter_mfm.value() == 0.0);
    CHECK(b.vsa_v2t.value() == 0.0);
    CHECK(b.legacy_vsa.value() == 0.0);
    CHECK(b.mlm.value() > 0.0);
    CHECK(b.msg.value() > 0.0);
    CHECK(b.total.value() == doctest::Approx(b.mlm.value() + b.msg.value()).epsilon(1e-12));
    Tape::instance().clear();
}

TEST_CASE("disabling a task zeroes its loss and leaves its exclusive head untrained") {
    TrainConfig cfg = tiny_train("M1");   // msom/mfom/gtheta heads unused
    LossSetup s(cfg);
    LossBundle b = compute_losses(s.query, s.records, s.batch, {}, s.queues(), cfg, Rng(1));
    backward(b.total);
    const auto zero_grad = [](const Tensor& t) {
        if (!t.has_grad()) return true;
        Tensor copy = t;
        for (double g : copy.grad())
            if (g != 0.0) return false;
        return true;
    };
    CHECK(zero_grad(s.query.msom_w));
    CHECK(zero_grad(s.query.mfom_w));
    CHECK(zero_grad(s.query.gtheta_w));
    CHECK(zero_grad(s.query.vsa_bin_w));
    CHECK_FALSE(zero_grad(s.query.mlm_w));
    CHECK_FALSE(zero_grad(s.query.token_emb));
}

TEST_CASE("queue-based losses stay zero while the queues are warming up") {
    TrainConfig cfg = tiny_train("M5");   // inter-MFM + dual-VSA enabled
    LossSetup s(cfg);
    LossBundle cold = compute_losses(s.query, s.records, s.batch, s.key_enc, s.queues(), cfg, Rng(1));
    CHECK(cold.inter_mfm.value() == 0.0);
    CHECK(cold.vsa_v2t.value() == 0.0);
    CHECK(cold.vsa_t2v.value() == 0.0);
    Tape::instance().clear();

    s.fill_queues();
    LossBundle warm = compute_losses(s.query, s.records, s.batch, s.key_enc, s.queues(), cfg, Rng(1));
    CHECK(warm.inter_mfm.value() > 0.0);
    CHECK(warm.vsa_v2t.value() > 0.0);
    CHECK(warm.vsa_t2v.value() > 0.0);
    CHECK(warm.total.value() ==
          doctest::Approx(warm.mlm.value() + warm.msom.value() + warm.mfom.value() + warm.msg.value() +
                          warm.intra_mfm.value() + warm.inter_mfm.value() + warm.vsa_v2t.value() +
                          warm.vsa_t2v.value())
              .epsilon(1e-12));
    Tape::instance().clear();
}

TEST_CASE("legacy VSA ablation trains the binary head") {
    TrainConfig cfg = tiny_train("M4");
    LossSetup s(cfg);
    s.fill_queues();
    LossBundle b = compute_losses(s.query, s.records, s.batch, s.key_enc, s.queues(), cfg, Rng(1));
    CHECK(b.legacy_vsa.value() > 0.0);
    CHECK(b.vsa_v2t.value() == 0.0);   // dual variant off in M4
    backward(b.total);
    bool any = false;
    for (double g : s.query.vsa_bin_w.grad()) any = any || g != 0.0;
    CHECK(any);
}

TEST_CASE("loss computation rejects inconsistent inputs") {
    TrainConfig cfg = tiny_train("M5");
    LossSetup s(cfg);
    CHECK_THROWS_WITH_AS(compute_losses(s.query, s.records, s.batch, {}, s.queues(), cfg, Rng(1)),
                         doctest::Contains("key encodings required"), std::runtime_error);

    TrainConfig none = tiny_train("M1");
    none.tasks.mlm = none.tasks.msg = false;
    CHECK_THROWS_WITH_AS(compute_losses(s.query, s.records, s.batch, {}, s.queues(), none, Rng(1)),
                         doctest::Contains("all proxy tasks disabled"), std::runtime_error);

    AugmentedBatch wrong = s.batch;
    wrong.examples.pop_back();
    CHECK_THROWS_WITH_AS(compute_losses(s.query, s.records, wrong, s.key_enc, s.queues(), cfg, Rng(1)),
                         doctest::Contains("batch size mismatch"), std::runtime_error);
    Tape::instance().clear();
}

TEST_CASE("intra-MFM refuses a batch with a single real frame") {
    TrainConfig cfg = tiny_train("M3");
    cfg.model.max_frames = 4;
    cfg.frame_mask_rate = 1.0;
    ModelParams query = ModelParams::init(cfg.model, 2);
    std::vector<VideoTextRecord> records(1);
    records[0].id = "solo";
    records[0].token_ids = {kCls, 4, 5, 6, kSep};
    records[0].frame_features = Tensor::from({1, 4}, {1, 2, 3, 4});
    AugmentedBatch batch = augment_batch(records, cfg, Rng(1));
    std::vector<EncodedPair> key_enc{key_forward(init_key(query), records[0])};
    MemoryQueue fq(8, 8), vq(8, 8), tq(8, 8);
    QueueSet queues{&fq, &vq, &tq};
    CHECK_THROWS_WITH_AS(compute_losses(query, records, batch, key_enc, queues, cfg, Rng(1)),
                         doctest::Contains("single real frame"), std::runtime_error);
    Tape::instance().clear();
}

TEST_CASE("identical seeds give identical loss bundles") {
    TrainConfig cfg = tiny_train("M5");
    LossSetup a(cfg), b(cfg);
    a.fill_queues();
    b.fill_queues();
    LossBundle la = compute_losses(a.query, a.records, a.batch, a.key_enc, a.queues(), cfg, Rng(4));
    Tape::instance().clear();
    LossBundle lb = compute_losses(b.query, b.records, b.batch, b.key_enc, b.queues(), cfg, Rng(4));
    Tape::instance().clear();
    CHECK(la.total.value() == lb.total.value());
    CHECK(la.intra_mfm.value() == lb.intra_mfm.value());
    CHECK(la.inter_mfm.value() == lb.inter_mfm.value());
}
