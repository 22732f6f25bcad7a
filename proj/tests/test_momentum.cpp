#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <deque>

#include "vlpt/model.hpp"
#include "vlpt/momentum.hpp"
#include "vlpt/rng.hpp"
#include "vlpt/tensor.hpp"

using namespace vlpt;

namespace {

Tensor rows_of(const std::vector<std::vector<double>>& rows) {
    const int n = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows.front().size());
    std::vector<double> data;
    for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
    return Tensor::from({n, d}, std::move(data));
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.hidden_size = 8;
    cfg.encoder_blocks = 1;
    cfg.decoder_blocks = 1;
    cfg.heads = 2;
    cfg.max_tokens = 6;
    cfg.max_frames = 3;
    cfg.vocab_size = 12;
    cfg.frame_feature_dim = 4;
    return cfg;
}

}   // namespace

TEST_CASE("queue keeps FIFO order under randomized push sizes") {
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        Rng rng(seed);
        const int cap = 2 + rng.uniform_int(14);
        MemoryQueue q(cap, 1);
        std::deque<double> model;
        double next = 0.0;
        for (int round = 0; round < 20; ++round) {
            const int k = 1 + rng.uniform_int(5);
            std::vector<double> vals;
            for (int i = 0; i < k; ++i) vals.push_back(next++);
            q.push_rows(Tensor::from({k, 1}, vals));
            for (double v : vals) {
                model.push_back(v);
                if (static_cast<int>(model.size()) > cap) model.pop_front();
            }
            REQUIRE(q.fill() == static_cast<int>(model.size()));
            Tensor negs = q.negatives();
            for (int i = 0; i < q.fill(); ++i) CHECK(negs.at(i, 0) == model[static_cast<std::size_t>(i)]);
        }
    }
}

TEST_CASE("empty queue refuses to provide negatives") {
    MemoryQueue q(4, 2);
    CHECK_THROWS_WITH_AS(q.negatives(), doctest::Contains("empty queue"), std::runtime_error);
}

TEST_CASE("snapshot/restore round-trips the ring contents") {
    MemoryQueue q(3, 2);
    q.push_rows(rows_of({{1, 2}, {3, 4}, {5, 6}, {7, 8}}));   // evicts {1,2}
    const std::vector<double> snap = q.snapshot();
    CHECK(snap == std::vector<double>{3, 4, 5, 6, 7, 8});

    MemoryQueue q2(3, 2);
    q2.restore(snap);
    CHECK(q2.fill() == 3);
    CHECK(q2.negatives().data() == q.negatives().data());
    // Pushes after restore continue the FIFO at the right place.
    q.push_rows(rows_of({{9, 9}}));
    q2.push_rows(rows_of({{9, 9}}));
    CHECK(q2.negatives().data() == q.negatives().data());

    CHECK_THROWS_WITH_AS(q2.restore(std::vector<double>(3, 0.0)),
                         doctest::Contains("whole number of rows"), std::runtime_error);
    CHECK_THROWS_WITH_AS(q2.restore(std::vector<double>(8, 0.0)),
                         doctest::Contains("exceeds capacity"), std::runtime_error);
}

TEST_CASE("queue dimension mismatches are rejected") {
    MemoryQueue q(4, 3);
    CHECK_THROWS_WITH_AS(q.push_rows(rows_of({{1, 2}})), doctest::Contains("queue dim"),
                         std::runtime_error);
    CHECK_THROWS_AS(MemoryQueue(0, 3), std::runtime_error);
}

TEST_CASE("momentum recurrence matches the closed form over 100 steps") {
    for (double alpha : {0.0, 0.5, 0.999, 1.0}) {
        CAPTURE(alpha);
        ModelConfig cfg = tiny_config();
        ModelParams query = ModelParams::init(cfg, 1);
        ModelParams key = init_key(query);

        // Track one scalar element through 100 updates.
        const double k0 = key.token_emb.data()[0];
        std::vector<double> qs;
        double direct = k0;
        for (int s = 0; s < 100; ++s) {
            query.token_emb.data()[0] = 0.01 * s - 0.3;
            qs.push_back(query.token_emb.data()[0]);
            momentum_update(query, key, alpha);
        }
        // theta_k(T) = alpha^T k0 + (1 - alpha) sum_s alpha^{T-1-s} q(s)
        double expected = std::pow(alpha, 100) * k0;
        for (int s = 0; s < 100; ++s)
            expected += (1.0 - alpha) * std::pow(alpha, 99 - s) * qs[static_cast<std::size_t>(s)];
        CHECK(key.token_emb.data()[0] == doctest::Approx(expected).epsilon(1e-12));

        if (alpha == 0.0) CHECK(key.token_emb.data()[0] == qs.back());   // copies the query
        if (alpha == 1.0) CHECK(key.token_emb.data()[0] == k0);          // frozen
    }
}

TEST_CASE("momentum update covers exactly the mirrored encoder-path tensors") {
    ModelParams query = ModelParams::init(tiny_config(), 2);
    ModelParams key = init_key(query);
    const double dec_before = query.decoder[0].ff_w1.data()[0];
    for (auto& [name, t] : query.named()) t.data()[0] += 1.0;
    momentum_update(query, key, 0.0);   // alpha 0: key := query
    CHECK(key.token_emb.data()[0] == query.token_emb.data()[0]);
    CHECK(key.enc_ln_g.data()[0] == query.enc_ln_g.data()[0]);
    // The decoder is untouched by construction (the key has none).
    CHECK(query.decoder[0].ff_w1.data()[0] == dec_before + 1.0);

    CHECK_THROWS_WITH_AS(momentum_update(query, key, 1.5), doctest::Contains("outside [0,1]"),
                         std::runtime_error);
}

TEST_CASE("key network is grad-free and its forward stays off the tape") {
    ModelParams query = ModelParams::init(tiny_config(), 3);
    ModelParams key = init_key(query);
    VideoTextRecord rec;
    rec.token_ids = {kCls, 5, 6, kSep};
    rec.frame_features = Tensor::from({2, 4}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});

    Tape::instance().clear();
    EncodedPair e = key_forward(key, rec);
    CHECK(Tape::instance().empty());
    CHECK_FALSE(e.r_v.requires_grad());
    CHECK(e.f_e.rows() == 2);
    CHECK(e.w_e.rows() == 4);
}
