#pragma once

#include <vector>

#include "vlpt/augment.hpp"
#include "vlpt/config.hpp"
#include "vlpt/data.hpp"
#include "vlpt/model.hpp"
#include "vlpt/momentum.hpp"
#include "vlpt/rng.hpp"
#include "vlpt/tensor.hpp"

namespace vlpt {

// Scalar loss per proxy task plus their unweighted sum. Disabled tasks hold a
// constant zero.
struct LossBundle {
    Tensor mlm, msom, mfom, msg;
    Tensor intra_mfm, inter_mfm;
    Tensor vsa_v2t, vsa_t2v;
    Tensor legacy_vsa;
    Tensor total;
    TaskFlags enabled;

    double total_value() const { return total.value(); }
};

// InfoNCE with one positive against K negatives at temperature tau, computed
// with max-subtraction. Gradients flow into q only; k_pos and negs are
// detached internally.
Tensor info_nce(const Tensor& q, const Tensor& k_pos, const Tensor& negs, double tau);

// Mean cross-entropy helpers; a zero-row logits matrix yields constant 0.
Tensor mean_cross_entropy_or_zero(const Tensor& logits, const std::vector<int>& targets);

struct QueueSet {
    MemoryQueue* frames = nullptr;
    MemoryQueue* visual = nullptr;
    MemoryQueue* textual = nullptr;
};

// Runs the query forward passes (encoder on augmented inputs, decoder for
// MSG), consumes the precomputed key encodings and queue negatives, and
// returns every enabled loss term batch-pooled. `key_enc` may be empty when
// no queue-based task is enabled. Queue-based losses contribute 0 while their
// queue holds fewer than cfg.min_negatives entries (cold start).
LossBundle compute_losses(const ModelParams& query,
                          const std::vector<VideoTextRecord>& records,
                          const AugmentedBatch& batch,
                          const std::vector<EncodedPair>& key_enc,
                          const QueueSet& queues,
                          const TrainConfig& cfg,
                          const Rng& rng,
                          std::vector<EncodedPair>* query_enc_out = nullptr);

}   // namespace vlpt
