#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vlpt/checkpoint.hpp"
#include "vlpt/config.hpp"
#include "vlpt/data.hpp"
#include "vlpt/model.hpp"
#include "vlpt/momentum.hpp"
#include "vlpt/objectives.hpp"
#include "vlpt/optimizer.hpp"

namespace vlpt {

// Mutable pre-training state: query network, momentum key network (when any
// contrastive task needs one), optimizer, and the three memory queues.
struct TrainerState {
    TrainConfig cfg;
    ModelParams query;
    bool has_key = false;
    ModelParams key;
    AdamOptimizer opt;
    MemoryQueue frame_queue;
    MemoryQueue visual_queue;
    MemoryQueue textual_queue;
    long long step = 0;   // completed steps

    // Test instrumentation: fired with "augment", "key_forward", "losses",
    // "backward", "optimizer_step", "momentum_update", "queue_push".
    std::function<void(const std::string&)> on_event;

    explicit TrainerState(const TrainConfig& cfg);
};

// One full step: augment -> query forward (inside the loss computation) ->
// key forward on originals -> losses -> backward -> optimizer step ->
// momentum update -> queue pushes. Aborts on a non-finite loss, naming the
// task. When the total is a constant (all enabled losses still warming up) the
// backward/optimizer stage is skipped and the step still advances.
LossBundle pretrain_step(TrainerState& st, const std::vector<VideoTextRecord>& records);

// Full training state: model, key network, optimizer moments, step counter,
// and (optionally, per cfg.include_queues_in_checkpoint) the queue contents.
void save_trainer_checkpoint(const std::string& path, const TrainerState& st);
TrainerState load_trainer_checkpoint(const std::string& path, const TrainConfig& cfg);

// Tab-separated metrics row: step, each loss component, total, at full float64
// precision (%.17g) so logs are byte-comparable across runs.
std::string metrics_header();
std::string metrics_line(long long step, const LossBundle& b);

// Epoch loop over seeded shuffled batches. Writes <out_dir>/metrics.tsv,
// periodic checkpoints per cfg.checkpoint_every, and
// <out_dir>/checkpoint_final.ckpt. A non-empty resume_path continues an
// earlier run (appending to the metrics log).
void run_pretraining(const TrainConfig& cfg, const std::string& resume_path = "");

}   // namespace vlpt
