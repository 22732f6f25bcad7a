#include "vlpt/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "vlpt/augment.hpp"

namespace vlpt {

namespace {

void fire(const TrainerState& st, const char* event) {
    if (st.on_event) st.on_event(event);
}

void require_finite(const char* task, const Tensor& loss) {
    if (!std::isfinite(loss.value())) {
        throw std::runtime_error(std::string("pretrain_step: non-finite ") + task + " loss, run aborted");
    }
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Tensor queue_rows(const MemoryQueue& q) {
    return Tensor::from({q.fill(), q.dim()}, q.snapshot());
}

}   // namespace

TrainerState::TrainerState(const TrainConfig& c)
    : cfg(c),
      frame_queue(c.queue_capacity, c.model.hidden_size),
      visual_queue(c.queue_capacity, c.model.hidden_size),
      textual_queue(c.queue_capacity, c.model.hidden_size) {
    cfg.validate();
    query = ModelParams::init(cfg.model, cfg.seed);
    has_key = cfg.tasks.needs_key_network();
    if (has_key) key = init_key(query);
    opt = AdamOptimizer(cfg.learning_rate);
}

LossBundle pretrain_step(TrainerState& st, const std::vector<VideoTextRecord>& records) {
    if (records.empty()) throw std::runtime_error("pretrain_step: empty batch");
    const TrainConfig& cfg = st.cfg;
    ++st.step;
    // Per-step sub-streams keyed by the global step index, so draws are
    // independent of batching details and of prefetch order.
    Rng step_rng = Rng(cfg.seed).derive(0x73746570ULL).derive(static_cast<std::uint64_t>(st.step));

    fire(st, "augment");
    AugmentedBatch batch = augment_batch(records, cfg, step_rng.derive(1));

    std::vector<EncodedPair> key_enc;
    if (st.has_key) {
        fire(st, "key_forward");
        key_enc.reserve(records.size());
        for (const auto& rec : records) key_enc.push_back(key_forward(st.key, rec));
    }

    fire(st, "losses");
    QueueSet queues{&st.frame_queue, &st.visual_queue, &st.textual_queue};
    LossBundle bundle = compute_losses(st.query, records, batch, key_enc, queues, cfg, step_rng.derive(2));

    require_finite("mlm", bundle.mlm);
    require_finite("msom", bundle.msom);
    require_finite("mfom", bundle.mfom);
    require_finite("msg", bundle.msg);
    require_finite("intra_mfm", bundle.intra_mfm);
    require_finite("inter_mfm", bundle.inter_mfm);
    require_finite("vsa_v2t", bundle.vsa_v2t);
    require_finite("vsa_t2v", bundle.vsa_t2v);
    require_finite("legacy_vsa", bundle.legacy_vsa);
    require_finite("total", bundle.total);

    if (bundle.total.requires_grad()) {
        fire(st, "backward");
        backward(bundle.total);
        fire(st, "optimizer_step");
        NamedParams params = st.query.named();
        // Heads untouched this step (disabled or unselected tasks) get a zero
        // gradient, which leaves them unchanged under Adam.
        for (auto& [name, t] : params) t.grad();
        st.opt.step(params);
    } else {
        // All enabled losses are still constants (queue warm-up): nothing to
        // optimize, but the step still counts and the queues still advance.
        Tape::instance().clear();
    }

    if (st.has_key) {
        fire(st, "momentum_update");
        momentum_update(st.query, st.key, cfg.momentum);
    }
    if (cfg.tasks.inter_mfm) {
        fire(st, "queue_push");
        for (const auto& e : key_enc) st.frame_queue.push_rows(e.f_e);
    }
    if (cfg.tasks.dual_vsa) {
        fire(st, "queue_push");
        for (const auto& e : key_enc) {
            st.visual_queue.push_rows(e.r_v);
            st.textual_queue.push_rows(e.r_t);
        }
    }
    return bundle;
}

void save_trainer_checkpoint(const std::string& path, const TrainerState& st) {
    NamedParams entries;
    for (const auto& [name, t] : st.query.named()) entries.emplace_back("model." + name, t);
    if (st.has_key) {
        for (const auto& [name, t] : st.key.named()) entries.emplace_back("key." + name, t);
    }
    for (const auto& [name, t] : st.opt.export_state()) entries.emplace_back("opt." + name, t);
    if (st.cfg.include_queues_in_checkpoint) {
        if (st.frame_queue.fill() > 0) entries.emplace_back("queue.frames", queue_rows(st.frame_queue));
        if (st.visual_queue.fill() > 0) entries.emplace_back("queue.visual", queue_rows(st.visual_queue));
        if (st.textual_queue.fill() > 0) entries.emplace_back("queue.textual", queue_rows(st.textual_queue));
    }
    std::map<std::string, std::string> meta;
    meta["kind"] = "pretrain-state";
    meta["step"] = std::to_string(st.step);
    save_checkpoint(path, st.cfg.model, entries, meta);
}

TrainerState load_trainer_checkpoint(const std::string& path, const TrainConfig& cfg) {
    LoadedCheckpoint ckpt = load_checkpoint(path);
    require_same_model_config(ckpt.config, cfg.model);

    TrainerState st(cfg);
    st.query = model_from_checkpoint(ckpt);
    if (auto it = ckpt.meta.find("step"); it != ckpt.meta.end()) st.step = std::stoll(it->second);

    std::unordered_map<std::string, Tensor> by_name;
    for (const auto& [name, t] : ckpt.entries) by_name.emplace(name, t);

    if (st.has_key) {
        st.key = init_key(st.query);
        bool any_key = false;
        for (const auto& [name, t] : ckpt.entries) {
            if (name.rfind("key.", 0) == 0) {
                any_key = true;
                break;
            }
        }
        if (any_key) {
            for (auto& [name, t] : st.key.named()) {
                auto it = by_name.find("key." + name);
                if (it == by_name.end()) throw std::runtime_error("checkpoint: missing key tensor '" + name + "'");
                if (it->second.shape() != t.shape()) {
                    throw std::runtime_error("checkpoint: shape mismatch on key tensor '" + name + "'");
                }
                t.data() = it->second.data();
            }
        }
    }

    NamedParams opt_entries;
    for (const auto& [name, t] : ckpt.entries) {
        if (name.rfind("opt.", 0) == 0) opt_entries.emplace_back(name.substr(4), t);
    }
    if (!opt_entries.empty()) st.opt.import_state(opt_entries, st.step);
    st.opt.set_learning_rate(cfg.learning_rate);

    if (auto it = by_name.find("queue.frames"); it != by_name.end()) st.frame_queue.restore(it->second.data());
    if (auto it = by_name.find("queue.visual"); it != by_name.end()) st.visual_queue.restore(it->second.data());
    if (auto it = by_name.find("queue.textual"); it != by_name.end()) st.textual_queue.restore(it->second.data());
    return st;
}

std::string metrics_header() {
    return "step\tmlm\tmsom\tmfom\tmsg\tintra_mfm\tinter_mfm\tvsa_v2t\tvsa_t2v\tlegacy_vsa\ttotal";
}

std::string metrics_line(long long step, const LossBundle& b) {
    std::string out = std::to_string(step);
    for (const Tensor* t : {&b.mlm, &b.msom, &b.mfom, &b.msg, &b.intra_mfm, &b.inter_mfm,
                            &b.vsa_v2t, &b.vsa_t2v, &b.legacy_vsa, &b.total}) {
        out += '\t';
        out += fmt(t->value());
    }
    return out;
}

void run_pretraining(const TrainConfig& cfg, const std::string& resume_path) {
    cfg.validate();
    Dataset ds = load_dataset(cfg.train_path);
    if (ds.records.empty()) throw std::runtime_error("run_pretraining: dataset is empty: " + cfg.train_path);
    if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

    const bool resuming = !resume_path.empty();
    TrainerState st = resuming ? load_trainer_checkpoint(resume_path, cfg) : TrainerState(cfg);

    const long long n = static_cast<long long>(ds.records.size());
    const long long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;

    const std::string log_path = cfg.out_dir + "/metrics.tsv";
    std::ofstream log(log_path, resuming ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open metrics log for writing: " + log_path);
    if (!resuming) log << metrics_header() << '\n';

    const int start_epoch = static_cast<int>(st.step / steps_per_epoch);
    const long long start_batch = st.step % steps_per_epoch;

    bool capped = false;
    for (int epoch = start_epoch; epoch < cfg.epochs && !capped; ++epoch) {
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = Rng(cfg.seed).derive(0x65706f6368ULL).derive(static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        for (long long b = (epoch == start_epoch ? start_batch : 0); b < steps_per_epoch; ++b) {
            if (cfg.max_steps > 0 && st.step >= cfg.max_steps) {
                capped = true;
                break;
            }
            const long long lo = b * cfg.batch_size;
            const long long hi = std::min(n, lo + cfg.batch_size);
            std::vector<VideoTextRecord> batch;
            batch.reserve(static_cast<std::size_t>(hi - lo));
            for (long long i = lo; i < hi; ++i) {
                batch.push_back(ds.records[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            }
            LossBundle bundle = pretrain_step(st, batch);
            if (cfg.log_every > 0 && st.step % cfg.log_every == 0) {
                log << metrics_line(st.step, bundle) << '\n';
            }
            if (cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0) {
                save_trainer_checkpoint(cfg.out_dir + "/checkpoint_step" + std::to_string(st.step) + ".ckpt", st);
            }
        }
    }
    log.flush();
    if (!log) throw std::runtime_error("metrics log write failed: " + log_path);
    save_trainer_checkpoint(cfg.out_dir + "/checkpoint_final.ckpt", st);
}

}   // namespace vlpt
