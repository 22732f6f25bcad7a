#include "vlpt/objectives.hpp"

#include <algorithm>
#include <stdexcept>

namespace vlpt {

Tensor info_nce(const Tensor& q, const Tensor& k_pos, const Tensor& negs, double tau) {
    if (tau <= 0.0) throw std::runtime_error("info_nce: temperature must be > 0");
    if (!negs.defined() || negs.rows() < 1) throw std::runtime_error("info_nce: empty negative set");
    if (q.cols() != k_pos.cols() || q.cols() != negs.cols()) {
        throw std::runtime_error("info_nce: dimension mismatch between query, key, and negatives");
    }
    Tensor keys = concat_rows(k_pos.detach(), negs.detach());   // (K+1) x d, positive first
    Tensor logits = scale(matmul(q, transpose(keys)), 1.0 / tau);
    return softmax_cross_entropy(logits, {0});
}

Tensor mean_cross_entropy_or_zero(const Tensor& logits, const std::vector<int>& targets) {
    if (!logits.defined() || logits.rows() == 0) return Tensor::scalar(0.0);
    return softmax_cross_entropy(logits, targets);
}

namespace {

Tensor linear_head(const Tensor& rows, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(rows, w), b);
}

// Accumulates variable-row logits across a batch.
struct LogitPool {
    Tensor logits;
    std::vector<int> targets;
    void append(const Tensor& rows, const std::vector<int>& t) {
        logits = logits.defined() ? concat_rows(logits, rows) : rows;
        targets.insert(targets.end(), t.begin(), t.end());
    }
};

// Source index of the frame currently sitting at `slot` after shuffling.
int shuffle_source(const AugmentedExample& ex, int slot) {
    for (std::size_t j = 0; j < ex.mfom_shuffled_positions.size(); ++j)
        if (ex.mfom_shuffled_positions[j] == slot) return ex.mfom_original_indices[j];
    return slot;
}

// MSG target: the original sentence up to and including [SEP].
std::pair<std::vector<int>, std::vector<int>> msg_teacher_pair(const std::vector<int>& tokens) {
    int sep = -1;
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] == kSep) {
            sep = static_cast<int>(i);
            break;
        }
    if (sep < 1) throw std::runtime_error("msg: sentence has no [SEP]");
    std::vector<int> input(tokens.begin(), tokens.begin() + sep);            // [CLS] w1..w_{s-1}
    std::vector<int> target(tokens.begin() + 1, tokens.begin() + sep + 1);   // w1..[SEP]
    return {std::move(input), std::move(target)};
}

struct MeanAccum {
    Tensor sum;
    int count = 0;
    void add_term(const Tensor& t) {
        sum = sum.defined() ? add(sum, t) : t;
        ++count;
    }
    Tensor mean() const {
        if (count == 0) return Tensor::scalar(0.0);
        return scale(sum, 1.0 / count);
    }
};

}   // namespace

LossBundle compute_losses(const ModelParams& query,
                          const std::vector<VideoTextRecord>& records,
                          const AugmentedBatch& batch,
                          const std::vector<EncodedPair>& key_enc,
                          const QueueSet& queues,
                          const TrainConfig& cfg,
                          const Rng& rng,
                          std::vector<EncodedPair>* query_enc_out) {
    const TaskFlags& flags = cfg.tasks;
    if (!flags.any_enabled()) throw std::runtime_error("compute_losses: all proxy tasks disabled");
    if (records.size() != batch.examples.size()) {
        throw std::runtime_error("compute_losses: batch size mismatch between records and augmentations");
    }
    const int B = static_cast<int>(records.size());
    const double tau = cfg.temperature;

    if (flags.needs_key_network() && static_cast<int>(key_enc.size()) != B) {
        throw std::runtime_error("compute_losses: key encodings required but not provided");
    }

    // Query forward on augmented inputs.
    std::vector<EncodedPair> enc;
    enc.reserve(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) {
        const auto& ex = batch.examples[static_cast<std::size_t>(i)];
        TextInput text = make_text_input(ex.masked_token_ids);
        FrameInput frames;
        frames.features = ex.augmented_frames;
        frames.real.assign(static_cast<std::size_t>(ex.augmented_frames.rows()), 1);
        enc.push_back(encode_pair(query, text, frames));
    }

    LossBundle bundle;
    bundle.enabled = flags;
    const Tensor zero = Tensor::scalar(0.0);

    // MLM
    if (flags.mlm) {
        LogitPool pool;
        for (int i = 0; i < B; ++i) {
            const auto& ex = batch.examples[static_cast<std::size_t>(i)];
            if (ex.msg_full_mask || ex.mlm_positions.empty()) continue;
            Tensor rows = select_rows(enc[static_cast<std::size_t>(i)].w_e, ex.mlm_positions);
            pool.append(linear_head(rows, query.mlm_w, query.mlm_b), ex.mlm_labels);
        }
        bundle.mlm = mean_cross_entropy_or_zero(pool.logits, pool.targets);
    } else {
        bundle.mlm = zero;
    }

    // MSOM
    if (flags.msom) {
        LogitPool pool;
        for (int i = 0; i < B; ++i) {
            const auto& ex = batch.examples[static_cast<std::size_t>(i)];
            if (!ex.msom_applied) continue;
            if (ex.msom_label < 0 || ex.msom_label >= 6) {
                throw std::runtime_error("msom: label " + std::to_string(ex.msom_label) + " out of range [0,6)");
            }
            pool.append(linear_head(enc[static_cast<std::size_t>(i)].cls, query.msom_w, query.msom_b),
                        {ex.msom_label});
        }
        bundle.msom = mean_cross_entropy_or_zero(pool.logits, pool.targets);
    } else {
        bundle.msom = zero;
    }

    // MFOM
    if (flags.mfom) {
        LogitPool pool;
        for (int i = 0; i < B; ++i) {
            const auto& ex = batch.examples[static_cast<std::size_t>(i)];
            if (ex.mfom_shuffled_positions.empty()) continue;
            for (int idx : ex.mfom_original_indices) {
                if (idx < 0 || idx >= query.cfg.max_frames) {
                    throw std::runtime_error("mfom: original index " + std::to_string(idx) +
                                             " out of range [0," + std::to_string(query.cfg.max_frames) + ")");
                }
            }
            Tensor rows = select_rows(enc[static_cast<std::size_t>(i)].f_e, ex.mfom_shuffled_positions);
            pool.append(linear_head(rows, query.mfom_w, query.mfom_b), ex.mfom_original_indices);
        }
        bundle.mfom = mean_cross_entropy_or_zero(pool.logits, pool.targets);
    } else {
        bundle.mfom = zero;
    }

    // MSG: teacher forcing over the original sentence; the 15% full-mask flag
    // only changes the encoder input, every example contributes.
    if (flags.msg) {
        LogitPool pool;
        for (int i = 0; i < B; ++i) {
            const auto& ex = batch.examples[static_cast<std::size_t>(i)];
            auto [input, target] = msg_teacher_pair(ex.original_token_ids);
            Tensor logits = decode_logits(query, input, enc[static_cast<std::size_t>(i)]);
            pool.append(logits, target);
        }
        bundle.msg = mean_cross_entropy_or_zero(pool.logits, pool.targets);
    } else {
        bundle.msg = zero;
    }

    // intra-MFM: masked-frame encoder outputs through g_theta against the
    // pre-extracted features; negatives are the rest of the mini-batch's
    // original frame features.
    if (flags.intra_mfm) {
        int total_frames = 0;
        for (const auto& r : records) total_frames += r.frame_features.rows();
        MeanAccum acc;
        bool have_terms = false;
        for (int i = 0; i < B; ++i) {
            if (!batch.examples[static_cast<std::size_t>(i)].masked_frame_positions.empty()) have_terms = true;
        }
        if (have_terms && total_frames < 2) {
            throw std::runtime_error("intra_mfm: batch holds a single real frame, no negatives available");
        }
        const int d_f = query.cfg.frame_feature_dim;
        for (int i = 0; i < B; ++i) {
            const auto& ex = batch.examples[static_cast<std::size_t>(i)];
            if (ex.masked_frame_positions.empty()) continue;
            Tensor rows = select_rows(enc[static_cast<std::size_t>(i)].f_e, ex.masked_frame_positions);
            Tensor projected = linear_head(rows, query.gtheta_w, query.gtheta_b);
            for (std::size_t t = 0; t < ex.masked_frame_positions.size(); ++t) {
                const int slot = ex.masked_frame_positions[t];
                Tensor q_vec = slice_rows(projected, static_cast<int>(t), 1);
                Tensor pos = slice_rows(ex.shuffled_frames, slot, 1);
                // All other original frames in the batch, skipping the
                // positive's source row.
                const int src = shuffle_source(ex, slot);
                std::vector<double> neg_data;
                neg_data.reserve(static_cast<std::size_t>(total_frames - 1) * d_f);
                for (int j = 0; j < B; ++j) {
                    const Tensor& f_ori = records[static_cast<std::size_t>(j)].frame_features;
                    for (int r = 0; r < f_ori.rows(); ++r) {
                        if (j == i && r == src) continue;
                        neg_data.insert(neg_data.end(),
                                        f_ori.data().begin() + static_cast<std::size_t>(r) * d_f,
                                        f_ori.data().begin() + static_cast<std::size_t>(r + 1) * d_f);
                    }
                }
                Tensor negs = Tensor::from({total_frames - 1, d_f}, std::move(neg_data));
                acc.add_term(info_nce(q_vec, pos, negs, tau));
            }
        }
        bundle.intra_mfm = acc.mean();
    } else {
        bundle.intra_mfm = zero;
    }

    // inter-MFM: each query frame against a random key frame of the same
    // video, negatives from the frame queue. Skipped while warming up.
    if (flags.inter_mfm && queues.frames && queues.frames->fill() >= cfg.min_negatives) {
        Rng pick = rng.derive(0x696e746572ULL);
        Tensor negs = queues.frames->negatives();
        MeanAccum acc;
        for (int i = 0; i < B; ++i) {
            const int m_real = enc[static_cast<std::size_t>(i)].f_e.rows();
            Rng ex_pick = pick.derive(static_cast<std::uint64_t>(i));
            for (int fidx = 0; fidx < m_real; ++fidx) {
                const int j = ex_pick.uniform_int(m_real);
                Tensor q_vec = slice_rows(enc[static_cast<std::size_t>(i)].f_e, fidx, 1);
                Tensor pos = slice_rows(key_enc[static_cast<std::size_t>(i)].f_e, j, 1);
                acc.add_term(info_nce(q_vec, pos, negs, tau));
            }
        }
        bundle.inter_mfm = acc.mean();
    } else {
        bundle.inter_mfm = zero;
    }

    // dual-VSA: pooled reps against the key network's opposite-modality reps,
    // negatives from the respective queues. Only matched pairs are used.
    if (flags.dual_vsa && queues.textual && queues.visual &&
        queues.textual->fill() >= cfg.min_negatives && queues.visual->fill() >= cfg.min_negatives) {
        Tensor text_negs = queues.textual->negatives();
        Tensor vis_negs = queues.visual->negatives();
        MeanAccum v2t, t2v;
        for (int i = 0; i < B; ++i) {
            v2t.add_term(info_nce(enc[static_cast<std::size_t>(i)].r_v,
                                  key_enc[static_cast<std::size_t>(i)].r_t, text_negs, tau));
            t2v.add_term(info_nce(enc[static_cast<std::size_t>(i)].r_t,
                                  key_enc[static_cast<std::size_t>(i)].r_v, vis_negs, tau));
        }
        bundle.vsa_v2t = v2t.mean();
        bundle.vsa_t2v = t2v.mean();
    } else {
        bundle.vsa_v2t = zero;
        bundle.vsa_t2v = zero;
    }

    // Legacy VSA ablation: binary matched/mismatched classification on [CLS]
    // with sampled mismatched pairs.
    if (flags.legacy_vsa) {
        Rng pick = rng.derive(0x767361ULL);
        LogitPool pool;
        for (int i = 0; i < B; ++i) {
            const bool mismatch = B > 1 && pick.uniform() < 0.5;
            Tensor cls;
            if (mismatch) {
                int j = pick.uniform_int(B - 1);
                if (j >= i) ++j;
                TextInput text = make_text_input(batch.examples[static_cast<std::size_t>(i)].masked_token_ids);
                FrameInput frames;
                frames.features = records[static_cast<std::size_t>(j)].frame_features;
                frames.real.assign(static_cast<std::size_t>(frames.features.rows()), 1);
                cls = encode_pair(query, text, frames).cls;
            } else {
                cls = enc[static_cast<std::size_t>(i)].cls;
            }
            pool.append(linear_head(cls, query.vsa_bin_w, query.vsa_bin_b), {mismatch ? 0 : 1});
        }
        bundle.legacy_vsa = mean_cross_entropy_or_zero(pool.logits, pool.targets);
    } else {
        bundle.legacy_vsa = zero;
    }

    // Unweighted sum of the enabled components.
    Tensor total;
    const auto fold = [&total](bool on, const Tensor& t) {
        if (!on) return;
        total = total.defined() ? add(total, t) : t;
    };
    fold(flags.mlm, bundle.mlm);
    fold(flags.msom, bundle.msom);
    fold(flags.mfom, bundle.mfom);
    fold(flags.msg, bundle.msg);
    fold(flags.intra_mfm, bundle.intra_mfm);
    fold(flags.inter_mfm, bundle.inter_mfm);
    fold(flags.dual_vsa, bundle.vsa_v2t);
    fold(flags.dual_vsa, bundle.vsa_t2v);
    fold(flags.legacy_vsa, bundle.legacy_vsa);
    bundle.total = total;

    if (query_enc_out) *query_enc_out = std::move(enc);
    return bundle;
}

}   // namespace vlpt
