#include "vlpt/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vlpt {

namespace {

constexpr std::array<std::array<int, 3>, 6> kS3 = {{
    {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0},
}};

bool structural(int id) { return id == kPad || id == kCls || id == kSep; }

}   // namespace

int mask_count(double rate, int count) {
    if (count <= 0 || rate <= 0.0) return 0;
    return static_cast<int>(std::ceil(rate * count - 1e-9));
}

std::pair<std::vector<int>, std::vector<int>> mask_tokens(std::vector<int>& token_ids, double rate,
                                                          Rng& rng) {
    std::vector<int> candidates;
    for (std::size_t i = 0; i < token_ids.size(); ++i)
        if (!structural(token_ids[i])) candidates.push_back(static_cast<int>(i));
    const int k = mask_count(rate, static_cast<int>(candidates.size()));
    std::vector<int> picks = rng.sample_without_replacement(static_cast<int>(candidates.size()), k);
    std::vector<int> positions, labels;
    for (int p : picks) {
        const int pos = candidates[static_cast<std::size_t>(p)];
        positions.push_back(pos);
        labels.push_back(token_ids[static_cast<std::size_t>(pos)]);
        token_ids[static_cast<std::size_t>(pos)] = kMask;
    }
    return {std::move(positions), std::move(labels)};
}

int msom_permutation_label(const std::array<int, 3>& perm) {
    for (int i = 0; i < 6; ++i)
        if (kS3[static_cast<std::size_t>(i)] == perm) return i;
    throw std::runtime_error("msom: not a permutation of {0,1,2}");
}

std::array<int, 3> msom_permutation_from_label(int label) {
    if (label < 0 || label >= 6) {
        throw std::runtime_error("msom: label " + std::to_string(label) + " out of range [0,6)");
    }
    return kS3[static_cast<std::size_t>(label)];
}

bool shuffle_sentence_segments(std::vector<int>& token_ids, Rng& rng, int* label) {
    // Contiguous real-token span; CLS/SEP/PAD stay fixed.
    int first = -1, last = -1;
    for (std::size_t i = 0; i < token_ids.size(); ++i) {
        if (!structural(token_ids[i])) {
            if (first < 0) first = static_cast<int>(i);
            last = static_cast<int>(i);
        }
    }
    const int n_real = first < 0 ? 0 : last - first + 1;
    if (n_real < 3) return false;

    std::vector<int> cuts = rng.sample_without_replacement(n_real - 1, 2);
    const int c1 = cuts[0] + 1, c2 = cuts[1] + 1;   // boundaries within the span
    const int chosen = rng.uniform_int(6);
    const auto perm = msom_permutation_from_label(chosen);

    std::vector<std::vector<int>> segs(3);
    segs[0].assign(token_ids.begin() + first, token_ids.begin() + first + c1);
    segs[1].assign(token_ids.begin() + first + c1, token_ids.begin() + first + c2);
    segs[2].assign(token_ids.begin() + first + c2, token_ids.begin() + first + n_real);

    int out = first;
    for (int slot = 0; slot < 3; ++slot) {
        const auto& seg = segs[static_cast<std::size_t>(perm[static_cast<std::size_t>(slot)])];
        for (int id : seg) token_ids[static_cast<std::size_t>(out++)] = id;
    }
    if (label) *label = chosen;
    return true;
}

FrameShuffle shuffle_frames(const Tensor& frame_features, double rate, Rng& rng) {
    FrameShuffle out;
    const int m = frame_features.rows();
    const int d = frame_features.cols();
    out.features = Tensor::from(frame_features.shape(), frame_features.data());
    if (m < 2) return out;
    const int k = mask_count(rate, m);
    std::vector<int> slots = rng.sample_without_replacement(m, k);
    std::vector<int> perm(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm);
    for (int i = 0; i < k; ++i) {
        const int dst = slots[static_cast<std::size_t>(i)];
        const int src = slots[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
        std::copy_n(frame_features.data().begin() + static_cast<std::size_t>(src) * d, d,
                    out.features.data().begin() + static_cast<std::size_t>(dst) * d);
        out.shuffled_positions.push_back(dst);
        out.original_indices.push_back(src);
    }
    return out;
}

std::pair<Tensor, std::vector<int>> mask_frames(const Tensor& frame_features, double rate, Rng& rng) {
    const int m = frame_features.rows();
    const int d = frame_features.cols();
    Tensor out = Tensor::from(frame_features.shape(), frame_features.data());
    const int k = mask_count(rate, m);
    std::vector<int> picks = rng.sample_without_replacement(m, k);
    for (int p : picks)
        std::fill_n(out.data().begin() + static_cast<std::size_t>(p) * d, d, 0.0);
    return {std::move(out), std::move(picks)};
}

std::vector<char> select_full_mask(int batch_size, double rate, Rng& rng) {
    std::vector<char> flags(static_cast<std::size_t>(batch_size), 0);
    const int k = mask_count(rate, batch_size);
    for (int p : rng.sample_without_replacement(batch_size, k)) flags[static_cast<std::size_t>(p)] = 1;
    return flags;
}

AugmentedBatch augment_batch(const std::vector<VideoTextRecord>& records, const TrainConfig& cfg,
                             const Rng& rng) {
    const int batch = static_cast<int>(records.size());
    Rng sel_rng = rng.derive(0);
    std::vector<char> msom_selected = select_full_mask(batch, cfg.sentence_shuffle_rate, sel_rng);
    Rng msg_rng = rng.derive(1);
    std::vector<char> msg_flags = select_full_mask(batch, cfg.sentence_full_mask_rate, msg_rng);

    AugmentedBatch out;
    for (int i = 0; i < batch; ++i) {
        const auto& rec = records[static_cast<std::size_t>(i)];
        AugmentedExample ex;
        ex.original_token_ids = rec.token_ids;
        ex.original_frames = rec.frame_features;

        Rng trng = rng.derive(100 + static_cast<std::uint64_t>(i));
        std::vector<int> tokens = rec.token_ids;
        if (msom_selected[static_cast<std::size_t>(i)]) {
            ex.msom_applied = shuffle_sentence_segments(tokens, trng, &ex.msom_label);
        }
        auto [mlm_pos, mlm_lab] = mask_tokens(tokens, cfg.token_mask_rate, trng);
        ex.mlm_positions = std::move(mlm_pos);
        ex.mlm_labels = std::move(mlm_lab);
        if (msg_flags[static_cast<std::size_t>(i)]) {
            // Full mask supersedes MLM for this example.
            ex.msg_full_mask = true;
            ex.mlm_positions.clear();
            ex.mlm_labels.clear();
            for (auto& id : tokens)
                if (!structural(id)) id = kMask;
        }
        ex.masked_token_ids = std::move(tokens);

        Rng frng = rng.derive(10000 + static_cast<std::uint64_t>(i));
        FrameShuffle fs = shuffle_frames(rec.frame_features, cfg.frame_shuffle_rate, frng);
        ex.shuffled_frames = fs.features;
        ex.mfom_shuffled_positions = std::move(fs.shuffled_positions);
        ex.mfom_original_indices = std::move(fs.original_indices);
        auto [masked_frames, mask_pos] = mask_frames(fs.features, cfg.frame_mask_rate, frng);
        ex.augmented_frames = std::move(masked_frames);
        ex.masked_frame_positions = std::move(mask_pos);

        out.examples.push_back(std::move(ex));
    }
    return out;
}

}   // namespace vlpt
