#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "vlpt/config.hpp"
#include "vlpt/data.hpp"
#include "vlpt/rng.hpp"
#include "vlpt/tensor.hpp"

namespace vlpt {

// Query-network inputs plus supervision labels for the reconstructive tasks.
// Originals are kept untouched for the key network.
struct AugmentedExample {
    std::vector<int> masked_token_ids;
    std::vector<int> mlm_positions;
    std::vector<int> mlm_labels;              // original ids at mlm_positions

    bool msom_applied = false;
    int msom_label = 0;                       // permutation index in lexicographic S3 order

    std::vector<int> mfom_shuffled_positions;
    std::vector<int> mfom_original_indices;   // ground-truth source index per shuffled slot

    std::vector<int> masked_frame_positions;
    bool msg_full_mask = false;

    Tensor augmented_frames;                  // shuffled then zero-masked
    Tensor shuffled_frames;                   // shuffled, pre-mask (intra-MFM positives)

    std::vector<int> original_token_ids;
    Tensor original_frames;
};

struct AugmentedBatch {
    std::vector<AugmentedExample> examples;
};

// Exact-count rule shared by every 15% selection: ceil(rate * count), with a
// tiny slack so rate*count that is mathematically integral does not round up.
int mask_count(double rate, int count);

// MLM masking: structural tokens ([CLS]/[SEP]/[PAD]) are never selectable;
// selected positions are replaced by [MASK], labels keep the originals.
std::pair<std::vector<int>, std::vector<int>> mask_tokens(std::vector<int>& token_ids,
                                                          double rate, Rng& rng);

// MSOM: split the real-token span into 3 segments at uniformly chosen interior
// boundaries and reorder them by a uniform permutation (identity included).
// Returns false (no-op) when fewer than 3 real tokens exist.
bool shuffle_sentence_segments(std::vector<int>& token_ids, Rng& rng, int* label);

int msom_permutation_label(const std::array<int, 3>& perm);
std::array<int, 3> msom_permutation_from_label(int label);

// MFOM: permute ceil(rate * m_real) frames among the selected slots.
struct FrameShuffle {
    Tensor features;
    std::vector<int> shuffled_positions;
    std::vector<int> original_indices;
};
FrameShuffle shuffle_frames(const Tensor& frame_features, double rate, Rng& rng);

// Zero the feature rows of ceil(rate * m_real) frames.
std::pair<Tensor, std::vector<int>> mask_frames(const Tensor& frame_features, double rate, Rng& rng);

// Per-batch flags drawn with the exact-count rule, independently of all other
// selections.
std::vector<char> select_full_mask(int batch_size, double rate, Rng& rng);

// Pipeline order per example: MSOM shuffle, MLM mask, MSG full-mask override
// (supersedes MLM labels), frame shuffle, frame zero-mask.
AugmentedBatch augment_batch(const std::vector<VideoTextRecord>& records, const TrainConfig& cfg,
                             const Rng& rng);

}   // namespace vlpt
