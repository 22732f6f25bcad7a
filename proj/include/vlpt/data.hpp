#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlpt/tensor.hpp"

namespace vlpt {

// One video-text pair at the feature level: token ids plus per-frame
// pre-extracted feature vectors, with optional labels and caption target.
struct VideoTextRecord {
    std::string id;
    std::vector<int> token_ids;            // begins [CLS], ends [SEP]
    Tensor frame_features;                 // m_real x D_f
    int plot_label = -1;
    int top_cate = -1;
    int leaf_cate = -1;
    std::vector<double> product_image;     // empty or D_f
    std::vector<int> abstract_token_ids;   // empty or a [CLS]...[SEP] sequence
};

struct DatasetHeader {
    int version = 1;
    int vocab_size = 0;
    int frame_feature_dim = 0;
    int max_tokens = 0;
    int max_frames = 0;
    int record_count = 0;
};

struct Dataset {
    DatasetHeader header;
    std::vector<VideoTextRecord> records;
};

// File layout: one JSON header line describing dims, then length-prefixed
// little-endian binary records.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

struct SyntheticSpec {
    int vocab_size = 64;
    int num_records = 32;
    int topics = 4;
    double noise = 0.05;
    std::uint64_t seed = 1;
    int frame_feature_dim = 32;
    int max_tokens = 16;
    int max_frames = 8;
};

// Records whose tokens and frame features share a per-record latent topic:
// frames are topic-centroid + noise, tokens come from a topic-conditional
// vocabulary slice, labels equal the topic.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Plain-text key=value spec file; unknown keys are errors.
SyntheticSpec parse_synthetic_spec_text(const std::string& text);
SyntheticSpec load_synthetic_spec(const std::string& path);

int count_real_tokens(const std::vector<int>& token_ids);   // excludes CLS/SEP/PAD

}   // namespace vlpt
