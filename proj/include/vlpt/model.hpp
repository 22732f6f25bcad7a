#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlpt/config.hpp"
#include "vlpt/optimizer.hpp"
#include "vlpt/tensor.hpp"

namespace vlpt {

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderBlockParams {
    Tensor ln1_g, ln1_b;
    AttentionParams attn;
    Tensor ln2_g, ln2_b;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

struct DecoderBlockParams {
    Tensor ln1_g, ln1_b;
    AttentionParams self_attn;
    Tensor lnc_g, lnc_b;
    AttentionParams cross_attn;
    Tensor ln2_g, ln2_b;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

// All named parameter tensors of the network. The key copy carries only the
// encoder path (decoder and task heads stay undefined there).
struct ModelParams {
    ModelConfig cfg;

    Tensor token_emb;                 // V x d
    Tensor text_pos;                  // n x d
    Tensor frame_pos;                 // m x d
    Tensor frame_proj_w, frame_proj_b;
    Tensor text_emb_ln_g, text_emb_ln_b;
    Tensor frame_emb_ln_g, frame_emb_ln_b;
    std::vector<EncoderBlockParams> encoder;
    Tensor enc_ln_g, enc_ln_b;

    std::vector<DecoderBlockParams> decoder;
    Tensor dec_ln_g, dec_ln_b;
    Tensor dec_head_w;                // undefined when tied to token_emb
    Tensor dec_head_b;

    Tensor mlm_w, mlm_b;              // d x V
    Tensor msom_w, msom_b;            // d x 6
    Tensor mfom_w, mfom_b;            // d x m
    Tensor gtheta_w, gtheta_b;        // d x D_f
    Tensor vsa_bin_w, vsa_bin_b;      // d x 2, legacy-VSA ablation head

    // Fine-tuning heads; undefined until requested.
    Tensor cls_plot_w, cls_plot_b;
    Tensor cls_top_w, cls_top_b;
    Tensor cls_leaf_w, cls_leaf_b;

    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

    // Stable (name, tensor) listing of every defined tensor. Handles share
    // storage with the struct fields, so writes through them stick.
    NamedParams named() const;

    // Everything reachable from the encoder forward pass: embedders, encoder
    // blocks, final encoder norm. Excludes decoder and all heads.
    static bool is_encoder_path(const std::string& name);

    void ensure_plot_head(int classes, std::uint64_t seed);
    void ensure_product_heads(int top_classes, int leaf_classes, std::uint64_t seed);

    ModelParams clone() const;
    // Detached copy of the encoder path only, with requires_grad off.
    ModelParams encoder_path_clone() const;
};

struct TextInput {
    std::vector<int> token_ids;    // [CLS] ... [SEP] (+ optional [PAD] tail)
    std::vector<char> real;        // real[i] = token i is not padding
};

struct FrameInput {
    Tensor features;               // rows x D_f, constant
    std::vector<char> real;
};

TextInput make_text_input(std::vector<int> token_ids);

struct EncodedPair {
    Tensor w_e;    // t x d
    Tensor f_e;    // f x d
    Tensor r_t;    // 1 x d, masked max over content tokens (no CLS/SEP/PAD)
    Tensor r_v;    // 1 x d, masked max over real frames
    Tensor cls;    // 1 x d
    std::vector<char> text_real;
    std::vector<char> frame_real;
};

// LN(token_emb + position_emb) per position.
Tensor embed_text(const ModelParams& p, const std::vector<int>& token_ids);
// LN(FC(feature) + frame position emb) per frame row.
Tensor embed_frames(const ModelParams& p, const Tensor& features);

// Bidirectional self-attention over the concatenated [text, frames] sequence;
// pad positions are excluded from attention keys and from the pooled maxima.
EncodedPair encode_pair(const ModelParams& p, const TextInput& text, const FrameInput& frames);

// Causal self-attention over prev tokens plus cross-attention over the encoded
// frames (or the full encoded sequence when configured). Returns t x V logits.
Tensor decode_logits(const ModelParams& p, const std::vector<int>& prev_token_ids,
                     const EncodedPair& ctx);

}   // namespace vlpt
