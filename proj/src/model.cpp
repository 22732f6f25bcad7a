#include "vlpt/model.hpp"

#include <cmath>
#include <stdexcept>

#include "vlpt/rng.hpp"

namespace vlpt {

namespace {

constexpr double kAttnMask = -1e9;

Tensor init_weight(Rng& rng, int rows, int cols, double stddev = 0.02) {
    Tensor t = Tensor::zeros({rows, cols}, true);
    for (double& x : t.data()) x = rng.normal(0.0, stddev);
    return t;
}

Tensor init_zeros(int rows, int cols) { return Tensor::zeros({rows, cols}, true); }

Tensor init_ones(int cols) {
    Tensor t = Tensor::zeros({1, cols}, true);
    for (double& x : t.data()) x = 1.0;
    return t;
}

AttentionParams init_attention(Rng& rng, int d) {
    AttentionParams a;
    a.wq = init_weight(rng, d, d);
    a.bq = init_zeros(1, d);
    a.wk = init_weight(rng, d, d);
    a.bk = init_zeros(1, d);
    a.wv = init_weight(rng, d, d);
    a.bv = init_zeros(1, d);
    a.wo = init_weight(rng, d, d);
    a.bo = init_zeros(1, d);
    return a;
}

void init_ffn(Rng& rng, int d, int mult, Tensor& w1, Tensor& b1, Tensor& w2, Tensor& b2) {
    w1 = init_weight(rng, d, d * mult);
    b1 = init_zeros(1, d * mult);
    w2 = init_weight(rng, d * mult, d);
    b2 = init_zeros(1, d);
}

Tensor cp(const Tensor& t) {
    if (!t.defined()) return Tensor();
    return Tensor::from(t.shape(), t.data(), t.requires_grad());
}

Tensor cp_detached(const Tensor& t) {
    if (!t.defined()) return Tensor();
    return Tensor::from(t.shape(), t.data(), false);
}

AttentionParams cp_attn(const AttentionParams& a, Tensor (*f)(const Tensor&)) {
    return AttentionParams{f(a.wq), f(a.bq), f(a.wk), f(a.bk), f(a.wv), f(a.bv), f(a.wo), f(a.bo)};
}

// Multi-head attention; bias is a constant rows(q) x rows(kv) additive mask.
Tensor attention(const AttentionParams& p, const Tensor& q_in, const Tensor& kv_in,
                 const Tensor& bias, int heads) {
    const int d = q_in.cols();
    const int dh = d / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor q = add_rowvec(matmul(q_in, p.wq), p.bq);
    Tensor k = add_rowvec(matmul(kv_in, p.wk), p.bk);
    Tensor v = add_rowvec(matmul(kv_in, p.wv), p.bv);
    Tensor merged;
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh);
        Tensor kh = slice_cols(k, h * dh, dh);
        Tensor vh = slice_cols(v, h * dh, dh);
        Tensor scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt_dh), bias);
        Tensor probs = softmax_rows(scores);
        Tensor oh = matmul(probs, vh);
        merged = h == 0 ? oh : concat_cols(merged, oh);
    }
    return add_rowvec(matmul(merged, p.wo), p.bo);
}

Tensor ffn(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
    return add_rowvec(matmul(gelu(add_rowvec(matmul(x, w1), b1)), w2), b2);
}

// Additive key mask: kAttnMask on padded key positions.
Tensor key_mask_bias(int q_rows, const std::vector<char>& key_real) {
    const int k_rows = static_cast<int>(key_real.size());
    Tensor bias = Tensor::zeros({q_rows, k_rows}, false);
    for (int r = 0; r < q_rows; ++r)
        for (int c = 0; c < k_rows; ++c)
            if (!key_real[static_cast<std::size_t>(c)]) bias.at(r, c) = kAttnMask;
    return bias;
}

Tensor causal_bias(int t) {
    Tensor bias = Tensor::zeros({t, t}, false);
    for (int r = 0; r < t; ++r)
        for (int c = r + 1; c < t; ++c) bias.at(r, c) = kAttnMask;
    return bias;
}

}   // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    Rng rng(Rng::mix(seed, 0x6d6f64656cULL));
    const int d = cfg.hidden_size;
    p.token_emb = init_weight(rng, cfg.vocab_size, d);
    p.text_pos = init_weight(rng, cfg.max_tokens, d);
    p.frame_pos = init_weight(rng, cfg.max_frames, d);
    p.frame_proj_w = init_weight(rng, cfg.frame_feature_dim, d);
    p.frame_proj_b = init_zeros(1, d);
    p.text_emb_ln_g = init_ones(d);
    p.text_emb_ln_b = init_zeros(1, d);
    p.frame_emb_ln_g = init_ones(d);
    p.frame_emb_ln_b = init_zeros(1, d);
    for (int i = 0; i < cfg.encoder_blocks; ++i) {
        EncoderBlockParams b;
        b.ln1_g = init_ones(d);
        b.ln1_b = init_zeros(1, d);
        b.attn = init_attention(rng, d);
        b.ln2_g = init_ones(d);
        b.ln2_b = init_zeros(1, d);
        init_ffn(rng, d, cfg.ff_mult, b.ff_w1, b.ff_b1, b.ff_w2, b.ff_b2);
        p.encoder.push_back(std::move(b));
    }
    p.enc_ln_g = init_ones(d);
    p.enc_ln_b = init_zeros(1, d);
    for (int i = 0; i < cfg.decoder_blocks; ++i) {
        DecoderBlockParams b;
        b.ln1_g = init_ones(d);
        b.ln1_b = init_zeros(1, d);
        b.self_attn = init_attention(rng, d);
        b.lnc_g = init_ones(d);
        b.lnc_b = init_zeros(1, d);
        b.cross_attn = init_attention(rng, d);
        b.ln2_g = init_ones(d);
        b.ln2_b = init_zeros(1, d);
        init_ffn(rng, d, cfg.ff_mult, b.ff_w1, b.ff_b1, b.ff_w2, b.ff_b2);
        p.decoder.push_back(std::move(b));
    }
    p.dec_ln_g = init_ones(d);
    p.dec_ln_b = init_zeros(1, d);
    if (!cfg.tie_decoder_head) p.dec_head_w = init_weight(rng, d, cfg.vocab_size);
    p.dec_head_b = init_zeros(1, cfg.vocab_size);
    p.mlm_w = init_weight(rng, d, cfg.vocab_size);
    p.mlm_b = init_zeros(1, cfg.vocab_size);
    p.msom_w = init_weight(rng, d, 6);
    p.msom_b = init_zeros(1, 6);
    p.mfom_w = init_weight(rng, d, cfg.max_frames);
    p.mfom_b = init_zeros(1, cfg.max_frames);
    p.gtheta_w = init_weight(rng, d, cfg.frame_feature_dim);
    p.gtheta_b = init_zeros(1, cfg.frame_feature_dim);
    p.vsa_bin_w = init_weight(rng, d, 2);
    p.vsa_bin_b = init_zeros(1, 2);
    return p;
}

void ModelParams::ensure_plot_head(int classes, std::uint64_t seed) {
    if (cls_plot_w.defined()) return;
    Rng rng(Rng::mix(seed, 0x706c6f74ULL));
    cls_plot_w = init_weight(rng, cfg.hidden_size, classes);
    cls_plot_b = init_zeros(1, classes);
}

void ModelParams::ensure_product_heads(int top_classes, int leaf_classes, std::uint64_t seed) {
    if (cls_top_w.defined()) return;
    Rng rng(Rng::mix(seed, 0x70726f64ULL));
    cls_top_w = init_weight(rng, cfg.hidden_size, top_classes);
    cls_top_b = init_zeros(1, top_classes);
    cls_leaf_w = init_weight(rng, cfg.hidden_size, leaf_classes);
    cls_leaf_b = init_zeros(1, leaf_classes);
}

NamedParams ModelParams::named() const {
    NamedParams out;
    const auto add = [&out](const std::string& name, const Tensor& t) {
        if (t.defined()) out.emplace_back(name, t);
    };
    add("embed.token", token_emb);
    add("embed.text_pos", text_pos);
    add("embed.frame_pos", frame_pos);
    add("embed.frame_proj.w", frame_proj_w);
    add("embed.frame_proj.b", frame_proj_b);
    add("embed.text_ln.g", text_emb_ln_g);
    add("embed.text_ln.b", text_emb_ln_b);
    add("embed.frame_ln.g", frame_emb_ln_g);
    add("embed.frame_ln.b", frame_emb_ln_b);
    const auto add_attn = [&add](const std::string& pfx, const AttentionParams& a) {
        add(pfx + ".wq", a.wq);
        add(pfx + ".bq", a.bq);
        add(pfx + ".wk", a.wk);
        add(pfx + ".bk", a.bk);
        add(pfx + ".wv", a.wv);
        add(pfx + ".bv", a.bv);
        add(pfx + ".wo", a.wo);
        add(pfx + ".bo", a.bo);
    };
    for (std::size_t i = 0; i < encoder.size(); ++i) {
        const std::string pfx = "enc." + std::to_string(i);
        const auto& b = encoder[i];
        add(pfx + ".ln1.g", b.ln1_g);
        add(pfx + ".ln1.b", b.ln1_b);
        add_attn(pfx + ".attn", b.attn);
        add(pfx + ".ln2.g", b.ln2_g);
        add(pfx + ".ln2.b", b.ln2_b);
        add(pfx + ".ff.w1", b.ff_w1);
        add(pfx + ".ff.b1", b.ff_b1);
        add(pfx + ".ff.w2", b.ff_w2);
        add(pfx + ".ff.b2", b.ff_b2);
    }
    add("enc.final_ln.g", enc_ln_g);
    add("enc.final_ln.b", enc_ln_b);
    for (std::size_t i = 0; i < decoder.size(); ++i) {
        const std::string pfx = "dec." + std::to_string(i);
        const auto& b = decoder[i];
        add(pfx + ".ln1.g", b.ln1_g);
        add(pfx + ".ln1.b", b.ln1_b);
        add_attn(pfx + ".self_attn", b.self_attn);
        add(pfx + ".lnc.g", b.lnc_g);
        add(pfx + ".lnc.b", b.lnc_b);
        add_attn(pfx + ".cross_attn", b.cross_attn);
        add(pfx + ".ln2.g", b.ln2_g);
        add(pfx + ".ln2.b", b.ln2_b);
        add(pfx + ".ff.w1", b.ff_w1);
        add(pfx + ".ff.b1", b.ff_b1);
        add(pfx + ".ff.w2", b.ff_w2);
        add(pfx + ".ff.b2", b.ff_b2);
    }
    add("dec.final_ln.g", dec_ln_g);
    add("dec.final_ln.b", dec_ln_b);
    add("dec.head.w", dec_head_w);
    add("dec.head.b", dec_head_b);
    add("head.mlm.w", mlm_w);
    add("head.mlm.b", mlm_b);
    add("head.msom.w", msom_w);
    add("head.msom.b", msom_b);
    add("head.mfom.w", mfom_w);
    add("head.mfom.b", mfom_b);
    add("head.gtheta.w", gtheta_w);
    add("head.gtheta.b", gtheta_b);
    add("head.vsa_bin.w", vsa_bin_w);
    add("head.vsa_bin.b", vsa_bin_b);
    add("head.plot.w", cls_plot_w);
    add("head.plot.b", cls_plot_b);
    add("head.top.w", cls_top_w);
    add("head.top.b", cls_top_b);
    add("head.leaf.w", cls_leaf_w);
    add("head.leaf.b", cls_leaf_b);
    return out;
}

bool ModelParams::is_encoder_path(const std::string& name) {
    return name.rfind("embed.", 0) == 0 || name.rfind("enc.", 0) == 0;
}

ModelParams ModelParams::clone() const {
    ModelParams p;
    p.cfg = cfg;
    p.token_emb = cp(token_emb);
    p.text_pos = cp(text_pos);
    p.frame_pos = cp(frame_pos);
    p.frame_proj_w = cp(frame_proj_w);
    p.frame_proj_b = cp(frame_proj_b);
    p.text_emb_ln_g = cp(text_emb_ln_g);
    p.text_emb_ln_b = cp(text_emb_ln_b);
    p.frame_emb_ln_g = cp(frame_emb_ln_g);
    p.frame_emb_ln_b = cp(frame_emb_ln_b);
    for (const auto& b : encoder) {
        p.encoder.push_back(EncoderBlockParams{cp(b.ln1_g), cp(b.ln1_b), cp_attn(b.attn, cp),
                                               cp(b.ln2_g), cp(b.ln2_b), cp(b.ff_w1), cp(b.ff_b1),
                                               cp(b.ff_w2), cp(b.ff_b2)});
    }
    p.enc_ln_g = cp(enc_ln_g);
    p.enc_ln_b = cp(enc_ln_b);
    for (const auto& b : decoder) {
        p.decoder.push_back(DecoderBlockParams{cp(b.ln1_g), cp(b.ln1_b), cp_attn(b.self_attn, cp),
                                               cp(b.lnc_g), cp(b.lnc_b), cp_attn(b.cross_attn, cp),
                                               cp(b.ln2_g), cp(b.ln2_b), cp(b.ff_w1), cp(b.ff_b1),
                                               cp(b.ff_w2), cp(b.ff_b2)});
    }
    p.dec_ln_g = cp(dec_ln_g);
    p.dec_ln_b = cp(dec_ln_b);
    p.dec_head_w = cp(dec_head_w);
    p.dec_head_b = cp(dec_head_b);
    p.mlm_w = cp(mlm_w);
    p.mlm_b = cp(mlm_b);
    p.msom_w = cp(msom_w);
    p.msom_b = cp(msom_b);
    p.mfom_w = cp(mfom_w);
    p.mfom_b = cp(mfom_b);
    p.gtheta_w = cp(gtheta_w);
    p.gtheta_b = cp(gtheta_b);
    p.vsa_bin_w = cp(vsa_bin_w);
    p.vsa_bin_b = cp(vsa_bin_b);
    p.cls_plot_w = cp(cls_plot_w);
    p.cls_plot_b = cp(cls_plot_b);
    p.cls_top_w = cp(cls_top_w);
    p.cls_top_b = cp(cls_top_b);
    p.cls_leaf_w = cp(cls_leaf_w);
    p.cls_leaf_b = cp(cls_leaf_b);
    return p;
}

ModelParams ModelParams::encoder_path_clone() const {
    ModelParams p;
    p.cfg = cfg;
    p.token_emb = cp_detached(token_emb);
    p.text_pos = cp_detached(text_pos);
    p.frame_pos = cp_detached(frame_pos);
    p.frame_proj_w = cp_detached(frame_proj_w);
    p.frame_proj_b = cp_detached(frame_proj_b);
    p.text_emb_ln_g = cp_detached(text_emb_ln_g);
    p.text_emb_ln_b = cp_detached(text_emb_ln_b);
    p.frame_emb_ln_g = cp_detached(frame_emb_ln_g);
    p.frame_emb_ln_b = cp_detached(frame_emb_ln_b);
    for (const auto& b : encoder) {
        p.encoder.push_back(EncoderBlockParams{cp_detached(b.ln1_g), cp_detached(b.ln1_b),
                                               cp_attn(b.attn, cp_detached), cp_detached(b.ln2_g),
                                               cp_detached(b.ln2_b), cp_detached(b.ff_w1),
                                               cp_detached(b.ff_b1), cp_detached(b.ff_w2),
                                               cp_detached(b.ff_b2)});
    }
    p.enc_ln_g = cp_detached(enc_ln_g);
    p.enc_ln_b = cp_detached(enc_ln_b);
    return p;
}

TextInput make_text_input(std::vector<int> token_ids) {
    TextInput in;
    in.real.resize(token_ids.size());
    for (std::size_t i = 0; i < token_ids.size(); ++i) in.real[i] = token_ids[i] != kPad;
    in.token_ids = std::move(token_ids);
    return in;
}

Tensor embed_text(const ModelParams& p, const std::vector<int>& token_ids) {
    const int t = static_cast<int>(token_ids.size());
    if (t > p.cfg.max_tokens) {
        throw std::runtime_error("embed_text: " + std::to_string(t) + " tokens exceed max_tokens " +
                                 std::to_string(p.cfg.max_tokens));
    }
    Tensor tok = embedding_lookup(p.token_emb, token_ids);
    Tensor pos = slice_rows(p.text_pos, 0, t);
    return layernorm_rows(add(tok, pos), p.text_emb_ln_g, p.text_emb_ln_b);
}

Tensor embed_frames(const ModelParams& p, const Tensor& features) {
    if (features.cols() != p.cfg.frame_feature_dim) {
        throw std::runtime_error("embed_frames: feature dim " + std::to_string(features.cols()) +
                                 " != configured " + std::to_string(p.cfg.frame_feature_dim));
    }
    const int m = features.rows();
    if (m > p.cfg.max_frames) {
        throw std::runtime_error("embed_frames: " + std::to_string(m) + " frames exceed max_frames " +
                                 std::to_string(p.cfg.max_frames));
    }
    Tensor proj = add_rowvec(matmul(features, p.frame_proj_w), p.frame_proj_b);
    Tensor pos = slice_rows(p.frame_pos, 0, m);
    return layernorm_rows(add(proj, pos), p.frame_emb_ln_g, p.frame_emb_ln_b);
}

EncodedPair encode_pair(const ModelParams& p, const TextInput& text, const FrameInput& frames) {
    if (text.token_ids.size() != text.real.size() ||
        static_cast<std::size_t>(frames.features.rows()) != frames.real.size()) {
        throw std::runtime_error("encode_pair: mask length does not match input length");
    }
    const int t = static_cast<int>(text.token_ids.size());
    const int f = frames.features.rows();
    Tensor w = embed_text(p, text.token_ids);
    Tensor fr = embed_frames(p, frames.features);
    Tensor x = concat_rows(w, fr);

    std::vector<char> joint_real(text.real);
    joint_real.insert(joint_real.end(), frames.real.begin(), frames.real.end());
    Tensor bias = key_mask_bias(t + f, joint_real);

    for (const auto& b : p.encoder) {
        Tensor normed = layernorm_rows(x, b.ln1_g, b.ln1_b);
        x = add(x, attention(b.attn, normed, normed, bias, p.cfg.heads));
        x = add(x, ffn(layernorm_rows(x, b.ln2_g, b.ln2_b), b.ff_w1, b.ff_b1, b.ff_w2, b.ff_b2));
    }
    x = layernorm_rows(x, p.enc_ln_g, p.enc_ln_b);

    EncodedPair out;
    out.w_e = slice_rows(x, 0, t);
    out.f_e = slice_rows(x, t, f);
    out.cls = slice_rows(x, 0, 1);
    out.text_real = text.real;
    out.frame_real = frames.real;

    // Content tokens only: CLS, SEP, and pads are structural.
    std::vector<char> content(text.real);
    bool any = false;
    for (int i = 0; i < t; ++i) {
        if (i == 0 || text.token_ids[static_cast<std::size_t>(i)] == kSep) content[static_cast<std::size_t>(i)] = 0;
        any = any || content[static_cast<std::size_t>(i)];
    }
    if (!any) {
        // Degenerate sentence with no content tokens: pool over real tokens.
        content = text.real;
    }
    out.r_t = masked_max_rows(out.w_e, content);
    out.r_v = masked_max_rows(out.f_e, frames.real);
    return out;
}

Tensor decode_logits(const ModelParams& p, const std::vector<int>& prev_token_ids,
                     const EncodedPair& ctx) {
    const int t = static_cast<int>(prev_token_ids.size());
    if (t > p.cfg.max_tokens) {
        throw std::runtime_error("decode_logits: " + std::to_string(t) + " tokens exceed max_tokens " +
                                 std::to_string(p.cfg.max_tokens));
    }
    if (p.decoder.empty()) throw std::runtime_error("decode_logits: model has no decoder");

    Tensor context = ctx.f_e;
    std::vector<char> ctx_real = ctx.frame_real;
    if (p.cfg.decoder_cross_attends_text) {
        context = concat_rows(ctx.w_e, ctx.f_e);
        ctx_real = ctx.text_real;
        ctx_real.insert(ctx_real.end(), ctx.frame_real.begin(), ctx.frame_real.end());
    }

    Tensor y = embed_text(p, prev_token_ids);
    Tensor self_bias = causal_bias(t);
    Tensor cross_bias = key_mask_bias(t, ctx_real);
    for (const auto& b : p.decoder) {
        Tensor normed = layernorm_rows(y, b.ln1_g, b.ln1_b);
        y = add(y, attention(b.self_attn, normed, normed, self_bias, p.cfg.heads));
        y = add(y, attention(b.cross_attn, layernorm_rows(y, b.lnc_g, b.lnc_b), context, cross_bias,
                             p.cfg.heads));
        y = add(y, ffn(layernorm_rows(y, b.ln2_g, b.ln2_b), b.ff_w1, b.ff_b1, b.ff_w2, b.ff_b2));
    }
    y = layernorm_rows(y, p.dec_ln_g, p.dec_ln_b);
    if (p.cfg.tie_decoder_head) {
        return add_rowvec(matmul(y, transpose(p.token_emb)), p.dec_head_b);
    }
    return add_rowvec(matmul(y, p.dec_head_w), p.dec_head_b);
}

}   // namespace vlpt
