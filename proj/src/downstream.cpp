#include "vlpt/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "vlpt/objectives.hpp"
#include "vlpt/optimizer.hpp"
#include "vlpt/rng.hpp"

namespace vlpt {

namespace {

EncodedPair encode_record(const ModelParams& p, const VideoTextRecord& rec) {
    TextInput text = make_text_input(rec.token_ids);
    FrameInput frames;
    frames.features = rec.frame_features;
    frames.real.assign(static_cast<std::size_t>(rec.frame_features.rows()), 1);
    return encode_pair(p, text, frames);
}

Tensor replace_first_frame(const VideoTextRecord& rec) {
    const Tensor& f = rec.frame_features;
    if (rec.product_image.empty()) {
        throw std::runtime_error("image retrieval: record '" + rec.id + "' has no product image feature");
    }
    if (static_cast<int>(rec.product_image.size()) != f.cols()) {
        throw std::runtime_error("image retrieval: product image dim mismatch on record '" + rec.id + "'");
    }
    std::vector<double> data = f.data();
    std::copy(rec.product_image.begin(), rec.product_image.end(), data.begin());
    return Tensor::from(f.shape(), std::move(data));
}

EncodedPair encode_image_query(const ModelParams& p, const VideoTextRecord& rec) {
    TextInput text = make_text_input(rec.token_ids);
    FrameInput frames;
    frames.features = replace_first_frame(rec);
    frames.real.assign(static_cast<std::size_t>(frames.features.rows()), 1);
    return encode_pair(p, text, frames);
}

// (query rep, candidate rep) per record for the given protocol.
std::pair<Tensor, Tensor> retrieval_reps(RetrievalMode mode, const ModelParams& p,
                                         const VideoTextRecord& rec) {
    EncodedPair own = encode_record(p, rec);
    if (mode == RetrievalMode::text) return {own.r_t, own.r_v};
    return {encode_image_query(p, rec).r_v, own.r_v};
}

Tensor concat_except(const std::vector<Tensor>& rows, std::size_t skip) {
    Tensor out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i == skip) continue;
        out = out.defined() ? concat_rows(out, rows[i]) : rows[i];
    }
    return out;
}

void adam_step_all(AdamOptimizer& opt, ModelParams& params) {
    NamedParams named = params.named();
    for (auto& [name, t] : named) t.grad();
    opt.step(named);
}

std::vector<std::vector<int>> shuffled_batches(int n, int batch_size, Rng& rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::vector<int>> batches;
    for (int lo = 0; lo < n; lo += batch_size) {
        const int hi = std::min(n, lo + batch_size);
        batches.emplace_back(order.begin() + lo, order.begin() + hi);
    }
    return batches;
}

Tensor head_logits(const Tensor& cls, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(cls, w), b);
}

int argmax_row(const Tensor& logits) {
    const auto& d = logits.data();
    return static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
}

void check_labels(const Dataset& ds, const ClassHeadSpec& spec) {
    for (const auto& r : ds.records) {
        if (!spec.product_dual) {
            if (r.plot_label < 0 || r.plot_label >= spec.plot_classes) {
                throw std::runtime_error("classify: plot label " + std::to_string(r.plot_label) +
                                         " outside [0," + std::to_string(spec.plot_classes) + ") on record '" +
                                         r.id + "'");
            }
        } else {
            if (r.top_cate < 0 || r.top_cate >= spec.top_classes) {
                throw std::runtime_error("classify: top label " + std::to_string(r.top_cate) + " outside [0," +
                                         std::to_string(spec.top_classes) + ") on record '" + r.id + "'");
            }
            if (r.leaf_cate < 0 || r.leaf_cate >= spec.leaf_classes) {
                throw std::runtime_error("classify: leaf label " + std::to_string(r.leaf_cate) + " outside [0," +
                                         std::to_string(spec.leaf_classes) + ") on record '" + r.id + "'");
            }
        }
    }
}

// N-gram counts keyed by the token subsequence.
std::map<std::vector<int>, int> ngram_counts(const std::vector<int>& toks, int n) {
    std::map<std::vector<int>, int> counts;
    for (int i = 0; i + n <= static_cast<int>(toks.size()); ++i) {
        ++counts[std::vector<int>(toks.begin() + i, toks.begin() + i + n)];
    }
    return counts;
}

int lcs_length(const std::vector<int>& a, const std::vector<int>& b) {
    const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size());
    std::vector<int> prev(static_cast<std::size_t>(m) + 1, 0), cur(static_cast<std::size_t>(m) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        for (int j = 1; j <= m; ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[static_cast<std::size_t>(m)];
}

double corpus_bleu(const std::vector<std::vector<int>>& hyps,
                   const std::vector<std::vector<int>>& refs, int max_n) {
    long long hyp_len = 0, ref_len = 0;
    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        long long matched = 0, total = 0;
        for (std::size_t i = 0; i < hyps.size(); ++i) {
            auto hc = ngram_counts(hyps[i], n);
            auto rc = ngram_counts(refs[i], n);
            for (const auto& [gram, count] : hc) {
                total += count;
                auto it = rc.find(gram);
                if (it != rc.end()) matched += std::min(count, it->second);
            }
        }
        if (total == 0 || matched == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total)) / max_n;
    }
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        hyp_len += static_cast<long long>(hyps[i].size());
        ref_len += static_cast<long long>(refs[i].size());
    }
    if (hyp_len == 0) return 0.0;
    const double bp = hyp_len >= ref_len
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return bp * std::exp(log_sum);
}

struct Hypothesis {
    std::vector<int> tokens;     // [CLS] w1 ...
    double log_prob = 0.0;
    bool done = false;

    // Length-normalized score over the generated tokens.
    double score() const {
        const auto generated = tokens.size() - 1;
        return generated == 0 ? 0.0 : log_prob / static_cast<double>(generated);
    }
};

std::vector<double> last_row_log_probs(const Tensor& logits) {
    const int v = logits.cols();
    const int last = logits.rows() - 1;
    std::vector<double> lp(static_cast<std::size_t>(v));
    double mx = logits.at(last, 0);
    for (int j = 1; j < v; ++j) mx = std::max(mx, logits.at(last, j));
    double sum = 0.0;
    for (int j = 0; j < v; ++j) sum += std::exp(logits.at(last, j) - mx);
    const double lse = mx + std::log(sum);
    for (int j = 0; j < v; ++j) lp[static_cast<std::size_t>(j)] = logits.at(last, j) - lse;
    return lp;
}

}   // namespace

double score_pair(const Tensor& query_rep, const Tensor& candidate_rep) {
    if (query_rep.size() != candidate_rep.size()) {
        throw std::runtime_error("score_pair: representation dimensions differ");
    }
    const auto& a = query_rep.data();
    const auto& b = candidate_rep.data();
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw std::runtime_error("score_pair: zero-norm representation");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

void finetune_retrieval(RetrievalMode mode, const Dataset& data, ModelParams& params,
                        const TrainConfig& cfg) {
    if (data.records.empty()) throw std::runtime_error("finetune_retrieval: dataset is empty");
    AdamOptimizer opt(cfg.learning_rate);
    Rng rng(cfg.seed);
    const int n = static_cast<int>(data.records.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng = rng.derive(static_cast<std::uint64_t>(epoch));
        for (const auto& batch : shuffled_batches(n, cfg.batch_size, epoch_rng)) {
            if (batch.size() < 2) continue;   // in-batch negatives need company
            std::vector<Tensor> q, k;
            for (int idx : batch) {
                auto [qr, kr] = retrieval_reps(mode, params, data.records[static_cast<std::size_t>(idx)]);
                q.push_back(qr);
                k.push_back(kr);
            }
            // Symmetric InfoNCE with the rest of the batch as negatives.
            Tensor loss;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                Tensor term = add(info_nce(q[i], k[i], concat_except(k, i), cfg.temperature),
                                  info_nce(k[i], q[i], concat_except(q, i), cfg.temperature));
                loss = loss.defined() ? add(loss, term) : term;
            }
            loss = scale(loss, 1.0 / (2.0 * static_cast<double>(batch.size())));
            backward(loss);
            adam_step_all(opt, params);
        }
    }
}

std::vector<int> retrieval_ranks(RetrievalMode mode, const Dataset& data, const ModelParams& params,
                                 int num_negatives, std::uint64_t seed) {
    const int n = static_cast<int>(data.records.size());
    if (n < 2) throw std::runtime_error("retrieval_ranks: need at least two records");
    if (num_negatives < 1) throw std::runtime_error("retrieval_ranks: need at least one negative");

    std::vector<Tensor> query_reps, cand_reps;
    for (const auto& rec : data.records) {
        auto [qr, kr] = retrieval_reps(mode, params, rec);
        query_reps.push_back(qr.detach());
        cand_reps.push_back(kr.detach());
        Tape::instance().clear();
    }

    Rng rng(seed);
    std::vector<int> ranks;
    for (int i = 0; i < n; ++i) {
        // Candidate list: the positive plus sampled distinct negatives,
        // ordered by record index (the deterministic tie-break).
        std::vector<int> cands{i};
        Rng pick = rng.derive(static_cast<std::uint64_t>(i));
        std::vector<int> pool;
        for (int j = 0; j < n; ++j) {
            if (j != i) pool.push_back(j);
        }
        pick.shuffle(pool);
        const int take = std::min(num_negatives, static_cast<int>(pool.size()));
        cands.insert(cands.end(), pool.begin(), pool.begin() + take);
        std::sort(cands.begin(), cands.end());

        const double pos_score = score_pair(query_reps[static_cast<std::size_t>(i)],
                                            cand_reps[static_cast<std::size_t>(i)]);
        int rank = 1;
        for (int c : cands) {
            if (c == i) continue;
            const double s = score_pair(query_reps[static_cast<std::size_t>(i)],
                                        cand_reps[static_cast<std::size_t>(c)]);
            if (s > pos_score || (s == pos_score && c < i)) ++rank;
        }
        ranks.push_back(rank);
    }
    return ranks;
}

double recall_at_k(const std::vector<int>& positive_ranks, int k) {
    if (k < 1) throw std::runtime_error("recall_at_k: k must be >= 1");
    if (positive_ranks.empty()) throw std::runtime_error("recall_at_k: no queries");
    int hits = 0;
    for (int r : positive_ranks) {
        if (r <= k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(positive_ranks.size());
}

ClassifyResult finetune_classify(const ClassHeadSpec& spec, const Dataset& train,
                                 const Dataset& eval, ModelParams& params, const TrainConfig& cfg) {
    if (train.records.empty()) throw std::runtime_error("finetune_classify: training set is empty");
    check_labels(train, spec);
    check_labels(eval, spec);
    if (!spec.product_dual) {
        params.ensure_plot_head(spec.plot_classes, cfg.seed);
    } else {
        params.ensure_product_heads(spec.top_classes, spec.leaf_classes, cfg.seed);
    }

    AdamOptimizer opt(cfg.learning_rate);
    Rng rng(cfg.seed);
    const int n = static_cast<int>(train.records.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng = rng.derive(static_cast<std::uint64_t>(epoch));
        for (const auto& batch : shuffled_batches(n, cfg.batch_size, epoch_rng)) {
            Tensor cls;
            std::vector<int> plot, top, leaf;
            for (int idx : batch) {
                const auto& rec = train.records[static_cast<std::size_t>(idx)];
                Tensor c = encode_record(params, rec).cls;
                cls = cls.defined() ? concat_rows(cls, c) : c;
                plot.push_back(rec.plot_label);
                top.push_back(rec.top_cate);
                leaf.push_back(rec.leaf_cate);
            }
            Tensor loss;
            if (!spec.product_dual) {
                loss = softmax_cross_entropy(head_logits(cls, params.cls_plot_w, params.cls_plot_b), plot);
            } else {
                loss = add(softmax_cross_entropy(head_logits(cls, params.cls_top_w, params.cls_top_b), top),
                           softmax_cross_entropy(head_logits(cls, params.cls_leaf_w, params.cls_leaf_b), leaf));
            }
            backward(loss);
            adam_step_all(opt, params);
        }
    }
    return evaluate_classify(spec, eval, params);
}

ClassifyResult evaluate_classify(const ClassHeadSpec& spec, const Dataset& eval,
                                 const ModelParams& params) {
    if (eval.records.empty()) throw std::runtime_error("evaluate_classify: eval set is empty");
    check_labels(eval, spec);
    int plot_hits = 0, top_hits = 0, leaf_hits = 0;
    for (const auto& rec : eval.records) {
        Tensor cls = encode_record(params, rec).cls;
        if (!spec.product_dual) {
            if (!params.cls_plot_w.defined()) throw std::runtime_error("evaluate_classify: plot head missing");
            if (argmax_row(head_logits(cls, params.cls_plot_w, params.cls_plot_b)) == rec.plot_label) ++plot_hits;
        } else {
            if (!params.cls_top_w.defined()) throw std::runtime_error("evaluate_classify: product heads missing");
            if (argmax_row(head_logits(cls, params.cls_top_w, params.cls_top_b)) == rec.top_cate) ++top_hits;
            if (argmax_row(head_logits(cls, params.cls_leaf_w, params.cls_leaf_b)) == rec.leaf_cate) ++leaf_hits;
        }
        Tape::instance().clear();
    }
    const double denom = static_cast<double>(eval.records.size());
    ClassifyResult out;
    if (!spec.product_dual) {
        out.plot_accuracy = plot_hits / denom;
    } else {
        out.top_accuracy = top_hits / denom;
        out.leaf_accuracy = leaf_hits / denom;
    }
    return out;
}

std::vector<int> caption_generate(const ModelParams& params, const VideoTextRecord& rec,
                                  int beam, int max_len) {
    if (beam < 1) throw std::runtime_error("caption_generate: beam width must be >= 1");
    if (max_len < 2) throw std::runtime_error("caption_generate: max_len must be >= 2");
    max_len = std::min(max_len, params.cfg.max_tokens);   // decoder window cap
    EncodedPair ctx = encode_record(params, rec);

    std::vector<Hypothesis> active{Hypothesis{{kCls}, 0.0, false}};
    std::vector<Hypothesis> completed;

    while (!active.empty() &&
           static_cast<int>(active.front().tokens.size()) < max_len) {
        std::vector<Hypothesis> expanded;
        for (const auto& hyp : active) {
            Tensor logits = decode_logits(params, hyp.tokens, ctx);
            Tape::instance().clear();
            const std::vector<double> lp = last_row_log_probs(logits);
            for (int tok = 0; tok < static_cast<int>(lp.size()); ++tok) {
                Hypothesis next = hyp;
                next.tokens.push_back(tok);
                next.log_prob += lp[static_cast<std::size_t>(tok)];
                next.done = tok == kSep;
                expanded.push_back(std::move(next));
            }
        }
        std::stable_sort(expanded.begin(), expanded.end(),
                         [](const Hypothesis& a, const Hypothesis& b) { return a.score() > b.score(); });
        active.clear();
        // Keep only the top `beam` expansions overall; anything ranked below
        // the cutoff is dead, finished or not (beam 1 therefore equals greedy).
        int taken = 0;
        for (const auto& hyp : expanded) {
            if (taken == beam) break;
            ++taken;
            if (hyp.done) {
                completed.push_back(hyp);
            } else {
                active.push_back(hyp);
            }
        }
    }

    const auto worse = [](const Hypothesis& a, const Hypothesis& b) { return a.score() < b.score(); };
    if (!completed.empty()) {
        return std::max_element(completed.begin(), completed.end(), worse)->tokens;
    }
    if (active.empty()) throw std::runtime_error("caption_generate: no hypotheses produced");
    return std::max_element(active.begin(), active.end(), worse)->tokens;
}

TextGenScores text_gen_metrics(const std::vector<std::vector<int>>& hypotheses,
                               const std::vector<std::vector<int>>& references) {
    if (references.empty()) throw std::runtime_error("text_gen_metrics: empty reference set");
    if (hypotheses.size() != references.size()) {
        throw std::runtime_error("text_gen_metrics: hypothesis/reference count mismatch");
    }
    TextGenScores out;
    out.bleu1 = corpus_bleu(hypotheses, references, 1);
    out.bleu4 = corpus_bleu(hypotheses, references, 4);

    const double beta2 = 1.2 * 1.2;
    double f_sum = 0.0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        const auto& h = hypotheses[i];
        const auto& r = references[i];
        if (h.empty() || r.empty()) continue;
        const double lcs = lcs_length(h, r);
        if (lcs == 0.0) continue;
        const double p = lcs / static_cast<double>(h.size());
        const double rec = lcs / static_cast<double>(r.size());
        f_sum += (1.0 + beta2) * p * rec / (rec + beta2 * p);
    }
    out.rouge_l = f_sum / static_cast<double>(hypotheses.size());
    return out;
}

void export_embeddings(const Dataset& data, const ModelParams& params, const std::string& out_path) {
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open embedding file for writing: " + out_path);
    char buf[64];
    for (const auto& rec : data.records) {
        Tensor cls = encode_record(params, rec).cls;
        Tape::instance().clear();
        out << rec.id;
        for (double v : cls.data()) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << '\t' << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("embedding export write failed: " + out_path);
}

}   // namespace vlpt
