#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlpt/config.hpp"
#include "vlpt/data.hpp"
#include "vlpt/model.hpp"
#include "vlpt/tensor.hpp"

namespace vlpt {

// Cosine similarity between two 1 x d reps; zero-norm input is an error.
double score_pair(const Tensor& query_rep, const Tensor& candidate_rep);

enum class RetrievalMode { text, image };

// In-batch symmetric InfoNCE fine-tuning on the pooled reps. Text mode aligns
// each record's text rep with its own visual rep. Image mode encodes the
// record a second time with frame 0 replaced by its product-image feature and
// aligns the visual reps of the two encodings. Mutates `params` in place.
void finetune_retrieval(RetrievalMode mode, const Dataset& data, ModelParams& params,
                        const TrainConfig& cfg);

// 1-based rank of each record's true candidate among itself plus
// `num_negatives` sampled distinct other records (all others when fewer
// exist). Ties break by candidate index. Pure inference.
std::vector<int> retrieval_ranks(RetrievalMode mode, const Dataset& data, const ModelParams& params,
                                 int num_negatives, std::uint64_t seed);

// Fraction of queries whose positive rank <= k.
double recall_at_k(const std::vector<int>& positive_ranks, int k);

struct ClassHeadSpec {
    bool product_dual = false;   // false: single plot head; true: top + leaf heads
    int plot_classes = 0;
    int top_classes = 0;
    int leaf_classes = 0;
};

struct ClassifyResult {
    double plot_accuracy = -1.0;
    double top_accuracy = -1.0;
    double leaf_accuracy = -1.0;
};

// Cross-entropy head(s) on the [CLS] embedding; the product-dual variant
// trains both heads jointly on the summed loss. Mutates `params` (adding the
// head tensors on first use) and returns eval-split top-1 accuracy per head.
ClassifyResult finetune_classify(const ClassHeadSpec& spec, const Dataset& train,
                                 const Dataset& eval, ModelParams& params, const TrainConfig& cfg);

ClassifyResult evaluate_classify(const ClassHeadSpec& spec, const Dataset& eval,
                                 const ModelParams& params);

// Length-normalized beam search over the decoder; returns the best completed
// hypothesis as [CLS] w1 ... [SEP] (best partial prefix if nothing completes
// within max_len). beam = 1 is exactly greedy decoding.
std::vector<int> caption_generate(const ModelParams& params, const VideoTextRecord& rec,
                                  int beam = 5, int max_len = 16);

struct TextGenScores {
    double bleu1 = 0.0;
    double bleu4 = 0.0;
    double rouge_l = 0.0;
};

// Corpus BLEU (clipped n-gram precision, uniform weights, standard brevity
// penalty) and mean ROUGE-L (LCS F-measure, beta = 1.2), over parallel
// hypothesis/reference token lists.
TextGenScores text_gen_metrics(const std::vector<std::vector<int>>& hypotheses,
                               const std::vector<std::vector<int>>& references);

// One TSV line per record: id then the d components of its [CLS] embedding.
void export_embeddings(const Dataset& data, const ModelParams& params, const std::string& out_path);

}   // namespace vlpt
