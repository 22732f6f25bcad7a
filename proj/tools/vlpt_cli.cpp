#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vlpt/checkpoint.hpp"
#include "vlpt/config.hpp"
#include "vlpt/data.hpp"
#include "vlpt/downstream.hpp"
#include "vlpt/trainer.hpp"

namespace {

using namespace vlpt;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_metric_file(const std::string& path, const std::vector<std::pair<std::string, double>>& metrics) {
    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!path.empty()) {
        file.open(path, std::ios::trunc);
        if (!file) throw std::runtime_error("cannot open metrics file for writing: " + path);
        out = &file;
    }
    for (const auto& [name, value] : metrics) *out << name << '\t' << fmt(value) << '\n';
}

ModelParams load_model(const std::string& ckpt_path) {
    return model_from_checkpoint(load_checkpoint(ckpt_path));
}

void save_model(const std::string& path, const ModelParams& params, const std::string& kind) {
    NamedParams entries;
    for (const auto& [name, t] : params.named()) entries.emplace_back("model." + name, t);
    save_checkpoint(path, params.cfg, entries, {{"kind", kind}});
}

int max_label(const Dataset& ds, int VideoTextRecord::* field) {
    int mx = -1;
    for (const auto& r : ds.records) mx = std::max(mx, r.*field);
    if (mx < 0) throw std::runtime_error("dataset carries no labels for this task");
    return mx;
}

ClassHeadSpec infer_spec(const Dataset& ds, bool product_dual) {
    ClassHeadSpec spec;
    spec.product_dual = product_dual;
    if (product_dual) {
        spec.top_classes = max_label(ds, &VideoTextRecord::top_cate) + 1;
        spec.leaf_classes = max_label(ds, &VideoTextRecord::leaf_cate) + 1;
    } else {
        spec.plot_classes = max_label(ds, &VideoTextRecord::plot_label) + 1;
    }
    return spec;
}

std::vector<int> strip_structural(const std::vector<int>& toks) {
    std::vector<int> out;
    for (int t : toks) {
        if (t != kCls && t != kSep && t != kPad) out.push_back(t);
    }
    return out;
}

}   // namespace

int main(int argc, char** argv) {
    CLI::App app{"video-language pre-training toolkit"};
    app.require_subcommand(1);

    // gen-data
    std::string gd_spec, gd_out;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset file");
    gen->add_option("--spec", gd_spec, "synthetic spec file (key=value)")->required();
    gen->add_option("--out", gd_out, "output dataset path")->required();

    // pretrain
    std::string pt_config, pt_out, pt_resume;
    auto* pre = app.add_subcommand("pretrain", "run pre-training");
    pre->add_option("--config", pt_config, "train config file")->required();
    pre->add_option("--out", pt_out, "output directory (overrides config)");
    pre->add_option("--resume", pt_resume, "checkpoint to resume from");

    // finetune <task>
    auto* ft = app.add_subcommand("finetune", "fine-tune a pre-trained checkpoint");
    ft->require_subcommand(1);
    std::string ft_config, ft_ckpt, ft_data, ft_out;
    std::vector<CLI::App*> ft_tasks;
    for (const char* name : {"retrieval-text", "retrieval-image", "plot", "product"}) {
        ft_tasks.push_back(ft->add_subcommand(name));
    }
    for (auto* sub : ft_tasks) {
        sub->add_option("--config", ft_config, "train config file")->required();
        sub->add_option("--ckpt", ft_ckpt, "pre-trained checkpoint")->required();
        sub->add_option("--data", ft_data, "dataset path (overrides config train_path)");
        sub->add_option("--out", ft_out, "fine-tuned checkpoint path")->required();
    }

    // eval <task>
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->require_subcommand(1);
    std::string ev_ckpt, ev_data, ev_out;
    int ev_negatives = 100;
    std::uint64_t ev_seed = 1;
    int ev_beam = 5;
    int ev_max_len = 16;
    std::string ev_hyps;
    std::vector<CLI::App*> ev_tasks;
    for (const char* name : {"retrieval-text", "retrieval-image", "plot", "product", "caption"}) {
        ev_tasks.push_back(ev->add_subcommand(name));
    }
    for (auto* sub : ev_tasks) {
        sub->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
        sub->add_option("--data", ev_data, "dataset path")->required();
        sub->add_option("--out", ev_out, "metrics file (default stdout)");
    }
    ev_tasks[0]->add_option("--negatives", ev_negatives, "negatives per query (default 100)");
    ev_tasks[1]->add_option("--negatives", ev_negatives, "negatives per query (default 100)");
    ev_tasks[0]->add_option("--seed", ev_seed, "negative sampling seed");
    ev_tasks[1]->add_option("--seed", ev_seed, "negative sampling seed");
    ev_tasks[4]->add_option("--beam", ev_beam, "beam width (default 5)");
    ev_tasks[4]->add_option("--max-len", ev_max_len, "maximum hypothesis length");
    ev_tasks[4]->add_option("--hyps", ev_hyps, "write one hypothesis per line (id<TAB>tokens)");

    // export-emb
    std::string xe_ckpt, xe_data, xe_out;
    auto* xe = app.add_subcommand("export-emb", "export [CLS] embeddings as TSV");
    xe->add_option("--ckpt", xe_ckpt, "checkpoint path")->required();
    xe->add_option("--data", xe_data, "dataset path")->required();
    xe->add_option("--out", xe_out, "output TSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            save_dataset(gd_out, generate_synthetic(load_synthetic_spec(gd_spec)));
            return 0;
        }
        if (pre->parsed()) {
            TrainConfig cfg = load_train_config(pt_config);
            if (!pt_out.empty()) cfg.out_dir = pt_out;
            if (cfg.out_dir.empty()) throw std::runtime_error("pretrain: no output directory configured");
            run_pretraining(cfg, pt_resume);
            return 0;
        }
        if (ft->parsed()) {
            TrainConfig cfg = load_train_config(ft_config);
            if (!ft_data.empty()) cfg.train_path = ft_data;
            Dataset data = load_dataset(cfg.train_path);
            ModelParams params = load_model(ft_ckpt);
            const std::string task = ft->get_subcommands().front()->get_name();
            if (task == "retrieval-text" || task == "retrieval-image") {
                const auto mode = task == "retrieval-text" ? RetrievalMode::text : RetrievalMode::image;
                finetune_retrieval(mode, data, params, cfg);
                save_model(ft_out, params, "retrieval-" + task);
            } else {
                ClassHeadSpec spec = infer_spec(data, task == "product");
                ClassifyResult res = finetune_classify(spec, data, data, params, cfg);
                save_model(ft_out, params, "classify-" + task);
                if (task == "plot") {
                    std::cout << "plot_accuracy\t" << fmt(res.plot_accuracy) << '\n';
                } else {
                    std::cout << "top_accuracy\t" << fmt(res.top_accuracy) << '\n'
                              << "leaf_accuracy\t" << fmt(res.leaf_accuracy) << '\n';
                }
            }
            return 0;
        }
        if (ev->parsed()) {
            Dataset data = load_dataset(ev_data);
            ModelParams params = load_model(ev_ckpt);
            const std::string task = ev->get_subcommands().front()->get_name();
            if (task == "retrieval-text" || task == "retrieval-image") {
                const auto mode = task == "retrieval-text" ? RetrievalMode::text : RetrievalMode::image;
                const std::vector<int> ranks = retrieval_ranks(mode, data, params, ev_negatives, ev_seed);
                write_metric_file(ev_out, {{"R@1", recall_at_k(ranks, 1)},
                                           {"R@5", recall_at_k(ranks, 5)},
                                           {"R@10", recall_at_k(ranks, 10)},
                                           {"R@20", recall_at_k(ranks, 20)}});
            } else if (task == "plot" || task == "product") {
                ClassHeadSpec spec = infer_spec(data, task == "product");
                ClassifyResult res = evaluate_classify(spec, data, params);
                if (task == "plot") {
                    write_metric_file(ev_out, {{"plot_accuracy", res.plot_accuracy}});
                } else {
                    write_metric_file(ev_out, {{"top_accuracy", res.top_accuracy},
                                               {"leaf_accuracy", res.leaf_accuracy}});
                }
            } else {   // caption
                std::vector<std::vector<int>> hyps, refs;
                std::ofstream hyp_file;
                if (!ev_hyps.empty()) {
                    hyp_file.open(ev_hyps, std::ios::trunc);
                    if (!hyp_file) throw std::runtime_error("cannot open hypothesis file: " + ev_hyps);
                }
                for (const auto& rec : data.records) {
                    if (rec.abstract_token_ids.empty()) continue;
                    std::vector<int> hyp = caption_generate(params, rec, ev_beam, ev_max_len);
                    if (hyp_file.is_open()) {
                        hyp_file << rec.id;
                        for (int t : hyp) hyp_file << '\t' << t;
                        hyp_file << '\n';
                    }
                    hyps.push_back(strip_structural(hyp));
                    refs.push_back(strip_structural(rec.abstract_token_ids));
                }
                TextGenScores scores = text_gen_metrics(hyps, refs);
                write_metric_file(ev_out, {{"BLEU-1", scores.bleu1},
                                           {"BLEU-4", scores.bleu4},
                                           {"ROUGE-L", scores.rouge_l}});
            }
            return 0;
        }
        if (xe->parsed()) {
            export_embeddings(load_dataset(xe_data), load_model(xe_ckpt), xe_out);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
