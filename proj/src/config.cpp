#include "vlpt/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vlpt {

void ModelConfig::validate() const {
    if (hidden_size <= 0 || heads <= 0 || hidden_size % heads != 0) {
        throw std::runtime_error("model config: hidden_size must be a positive multiple of heads");
    }
    if (max_tokens < 1 || max_frames < 1) {
        throw std::runtime_error("model config: max_tokens and max_frames must be >= 1");
    }
    if (vocab_size < 4) {
        throw std::runtime_error("model config: vocab_size must be >= 4 (PAD/CLS/SEP/MASK)");
    }
    if (encoder_blocks < 1 || decoder_blocks < 1 || frame_feature_dim < 1 || ff_mult < 1) {
        throw std::runtime_error("model config: block counts and dims must be >= 1");
    }
}

bool TaskFlags::any_enabled() const {
    return mlm || msom || mfom || msg || intra_mfm || inter_mfm || dual_vsa || legacy_vsa;
}

TaskFlags TaskFlags::preset(const std::string& name) {
    TaskFlags f;
    f.mlm = f.msg = true;
    f.msom = f.mfom = f.intra_mfm = f.inter_mfm = f.dual_vsa = f.legacy_vsa = false;
    if (name == "M1") return f;
    f.msom = f.mfom = true;
    if (name == "M2") return f;
    f.intra_mfm = f.inter_mfm = true;
    if (name == "M3") return f;
    if (name == "M4") {
        f.legacy_vsa = true;
        return f;
    }
    if (name == "M5" || name == "M6") {
        f.dual_vsa = true;
        return f;
    }
    throw std::runtime_error("unknown task preset '" + name + "' (expected M1..M6)");
}

void TrainConfig::validate() const {
    model.validate();
    for (double r : {token_mask_rate, sentence_shuffle_rate, sentence_full_mask_rate,
                     frame_shuffle_rate, frame_mask_rate}) {
        if (r < 0.0 || r > 1.0) throw std::runtime_error("train config: rates must be in [0,1]");
    }
    if (momentum < 0.0 || momentum > 1.0) throw std::runtime_error("train config: momentum must be in [0,1]");
    if (temperature <= 0.0) throw std::runtime_error("train config: temperature must be > 0");
    if (batch_size < 1) throw std::runtime_error("train config: batch_size must be >= 1");
    if (queue_capacity < 1) throw std::runtime_error("train config: queue_capacity must be >= 1");
    if (min_negatives < 1) throw std::runtime_error("train config: min_negatives must be >= 1");
}

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::runtime_error("config: bad boolean for " + key + ": '" + v + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}   // namespace

TrainConfig parse_train_config_text(const std::string& text) {
    TrainConfig cfg;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    const auto i = [](int* p) {
        return [p](const std::string& k, const std::string& v) {
            try {
                *p = std::stoi(v);
            } catch (...) {
                throw std::runtime_error("config: bad integer for " + k + ": '" + v + "'");
            }
        };
    };
    const auto ll = [](long long* p) {
        return [p](const std::string& k, const std::string& v) {
            try {
                *p = std::stoll(v);
            } catch (...) {
                throw std::runtime_error("config: bad integer for " + k + ": '" + v + "'");
            }
        };
    };
    const auto d = [](double* p) {
        return [p](const std::string& k, const std::string& v) {
            try {
                *p = std::stod(v);
            } catch (...) {
                throw std::runtime_error("config: bad number for " + k + ": '" + v + "'");
            }
        };
    };
    const auto b = [](bool* p) {
        return [p](const std::string& k, const std::string& v) { *p = parse_bool(k, v); };
    };
    const auto s = [](std::string* p) {
        return [p](const std::string&, const std::string& v) { *p = v; };
    };

    std::map<std::string, Setter> setters = {
        {"model.hidden_size", i(&cfg.model.hidden_size)},
        {"model.encoder_blocks", i(&cfg.model.encoder_blocks)},
        {"model.decoder_blocks", i(&cfg.model.decoder_blocks)},
        {"model.heads", i(&cfg.model.heads)},
        {"model.max_tokens", i(&cfg.model.max_tokens)},
        {"model.max_frames", i(&cfg.model.max_frames)},
        {"model.vocab_size", i(&cfg.model.vocab_size)},
        {"model.frame_feature_dim", i(&cfg.model.frame_feature_dim)},
        {"model.ff_mult", i(&cfg.model.ff_mult)},
        {"model.tie_decoder_head", b(&cfg.model.tie_decoder_head)},
        {"model.decoder_cross_attends_text", b(&cfg.model.decoder_cross_attends_text)},
        {"train.batch_size", i(&cfg.batch_size)},
        {"train.learning_rate", d(&cfg.learning_rate)},
        {"train.epochs", i(&cfg.epochs)},
        {"train.max_steps", ll(&cfg.max_steps)},
        {"train.temperature", d(&cfg.temperature)},
        {"train.momentum", d(&cfg.momentum)},
        {"train.queue_capacity", i(&cfg.queue_capacity)},
        {"train.min_negatives", i(&cfg.min_negatives)},
        {"train.token_mask_rate", d(&cfg.token_mask_rate)},
        {"train.sentence_shuffle_rate", d(&cfg.sentence_shuffle_rate)},
        {"train.sentence_full_mask_rate", d(&cfg.sentence_full_mask_rate)},
        {"train.frame_shuffle_rate", d(&cfg.frame_shuffle_rate)},
        {"train.frame_mask_rate", d(&cfg.frame_mask_rate)},
        {"train.checkpoint_every", ll(&cfg.checkpoint_every)},
        {"train.log_every", ll(&cfg.log_every)},
        {"train.include_queues_in_checkpoint", b(&cfg.include_queues_in_checkpoint)},
        {"train.seed",
         [&cfg](const std::string& k, const std::string& v) {
             try {
                 cfg.seed = std::stoull(v);
             } catch (...) {
                 throw std::runtime_error("config: bad integer for " + k + ": '" + v + "'");
             }
         }},
        {"tasks.preset",
         [&cfg](const std::string&, const std::string& v) { cfg.tasks = TaskFlags::preset(v); }},
        {"tasks.mlm", b(&cfg.tasks.mlm)},
        {"tasks.msom", b(&cfg.tasks.msom)},
        {"tasks.mfom", b(&cfg.tasks.mfom)},
        {"tasks.msg", b(&cfg.tasks.msg)},
        {"tasks.intra_mfm", b(&cfg.tasks.intra_mfm)},
        {"tasks.inter_mfm", b(&cfg.tasks.inter_mfm)},
        {"tasks.dual_vsa", b(&cfg.tasks.dual_vsa)},
        {"tasks.legacy_vsa", b(&cfg.tasks.legacy_vsa)},
        {"data.train_path", s(&cfg.train_path)},
        {"data.out_dir", s(&cfg.out_dir)},
    };

    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw std::runtime_error("config line " + std::to_string(lineno) + ": malformed section");
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key=value");
        }
        std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!section.empty()) key = section + "." + key;
        auto it = setters.find(key);
        if (it == setters.end()) {
            throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        it->second(key, value);
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_train_config_text(buf.str());
}

}   // namespace vlpt
