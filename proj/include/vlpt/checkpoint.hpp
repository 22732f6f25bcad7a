#pragma once

#include <map>
#include <string>

#include "vlpt/config.hpp"
#include "vlpt/model.hpp"
#include "vlpt/optimizer.hpp"
#include "vlpt/tensor.hpp"

namespace vlpt {

// Versioned little-endian container: magic, version, JSON model config +
// string metadata, (name, shape, float64 payload) entries, and a trailing
// FNV-1a manifest hash that guards truncation/corruption.

struct LoadedCheckpoint {
    ModelConfig config;
    NamedParams entries;
    std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const NamedParams& entries,
                     const std::map<std::string, std::string>& meta = {});

LoadedCheckpoint load_checkpoint(const std::string& path);

// Rebuilds trainable model parameters from the "model." entries of a loaded
// checkpoint (fine-tuning heads included when present).
ModelParams model_from_checkpoint(const LoadedCheckpoint& ckpt);

// Errors naming the first differing field.
void require_same_model_config(const ModelConfig& expected, const ModelConfig& actual);

}   // namespace vlpt
