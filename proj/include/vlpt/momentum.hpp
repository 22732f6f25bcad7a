#pragma once

#include <vector>

#include "vlpt/data.hpp"
#include "vlpt/model.hpp"
#include "vlpt/tensor.hpp"

namespace vlpt {

// Fixed-capacity FIFO ring of detached d-vectors. Three instances feed the
// contrastive losses: key-network frame rows, visual reps, textual reps.
class MemoryQueue {
public:
    MemoryQueue(int capacity, int dim);

    void push_rows(const Tensor& rows);           // copies data, detached
    int fill() const { return fill_; }
    int capacity() const { return capacity_; }
    int dim() const { return dim_; }

    // All filled slots, oldest first, as a constant fill x dim tensor.
    Tensor negatives() const;

    // Oldest-first row dump / restore (checkpoint resume support).
    std::vector<double> snapshot() const;
    void restore(const std::vector<double>& rows);

private:
    int capacity_;
    int dim_;
    std::vector<double> buf_;
    int cursor_ = 0;   // next write slot
    int fill_ = 0;
};

// Exact copy of the encoder-path subset of the query parameters; key tensors
// never require grad.
ModelParams init_key(const ModelParams& query);

// theta_k <- alpha * theta_k + (1 - alpha) * theta_q, elementwise over the
// mirrored (encoder-path) tensors.
void momentum_update(const ModelParams& query, ModelParams& key, double alpha);

// Encoder-path outputs on the unaugmented record; nothing is recorded on the
// tape because key params carry no grad.
EncodedPair key_forward(const ModelParams& key, const VideoTextRecord& rec);

}   // namespace vlpt
