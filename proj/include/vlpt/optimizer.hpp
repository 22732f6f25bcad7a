#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vlpt/tensor.hpp"

namespace vlpt {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Adam with bias correction. Moment buffers are keyed by parameter name and
// allocated on first step; step() zeroes the gradients afterwards.
class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8);

    void step(NamedParams& params);

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    long long step_count() const { return step_count_; }

    // Moment buffers as flat tensors named "m.<param>" / "v.<param>", sorted
    // by name so serialized state is byte-stable. import_state replaces all
    // existing moments and the step counter.
    NamedParams export_state() const;
    void import_state(const NamedParams& entries, long long step_count);

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };
    double lr_, beta1_, beta2_, eps_;
    long long step_count_ = 0;
    std::unordered_map<std::string, Moments> moments_;
};

}   // namespace vlpt
