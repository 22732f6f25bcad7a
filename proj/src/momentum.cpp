#include "vlpt/momentum.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

namespace vlpt {

MemoryQueue::MemoryQueue(int capacity, int dim) : capacity_(capacity), dim_(dim) {
    if (capacity < 1 || dim < 1) throw std::runtime_error("memory queue: capacity and dim must be >= 1");
    buf_.assign(static_cast<std::size_t>(capacity) * dim, 0.0);
}

void MemoryQueue::push_rows(const Tensor& rows) {
    if (rows.cols() != dim_) {
        throw std::runtime_error("memory queue: row dim " + std::to_string(rows.cols()) + " != queue dim " +
                                 std::to_string(dim_));
    }
    for (int r = 0; r < rows.rows(); ++r) {
        std::copy_n(rows.data().begin() + static_cast<std::size_t>(r) * dim_, dim_,
                    buf_.begin() + static_cast<std::size_t>(cursor_) * dim_);
        cursor_ = (cursor_ + 1) % capacity_;
        fill_ = std::min(fill_ + 1, capacity_);
    }
}

Tensor MemoryQueue::negatives() const {
    if (fill_ == 0) throw std::runtime_error("memory queue: negatives requested from empty queue");
    return Tensor::from({fill_, dim_}, snapshot());
}

std::vector<double> MemoryQueue::snapshot() const {
    std::vector<double> out(static_cast<std::size_t>(fill_) * dim_);
    const int start = fill_ == capacity_ ? cursor_ : 0;
    for (int i = 0; i < fill_; ++i) {
        const int slot = (start + i) % capacity_;
        std::copy_n(buf_.begin() + static_cast<std::size_t>(slot) * dim_, dim_,
                    out.begin() + static_cast<std::size_t>(i) * dim_);
    }
    return out;
}

void MemoryQueue::restore(const std::vector<double>& rows) {
    if (rows.size() % static_cast<std::size_t>(dim_) != 0) {
        throw std::runtime_error("memory queue: restore payload is not a whole number of rows");
    }
    const int n = static_cast<int>(rows.size() / static_cast<std::size_t>(dim_));
    if (n > capacity_) throw std::runtime_error("memory queue: restore payload exceeds capacity");
    std::fill(buf_.begin(), buf_.end(), 0.0);
    std::copy(rows.begin(), rows.end(), buf_.begin());
    fill_ = n;
    cursor_ = n % capacity_;
}

ModelParams init_key(const ModelParams& query) {
    return query.encoder_path_clone();
}

void momentum_update(const ModelParams& query, ModelParams& key, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) {
        throw std::runtime_error("momentum_update: alpha " + std::to_string(alpha) + " outside [0,1]");
    }
    std::unordered_map<std::string, Tensor> qmap;
    for (auto& [name, t] : query.named()) qmap.emplace(name, t);
    for (auto& [name, kt] : key.named()) {
        auto it = qmap.find(name);
        if (it == qmap.end()) throw std::runtime_error("momentum_update: key tensor '" + name + "' has no query mirror");
        Tensor qt = it->second;
        if (qt.shape() != kt.shape()) {
            throw std::runtime_error("momentum_update: shape mismatch on '" + name + "'");
        }
        auto& kd = kt.data();
        const auto& qd = qt.data();
        for (std::size_t i = 0; i < kd.size(); ++i) kd[i] = alpha * kd[i] + (1.0 - alpha) * qd[i];
    }
}

EncodedPair key_forward(const ModelParams& key, const VideoTextRecord& rec) {
    TextInput text = make_text_input(rec.token_ids);
    FrameInput frames;
    frames.features = rec.frame_features;
    frames.real.assign(static_cast<std::size_t>(rec.frame_features.rows()), 1);
    return encode_pair(key, text, frames);
}

}   // namespace vlpt
