#include "vlpt/optimizer.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace vlpt {

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(NamedParams& params) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (auto& [name, param] : params) {
        if (!param.has_grad()) {
            throw std::runtime_error("optimizer: missing grad on parameter '" + name + "'");
        }
        auto& g = param.grad();
        auto& mom = moments_[name];
        if (mom.m.empty()) {
            mom.m.assign(param.size(), 0.0);
            mom.v.assign(param.size(), 0.0);
        }
        if (mom.m.size() != param.size()) {
            throw std::runtime_error("optimizer: state shape drifted for parameter '" + name + "'");
        }
        auto& d = param.data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * g[i];
            mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            d[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
        param.zero_grad();
    }
}

NamedParams AdamOptimizer::export_state() const {
    std::map<std::string, const Moments*> sorted;
    for (const auto& [name, mom] : moments_) sorted.emplace(name, &mom);
    NamedParams out;
    for (const auto& [name, mom] : sorted) {
        const int n = static_cast<int>(mom->m.size());
        out.emplace_back("m." + name, Tensor::from({1, n}, mom->m));
        out.emplace_back("v." + name, Tensor::from({1, n}, mom->v));
    }
    return out;
}

void AdamOptimizer::import_state(const NamedParams& entries, long long step_count) {
    moments_.clear();
    step_count_ = step_count;
    for (const auto& [name, t] : entries) {
        if (name.size() < 3 || name[1] != '.' || (name[0] != 'm' && name[0] != 'v')) {
            throw std::runtime_error("optimizer: unrecognized state entry '" + name + "'");
        }
        auto& mom = moments_[name.substr(2)];
        (name[0] == 'm' ? mom.m : mom.v) = t.data();
    }
    for (const auto& [name, mom] : moments_) {
        if (mom.m.size() != mom.v.size()) {
            throw std::runtime_error("optimizer: incomplete state for parameter '" + name + "'");
        }
    }
}

}   // namespace vlpt
