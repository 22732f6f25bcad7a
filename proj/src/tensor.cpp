#include "vlpt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vlpt {

namespace {

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::runtime_error("tensor: negative dimension in " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw std::runtime_error(std::string(op) + ": non-finite output, run aborted");
        }
    }
}

std::vector<double>& gbuf(const std::shared_ptr<TensorImpl>& t) {
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
    return t->grad;
}

// Output grad never seeded means the node is off the path to the loss.
bool no_out_grad(const std::shared_ptr<TensorImpl>& t) { return t->grad.empty(); }

}   // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(numel(shape), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != data.size()) {
        throw std::runtime_error("tensor: shape " + shape_str(shape) + " does not match data length " +
                                 std::to_string(data.size()));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from({1, 1}, {v}, requires_grad);
}

double Tensor::value() const {
    if (size() != 1) throw std::runtime_error("Tensor::value: tensor is not scalar, shape " + shape_str(shape()));
    return impl_->data[0];
}

std::vector<double>& Tensor::grad() {
    if (!impl_) throw std::runtime_error("Tensor::grad: undefined tensor");
    return gbuf(impl_);
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::drop_grad() {
    if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const {
    return Tensor::from(impl_->shape, impl_->data, false);
}

// ---- tape ----

Tape& Tape::instance() {
    static Tape tape;
    return tape;
}

void Tape::record(const char* op, std::function<void()> fn) {
    nodes_.push_back(TapeNode{op, std::move(fn)});
}

void Tape::backward(Tensor loss) {
    if (loss.size() != 1) throw std::runtime_error("backward: loss must be scalar");
    if (nodes_.empty()) throw std::runtime_error("backward: tape is empty (no recorded forward pass)");
    if (!loss.requires_grad()) throw std::runtime_error("backward: loss does not require grad");
    loss.grad().assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backward();
    }
    nodes_.clear();
}

// ---- op helpers ----

namespace {

bool rec(const Tensor& a) { return a.requires_grad(); }
bool rec(const Tensor& a, const Tensor& b) { return a.requires_grad() || b.requires_grad(); }

void require_2d(const char* op, const Tensor& t) {
    if (t.shape().size() != 2) {
        throw std::runtime_error(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape()));
    }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::runtime_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
    }
}

}   // namespace

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d("matmul", a);
    require_2d("matmul", b);
    if (a.cols() != b.rows()) {
        throw std::runtime_error("matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const int R = a.rows(), K = a.cols(), C = b.cols();
    Tensor out = Tensor::zeros({R, C}, rec(a, b));
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* od = out.data().data();
    for (int r = 0; r < R; ++r) {
        for (int k = 0; k < K; ++k) {
            const double av = ad[r * K + k];
            if (av == 0.0) continue;
            for (int c = 0; c < C; ++c) od[r * C + c] += av * bd[k * C + c];
        }
    }
    check_finite("matmul", out.data());
    if (out.requires_grad()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::instance().record("matmul", [ai, bi, oi, R, K, C] {
            if (no_out_grad(oi)) return;
            const auto& og = oi->grad;
            if (ai->requires_grad) {
                auto& ag = gbuf(ai);
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < C; ++c) {
                        const double g = og[r * C + c];
                        if (g == 0.0) continue;
                        for (int k = 0; k < K; ++k) ag[r * K + k] += g * bi->data[k * C + c];
                    }
            }
            if (bi->requires_grad) {
                auto& bg = gbuf(bi);
                for (int r = 0; r < R; ++r)
                    for (int k = 0; k < K; ++k) {
                        const double av = ai->data[r * K + k];
                        if (av == 0.0) continue;
                        for (int c = 0; c < C; ++c) bg[k * C + c] += av * og[r * C + c];
                    }
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_2d("transpose", a);
    const int R = a.rows(), C = a.cols();
    Tensor out = Tensor::zeros({C, R}, rec(a));
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out.data()[c * R + r] = a.data()[r * C + c];
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        Tape::instance().record("transpose", [ai, oi, R, C] {
            if (no_out_grad(oi)) return;
            auto& ag = gbuf(ai);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) ag[r * C + c] += oi->grad[c * R + r];
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    Tensor out = Tensor::from(a.shape(), a.data(), rec(a, b));
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    check_finite("add", out.data());
    if (out.requires_grad()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::instance().record("add", [ai, bi, oi] {
            if (no_out_grad(oi)) return;
            if (ai->requires_grad) {
                auto& ag = gbuf(ai);
                for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                auto& bg = gbuf(bi);
                for (std::size_t i = 0; i < bg.size(); ++i) bg[i] += oi->grad[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    Tensor out = Tensor::from(a.shape(), a.data(), rec(a, b));
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    check_finite("sub", out.data());
    if (out.requires_grad()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::instance().record("sub", [ai, bi, oi] {
            if (no_out_grad(oi)) return;
            if (ai->requires_grad) {
                auto& ag = gbuf(ai);
                for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                auto& bg = gbuf(bi);
                for (std::size_t i = 0; i < bg.size(); ++i) bg[i] -= oi->grad[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    Tensor out = Tensor::from(a.shape(), a.data(), rec(a, b));
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
    check_finite("mul", out.data());
    if (out.requires_grad()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::instance().record("mul", [ai, bi, oi] {
            if (no_out_grad(oi)) return;
            if (ai->requires_grad) {
                auto& ag = gbuf(ai);
                for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += oi->grad[i] * bi->data[i];
            }
            if (bi->requires_grad) {
                auto& bg = gbuf(bi);
                for (std::size_t i = 0; i < bg.size(); ++i) bg[i] += oi->grad[i] * ai->data[i];
            }
        });
    }
    return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    require_2d("add_rowvec", a);
    if (static_cast<std::size_t>(a.cols()) != v.size()) {
        throw std::runtime_error("add_rowvec: shape mismatch " + shape_str(a.shape()) + " vs " +
                                 shape_str(v.shape()));
    }
    const int R = a.rows(), C = a.cols();
    Tensor out = Tensor::from(a.shape(), a.data(), rec(a, v));
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out.data()[r * C + c] += v.data()[c];
    check_finite("add_rowvec", out.data());
    if (out.requires_grad()) {
        auto ai = a.impl(), vi = v.impl(), oi = out.impl();
        Tape::instance().record("add_rowvec", [ai, vi, oi, R, C] {
            if (no_out_grad(oi)) return;
            if (ai->requires_grad) {
                auto& ag = gbuf(ai);
                for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += oi->grad[i];
            }
            if (vi->requires_grad) {
                auto& vg = gbuf(vi);
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < C; ++c) vg[c] += oi->grad[r * C + c];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = Tensor::from(a.shape(), a.data(), rec(a));
    for (double& x : out.data()) x *= s;
    check_finite("scale", out.data());
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        Tape::instance().record("scale", [ai, oi, s] {
            if (no_out_grad(oi)) return;
            auto& ag = gbuf(ai);
            for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += s * oi->grad[i];
        });
    }
    return out;
}

Tensor softmax_rows(const Tensor& a) {
    require_2d("softmax_rows", a);
    const int R = a.rows(), C = a.cols();
    Tensor out = Tensor::zeros({R, C}, rec(a));
    for (int r = 0; r < R; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < C; ++c) mx = std::max(mx, a.data()[r * C + c]);
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            const double e = std::exp(a.data()[r * C + c] - mx);
            out.data()[r * C + c] = e;
            sum += e;
        }
        for (int c = 0; c < C; ++c) out.data()[r * C + c] /= sum;
    }
    check_finite("softmax_rows", out.data());
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        Tape::instance().record("softmax_rows", [ai, oi, R, C] {
            if (no_out_grad(oi)) return;
            auto& ag = gbuf(ai);
            for (int r = 0; r < R; ++r) {
                double dot = 0.0;
                for (int c = 0; c < C; ++c) dot += oi->grad[r * C + c] * oi->data[r * C + c];
                for (int c = 0; c < C; ++c) {
                    ag[r * C + c] += oi->data[r * C + c] * (oi->grad[r * C + c] - dot);
                }
            }
        });
    }
    return out;
}

Tensor layernorm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d("layernorm_rows", a);
    const int R = a.rows(), C = a.cols();
    if (static_cast<std::size_t>(C) != gain.size() || static_cast<std::size_t>(C) != bias.size()) {
        throw std::runtime_error("layernorm_rows: shape mismatch " + shape_str(a.shape()) + " vs gain " +
                                 shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()));
    }
    Tensor out = Tensor::zeros({R, C}, rec(a, gain) || bias.requires_grad());
    std::vector<double> xhat(static_cast<std::size_t>(R) * C);
    std::vector<double> inv_sigma(R);
    for (int r = 0; r < R; ++r) {
        double mean = 0.0;
        for (int c = 0; c < C; ++c) mean += a.data()[r * C + c];
        mean /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
            const double d = a.data()[r * C + c] - mean;
            var += d * d;
        }
        var /= C;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = inv;
        for (int c = 0; c < C; ++c) {
            const double xh = (a.data()[r * C + c] - mean) * inv;
            xhat[r * C + c] = xh;
            out.data()[r * C + c] = gain.data()[c] * xh + bias.data()[c];
        }
    }
    check_finite("layernorm_rows", out.data());
    if (out.requires_grad()) {
        auto ai = a.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
        Tape::instance().record("layernorm_rows",
                                [ai, gi, bi, oi, R, C, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)] {
            if (no_out_grad(oi)) return;
            const auto& og = oi->grad;
            for (int r = 0; r < R; ++r) {
                if (gi->requires_grad) {
                    auto& gg = gbuf(gi);
                    for (int c = 0; c < C; ++c) gg[c] += og[r * C + c] * xhat[r * C + c];
                }
                if (bi->requires_grad) {
                    auto& bg = gbuf(bi);
                    for (int c = 0; c < C; ++c) bg[c] += og[r * C + c];
                }
                if (ai->requires_grad) {
                    auto& ag = gbuf(ai);
                    double mean_dy = 0.0, mean_dyxh = 0.0;
                    for (int c = 0; c < C; ++c) {
                        const double dy = og[r * C + c] * gi->data[c];
                        mean_dy += dy;
                        mean_dyxh += dy * xhat[r * C + c];
                    }
                    mean_dy /= C;
                    mean_dyxh /= C;
                    for (int c = 0; c < C; ++c) {
                        const double dy = og[r * C + c] * gi->data[c];
                        ag[r * C + c] += (dy - mean_dy - xhat[r * C + c] * mean_dyxh) * inv_sigma[r];
                    }
                }
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& a) {
    Tensor out = Tensor::from(a.shape(), a.data(), rec(a));
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        out.data()[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    check_finite("gelu", out.data());
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        Tape::instance().record("gelu", [ai, oi] {
            if (no_out_grad(oi)) return;
            static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
            auto& ag = gbuf(ai);
            for (std::size_t i = 0; i < ag.size(); ++i) {
                const double x = ai->data[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                ag[i] += oi->grad[i] * (cdf + x * pdf);
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = Tensor::from(a.shape(), a.data(), rec(a));
    for (double& x : out.data()) x = std::max(0.0, x);
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        Tape::instance().record("relu", [ai, oi] {
            if (no_out_grad(oi)) return;
            auto& ag = gbuf(ai);
            for (std::size_t i = 0; i < ag.size(); ++i)
                if (ai->data[i] > 0.0) ag[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    require_2d("embedding_lookup", table);
    const int V = table.rows(), D = table.cols();
    Tensor out = Tensor::zeros({static_cast<int>(ids.size()), D}, rec(table));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= V) {
            throw std::runtime_error("embedding_lookup: id " + std::to_string(ids[i]) + " out of range [0," +
                                     std::to_string(V) + ")");
        }
        std::copy_n(table.data().begin() + static_cast<std::size_t>(ids[i]) * D, D,
                    out.data().begin() + i * D);
    }
    if (out.requires_grad()) {
        auto ti = table.impl(), oi = out.impl();
        Tape::instance().record("embedding_lookup", [ti, oi, ids, D] {
            if (no_out_grad(oi)) return;
            auto& tg = gbuf(ti);
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (int c = 0; c < D; ++c)
                    tg[static_cast<std::size_t>(ids[i]) * D + c] += oi->grad[i * D + c];
        });
    }
    return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    require_2d("concat_rows", a);
    require_2d("concat_rows", b);
    if (a.cols() != b.cols()) {
        throw std::runtime_error("concat_rows: shape mismatch " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
    }
    const int C = a.cols();
    Tensor out = Tensor::zeros({a.rows() + b.rows(), C}, rec(a, b));
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.size());
    if (out.requires_grad()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::instance().record("concat_rows", [ai, bi, oi] {
            if (no_out_grad(oi)) return;
            if (ai->requires_grad) {
                auto& ag = gbuf(ai);
                for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                auto& bg = gbuf(bi);
                const std::size_t off = ai->data.size();
                for (std::size_t i = 0; i < bg.size(); ++i) bg[i] += oi->grad[off + i];
            }
        });
    }
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_2d("concat_cols", a);
    require_2d("concat_cols", b);
    if (a.rows() != b.rows()) {
        throw std::runtime_error("concat_cols: shape mismatch " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
    }
    const int R = a.rows(), Ca = a.cols(), Cb = b.cols();
    Tensor out = Tensor::zeros({R, Ca + Cb}, rec(a, b));
    for (int r = 0; r < R; ++r) {
        std::copy_n(a.data().begin() + static_cast<std::size_t>(r) * Ca, Ca,
                    out.data().begin() + static_cast<std::size_t>(r) * (Ca + Cb));
        std::copy_n(b.data().begin() + static_cast<std::size_t>(r) * Cb, Cb,
                    out.data().begin() + static_cast<std::size_t>(r) * (Ca + Cb) + Ca);
    }
    if (out.requires_grad()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::instance().record("concat_cols", [ai, bi, oi, R, Ca, Cb] {
            if (no_out_grad(oi)) return;
            for (int r = 0; r < R; ++r) {
                if (ai->requires_grad) {
                    auto& ag = gbuf(ai);
                    for (int c = 0; c < Ca; ++c)
                        ag[static_cast<std::size_t>(r) * Ca + c] +=
                            oi->grad[static_cast<std::size_t>(r) * (Ca + Cb) + c];
                }
                if (bi->requires_grad) {
                    auto& bg = gbuf(bi);
                    for (int c = 0; c < Cb; ++c)
                        bg[static_cast<std::size_t>(r) * Cb + c] +=
                            oi->grad[static_cast<std::size_t>(r) * (Ca + Cb) + Ca + c];
                }
            }
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& a, int start, int len) {
    require_2d("slice_rows", a);
    if (start < 0 || len < 0 || start + len > a.rows()) {
        throw std::runtime_error("slice_rows: range [" + std::to_string(start) + "," +
                                 std::to_string(start + len) + ") out of " + shape_str(a.shape()));
    }
    const int C = a.cols();
    Tensor out = Tensor::zeros({len, C}, rec(a));
    std::copy_n(a.data().begin() + static_cast<std::size_t>(start) * C, static_cast<std::size_t>(len) * C,
                out.data().begin());
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        Tape::instance().record("slice_rows", [ai, oi, start, len, C] {
            if (no_out_grad(oi)) return;
            auto& ag = gbuf(ai);
            for (std::size_t i = 0; i < static_cast<std::size_t>(len) * C; ++i)
                ag[static_cast<std::size_t>(start) * C + i] += oi->grad[i];
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& a, int start, int len) {
    require_2d("slice_cols", a);
    if (start < 0 || len < 0 || start + len > a.cols()) {
        throw std::runtime_error("slice_cols: range [" + std::to_string(start) + "," +
                                 std::to_string(start + len) + ") out of " + shape_str(a.shape()));
    }
    const int R = a.rows(), C = a.cols();
    Tensor out = Tensor::zeros({R, len}, rec(a));
    for (int r = 0; r < R; ++r)
        std::copy_n(a.data().begin() + static_cast<std::size_t>(r) * C + start, len,
                    out.data().begin() + static_cast<std::size_t>(r) * len);
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        Tape::instance().record("slice_cols", [ai, oi, R, C, start, len] {
            if (no_out_grad(oi)) return;
            auto& ag = gbuf(ai);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < len; ++c)
                    ag[static_cast<std::size_t>(r) * C + start + c] +=
                        oi->grad[static_cast<std::size_t>(r) * len + c];
        });
    }
    return out;
}

Tensor select_rows(const Tensor& a, const std::vector<int>& indices) {
    require_2d("select_rows", a);
    const int R = a.rows(), C = a.cols();
    Tensor out = Tensor::zeros({static_cast<int>(indices.size()), C}, rec(a));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= R) {
            throw std::runtime_error("select_rows: index " + std::to_string(indices[i]) + " out of range [0," +
                                     std::to_string(R) + ")");
        }
        std::copy_n(a.data().begin() + static_cast<std::size_t>(indices[i]) * C, C,
                    out.data().begin() + i * C);
    }
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        Tape::instance().record("select_rows", [ai, oi, indices, C] {
            if (no_out_grad(oi)) return;
            auto& ag = gbuf(ai);
            for (std::size_t i = 0; i < indices.size(); ++i)
                for (int c = 0; c < C; ++c)
                    ag[static_cast<std::size_t>(indices[i]) * C + c] += oi->grad[i * C + c];
        });
    }
    return out;
}

Tensor masked_max_rows(const Tensor& a, const std::vector<char>& row_mask) {
    require_2d("masked_max_rows", a);
    const int R = a.rows(), C = a.cols();
    if (static_cast<std::size_t>(R) != row_mask.size()) {
        throw std::runtime_error("masked_max_rows: mask length " + std::to_string(row_mask.size()) +
                                 " does not match rows of " + shape_str(a.shape()));
    }
    bool any = false;
    for (char m : row_mask) any = any || (m != 0);
    if (!any) throw std::runtime_error("masked_max_rows: all rows masked");
    Tensor out = Tensor::zeros({1, C}, rec(a));
    std::vector<int> argmax(C, -1);
    for (int c = 0; c < C; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        for (int r = 0; r < R; ++r) {
            if (!row_mask[r]) continue;
            const double v = a.data()[static_cast<std::size_t>(r) * C + c];
            if (v > best) {
                best = v;
                argmax[c] = r;
            }
        }
        out.data()[c] = best;
    }
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        Tape::instance().record("masked_max_rows", [ai, oi, argmax = std::move(argmax), C] {
            if (no_out_grad(oi)) return;
            auto& ag = gbuf(ai);
            for (int c = 0; c < C; ++c) ag[static_cast<std::size_t>(argmax[c]) * C + c] += oi->grad[c];
        });
    }
    return out;
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    Tensor out = Tensor::from({1, 1}, {s}, rec(a));
    check_finite("sum_all", out.data());
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        Tape::instance().record("sum_all", [ai, oi] {
            if (no_out_grad(oi)) return;
            auto& ag = gbuf(ai);
            for (double& g : ag) g += oi->grad[0];
        });
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    require_2d("softmax_cross_entropy", logits);
    const int R = logits.rows(), C = logits.cols();
    if (static_cast<std::size_t>(R) != targets.size()) {
        throw std::runtime_error("softmax_cross_entropy: " + std::to_string(targets.size()) +
                                 " targets for " + std::to_string(R) + " logit rows");
    }
    std::vector<double> probs(static_cast<std::size_t>(R) * C);
    double loss = 0.0;
    for (int r = 0; r < R; ++r) {
        if (targets[r] < 0 || targets[r] >= C) {
            throw std::runtime_error("softmax_cross_entropy: target " + std::to_string(targets[r]) +
                                     " out of range [0," + std::to_string(C) + ")");
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < C; ++c) mx = std::max(mx, logits.data()[r * C + c]);
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            const double e = std::exp(logits.data()[r * C + c] - mx);
            probs[r * C + c] = e;
            sum += e;
        }
        for (int c = 0; c < C; ++c) probs[r * C + c] /= sum;
        loss += std::log(sum) + mx - logits.data()[r * C + targets[r]];
    }
    loss /= R;
    Tensor out = Tensor::from({1, 1}, {loss}, rec(logits));
    check_finite("softmax_cross_entropy", out.data());
    if (out.requires_grad()) {
        auto li = logits.impl(), oi = out.impl();
        Tape::instance().record("softmax_cross_entropy", [li, oi, targets, probs = std::move(probs), R, C] {
            if (no_out_grad(oi)) return;
            auto& lg = gbuf(li);
            const double g = oi->grad[0] / R;
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c)
                    lg[r * C + c] += g * (probs[r * C + c] - (c == targets[r] ? 1.0 : 0.0));
        });
    }
    return out;
}

// ---- gradient checking ----

double finite_diff_rel_err(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
    return std::fabs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step, double tol) {
    Tensor probe = Tensor::from(x.shape(), x.data(), true);
    Tape::instance().clear();
    Tensor loss = f(probe);
    Tape::instance().backward(loss);
    std::vector<double> analytic = probe.grad();
    if (analytic.empty()) analytic.assign(probe.size(), 0.0);

    GradCheckReport report;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        Tensor xp = Tensor::from(x.shape(), x.data(), false);
        xp.data()[i] += step;
        const double fp = f(xp).value();
        Tensor xm = Tensor::from(x.shape(), x.data(), false);
        xm.data()[i] -= step;
        const double fm = f(xm).value();
        Tape::instance().clear();
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = finite_diff_rel_err(analytic[i], numeric);
        if (err > report.max_rel_err) {
            report.max_rel_err = err;
            report.worst_index = i;
        }
    }
    report.pass = report.max_rel_err < tol;
    if (!report.pass) {
        report.detail = "worst coordinate " + std::to_string(report.worst_index) + " rel err " +
                        std::to_string(report.max_rel_err);
    }
    return report;
}

}   // namespace vlpt
