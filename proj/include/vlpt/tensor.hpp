#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace vlpt {

// Dense row-major float64 tensor with reverse-mode autodiff.
//
// Tensors are cheap handles onto shared storage. Every differentiable op
// records a node on a global tape when any input requires grad; backward()
// replays the tape in reverse and clears it.

struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;   // empty until needed
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> data,
                       bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int rows() const { return impl_->shape[0]; }
    int cols() const { return impl_->shape.size() > 1 ? impl_->shape[1] : 1; }
    std::size_t size() const { return impl_->data.size(); }

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }

    double& at(int r, int c) { return impl_->data[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return impl_->data[static_cast<std::size_t>(r) * cols() + c]; }

    double value() const;   // scalar tensors only

    bool requires_grad() const { return impl_ && impl_->requires_grad; }

    // Gradient buffer; allocated zero-filled on first access.
    std::vector<double>& grad();
    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    void zero_grad();
    void drop_grad();   // deallocate the buffer (test hook for the optimizer error path)

    Tensor detach() const;   // deep copy, requires_grad = false

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
};

// ---- tape ----

// One entry per recorded op, in execution order.
struct TapeNode {
    const char* op = "";
    std::function<void()> backward;
};

class Tape {
public:
    static Tape& instance();
    void record(const char* op, std::function<void()> fn);
    bool empty() const { return nodes_.empty(); }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Runs adjoints in reverse execution order, seeding grad(loss) = 1,
    // then clears the tape. Throws if loss is not scalar or the tape is empty.
    void backward(Tensor loss);

private:
    std::vector<TapeNode> nodes_;
};

inline void backward(Tensor loss) { Tape::instance().backward(std::move(loss)); }

// ---- forward ops ----
// All ops validate shapes (diagnostics name both shapes) and abort on
// non-finite outputs, naming the op.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& a, const Tensor& v);   // v broadcast over rows of a
Tensor scale(const Tensor& a, double s);
Tensor softmax_rows(const Tensor& a);
Tensor layernorm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias,
                      double eps = 1e-5);
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, int start, int len);
Tensor slice_cols(const Tensor& a, int start, int len);
Tensor select_rows(const Tensor& a, const std::vector<int>& indices);
// Columnwise max over unmasked rows; mask[r] != 0 keeps row r. Gradient is
// routed to the first argmax row, so masked rows never influence the result.
Tensor masked_max_rows(const Tensor& a, const std::vector<char>& row_mask);
Tensor sum_all(const Tensor& a);
// Mean cross-entropy over rows of `logits` against integer targets, fused
// with the softmax for stability (max-subtraction). Scalar result.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets);

// ---- gradient checking ----

struct GradCheckReport {
    bool pass = true;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    std::string detail;
};

// Central finite differences of f at x against the analytic gradient.
// f must be deterministic and return a scalar.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           Tensor x, double step = 1e-5, double tol = 1e-4);

double finite_diff_rel_err(double analytic, double numeric);

}   // namespace vlpt
