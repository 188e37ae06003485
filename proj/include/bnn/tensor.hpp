#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "bnn/common.hpp"

namespace bnn {

// Reverse-mode autodiff over dense tensors. Graphs are straight-line,
// built per training step and consumed by a single backward() call.

bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    bool prev;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // lazily allocated, same length as values
    bool requires_grad = false;

    // autograd node record (null for leaves)
    std::vector<std::shared_ptr<TensorImpl<T>>> parents;
    std::function<void(TensorImpl<T>&)> backward_fn;

    bool needs_grad() const { return requires_grad || backward_fn != nullptr; }
    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    }
};

template <typename T>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl<T>>()) {
        impl_->shape = std::move(shape);
        impl_->values.assign((size_t)numel(impl_->shape), fill);
        impl_->requires_grad = requires_grad;
    }
    static Tensor from_values(Shape shape, std::vector<T> values, bool requires_grad = false) {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        if ((int64_t)values.size() != numel(shape))
            throw ConfigError("tensor value count " + std::to_string(values.size()) +
                              " does not match shape " + shape_str(shape));
        t.impl_->shape = std::move(shape);
        t.impl_->values = std::move(values);
        t.impl_->requires_grad = requires_grad;
        return t;
    }
    static Tensor scalar(T v) { return from_values({1}, {v}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t size() const { return (int64_t)impl_->values.size(); }

    T* data() { return impl_->values.data(); }
    const T* data() const { return impl_->values.data(); }
    std::vector<T>& values() { return impl_->values; }
    const std::vector<T>& values() const { return impl_->values; }

    T item() const {
        if (size() != 1) throw ConfigError("item() on non-scalar tensor " + shape_str(shape()));
        return impl_->values[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    T* grad_data() {
        impl_->ensure_grad();
        return impl_->grad.data();
    }
    const std::vector<T>& grad() const { return impl_->grad; }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }

    // Runs reverse-mode accumulation from this scalar. The tape is released
    // as it is consumed; a graph supports exactly one backward pass.
    void backward() const;

    std::shared_ptr<TensorImpl<T>>& impl() { return impl_; }
    const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

  private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

// Topologically ordered executor over the recorded operations.
template <typename T>
class Graph {
  public:
    // Visits every reachable op node exactly once, in reverse topological
    // order, releasing each node after its gradients are propagated.
    static void backward(const Tensor<T>& root);
};

enum class NetMode { Train, Eval };

template <typename T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;  // population variance
    bool initialized = false;
};

// ---- elementwise ----
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// first argument wins ties: d/da at a==b is 1
template <typename T> Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> relu_pos(const Tensor<T>& x);  // (x)_+, grad 0 at x==0
template <typename T> Tensor<T> abs_val(const Tensor<T>& x);   // grad 0 at x==0
template <typename T> Tensor<T> square(const Tensor<T>& x);
template <typename T> Tensor<T> affine(const Tensor<T>& x, T scale, T shift);

// ---- reductions (64-bit accumulation regardless of T) ----
template <typename T> Tensor<T> mean_all(const Tensor<T>& x);
template <typename T> Tensor<T> std_population(const Tensor<T>& x, T eps_std);
template <typename T> Tensor<T> sum_all(const Tensor<T>& x);

// ---- NN ops ----
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad);

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormState<T>& state, NetMode mode, T eps, T momentum);

template <typename T> Tensor<T> maxpool2d(const Tensor<T>& x, int k, int stride);
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

// per-channel stats over (B,H,W) of a [B,C,H,W] tensor, as [C] tensors
template <typename T> Tensor<T> channel_mean(const Tensor<T>& x);
template <typename T> Tensor<T> channel_std(const Tensor<T>& x, T eps_std);

}  // namespace bnn
