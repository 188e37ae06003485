#include "bnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace bnn {

namespace {
thread_local bool g_grad_enabled = true;
constexpr int64_t kParThreshold = 1 << 13;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

template <typename T>
void Graph<T>::backward(const Tensor<T>& root) {
    if (root.size() != 1) throw ConfigError("backward() requires a scalar loss");
    TensorImpl<T>* r = root.impl().get();

    std::vector<TensorImpl<T>*> order;
    std::unordered_set<TensorImpl<T>*> visited;
    std::vector<std::pair<TensorImpl<T>*, size_t>> stack;
    visited.insert(r);
    stack.push_back({r, 0});
    while (!stack.empty()) {
        auto& top = stack.back();
        if (top.second < top.first->parents.size()) {
            TensorImpl<T>* p = top.first->parents[top.second].get();
            ++top.second;
            if (p->backward_fn && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(top.first);
            stack.pop_back();
        }
    }

    root.impl()->ensure_grad();
    root.impl()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl<T>* node = *it;
        if (!node->backward_fn) continue;
        node->backward_fn(*node);
        // release the tape as it is consumed
        node->backward_fn = nullptr;
        node->parents.clear();
    }
}

template <typename T>
void Tensor<T>::backward() const {
    Graph<T>::backward(*this);
}

namespace {

template <typename T>
void record(Tensor<T>& out, std::vector<std::shared_ptr<TensorImpl<T>>> parents,
            std::function<void(TensorImpl<T>&)> fn) {
    if (!g_grad_enabled) return;
    bool any = false;
    for (auto& p : parents) any = any || p->needs_grad();
    if (!any) return;
    out.impl()->parents = std::move(parents);
    out.impl()->backward_fn = std::move(fn);
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}

template <typename T>
void check_nonempty(const Tensor<T>& x, const char* op) {
    if (x.size() == 0) throw ConfigError(std::string(op) + ": empty tensor");
}

}  // namespace

// ---------------- elementwise ----------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    const int64_t n = out.size();
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
    record<T>(out, {a.impl(), b.impl()}, [](TensorImpl<T>& self) {
        const int64_t n = (int64_t)self.values.size();
        const T* sg = self.grad.data();
        for (auto& pp : self.parents) {
            if (!pp->needs_grad()) continue;
            pp->ensure_grad();
            T* pg = pp->grad.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
            for (int64_t i = 0; i < n; ++i) pg[i] += sg[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    const int64_t n = out.size();
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
    record<T>(out, {a.impl(), b.impl()}, [](TensorImpl<T>& self) {
        const int64_t n = (int64_t)self.values.size();
        const T* sg = self.grad.data();
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.needs_grad()) {
            pa.ensure_grad();
            T* pg = pa.grad.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
            for (int64_t i = 0; i < n; ++i) pg[i] += sg[i];
        }
        if (pb.needs_grad()) {
            pb.ensure_grad();
            T* pg = pb.grad.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
            for (int64_t i = 0; i < n; ++i) pg[i] -= sg[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    const int64_t n = out.size();
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
    record<T>(out, {a.impl(), b.impl()}, [](TensorImpl<T>& self) {
        const int64_t n = (int64_t)self.values.size();
        const T* sg = self.grad.data();
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.needs_grad()) {
            pa.ensure_grad();
            T* pg = pa.grad.data();
            const T* bv = pb.values.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
            for (int64_t i = 0; i < n; ++i) pg[i] += sg[i] * bv[i];
        }
        if (pb.needs_grad()) {
            pb.ensure_grad();
            T* pg = pb.grad.data();
            const T* av = pa.values.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
            for (int64_t i = 0; i < n; ++i) pg[i] += sg[i] * av[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "minimum");
    Tensor<T> out(a.shape());
    const int64_t n = out.size();
    const T* av = a.data();
    const T* bv = b.data();
    T* ov = out.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] <= bv[i] ? av[i] : bv[i];
    record<T>(out, {a.impl(), b.impl()}, [](TensorImpl<T>& self) {
        const int64_t n = (int64_t)self.values.size();
        const T* sg = self.grad.data();
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const T* av = pa.values.data();
        const T* bv = pb.values.data();
        if (pa.needs_grad()) {
            pa.ensure_grad();
            T* pg = pa.grad.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
            for (int64_t i = 0; i < n; ++i)
                if (av[i] <= bv[i]) pg[i] += sg[i];
        }
        if (pb.needs_grad()) {
            pb.ensure_grad();
            T* pg = pb.grad.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
            for (int64_t i = 0; i < n; ++i)
                if (av[i] > bv[i]) pg[i] += sg[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> relu_pos(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const int64_t n = out.size();
    const T* xv = x.data();
    T* ov = out.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
    for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
    record<T>(out, {x.impl()}, [](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const int64_t n = (int64_t)self.values.size();
        const T* sg = self.grad.data();
        const T* xv = p.values.data();
        T* pg = p.grad.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
        for (int64_t i = 0; i < n; ++i)
            if (xv[i] > T(0)) pg[i] += sg[i];
    });
    return out;
}

template <typename T>
Tensor<T> abs_val(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const int64_t n = out.size();
    const T* xv = x.data();
    T* ov = out.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
    for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] < T(0) ? -xv[i] : xv[i];
    record<T>(out, {x.impl()}, [](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const int64_t n = (int64_t)self.values.size();
        const T* sg = self.grad.data();
        const T* xv = p.values.data();
        T* pg = p.grad.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
        for (int64_t i = 0; i < n; ++i) {
            if (xv[i] > T(0))
                pg[i] += sg[i];
            else if (xv[i] < T(0))
                pg[i] -= sg[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const int64_t n = out.size();
    const T* xv = x.data();
    T* ov = out.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
    for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] * xv[i];
    record<T>(out, {x.impl()}, [](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const int64_t n = (int64_t)self.values.size();
        const T* sg = self.grad.data();
        const T* xv = p.values.data();
        T* pg = p.grad.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
        for (int64_t i = 0; i < n; ++i) pg[i] += T(2) * xv[i] * sg[i];
    });
    return out;
}

template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
    Tensor<T> out(x.shape());
    const int64_t n = out.size();
    const T* xv = x.data();
    T* ov = out.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
    for (int64_t i = 0; i < n; ++i) ov[i] = scale * xv[i] + shift;
    record<T>(out, {x.impl()}, [scale](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const int64_t n = (int64_t)self.values.size();
        const T* sg = self.grad.data();
        T* pg = p.grad.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
        for (int64_t i = 0; i < n; ++i) pg[i] += scale * sg[i];
    });
    return out;
}

// ---------------- reductions ----------------
// Accumulation is always 64-bit, independent of T.

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    check_nonempty(x, "sum");
    const int64_t n = x.size();
    const T* xv = x.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += (double)xv[i];
    Tensor<T> out = Tensor<T>::scalar((T)acc);
    record<T>(out, {x.impl()}, [](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const T g = self.grad[0];
        const int64_t n = (int64_t)p.values.size();
        T* pg = p.grad.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
        for (int64_t i = 0; i < n; ++i) pg[i] += g;
    });
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    check_nonempty(x, "mean");
    const int64_t n = x.size();
    const T* xv = x.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += (double)xv[i];
    Tensor<T> out = Tensor<T>::scalar((T)(acc / (double)n));
    record<T>(out, {x.impl()}, [](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const int64_t n = (int64_t)p.values.size();
        const T g = self.grad[0] / (T)n;
        T* pg = p.grad.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
        for (int64_t i = 0; i < n; ++i) pg[i] += g;
    });
    return out;
}

template <typename T>
Tensor<T> std_population(const Tensor<T>& x, T eps_std) {
    check_nonempty(x, "std_population");
    const int64_t n = x.size();
    const T* xv = x.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += (double)xv[i];
    const double mu = acc / (double)n;
    double vacc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = (double)xv[i] - mu;
        vacc += d * d;
    }
    const double sigma = std::sqrt(vacc / (double)n + (double)eps_std);
    Tensor<T> out = Tensor<T>::scalar((T)sigma);
    record<T>(out, {x.impl()}, [mu, sigma](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const int64_t n = (int64_t)p.values.size();
        const T g = self.grad[0];
        const T* xv = p.values.data();
        T* pg = p.grad.data();
        const T coef = g / (T)((double)n * sigma);
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
        for (int64_t i = 0; i < n; ++i) pg[i] += coef * (xv[i] - (T)mu);
    });
    return out;
}

#define BNN_INSTANTIATE_TENSOR(T)                                              \
    template class Graph<T>;                                                   \
    template void Tensor<T>::backward() const;                                 \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);             \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);             \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);             \
    template Tensor<T> minimum<T>(const Tensor<T>&, const Tensor<T>&);         \
    template Tensor<T> relu_pos<T>(const Tensor<T>&);                          \
    template Tensor<T> abs_val<T>(const Tensor<T>&);                           \
    template Tensor<T> square<T>(const Tensor<T>&);                            \
    template Tensor<T> affine<T>(const Tensor<T>&, T, T);                      \
    template Tensor<T> sum_all<T>(const Tensor<T>&);                           \
    template Tensor<T> mean_all<T>(const Tensor<T>&);                          \
    template Tensor<T> std_population<T>(const Tensor<T>&, T);

BNN_INSTANTIATE_TENSOR(float)
BNN_INSTANTIATE_TENSOR(double)

}  // namespace bnn
