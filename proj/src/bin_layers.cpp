#include "bnn/bin_layers.hpp"

namespace bnn {

namespace {
constexpr int64_t kParThreshold = 1 << 13;

template <typename T>
void record_bin(Tensor<T>& out, std::vector<std::shared_ptr<TensorImpl<T>>> parents,
                std::function<void(TensorImpl<T>&)> fn) {
    if (!grad_enabled()) return;
    bool any = false;
    for (auto& p : parents) any = any || p->needs_grad();
    if (!any) return;
    out.impl()->parents = std::move(parents);
    out.impl()->backward_fn = std::move(fn);
}
}  // namespace

template <typename T>
Tensor<T> sign_ste(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const int64_t n = out.size();
    const T* xv = x.data();
    T* ov = out.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
    for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] >= T(0) ? T(1) : T(-1);
    record_bin<T>(out, {x.impl()}, [](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const int64_t n = (int64_t)self.values.size();
        const T* sg = self.grad.data();
        const T* xv = p.values.data();
        T* pg = p.grad.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
        for (int64_t i = 0; i < n; ++i)
            if (xv[i] >= T(-1) && xv[i] <= T(1)) pg[i] += sg[i];
    });
    return out;
}

template <typename T>
Tensor<T> binarize_weights(const Tensor<T>& latent, bool windowed_ste) {
    Tensor<T> out(latent.shape());
    const int64_t n = out.size();
    const T* xv = latent.data();
    T* ov = out.data();
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
    for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] >= T(0) ? T(1) : T(-1);
    record_bin<T>(out, {latent.impl()}, [windowed_ste](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const int64_t n = (int64_t)self.values.size();
        const T* sg = self.grad.data();
        const T* xv = p.values.data();
        T* pg = p.grad.data();
        if (windowed_ste) {
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
            for (int64_t i = 0; i < n; ++i)
                if (xv[i] >= T(-1) && xv[i] <= T(1)) pg[i] += sg[i];
        } else {
#pragma omp parallel for schedule(static) if (n >= kParThreshold)
            for (int64_t i = 0; i < n; ++i) pg[i] += sg[i];
        }
    });
    return out;
}

template <typename T>
BlockOut<T> bnn_block_forward(const Tensor<T>& x, BinConvLayer<T>& layer, NetMode mode,
                              bool windowed_weight_ste, bool tap_pre_pool) {
    if (layer.binarize_input) {
        const T* xv = x.data();
        const int64_t n = x.size();
        for (int64_t i = 0; i < n; ++i) {
            if (xv[i] != T(1) && xv[i] != T(-1))
                throw ConfigError("layer " + layer.name + ": binary input expected but value " +
                                  std::to_string((double)xv[i]) + " found at index " +
                                  std::to_string(i));
        }
    }
    Tensor<T> wb = binarize_weights(layer.latent_weight, windowed_weight_ste);
    Tensor<T> y = conv2d(x, wb, layer.stride, layer.zero_pad);
    y = batchnorm(y, layer.gamma, layer.beta, layer.bn_state, mode, layer.bn_eps,
                  layer.bn_momentum);
    Tensor<T> tap = y;
    if (layer.has_pool) {
        y = maxpool2d(y, layer.pool.k, layer.pool.stride);
        if (!tap_pre_pool) tap = y;
    }
    BlockOut<T> out;
    if (layer.has_sign) {
        out.y = sign_ste(y);
        out.tap = tap;
    } else {
        out.y = y;
    }
    return out;
}

#define BNN_INSTANTIATE_BIN(T)                                                      \
    template Tensor<T> sign_ste<T>(const Tensor<T>&);                               \
    template Tensor<T> binarize_weights<T>(const Tensor<T>&, bool);                 \
    template BlockOut<T> bnn_block_forward<T>(const Tensor<T>&, BinConvLayer<T>&,   \
                                              NetMode, bool, bool);

BNN_INSTANTIATE_BIN(float)
BNN_INSTANTIATE_BIN(double)

}  // namespace bnn
