#include <cmath>

#include "bnn/kernels.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

namespace {

template <typename T>
void record_nn(Tensor<T>& out, std::vector<std::shared_ptr<TensorImpl<T>>> parents,
               std::function<void(TensorImpl<T>&)> fn) {
    if (!grad_enabled()) return;
    bool any = false;
    for (auto& p : parents) any = any || p->needs_grad();
    if (!any) return;
    out.impl()->parents = std::move(parents);
    out.impl()->backward_fn = std::move(fn);
}

template <typename T>
void check_4d(const Tensor<T>& x, const char* op) {
    if (x.shape().size() != 4)
        throw ConfigError(std::string(op) + ": expected 4-d tensor, got " + shape_str(x.shape()));
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
    check_4d(x, "conv2d input");
    check_4d(w, "conv2d weight");
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1, got " + std::to_string(stride));
    if (pad < 0) throw ConfigError("conv2d: negative padding " + std::to_string(pad));
    if (x.shape()[1] != w.shape()[1])
        throw ConfigError("conv2d: input channels " + std::to_string(x.shape()[1]) +
                          " != weight channels " + std::to_string(w.shape()[1]) + " (input " +
                          shape_str(x.shape()) + ", weight " + shape_str(w.shape()) + ")");
    kernels::ConvGeometry g{x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3],
                            w.shape()[0], w.shape()[2], w.shape()[3], stride, pad};
    if (g.out_h() < 1 || g.out_w() < 1)
        throw ConfigError("conv2d: kernel " + shape_str(w.shape()) + " too large for input " +
                          shape_str(x.shape()) + " with pad " + std::to_string(pad));

    Tensor<T> out({g.batch, g.c_out, g.out_h(), g.out_w()});
    kernels::conv2d_forward(x.data(), w.data(), out.data(), g);
    record_nn<T>(out, {x.impl(), w.impl()}, [g](TensorImpl<T>& self) {
        auto& xi = *self.parents[0];
        auto& wi = *self.parents[1];
        T* dx = nullptr;
        T* dw = nullptr;
        if (xi.needs_grad()) {
            xi.ensure_grad();
            dx = xi.grad.data();
        }
        if (wi.needs_grad()) {
            wi.ensure_grad();
            dw = wi.grad.data();
        }
        kernels::conv2d_backward(xi.values.data(), wi.values.data(), self.grad.data(), dx, dw, g);
    });
    return out;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormState<T>& state, NetMode mode, T eps, T momentum) {
    check_4d(x, "batchnorm");
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (gamma.size() != C || beta.size() != C)
        throw ConfigError("batchnorm: gamma/beta size must equal channels " + std::to_string(C));
    if (!(eps > T(0))) throw ConfigError("batchnorm: eps must be > 0");
    const int64_t hw = (int64_t)H * W;
    const int64_t n = (int64_t)B * hw;
    const int64_t cstride = hw;
    const int64_t bstride = (int64_t)C * hw;

    std::vector<T> mu(C), inv_std(C);
    if (mode == NetMode::Train) {
        if ((int)state.running_mean.size() != C) {
            state.running_mean.assign(C, T(0));
            state.running_var.assign(C, T(1));
        }
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) {
                const T* p = x.data() + b * bstride + c * cstride;
                for (int64_t i = 0; i < hw; ++i) acc += (double)p[i];
            }
            const double m = acc / (double)n;
            double vacc = 0.0;
            for (int b = 0; b < B; ++b) {
                const T* p = x.data() + b * bstride + c * cstride;
                for (int64_t i = 0; i < hw; ++i) {
                    const double d = (double)p[i] - m;
                    vacc += d * d;
                }
            }
            const double v = vacc / (double)n;
            mu[c] = (T)m;
            inv_std[c] = (T)(1.0 / std::sqrt(v + (double)eps));
            state.running_mean[c] = (T(1) - momentum) * state.running_mean[c] + momentum * (T)m;
            state.running_var[c] = (T(1) - momentum) * state.running_var[c] + momentum * (T)v;
        }
        state.initialized = true;
    } else {
        if (!state.initialized)
            throw ConfigError("batchnorm: eval mode before any train step and no initialized moving stats");
        for (int c = 0; c < C; ++c) {
            mu[c] = state.running_mean[c];
            inv_std[c] = (T)(1.0 / std::sqrt((double)state.running_var[c] + (double)eps));
        }
    }

    Tensor<T> out(x.shape());
    const T* xv = x.data();
    const T* gv = gamma.data();
    const T* bv = beta.data();
    T* ov = out.data();
#pragma omp parallel for schedule(static) collapse(2)
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const T* p = xv + b * bstride + c * cstride;
            T* q = ov + b * bstride + c * cstride;
            const T m = mu[c], is = inv_std[c], g = gv[c], bb = bv[c];
            for (int64_t i = 0; i < hw; ++i) q[i] = g * (p[i] - m) * is + bb;
        }
    }

    const bool train_stats = mode == NetMode::Train;
    record_nn<T>(out, {x.impl(), gamma.impl(), beta.impl()},
                 [mu, inv_std, B, C, hw, bstride, cstride, n, train_stats](TensorImpl<T>& self) {
                     auto& xi = *self.parents[0];
                     auto& gi = *self.parents[1];
                     auto& bi = *self.parents[2];
                     const T* xv = xi.values.data();
                     const T* sg = self.grad.data();
                     const T* gv = gi.values.data();

                     // per-channel sums of dy and dy*xhat (64-bit accumulation)
                     std::vector<double> sum_dy(C), sum_dy_xhat(C);
#pragma omp parallel for schedule(static)
                     for (int c = 0; c < C; ++c) {
                         double s = 0.0, sx = 0.0;
                         for (int b = 0; b < B; ++b) {
                             const T* p = xv + b * bstride + c * cstride;
                             const T* q = sg + b * bstride + c * cstride;
                             for (int64_t i = 0; i < hw; ++i) {
                                 const double xhat = ((double)p[i] - (double)mu[c]) * (double)inv_std[c];
                                 s += (double)q[i];
                                 sx += (double)q[i] * xhat;
                             }
                         }
                         sum_dy[c] = s;
                         sum_dy_xhat[c] = sx;
                     }
                     if (gi.needs_grad()) {
                         gi.ensure_grad();
                         for (int c = 0; c < C; ++c) gi.grad[c] += (T)sum_dy_xhat[c];
                     }
                     if (bi.needs_grad()) {
                         bi.ensure_grad();
                         for (int c = 0; c < C; ++c) bi.grad[c] += (T)sum_dy[c];
                     }
                     if (xi.needs_grad()) {
                         xi.ensure_grad();
                         T* pg = xi.grad.data();
#pragma omp parallel for schedule(static) collapse(2)
                         for (int b = 0; b < B; ++b) {
                             for (int c = 0; c < C; ++c) {
                                 const T* p = xv + b * bstride + c * cstride;
                                 const T* q = sg + b * bstride + c * cstride;
                                 T* r = pg + b * bstride + c * cstride;
                                 const T coef = gv[c] * inv_std[c];
                                 if (train_stats) {
                                     const T mdy = (T)(sum_dy[c] / (double)n);
                                     const T mdyx = (T)(sum_dy_xhat[c] / (double)n);
                                     for (int64_t i = 0; i < hw; ++i) {
                                         const T xhat = (p[i] - mu[c]) * inv_std[c];
                                         r[i] += coef * (q[i] - mdy - xhat * mdyx);
                                     }
                                 } else {
                                     for (int64_t i = 0; i < hw; ++i) r[i] += coef * q[i];
                                 }
                             }
                         }
                     }
                 });
    return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k, int stride) {
    check_4d(x, "maxpool2d");
    if (k < 1 || stride < 1) throw ConfigError("maxpool2d: window and stride must be >= 1");
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int OH = (H - k) / stride + 1;
    const int OW = (W - k) / stride + 1;
    if (OH < 1 || OW < 1)
        throw ConfigError("maxpool2d: window " + std::to_string(k) + " too large for input " +
                          shape_str(x.shape()));

    Tensor<T> out({B, C, OH, OW});
    auto argmax = std::make_shared<std::vector<int64_t>>((size_t)B * C * OH * OW);
    const T* xv = x.data();
    T* ov = out.data();
    int64_t* am = argmax->data();
#pragma omp parallel for schedule(static) collapse(2)
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const int64_t plane = ((int64_t)b * C + c) * H * W;
            const int64_t oplane = ((int64_t)b * C + c) * OH * OW;
            for (int oy = 0; oy < OH; ++oy) {
                for (int ox = 0; ox < OW; ++ox) {
                    // first max in scan order wins ties
                    int64_t best_idx = plane + (int64_t)(oy * stride) * W + ox * stride;
                    T best = xv[best_idx];
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int64_t idx =
                                plane + (int64_t)(oy * stride + ky) * W + (ox * stride + kx);
                            if (xv[idx] > best) {
                                best = xv[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    ov[oplane + (int64_t)oy * OW + ox] = best;
                    am[oplane + (int64_t)oy * OW + ox] = best_idx;
                }
            }
        }
    }
    record_nn<T>(out, {x.impl()}, [argmax, B, C, OH, OW](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const T* sg = self.grad.data();
        T* pg = p.grad.data();
        const int64_t* am = argmax->data();
        // planes are disjoint, so the scatter is race-free
#pragma omp parallel for schedule(static)
        for (int64_t bc = 0; bc < (int64_t)B * C; ++bc) {
            const int64_t o0 = bc * OH * OW;
            for (int64_t i = 0; i < (int64_t)OH * OW; ++i) pg[am[o0 + i]] += sg[o0 + i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    check_4d(x, "global_avg_pool");
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int64_t hw = (int64_t)H * W;
    Tensor<T> out({B, C});
    const T* xv = x.data();
    T* ov = out.data();
    // plain row-major accumulation in double; the fused-engine epilogue
    // reproduces exactly this order
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const T* p = xv + ((int64_t)b * C + c) * hw;
            double acc = 0.0;
            for (int64_t i = 0; i < hw; ++i) acc += (double)p[i];
            ov[b * C + c] = (T)(acc / (double)hw);
        }
    }
    record_nn<T>(out, {x.impl()}, [B, C, hw](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const T* sg = self.grad.data();
        T* pg = p.grad.data();
#pragma omp parallel for schedule(static)
        for (int64_t bc = 0; bc < (int64_t)B * C; ++bc) {
            const T g = sg[bc] / (T)hw;
            T* r = pg + bc * hw;
            for (int64_t i = 0; i < hw; ++i) r[i] += g;
        }
    });
    return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    if (x.shape().size() != 2 || w.shape().size() != 2)
        throw ConfigError("linear: expected 2-d input and weight, got " + shape_str(x.shape()) +
                          " and " + shape_str(w.shape()));
    const int B = x.shape()[0], In = x.shape()[1], Out = w.shape()[0];
    if (w.shape()[1] != In)
        throw ConfigError("linear: weight " + shape_str(w.shape()) + " incompatible with input " +
                          shape_str(x.shape()));
    const bool has_bias = bias.defined();
    if (has_bias && bias.size() != Out) throw ConfigError("linear: bias size must equal output");

    Tensor<T> out({B, Out});
    kernels::gemm_abt_acc(B, Out, In, x.data(), w.data(), out.data());
    if (has_bias) {
        T* ov = out.data();
        const T* bv = bias.data();
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < Out; ++o) ov[b * Out + o] += bv[o];
    }

    std::vector<std::shared_ptr<TensorImpl<T>>> parents = {x.impl(), w.impl()};
    if (has_bias) parents.push_back(bias.impl());
    record_nn<T>(out, std::move(parents), [B, In, Out, has_bias](TensorImpl<T>& self) {
        auto& xi = *self.parents[0];
        auto& wi = *self.parents[1];
        const T* sg = self.grad.data();
        if (xi.needs_grad()) {
            xi.ensure_grad();
            kernels::gemm_acc(B, Out, In, sg, wi.values.data(), xi.grad.data());
        }
        if (wi.needs_grad()) {
            wi.ensure_grad();
            std::vector<T> sgt((size_t)Out * B);
            for (int b = 0; b < B; ++b)
                for (int o = 0; o < Out; ++o) sgt[(int64_t)o * B + b] = sg[(int64_t)b * Out + o];
            kernels::gemm_acc(Out, B, In, sgt.data(), xi.values.data(), wi.grad.data());
        }
        if (has_bias) {
            auto& bi = *self.parents[2];
            if (bi.needs_grad()) {
                bi.ensure_grad();
                for (int o = 0; o < Out; ++o) {
                    double acc = 0.0;
                    for (int b = 0; b < B; ++b) acc += (double)sg[(int64_t)b * Out + o];
                    bi.grad[o] += (T)acc;
                }
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.shape().size() != 2)
        throw ConfigError("softmax_cross_entropy: expected [batch, classes] logits");
    const int B = logits.shape()[0], K = logits.shape()[1];
    if ((int)labels.size() != B)
        throw ConfigError("softmax_cross_entropy: label count " + std::to_string(labels.size()) +
                          " != batch " + std::to_string(B));
    for (int b = 0; b < B; ++b)
        if (labels[b] < 0 || labels[b] >= K)
            throw ConfigError("softmax_cross_entropy: label " + std::to_string(labels[b]) +
                              " out of range [0," + std::to_string(K) + ")");

    auto probs = std::make_shared<std::vector<T>>((size_t)B * K);
    const T* lv = logits.data();
    double loss_acc = 0.0;
    for (int b = 0; b < B; ++b) {
        const T* row = lv + (int64_t)b * K;
        double mx = (double)row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, (double)row[k]);
        double z = 0.0;
        for (int k = 0; k < K; ++k) z += std::exp((double)row[k] - mx);
        const double logz = std::log(z) + mx;
        for (int k = 0; k < K; ++k)
            (*probs)[(int64_t)b * K + k] = (T)std::exp((double)row[k] - logz);
        loss_acc += logz - (double)row[labels[b]];
    }
    Tensor<T> out = Tensor<T>::scalar((T)(loss_acc / (double)B));
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    record_nn<T>(out, {logits.impl()}, [probs, labels_copy, B, K](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const T g = self.grad[0] / (T)B;
        T* pg = p.grad.data();
        const T* pr = probs->data();
        for (int b = 0; b < B; ++b) {
            const int lbl = (*labels_copy)[b];
            for (int k = 0; k < K; ++k) {
                T d = pr[(int64_t)b * K + k];
                if (k == lbl) d -= T(1);
                pg[(int64_t)b * K + k] += g * d;
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
    check_4d(x, "channel_mean");
    const int B = x.shape()[0], C = x.shape()[1];
    const int64_t hw = (int64_t)x.shape()[2] * x.shape()[3];
    const int64_t n = (int64_t)B * hw;
    if (n < 1) throw ConfigError("channel_mean: empty channel");
    Tensor<T> out({C});
    const T* xv = x.data();
    T* ov = out.data();
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int b = 0; b < B; ++b) {
            const T* p = xv + ((int64_t)b * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) acc += (double)p[i];
        }
        ov[c] = (T)(acc / (double)n);
    }
    record_nn<T>(out, {x.impl()}, [B, C, hw, n](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const T* sg = self.grad.data();
        T* pg = p.grad.data();
#pragma omp parallel for schedule(static) collapse(2)
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < C; ++c) {
                const T g = sg[c] / (T)n;
                T* r = pg + ((int64_t)b * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) r[i] += g;
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> channel_std(const Tensor<T>& x, T eps_std) {
    check_4d(x, "channel_std");
    const int B = x.shape()[0], C = x.shape()[1];
    const int64_t hw = (int64_t)x.shape()[2] * x.shape()[3];
    const int64_t n = (int64_t)B * hw;
    if (n < 2) throw ConfigError("channel_std: needs at least 2 elements per channel, got " +
                                 std::to_string(n));
    Tensor<T> out({C});
    auto mu = std::make_shared<std::vector<T>>(C);
    const T* xv = x.data();
    T* ov = out.data();
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int b = 0; b < B; ++b) {
            const T* p = xv + ((int64_t)b * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) acc += (double)p[i];
        }
        const double m = acc / (double)n;
        double vacc = 0.0;
        for (int b = 0; b < B; ++b) {
            const T* p = xv + ((int64_t)b * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
                const double d = (double)p[i] - m;
                vacc += d * d;
            }
        }
        (*mu)[c] = (T)m;
        ov[c] = (T)std::sqrt(vacc / (double)n + (double)eps_std);
    }
    auto sigma = std::make_shared<std::vector<T>>(out.values());
    record_nn<T>(out, {x.impl()}, [mu, sigma, B, C, hw, n](TensorImpl<T>& self) {
        auto& p = *self.parents[0];
        if (!p.needs_grad()) return;
        p.ensure_grad();
        const T* sg = self.grad.data();
        const T* xv = p.values.data();
        T* pg = p.grad.data();
#pragma omp parallel for schedule(static) collapse(2)
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < C; ++c) {
                const T coef = sg[c] / ((T)n * (*sigma)[c]);
                const T m = (*mu)[c];
                const T* q = xv + ((int64_t)b * C + c) * hw;
                T* r = pg + ((int64_t)b * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) r[i] += coef * (q[i] - m);
            }
        }
    });
    return out;
}

#define BNN_INSTANTIATE_NN(T)                                                                 \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, int, int);              \
    template Tensor<T> batchnorm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                    BatchNormState<T>&, NetMode, T, T);                      \
    template Tensor<T> maxpool2d<T>(const Tensor<T>&, int, int);                             \
    template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                 \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
    template Tensor<T> softmax_cross_entropy<T>(const Tensor<T>&, const std::vector<int>&);  \
    template Tensor<T> channel_mean<T>(const Tensor<T>&);                                    \
    template Tensor<T> channel_std<T>(const Tensor<T>&, T);

BNN_INSTANTIATE_NN(float)
BNN_INSTANTIATE_NN(double)

}  // namespace bnn
