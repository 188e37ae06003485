#pragma once

#include <string>

#include "bnn/tensor.hpp"

namespace bnn {

// Sign activation, sign(0) = +1, with the HardTanh straight-through gradient:
// upstream passes where |x| <= 1 (inclusive) and is zero outside.
template <typename T>
Tensor<T> sign_ste(const Tensor<T>& x);

// Latent-weight binarization. Forward is the same sign; backward passes the
// upstream gradient through unchanged (identity STE). The windowed variant
// zeroes the gradient where |latent| > 1 instead.
template <typename T>
Tensor<T> binarize_weights(const Tensor<T>& latent, bool windowed_ste = false);

struct PoolSpec {
    int k = 2;
    int stride = 2;
};

// One Conv-BN-[MaxPool]-Sign block. latent_weight stays in [-1,1] by the
// optimizer's post-step clip; the weights used in forward are exactly +-1.
template <typename T>
struct BinConvLayer {
    std::string name;
    Tensor<T> latent_weight;  // [Co,Ci,Kh,Kw]
    int stride = 1;
    int zero_pad = 1;
    Tensor<T> gamma, beta;
    BatchNormState<T> bn_state;
    T bn_eps = T(1e-5);
    T bn_momentum = T(0.1);
    bool has_pool = false;
    PoolSpec pool;
    bool binarize_input = true;  // false for the real-input first layer
    bool has_sign = true;        // false for the logits conv
};

template <typename T>
struct BlockOut {
    Tensor<T> y;
    Tensor<T> tap;  // the tensor directly feeding sign; undefined when has_sign=false
};

// y = sign(maxpool(BN(conv(x, binarize(W))))). The tap is taken after the
// pool by default (the tensor the sign actually consumes); tap_pre_pool
// selects the pre-pool variant.
template <typename T>
BlockOut<T> bnn_block_forward(const Tensor<T>& x, BinConvLayer<T>& layer, NetMode mode,
                              bool windowed_weight_ste = false, bool tap_pre_pool = false);

}  // namespace bnn
