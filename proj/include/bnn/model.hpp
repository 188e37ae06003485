#pragma once

#include <string>
#include <vector>

#include "bnn/bin_layers.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

enum class Family { Vgg, Resnet };

struct NetworkSpec {
    Family family = Family::Vgg;
    int x = 128;           // base width
    bool small_variant = false;  // vgg only: drop the two 4x layers
    int num_classes = 10;
    int in_channels = 3;
    int in_h = 32, in_w = 32;
    bool tap_pre_pool = false;        // dist-loss tap before the max pool
    bool windowed_weight_ste = false; // windowed instead of identity weight STE

    std::string to_string() const;
    static NetworkSpec parse(const std::string& s);
};

// named shape record used by the cost model; h,w are conv OUTPUT dims
struct NamedLayerShape {
    std::string name;
    int64_t c_in, c_out, h, w, kh, kw;
};

template <typename T>
struct BnUnit {
    Tensor<T> gamma, beta;
    BatchNormState<T> state;
    T eps = T(1e-5);
    T momentum = T(0.1);
    Tensor<T> forward(const Tensor<T>& x, NetMode mode) {
        return batchnorm(x, gamma, beta, state, mode, eps, momentum);
    }
};

template <typename T>
struct ConvUnit {
    Tensor<T> latent;  // [Co,Ci,Kh,Kw], clipped to [-1,1]
    int stride = 1, pad = 1;
};

// Pre-activation residual block. The two extra BN layers sit on the main and
// shortcut paths right before the add so the two scales match.
template <typename T>
struct ResBlock {
    BnUnit<T> bn1, bn2;        // before each sign
    ConvUnit<T> conv1, conv2;  // 3x3; conv1 carries the stride
    BnUnit<T> bn3, bn4;        // main / shortcut path, before the add
    bool downsample = false;
    ConvUnit<T> conv_short;    // 1x1, stride 2, only when downsample
};

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T> tensor;
    bool clip_pm1 = false;      // latent binarized weight: clamp to [-1,1] post-step
    bool weight_decay = false;  // eligible for weight decay
};

template <typename T>
struct ForwardResult {
    Tensor<T> logits;                // [B, num_classes]
    std::vector<Tensor<T>> taps;     // one per sign activation, forward order
};

template <typename T>
class Network {
  public:
    NetworkSpec spec;

    // vgg family
    std::vector<BinConvLayer<T>> vgg_layers;

    // resnet family
    ConvUnit<T> stem;
    std::vector<ResBlock<T>> blocks;
    Tensor<T> fc_w, fc_b;  // binarized linear head

    ForwardResult<T> forward(const Tensor<T>& images, NetMode mode);
    std::vector<ParamRef<T>> parameters();

    struct BnStateRef {
        std::string name;
        BatchNormState<T>* state;
        T* eps;
    };
    std::vector<BnStateRef> bn_states();

    int sign_count() const;
    int conv_layer_count() const;
    int64_t binary_weight_count() const;
    // 1-bit weights plus 32-bit BN parameters (gamma, beta, moving stats)
    int64_t param_storage_bytes() const;
};

template <typename T>
Network<T> build_vgg(const NetworkSpec& spec, uint64_t init_seed);
template <typename T>
Network<T> build_resnet(const NetworkSpec& spec, uint64_t init_seed);
template <typename T>
Network<T> build_network(const NetworkSpec& spec, uint64_t init_seed);

// arithmetic shape walk (no tensors); includes shortcut convs and, for
// resnet, the fc head counted as a 1x1 convolution
std::vector<NamedLayerShape> conv_layer_shapes(const NetworkSpec& spec);

}  // namespace bnn
