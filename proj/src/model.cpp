#include "bnn/model.hpp"

#include <cmath>
#include <sstream>

#include "bnn/rng.hpp"

namespace bnn {

std::string NetworkSpec::to_string() const {
    std::ostringstream os;
    os << "family=" << (family == Family::Vgg ? "vgg" : "resnet") << ",x=" << x
       << ",small=" << (small_variant ? "true" : "false") << ",classes=" << num_classes
       << ",in=" << in_channels << "x" << in_h << "x" << in_w
       << ",tap=" << (tap_pre_pool ? "prepool" : "postpool")
       << ",wste=" << (windowed_weight_ste ? "window" : "identity");
    return os.str();
}

NetworkSpec NetworkSpec::parse(const std::string& s) {
    NetworkSpec spec;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        check_config(eq != std::string::npos, "network spec: expected key=value, got '" + item + "'");
        const std::string key = item.substr(0, eq);
        const std::string val = item.substr(eq + 1);
        if (key == "family") {
            if (val == "vgg")
                spec.family = Family::Vgg;
            else if (val == "resnet")
                spec.family = Family::Resnet;
            else
                throw ConfigError("network spec: unknown family '" + val + "'");
        } else if (key == "x") {
            spec.x = std::stoi(val);
        } else if (key == "small") {
            spec.small_variant = val == "true";
        } else if (key == "classes") {
            spec.num_classes = std::stoi(val);
        } else if (key == "in") {
            int c, h, w;
            if (std::sscanf(val.c_str(), "%dx%dx%d", &c, &h, &w) != 3)
                throw ConfigError("network spec: bad input geometry '" + val + "'");
            spec.in_channels = c;
            spec.in_h = h;
            spec.in_w = w;
        } else if (key == "tap") {
            spec.tap_pre_pool = val == "prepool";
        } else if (key == "wste") {
            spec.windowed_weight_ste = val == "window";
        } else {
            throw ConfigError("network spec: unknown key '" + key + "'");
        }
    }
    check_config(spec.x >= 1, "network spec: x must be >= 1");
    check_config(spec.num_classes >= 2, "network spec: need at least 2 classes");
    return spec;
}

namespace {

// Glorot-uniform latent weights; sign of the init decides the initial binary weight.
template <typename T>
Tensor<T> init_conv_weight(int co, int ci, int k, Rng& rng) {
    Tensor<T> w({co, ci, k, k}, T(0), true);
    const double fan_in = (double)ci * k * k;
    const double fan_out = (double)co * k * k;
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    T* p = w.data();
    for (int64_t i = 0; i < w.size(); ++i) p[i] = (T)rng.uniform(-bound, bound);
    return w;
}

template <typename T>
BnUnit<T> init_bn(int c) {
    BnUnit<T> bn;
    bn.gamma = Tensor<T>({c}, T(1), true);
    bn.beta = Tensor<T>({c}, T(0), true);
    return bn;
}

struct VggLayerDef {
    int width;       // output channels (x multiples or num_classes)
    bool pool;
    bool sign;
};

std::vector<VggLayerDef> vgg_layout(const NetworkSpec& s) {
    std::vector<VggLayerDef> defs;
    defs.push_back({s.x, false, true});
    defs.push_back({s.x, true, true});
    defs.push_back({2 * s.x, false, true});
    defs.push_back({2 * s.x, true, true});
    if (!s.small_variant) {
        defs.push_back({4 * s.x, false, true});
        defs.push_back({4 * s.x, false, true});
    }
    defs.push_back({s.num_classes, false, false});  // logits conv: BN, no sign, GP follows
    return defs;
}

constexpr int kResGroups = 4;
constexpr int kResBlocksPerGroup = 2;

}  // namespace

template <typename T>
Network<T> build_vgg(const NetworkSpec& spec, uint64_t init_seed) {
    check_config(spec.family == Family::Vgg, "build_vgg: spec family is not vgg");
    Rng rng(init_seed);
    Network<T> net;
    net.spec = spec;
    int c_in = spec.in_channels;
    const auto defs = vgg_layout(spec);
    for (size_t i = 0; i < defs.size(); ++i) {
        BinConvLayer<T> layer;
        layer.name = "conv" + std::to_string(i + 1);
        layer.latent_weight = init_conv_weight<T>(defs[i].width, c_in, 3, rng);
        layer.stride = 1;
        layer.zero_pad = 1;
        layer.gamma = Tensor<T>({defs[i].width}, T(1), true);
        layer.beta = Tensor<T>({defs[i].width}, T(0), true);
        layer.has_pool = defs[i].pool;
        layer.binarize_input = i > 0;
        layer.has_sign = defs[i].sign;
        net.vgg_layers.push_back(std::move(layer));
        c_in = defs[i].width;
    }
    return net;
}

template <typename T>
Network<T> build_resnet(const NetworkSpec& spec, uint64_t init_seed) {
    check_config(spec.family == Family::Resnet, "build_resnet: spec family is not resnet");
    Rng rng(init_seed);
    Network<T> net;
    net.spec = spec;
    net.stem.latent = init_conv_weight<T>(spec.x, spec.in_channels, 3, rng);
    net.stem.stride = 1;
    net.stem.pad = 1;

    int c_in = spec.x;
    for (int g = 0; g < kResGroups; ++g) {
        const int width = spec.x << g;
        for (int i = 0; i < kResBlocksPerGroup; ++i) {
            ResBlock<T> blk;
            const bool first_of_group = i == 0;
            const bool down = g > 0 && first_of_group;  // groups 2..4 open with stride 2
            blk.downsample = down;
            blk.bn1 = init_bn<T>(c_in);
            blk.conv1.latent = init_conv_weight<T>(width, c_in, 3, rng);
            blk.conv1.stride = down ? 2 : 1;
            blk.conv1.pad = 1;
            blk.bn2 = init_bn<T>(width);
            blk.conv2.latent = init_conv_weight<T>(width, width, 3, rng);
            blk.conv2.stride = 1;
            blk.conv2.pad = 1;
            blk.bn3 = init_bn<T>(width);
            blk.bn4 = init_bn<T>(width);  // shortcut path always ends at `width` channels
            if (down) {
                blk.conv_short.latent = init_conv_weight<T>(width, c_in, 1, rng);
                blk.conv_short.stride = 2;
                blk.conv_short.pad = 0;
            }
            net.blocks.push_back(std::move(blk));
            c_in = width;
        }
    }
    const int head_in = spec.x << (kResGroups - 1);
    net.fc_w = Tensor<T>({spec.num_classes, head_in}, T(0), true);
    {
        const double bound = std::sqrt(6.0 / (double)(head_in + spec.num_classes));
        T* p = net.fc_w.data();
        for (int64_t i = 0; i < net.fc_w.size(); ++i) p[i] = (T)rng.uniform(-bound, bound);
    }
    net.fc_b = Tensor<T>({spec.num_classes}, T(0), true);
    return net;
}

template <typename T>
Network<T> build_network(const NetworkSpec& spec, uint64_t init_seed) {
    return spec.family == Family::Vgg ? build_vgg<T>(spec, init_seed)
                                      : build_resnet<T>(spec, init_seed);
}

template <typename T>
ForwardResult<T> Network<T>::forward(const Tensor<T>& images, NetMode mode) {
    ForwardResult<T> out;
    if (spec.family == Family::Vgg) {
        Tensor<T> h = images;
        for (auto& layer : vgg_layers) {
            BlockOut<T> b = bnn_block_forward(h, layer, mode, spec.windowed_weight_ste,
                                              spec.tap_pre_pool);
            h = b.y;
            if (b.tap.defined()) out.taps.push_back(b.tap);
        }
        out.logits = global_avg_pool(h);
        return out;
    }
    // resnet
    Tensor<T> h = conv2d(images, binarize_weights(stem.latent, spec.windowed_weight_ste),
                         stem.stride, stem.pad);
    for (auto& blk : blocks) {
        Tensor<T> pre1 = blk.bn1.forward(h, mode);
        out.taps.push_back(pre1);
        Tensor<T> a = sign_ste(pre1);
        Tensor<T> m = conv2d(a, binarize_weights(blk.conv1.latent, spec.windowed_weight_ste),
                             blk.conv1.stride, blk.conv1.pad);
        Tensor<T> pre2 = blk.bn2.forward(m, mode);
        out.taps.push_back(pre2);
        m = conv2d(sign_ste(pre2), binarize_weights(blk.conv2.latent, spec.windowed_weight_ste),
                   blk.conv2.stride, blk.conv2.pad);
        Tensor<T> s = blk.downsample
                          ? conv2d(a, binarize_weights(blk.conv_short.latent,
                                                       spec.windowed_weight_ste),
                                   blk.conv_short.stride, blk.conv_short.pad)
                          : h;
        h = add(blk.bn3.forward(m, mode), blk.bn4.forward(s, mode));
    }
    Tensor<T> pooled = global_avg_pool(h);
    out.logits = linear(pooled, binarize_weights(fc_w, spec.windowed_weight_ste), fc_b);
    return out;
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::parameters() {
    std::vector<ParamRef<T>> out;
    auto add_bn = [&out](const std::string& prefix, BnUnit<T>& bn) {
        out.push_back({prefix + ".gamma", bn.gamma, false, false});
        out.push_back({prefix + ".beta", bn.beta, false, false});
    };
    if (spec.family == Family::Vgg) {
        for (auto& layer : vgg_layers) {
            out.push_back({layer.name + ".weight", layer.latent_weight, true, false});
            out.push_back({layer.name + ".bn.gamma", layer.gamma, false, false});
            out.push_back({layer.name + ".bn.beta", layer.beta, false, false});
        }
        return out;
    }
    out.push_back({"stem.weight", stem.latent, true, false});
    for (size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i + 1);
        auto& blk = blocks[i];
        add_bn(p + ".bn1", blk.bn1);
        out.push_back({p + ".conv1.weight", blk.conv1.latent, true, false});
        add_bn(p + ".bn2", blk.bn2);
        out.push_back({p + ".conv2.weight", blk.conv2.latent, true, false});
        add_bn(p + ".bn3", blk.bn3);
        add_bn(p + ".bn4", blk.bn4);
        if (blk.downsample) out.push_back({p + ".shortcut.weight", blk.conv_short.latent, true, false});
    }
    out.push_back({"fc.weight", fc_w, true, false});
    out.push_back({"fc.bias", fc_b, false, true});
    return out;
}

template <typename T>
std::vector<typename Network<T>::BnStateRef> Network<T>::bn_states() {
    std::vector<BnStateRef> out;
    if (spec.family == Family::Vgg) {
        for (auto& l : vgg_layers) out.push_back({l.name + ".bn", &l.bn_state, &l.bn_eps});
        return out;
    }
    for (size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i + 1);
        auto& blk = blocks[i];
        out.push_back({p + ".bn1", &blk.bn1.state, &blk.bn1.eps});
        out.push_back({p + ".bn2", &blk.bn2.state, &blk.bn2.eps});
        out.push_back({p + ".bn3", &blk.bn3.state, &blk.bn3.eps});
        out.push_back({p + ".bn4", &blk.bn4.state, &blk.bn4.eps});
    }
    return out;
}

template <typename T>
int Network<T>::sign_count() const {
    if (spec.family == Family::Vgg) {
        int n = 0;
        for (const auto& l : vgg_layers) n += l.has_sign ? 1 : 0;
        return n;
    }
    return (int)blocks.size() * 2;
}

template <typename T>
int Network<T>::conv_layer_count() const {
    if (spec.family == Family::Vgg) return (int)vgg_layers.size();
    int n = 1;  // stem
    for (const auto& b : blocks) n += b.downsample ? 3 : 2;
    return n;
}

template <typename T>
int64_t Network<T>::binary_weight_count() const {
    int64_t n = 0;
    if (spec.family == Family::Vgg) {
        for (const auto& l : vgg_layers) n += l.latent_weight.size();
        return n;
    }
    n += stem.latent.size();
    for (const auto& b : blocks) {
        n += b.conv1.latent.size() + b.conv2.latent.size();
        if (b.downsample) n += b.conv_short.latent.size();
    }
    n += fc_w.size();
    return n;
}

template <typename T>
int64_t Network<T>::param_storage_bytes() const {
    int64_t bits = binary_weight_count();
    int64_t bn_channels = 0;
    if (spec.family == Family::Vgg) {
        for (const auto& l : vgg_layers) bn_channels += l.gamma.size();
    } else {
        for (const auto& b : blocks)
            bn_channels += b.bn1.gamma.size() + b.bn2.gamma.size() + b.bn3.gamma.size() +
                           b.bn4.gamma.size();
    }
    int64_t bytes = (bits + 7) / 8;
    bytes += bn_channels * 4 * 4;  // gamma, beta, moving mean, moving var at 32-bit
    if (spec.family == Family::Resnet) bytes += fc_b.size() * 4;
    return bytes;
}

std::vector<NamedLayerShape> conv_layer_shapes(const NetworkSpec& spec) {
    std::vector<NamedLayerShape> shapes;
    if (spec.family == Family::Vgg) {
        int c = spec.in_channels, h = spec.in_h, w = spec.in_w;
        const auto defs = vgg_layout(spec);
        for (size_t i = 0; i < defs.size(); ++i) {
            // 3x3 pad 1 stride 1 keeps spatial dims; h,w recorded are conv output dims
            shapes.push_back({"conv" + std::to_string(i + 1), c, defs[i].width, h, w, 3, 3});
            c = defs[i].width;
            if (defs[i].pool) {
                h /= 2;
                w /= 2;
            }
        }
        return shapes;
    }
    int c = spec.in_channels, h = spec.in_h, w = spec.in_w;
    shapes.push_back({"stem", c, spec.x, h, w, 3, 3});
    c = spec.x;
    int idx = 0;
    for (int g = 0; g < kResGroups; ++g) {
        const int width = spec.x << g;
        for (int i = 0; i < kResBlocksPerGroup; ++i) {
            ++idx;
            const bool down = g > 0 && i == 0;
            const int oh = down ? h / 2 : h, ow = down ? w / 2 : w;
            const std::string p = "block" + std::to_string(idx);
            shapes.push_back({p + ".conv1", c, width, oh, ow, 3, 3});
            shapes.push_back({p + ".conv2", width, width, oh, ow, 3, 3});
            if (down) shapes.push_back({p + ".shortcut", c, width, oh, ow, 1, 1});
            c = width;
            h = oh;
            w = ow;
        }
    }
    // fc head counted as a 1x1-spatial convolution
    shapes.push_back({"fc", c, spec.num_classes, 1, 1, 1, 1});
    return shapes;
}

#define BNN_INSTANTIATE_MODEL(T)                                              \
    template class Network<T>;                                                \
    template Network<T> build_vgg<T>(const NetworkSpec&, uint64_t);           \
    template Network<T> build_resnet<T>(const NetworkSpec&, uint64_t);        \
    template Network<T> build_network<T>(const NetworkSpec&, uint64_t);

BNN_INSTANTIATE_MODEL(float)
BNN_INSTANTIATE_MODEL(double)

}  // namespace bnn
