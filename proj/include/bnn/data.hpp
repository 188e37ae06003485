#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bnn/rng.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

struct Dataset {
    int channels = 0, height = 0, width = 0;
    std::vector<uint8_t> pixels;  // count * C*H*W, channel planes per image
    std::vector<int> labels;

    int64_t count() const { return (int64_t)labels.size(); }
    int64_t image_bytes() const { return (int64_t)channels * height * width; }
    const uint8_t* image(int64_t i) const { return pixels.data() + i * image_bytes(); }
};

struct DatasetPair {
    Dataset train, test;
};

// Per-channel constants from the training split. Normalized pixels are
// snapped to a 1/128 grid so the first conv layer sums stay exact in both
// the real pipeline and the fixed-point fused engine.
struct Normalization {
    std::vector<double> mean, stddev;
};

inline constexpr double kInputQuantStep = 1.0 / 128.0;

// CIFAR-10 binary version: data_batch_1..5.bin + test_batch.bin,
// records of 1 label byte + 3072 pixel bytes (row-major RGB planes).
DatasetPair ingest_cifar10(const std::string& dir);
// MNIST IDX files (big-endian headers).
DatasetPair ingest_mnist(const std::string& dir);
// SVHN pre-converted to flat CIFAR-style records: svhn_train.bin/svhn_test.bin.
DatasetPair ingest_svhn_converted(const std::string& dir);
DatasetPair ingest_dataset(const std::string& kind, const std::string& dir);

Normalization compute_normalization(const Dataset& train);

struct AugmentConfig {
    bool enabled = true;
    int pad = 4;       // random crop from a padded canvas
    bool hflip = true;
};

// Deterministic index order for an epoch: a pure function of (seed, epoch).
std::vector<int64_t> epoch_order(int64_t n, uint64_t seed, int epoch);

// Normalized (and quantized) batch tensor [B,C,H,W]. When aug != nullptr the
// per-image crop/flip draws come from `rng` in index order. Out-of-canvas
// pixels are filled with the per-channel training mean.
template <typename T>
Tensor<T> make_batch(const Dataset& ds, const Normalization& norm,
                     const std::vector<int64_t>& idx, size_t off, int batch,
                     const AugmentConfig* aug, Rng& rng);
std::vector<int> batch_labels(const Dataset& ds, const std::vector<int64_t>& idx, size_t off,
                              int batch);

// Quantization used for every input pixel: round(((p - mean)/std) / step) * step.
inline double normalize_pixel(double p, double mean, double stddev) {
    const double z = (p - mean) / stddev;
    return (double)(long long)(z / kInputQuantStep + (z >= 0 ? 0.5 : -0.5)) * kInputQuantStep;
}

// Synthetic labeled dataset written in the CIFAR-10 binary layout: smooth
// class templates plus per-image shift, contrast and pixel noise. Used as a
// test fixture when no real dataset directory is provided.
void write_synthetic_cifar(const std::string& dir, int train_count, int test_count,
                           int num_classes, uint64_t seed);

}  // namespace bnn
