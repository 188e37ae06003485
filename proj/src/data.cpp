#include "bnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace bnn {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    f.seekg(0, std::ios::end);
    const std::streamoff len = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> buf((size_t)len);
    f.read((char*)buf.data(), len);
    if (!f) throw DataError("short read on " + path);
    return buf;
}

constexpr int kCifarRecord = 1 + 3 * 32 * 32;

void append_cifar_records(const std::string& path, Dataset& ds) {
    const auto buf = read_file(path);
    if (buf.size() % kCifarRecord != 0)
        throw DataError(path + ": truncated record at byte offset " +
                        std::to_string(buf.size() - buf.size() % kCifarRecord));
    const size_t n = buf.size() / kCifarRecord;
    for (size_t i = 0; i < n; ++i) {
        const uint8_t* rec = buf.data() + i * kCifarRecord;
        if (rec[0] > 9)
            throw DataError(path + ": label " + std::to_string(rec[0]) + " out of range at byte offset " +
                            std::to_string(i * kCifarRecord));
        ds.labels.push_back(rec[0]);
        ds.pixels.insert(ds.pixels.end(), rec + 1, rec + kCifarRecord);
    }
}

uint32_t be32(const uint8_t* p) {
    return ((uint32_t)p[0] << 24) | ((uint32_t)p[1] << 16) | ((uint32_t)p[2] << 8) | p[3];
}

}  // namespace

DatasetPair ingest_cifar10(const std::string& dir) {
    DatasetPair pair;
    pair.train.channels = pair.test.channels = 3;
    pair.train.height = pair.test.height = 32;
    pair.train.width = pair.test.width = 32;
    for (int i = 1; i <= 5; ++i)
        append_cifar_records(dir + "/data_batch_" + std::to_string(i) + ".bin", pair.train);
    append_cifar_records(dir + "/test_batch.bin", pair.test);
    return pair;
}

namespace {

Dataset read_mnist_split(const std::string& images_path, const std::string& labels_path) {
    Dataset ds;
    const auto img = read_file(images_path);
    if (img.size() < 16 || be32(img.data()) != 2051)
        throw DataError(images_path + ": bad IDX magic at byte offset 0");
    const uint32_t n = be32(img.data() + 4);
    const uint32_t rows = be32(img.data() + 8);
    const uint32_t cols = be32(img.data() + 12);
    if (img.size() != 16 + (size_t)n * rows * cols)
        throw DataError(images_path + ": truncated at byte offset " + std::to_string(img.size()));
    const auto lbl = read_file(labels_path);
    if (lbl.size() < 8 || be32(lbl.data()) != 2049)
        throw DataError(labels_path + ": bad IDX magic at byte offset 0");
    if (be32(lbl.data() + 4) != n || lbl.size() != 8 + (size_t)n)
        throw DataError(labels_path + ": label count mismatch with " + images_path);
    ds.channels = 1;
    ds.height = (int)rows;
    ds.width = (int)cols;
    ds.pixels.assign(img.begin() + 16, img.end());
    ds.labels.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        if (lbl[8 + i] > 9)
            throw DataError(labels_path + ": label out of range at byte offset " +
                            std::to_string(8 + i));
        ds.labels.push_back(lbl[8 + i]);
    }
    return ds;
}

}  // namespace

DatasetPair ingest_mnist(const std::string& dir) {
    DatasetPair pair;
    pair.train = read_mnist_split(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
    pair.test = read_mnist_split(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
    return pair;
}

DatasetPair ingest_svhn_converted(const std::string& dir) {
    DatasetPair pair;
    pair.train.channels = pair.test.channels = 3;
    pair.train.height = pair.test.height = 32;
    pair.train.width = pair.test.width = 32;
    append_cifar_records(dir + "/svhn_train.bin", pair.train);
    append_cifar_records(dir + "/svhn_test.bin", pair.test);
    return pair;
}

DatasetPair ingest_dataset(const std::string& kind, const std::string& dir) {
    if (kind == "cifar10") return ingest_cifar10(dir);
    if (kind == "mnist") return ingest_mnist(dir);
    if (kind == "svhn") return ingest_svhn_converted(dir);
    throw ConfigError("unknown dataset kind '" + kind + "' (expected cifar10|mnist|svhn)");
}

Normalization compute_normalization(const Dataset& train) {
    check_config(train.count() > 0, "normalization: empty training split");
    Normalization norm;
    const int C = train.channels;
    const int64_t plane = (int64_t)train.height * train.width;
    norm.mean.assign(C, 0.0);
    norm.stddev.assign(C, 0.0);
    const int64_t per_channel = train.count() * plane;
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int64_t i = 0; i < train.count(); ++i) {
            const uint8_t* p = train.image(i) + c * plane;
            for (int64_t j = 0; j < plane; ++j) acc += p[j];
        }
        const double mu = acc / (double)per_channel;
        double vacc = 0.0;
        for (int64_t i = 0; i < train.count(); ++i) {
            const uint8_t* p = train.image(i) + c * plane;
            for (int64_t j = 0; j < plane; ++j) {
                const double d = p[j] - mu;
                vacc += d * d;
            }
        }
        norm.mean[c] = mu;
        // floor keeps degenerate channels finite and the 1/128 grid in int16 range
        norm.stddev[c] = std::max(std::sqrt(vacc / (double)per_channel), 1.0);
    }
    return norm;
}

std::vector<int64_t> epoch_order(int64_t n, uint64_t seed, int epoch) {
    std::vector<int64_t> idx(n);
    for (int64_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed * 0x9e3779b97f4a7c15ULL + (uint64_t)(epoch + 1));
    rng.shuffle(idx);
    return idx;
}

template <typename T>
Tensor<T> make_batch(const Dataset& ds, const Normalization& norm,
                     const std::vector<int64_t>& idx, size_t off, int batch,
                     const AugmentConfig* aug, Rng& rng) {
    const int C = ds.channels, H = ds.height, W = ds.width;
    Tensor<T> out({batch, C, H, W});
    T* ov = out.data();
    const int64_t plane = (int64_t)H * W;
    std::vector<uint8_t> fill(C);
    for (int c = 0; c < C; ++c)
        fill[c] = (uint8_t)std::clamp((int)std::lround(norm.mean[c]), 0, 255);
    for (int b = 0; b < batch; ++b) {
        const uint8_t* img = ds.image(idx[off + b]);
        int dy = 0, dx = 0;
        bool flip = false;
        const bool do_aug = aug && aug->enabled;
        if (do_aug) {
            dy = (int)rng.next_below(2 * aug->pad + 1);
            dx = (int)rng.next_below(2 * aug->pad + 1);
            flip = aug->hflip && rng.next_below(2) == 1;
        }
        const int pad = do_aug ? aug->pad : 0;
        for (int c = 0; c < C; ++c) {
            const uint8_t* src = img + c * plane;
            T* dst = ov + (((int64_t)b * C + c) * plane);
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    int cx = flip ? W - 1 - x : x;
                    const int sy = y + dy - pad;
                    const int sx = cx + dx - pad;
                    const uint8_t p = (sy >= 0 && sy < H && sx >= 0 && sx < W)
                                          ? src[(int64_t)sy * W + sx]
                                          : fill[c];
                    dst[(int64_t)y * W + x] = (T)normalize_pixel(p, norm.mean[c], norm.stddev[c]);
                }
            }
        }
    }
    return out;
}

std::vector<int> batch_labels(const Dataset& ds, const std::vector<int64_t>& idx, size_t off,
                              int batch) {
    std::vector<int> labels(batch);
    for (int b = 0; b < batch; ++b) labels[b] = ds.labels[idx[off + b]];
    return labels;
}

namespace {

// smooth 32x32 field from a low-res grid, bilinear
void smooth_field(Rng& rng, uint8_t* out) {
    constexpr int G = 4, S = 32;
    double grid[G + 1][G + 1];
    for (int i = 0; i <= G; ++i)
        for (int j = 0; j <= G; ++j) grid[i][j] = rng.uniform(30.0, 225.0);
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            const double fy = (double)y * G / S, fx = (double)x * G / S;
            const int iy = (int)fy, ix = (int)fx;
            const double ay = fy - iy, ax = fx - ix;
            const double v = grid[iy][ix] * (1 - ay) * (1 - ax) + grid[iy + 1][ix] * ay * (1 - ax) +
                             grid[iy][ix + 1] * (1 - ay) * ax + grid[iy + 1][ix + 1] * ay * ax;
            out[y * S + x] = (uint8_t)std::clamp((int)std::lround(v), 0, 255);
        }
    }
}

void write_records(const std::string& path, const std::vector<uint8_t>& records) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f.write((const char*)records.data(), (std::streamsize)records.size());
}

}  // namespace

void write_synthetic_cifar(const std::string& dir, int train_count, int test_count,
                           int num_classes, uint64_t seed) {
    check_config(num_classes >= 2 && num_classes <= 10, "synthetic dataset: 2..10 classes");
    std::filesystem::create_directories(dir);
    Rng rng(seed);
    constexpr int S = 32, kTemplates = 2;
    std::vector<uint8_t> templates((size_t)num_classes * kTemplates * 3 * S * S);
    for (int c = 0; c < num_classes; ++c)
        for (int t = 0; t < kTemplates; ++t)
            for (int ch = 0; ch < 3; ++ch)
                smooth_field(rng, templates.data() + (((size_t)c * kTemplates + t) * 3 + ch) * S * S);

    auto emit = [&](int count, std::vector<uint8_t>& out) {
        for (int i = 0; i < count; ++i) {
            const int label = (int)rng.next_below(num_classes);
            const int tmpl = (int)rng.next_below(kTemplates);
            const int dy = (int)rng.next_below(7) - 3;
            const int dx = (int)rng.next_below(7) - 3;
            const double brightness = rng.uniform(-20.0, 20.0);
            out.push_back((uint8_t)label);
            for (int ch = 0; ch < 3; ++ch) {
                const uint8_t* tp =
                    templates.data() + (((size_t)label * kTemplates + tmpl) * 3 + ch) * S * S;
                for (int y = 0; y < S; ++y) {
                    for (int x = 0; x < S; ++x) {
                        const int sy = ((y + dy) % S + S) % S;
                        const int sx = ((x + dx) % S + S) % S;
                        const double v = tp[sy * S + sx] + brightness + 25.0 * rng.gaussian();
                        out.push_back((uint8_t)std::clamp((int)std::lround(v), 0, 255));
                    }
                }
            }
        }
    };

    const int per_file = (train_count + 4) / 5;
    int remaining = train_count;
    for (int f = 1; f <= 5; ++f) {
        std::vector<uint8_t> records;
        const int n = std::min(per_file, remaining);
        remaining -= n;
        records.reserve((size_t)n * kCifarRecord);
        emit(n, records);
        write_records(dir + "/data_batch_" + std::to_string(f) + ".bin", records);
    }
    std::vector<uint8_t> records;
    records.reserve((size_t)test_count * kCifarRecord);
    emit(test_count, records);
    write_records(dir + "/test_batch.bin", records);
}

template Tensor<float> make_batch<float>(const Dataset&, const Normalization&,
                                         const std::vector<int64_t>&, size_t, int,
                                         const AugmentConfig*, Rng&);
template Tensor<double> make_batch<double>(const Dataset&, const Normalization&,
                                           const std::vector<int64_t>&, size_t, int,
                                           const AugmentConfig*, Rng&);

}  // namespace bnn
