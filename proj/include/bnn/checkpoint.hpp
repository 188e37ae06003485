#pragma once

#include <string>

#include "bnn/data.hpp"
#include "bnn/model.hpp"

namespace bnn {

// Versioned little-endian container, magic "BNNCKPT1". Real parameters are
// stored at 32-bit along with BN moving stats, per-layer BN eps, the network
// grammar string and the dataset normalization constants.
template <typename T>
void save_checkpoint(const std::string& path, Network<T>& net, const Normalization& norm);

struct CheckpointInfo {
    NetworkSpec spec;
    Normalization norm;
};

// Rebuilds the network from the stored grammar string and fills every
// parameter and BN state. Fails on unknown names or shape mismatches.
template <typename T>
CheckpointInfo load_checkpoint(const std::string& path, Network<T>& net_out);

}  // namespace bnn
