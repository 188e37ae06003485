#pragma once

#include <string>
#include <vector>

#include "bnn/model.hpp"

namespace bnn {

enum class OptKind { Adam, SgdMomentum, Nesterov, RmsProp };

OptKind opt_kind_from_string(const std::string& s);
std::string opt_kind_to_string(OptKind k);

struct LrSchedule {
    enum class Kind { Constant, Exponential, Steps };
    Kind kind = Kind::Exponential;
    double lr_init = 5e-3;
    // exponential: lr(e) = lr_init * (lr_final/lr_init)^(e/(total_epochs-1))
    double lr_final = 1e-6;
    int total_epochs = 30;
    // steps: multiply by `factor` when reaching each epoch
    std::vector<std::pair<int, double>> step_events;  // (epoch, factor), strictly increasing

    double lr_at(int epoch) const;
    void validate() const;
};

struct OptimizerConfig {
    OptKind kind = OptKind::Adam;
    LrSchedule schedule;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double momentum = 0.9;
    double rms_decay = 0.99, rms_eps = 1e-8;
    double weight_decay = 0.0;  // applied only to params flagged weight_decay
    void validate() const;
};

// Holds per-parameter state; after every step, latent binarized weights are
// clipped back to [-1, 1].
template <typename T>
class Optimizer {
  public:
    Optimizer(std::vector<ParamRef<T>> params, OptimizerConfig cfg);
    void step(double lr);
    void zero_grad();
    const std::vector<ParamRef<T>>& params() const { return params_; }

  private:
    std::vector<ParamRef<T>> params_;
    OptimizerConfig cfg_;
    std::vector<std::vector<T>> m_;  // adam m / momentum buffer / rms avg
    std::vector<std::vector<T>> v_;  // adam v
    int64_t t_ = 0;
};

}  // namespace bnn
