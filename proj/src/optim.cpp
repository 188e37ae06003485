#include "bnn/optim.hpp"

#include <cmath>

namespace bnn {

OptKind opt_kind_from_string(const std::string& s) {
    if (s == "adam") return OptKind::Adam;
    if (s == "sgd_momentum" || s == "momentum") return OptKind::SgdMomentum;
    if (s == "nesterov") return OptKind::Nesterov;
    if (s == "rmsprop") return OptKind::RmsProp;
    throw ConfigError("unknown optimizer '" + s + "'");
}

std::string opt_kind_to_string(OptKind k) {
    switch (k) {
        case OptKind::Adam: return "adam";
        case OptKind::SgdMomentum: return "sgd_momentum";
        case OptKind::Nesterov: return "nesterov";
        case OptKind::RmsProp: return "rmsprop";
    }
    return "?";
}

void LrSchedule::validate() const {
    check_config(lr_init > 0, "lr schedule: lr_init must be > 0");
    if (kind == Kind::Exponential) {
        check_config(lr_final > 0, "lr schedule: lr_final must be > 0");
        check_config(total_epochs >= 1, "lr schedule: total_epochs must be >= 1");
    }
    int prev = -1;
    for (const auto& [epoch, factor] : step_events) {
        check_config(epoch > prev, "lr schedule: step epochs must be strictly increasing");
        check_config(factor > 0, "lr schedule: step factor must be > 0");
        prev = epoch;
    }
}

double LrSchedule::lr_at(int epoch) const {
    switch (kind) {
        case Kind::Constant:
            return lr_init;
        case Kind::Exponential: {
            if (total_epochs <= 1) return lr_init;
            const double t = (double)epoch / (double)(total_epochs - 1);
            return lr_init * std::pow(lr_final / lr_init, t);
        }
        case Kind::Steps: {
            double lr = lr_init;
            for (const auto& [e, factor] : step_events)
                if (epoch >= e) lr *= factor;
            return lr;
        }
    }
    return lr_init;
}

void OptimizerConfig::validate() const {
    schedule.validate();
    check_config(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
                 "optimizer: adam betas must be in [0,1)");
    check_config(adam_eps > 0 && rms_eps > 0, "optimizer: eps must be > 0");
    check_config(momentum >= 0 && momentum < 1, "optimizer: momentum must be in [0,1)");
    check_config(rms_decay >= 0 && rms_decay < 1, "optimizer: rms decay must be in [0,1)");
    check_config(weight_decay >= 0, "optimizer: weight decay must be >= 0");
}

template <typename T>
Optimizer<T>::Optimizer(std::vector<ParamRef<T>> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign((size_t)params_[i].tensor.size(), T(0));
        if (cfg_.kind == OptKind::Adam) v_[i].assign((size_t)params_[i].tensor.size(), T(0));
    }
}

template <typename T>
void Optimizer<T>::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
void Optimizer<T>::step(double lr) {
    ++t_;
    const T b1 = (T)cfg_.beta1, b2 = (T)cfg_.beta2;
    const T bias1 = (T)(1.0 - std::pow(cfg_.beta1, (double)t_));
    const T bias2 = (T)(1.0 - std::pow(cfg_.beta2, (double)t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = params_[pi];
        const int64_t n = p.tensor.size();
        if ((int64_t)p.tensor.grad().size() != n) continue;  // no gradient reached this param
        const T* g0 = p.tensor.grad().data();
        T* w = p.tensor.data();
        for (int64_t i = 0; i < n; ++i) {
            if (!std::isfinite((double)g0[i]))
                throw NumericError("non-finite gradient in parameter " + p.name + " at index " +
                                   std::to_string(i));
        }
        const T wd = p.weight_decay ? (T)cfg_.weight_decay : T(0);
        T* m = m_[pi].data();
        switch (cfg_.kind) {
            case OptKind::Adam: {
                T* v = v_[pi].data();
#pragma omp parallel for schedule(static) if (n >= 16384)
                for (int64_t i = 0; i < n; ++i) {
                    const T g = g0[i] + wd * w[i];
                    m[i] = b1 * m[i] + (T(1) - b1) * g;
                    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
                    const T mh = m[i] / bias1;
                    const T vh = v[i] / bias2;
                    w[i] -= (T)lr * mh / (std::sqrt(vh) + (T)cfg_.adam_eps);
                }
                break;
            }
            case OptKind::SgdMomentum: {
                const T mu = (T)cfg_.momentum;
#pragma omp parallel for schedule(static) if (n >= 16384)
                for (int64_t i = 0; i < n; ++i) {
                    const T g = g0[i] + wd * w[i];
                    m[i] = mu * m[i] + g;
                    w[i] -= (T)lr * m[i];
                }
                break;
            }
            case OptKind::Nesterov: {
                const T mu = (T)cfg_.momentum;
#pragma omp parallel for schedule(static) if (n >= 16384)
                for (int64_t i = 0; i < n; ++i) {
                    const T g = g0[i] + wd * w[i];
                    m[i] = mu * m[i] + g;
                    w[i] -= (T)lr * (g + mu * m[i]);
                }
                break;
            }
            case OptKind::RmsProp: {
                const T a = (T)cfg_.rms_decay;
#pragma omp parallel for schedule(static) if (n >= 16384)
                for (int64_t i = 0; i < n; ++i) {
                    const T g = g0[i] + wd * w[i];
                    m[i] = a * m[i] + (T(1) - a) * g * g;
                    w[i] -= (T)lr * g / (std::sqrt(m[i]) + (T)cfg_.rms_eps);
                }
                break;
            }
        }
        if (p.clip_pm1) {
#pragma omp parallel for schedule(static) if (n >= 16384)
            for (int64_t i = 0; i < n; ++i) {
                if (w[i] > T(1)) w[i] = T(1);
                if (w[i] < T(-1)) w[i] = T(-1);
            }
        }
    }
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace bnn
