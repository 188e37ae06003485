#pragma once

#include <ostream>
#include <utility>
#include <vector>

#include "bnn/tensor.hpp"

namespace bnn::dist_loss {

struct DistLossConfig {
    double k_d = 1.0;
    double k_s = 0.25;
    double k_m = 0.25;
    double lambda = 2.0;
    double eps_std = 1e-8;

    void validate() const {
        check_config(k_d >= 0 && k_s >= 0 && k_m >= 0, "dist-loss: k coefficients must be >= 0");
        check_config(lambda >= 0, "dist-loss: lambda must be >= 0");
        check_config(eps_std > 0, "dist-loss: eps_std must be > 0");
    }
};

// Closed-form Gaussian-moment penalties, scalar versions.
inline double loss_degeneration(double mu, double sigma, double k) {
    const double h = std::abs(mu) - k * sigma;
    return h > 0 ? h * h : 0.0;
}
inline double loss_saturation(double sigma, double k) {
    const double h = k * sigma - 1.0;
    return h > 0 ? h * h : 0.0;
}
inline double loss_mismatch(double mu, double sigma, double k) {
    const double h = 1.0 - std::abs(mu) - k * sigma;
    return h > 0 ? h * h : 0.0;
}

// k for a quantile margin: Phi^-1(1 - eps), 0 < eps < 0.5. Rational
// approximation with one Halley refinement; absolute error well under 1e-6.
double k_from_epsilon(double eps);

// Differentiable per-channel (mu, sigma) of a [B,C,H,W] tap over (B,H,W).
// sigma = sqrt(population_var + eps_std). Requires >= 2 elements per channel.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> channel_stats(const Tensor<T>& tap, T eps_std);

// Per-channel L_D + L_S + L_M of one tap, as a differentiable [C] tensor.
template <typename T>
Tensor<T> tap_loss(const Tensor<T>& tap, const DistLossConfig& cfg);

// Sum over all taps and channels. Errors on an empty tap list.
template <typename T>
Tensor<T> distribution_loss(const std::vector<Tensor<T>>& taps, const DistLossConfig& cfg);

// L_total = L_CE + lambda * L_DL
template <typename T>
Tensor<T> total_loss(const Tensor<T>& ce, const Tensor<T>& dl, T lambda);

// ---- diagnostics (empirical, not the Gaussian surrogate) ----

class ChannelRecord {
  public:
    void add(double v) { samples_.push_back((float)v); }
    void reserve(size_t n) { samples_.reserve(n); }
    void finalize();  // sorts samples, computes moments

    double mu() const { return mu_; }
    double sigma() const { return sigma_; }  // population std, no floor
    double positive_ratio() const { return positive_ratio_; }
    size_t count() const { return samples_.size(); }

    // empirical quantile: sorted samples, linear interpolation between
    // adjacent order statistics
    double quantile(double q) const;
    double abs_quantile(double q) const;

  private:
    std::vector<float> samples_;       // sorted by value after finalize
    std::vector<float> abs_sorted_;
    double mu_ = 0, sigma_ = 0, positive_ratio_ = 0;
    bool finalized_ = false;
};

struct ChannelFlags {
    bool degenerate = false;
    bool saturated = false;
    bool mismatched = false;
};

// degenerate  iff A_(eps) >= 0 or A_(1-eps) <= 0
// saturated   iff |A|_(eps) >= 1
// mismatched  iff |A|_(1-eps) <= 1
ChannelFlags classify_channel(const ChannelRecord& rec, double eps);

// CSV rows: layer,channel,mu,sigma,positive_ratio,degenerate,saturated,mismatched
void export_diagnostics(std::ostream& os, int layer, const std::vector<ChannelRecord>& channels,
                        double eps, bool header = true);

// 50-bin histogram as (bin_left,bin_right,count) CSV rows
void export_histogram(std::ostream& os, const std::vector<double>& values, int bins);

}  // namespace bnn::dist_loss
