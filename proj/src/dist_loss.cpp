#include "bnn/dist_loss.hpp"

#include <algorithm>
#include <cmath>

namespace bnn::dist_loss {

double k_from_epsilon(double eps) {
    check_config(eps > 0.0 && eps < 0.5, "k_from_epsilon: eps must be in (0, 0.5), got " +
                                             std::to_string(eps));
    const double p = 1.0 - eps;  // upper-tail quantile

    // Acklam's rational approximation for the standard normal inverse CDF
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double p_low = 0.02425, p_high = 1.0 - p_low;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= p_high) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // one Halley step against erfc
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    x = x - u / (1.0 + x * u / 2.0);
    return x;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> channel_stats(const Tensor<T>& tap, T eps_std) {
    return {channel_mean(tap), channel_std(tap, eps_std)};
}

template <typename T>
Tensor<T> tap_loss(const Tensor<T>& tap, const DistLossConfig& cfg) {
    auto [mu, sigma] = channel_stats(tap, (T)cfg.eps_std);
    Tensor<T> abs_mu = abs_val(mu);
    // L_D = [(|mu| - k_d*sigma)_+]^2
    Tensor<T> l_d = square(relu_pos(sub(abs_mu, affine(sigma, (T)cfg.k_d, T(0)))));
    // L_S = [(k_s*sigma - 1)_+]^2
    Tensor<T> l_s = square(relu_pos(affine(sigma, (T)cfg.k_s, T(-1))));
    // L_M = [(1 - |mu| - k_m*sigma)_+]^2
    Tensor<T> l_m =
        square(relu_pos(affine(add(abs_mu, affine(sigma, (T)cfg.k_m, T(0))), T(-1), T(1))));
    return add(add(l_d, l_s), l_m);
}

template <typename T>
Tensor<T> distribution_loss(const std::vector<Tensor<T>>& taps, const DistLossConfig& cfg) {
    cfg.validate();
    check_config(!taps.empty(), "distribution_loss: no taps registered");
    Tensor<T> total;
    for (const auto& tap : taps) {
        Tensor<T> t = sum_all(tap_loss(tap, cfg));
        total = total.defined() ? add(total, t) : t;
    }
    return total;
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& ce, const Tensor<T>& dl, T lambda) {
    return add(ce, affine(dl, lambda, T(0)));
}

void ChannelRecord::finalize() {
    if (finalized_) return;
    const size_t n = samples_.size();
    check_config(n > 0, "channel diagnostics: empty sample set");
    double acc = 0.0;
    size_t pos = 0;
    for (float v : samples_) {
        acc += v;
        if (v > 0.0f) ++pos;
    }
    mu_ = acc / (double)n;
    double vacc = 0.0;
    for (float v : samples_) {
        const double dd = (double)v - mu_;
        vacc += dd * dd;
    }
    sigma_ = std::sqrt(vacc / (double)n);
    positive_ratio_ = (double)pos / (double)n;
    std::sort(samples_.begin(), samples_.end());
    abs_sorted_.resize(n);
    for (size_t i = 0; i < n; ++i) abs_sorted_[i] = std::abs(samples_[i]);
    std::sort(abs_sorted_.begin(), abs_sorted_.end());
    finalized_ = true;
}

namespace {
double sorted_quantile(const std::vector<float>& s, double q) {
    check_config(!s.empty(), "quantile of empty sample set");
    if (q <= 0.0) return s.front();
    if (q >= 1.0) return s.back();
    const double pos = q * (double)(s.size() - 1);
    const size_t lo = (size_t)pos;
    const double frac = pos - (double)lo;
    if (lo + 1 >= s.size()) return s.back();
    return (1.0 - frac) * (double)s[lo] + frac * (double)s[lo + 1];
}
}  // namespace

double ChannelRecord::quantile(double q) const {
    check_config(finalized_, "quantile before finalize()");
    return sorted_quantile(samples_, q);
}

double ChannelRecord::abs_quantile(double q) const {
    check_config(finalized_, "quantile before finalize()");
    return sorted_quantile(abs_sorted_, q);
}

ChannelFlags classify_channel(const ChannelRecord& rec, double eps) {
    ChannelFlags f;
    f.degenerate = rec.quantile(eps) >= 0.0 || rec.quantile(1.0 - eps) <= 0.0;
    f.saturated = rec.abs_quantile(eps) >= 1.0;
    f.mismatched = rec.abs_quantile(1.0 - eps) <= 1.0;
    return f;
}

void export_diagnostics(std::ostream& os, int layer, const std::vector<ChannelRecord>& channels,
                        double eps, bool header) {
    if (header) os << "layer,channel,mu,sigma,positive_ratio,degenerate,saturated,mismatched\n";
    char buf[256];
    for (size_t c = 0; c < channels.size(); ++c) {
        const auto& rec = channels[c];
        const ChannelFlags f = classify_channel(rec, eps);
        std::snprintf(buf, sizeof(buf), "%d,%zu,%.9g,%.9g,%.9g,%d,%d,%d\n", layer, c, rec.mu(),
                      rec.sigma(), rec.positive_ratio(), f.degenerate ? 1 : 0, f.saturated ? 1 : 0,
                      f.mismatched ? 1 : 0);
        os << buf;
    }
}

void export_histogram(std::ostream& os, const std::vector<double>& values, int bins) {
    check_config(bins >= 1, "histogram: bins must be >= 1");
    check_config(!values.empty(), "histogram: no values");
    double lo = values[0], hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi == lo) hi = lo + 1.0;  // all identical: single occupied bin
    const double width = (hi - lo) / bins;
    std::vector<int64_t> counts(bins, 0);
    for (double v : values) {
        int b = (int)((v - lo) / width);
        if (b >= bins) b = bins - 1;
        if (b < 0) b = 0;
        ++counts[b];
    }
    os << "bin_left,bin_right,count\n";
    char buf[128];
    for (int b = 0; b < bins; ++b) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%lld\n", lo + b * width, lo + (b + 1) * width,
                      (long long)counts[b]);
        os << buf;
    }
}

#define BNN_INSTANTIATE_DL(T)                                                               \
    template std::pair<Tensor<T>, Tensor<T>> channel_stats<T>(const Tensor<T>&, T);        \
    template Tensor<T> tap_loss<T>(const Tensor<T>&, const DistLossConfig&);               \
    template Tensor<T> distribution_loss<T>(const std::vector<Tensor<T>>&,                 \
                                            const DistLossConfig&);                        \
    template Tensor<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, T);

BNN_INSTANTIATE_DL(float)
BNN_INSTANTIATE_DL(double)

}  // namespace bnn::dist_loss
