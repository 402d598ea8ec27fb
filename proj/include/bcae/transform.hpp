#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "bcae/common.hpp"

namespace bcae {

// Value transform applied on the regression path: T(v) = ln(v - shift) / scale,
// inverse T^-1(y) = exp(scale * y) + shift. Zero suppression guarantees
// retained values are >= shift + 1, so the log argument is >= 1; the guard
// only protects against out-of-contract inputs.
struct TransformParams {
    double shift = 64.0;
    double scale = 6.0;
    double epsilon_guard = 1e-12;
};

// Soft segmentation label l = sigmoid(alpha * (log2(v + 1) - mu)). With
// mu = 6 the midpoint sits exactly at the suppression boundary v = 63.
struct SoftLabelParams {
    double mu = 6.0;
    double alpha = 20.0;
};

struct FocalParams {
    double gamma = 2.0;
};

// Segmentation gate threshold, clamped to [0, 1].
struct Threshold {
    double h = 0.5;
    Threshold() = default;
    explicit Threshold(double value) : h(value < 0.0 ? 0.0 : (value > 1.0 ? 1.0 : value)) {}
};

// Per-epoch loss bookkeeping for the balancing rule: the segmentation loss of
// epoch t+1 is weighted by rho_r(t) / rho_s(t).
struct LossState {
    double rho_s = 0.0;
    double rho_r = 0.0;
    double seg_weight = 1.0;  // multiplier applied to the segmentation loss next epoch
    int epoch = 0;            // last completed epoch, 0 = none
    bool has_history = false;
    bool weight_frozen = false;  // set when rho_s = 0 forced the weight to stay

    bool operator==(const LossState&) const = default;
};

// Clamp applied to classifier outputs before any log.
inline constexpr double kProbabilityClamp = 1e-7;

template <typename T>
inline T forward_transform(T v, const TransformParams& p = {}) {
    const T arg = std::max(v - static_cast<T>(p.shift), static_cast<T>(p.epsilon_guard));
    return std::log(arg) / static_cast<T>(p.scale);
}

template <typename T>
inline T inverse_transform(T y, const TransformParams& p = {}) {
    return std::exp(static_cast<T>(p.scale) * y) + static_cast<T>(p.shift);
}

template <typename T>
inline T soft_label(T v, const SoftLabelParams& p = {}) {
    const T logv = std::log2(v + static_cast<T>(1));
    const T z = static_cast<T>(p.alpha) * (logv - static_cast<T>(p.mu));
    return static_cast<T>(1) / (static_cast<T>(1) + std::exp(-z));
}

namespace detail {
void require_same_size(std::size_t a, std::size_t b, const char* what);
}

// Mean focal loss in log base 2 over all voxels:
//   (1/M) sum_x [ -l log2(p) (1-p)^g - (1-l) log2(1-p) p^g ],
// with p clamped into [eps, 1-eps]. Accumulation is row-major in 64-bit.
template <typename T>
double focal_loss(std::span<const T> pred, std::span<const T> label, const FocalParams& fp = {}) {
    detail::require_same_size(pred.size(), label.size(), "focal_loss");
    const double g = fp.gamma;
    const double inv_ln2 = 1.0 / std::log(2.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p =
            std::clamp(static_cast<double>(pred[i]), kProbabilityClamp, 1.0 - kProbabilityClamp);
        const double l = static_cast<double>(label[i]);
        const double log2p = std::log(p) * inv_ln2;
        const double log2q = std::log1p(-p) * inv_ln2;
        acc += -l * log2p * std::pow(1.0 - p, g) - (1.0 - l) * log2q * std::pow(p, g);
    }
    return acc / static_cast<double>(pred.size());
}

// d(mean focal loss)/d pred. Entries clamped by the probability guard get a
// zero gradient, matching what finite differences of the clamped loss see.
template <typename T>
void focal_loss_grad(std::span<const T> pred, std::span<const T> label, std::span<T> grad,
                     const FocalParams& fp = {}) {
    detail::require_same_size(pred.size(), label.size(), "focal_loss_grad");
    detail::require_same_size(pred.size(), grad.size(), "focal_loss_grad output");
    const double g = fp.gamma;
    const double inv_ln2 = 1.0 / std::log(2.0);
    const double inv_m = 1.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double raw = static_cast<double>(pred[i]);
        if (raw < kProbabilityClamp || raw > 1.0 - kProbabilityClamp) {
            grad[i] = static_cast<T>(0);
            continue;
        }
        const double p = raw;
        const double l = static_cast<double>(label[i]);
        const double log2p = std::log(p) * inv_ln2;
        const double log2q = std::log1p(-p) * inv_ln2;
        double d = -l * std::pow(1.0 - p, g) / (p * std::log(2.0));
        d += -(1.0 - l) * (-std::pow(p, g) / ((1.0 - p) * std::log(2.0)));
        if (g != 0.0) {
            d += l * g * std::pow(1.0 - p, g - 1.0) * log2p;
            d += -(1.0 - l) * g * std::pow(p, g - 1.0) * log2q;
        }
        grad[i] = static_cast<T>(d * inv_m);
    }
}

// Combined prediction: voxels whose segmentation output passes the gate carry
// the inverse-transformed regression value, the rest are zero.
template <typename T>
void combine_output(std::span<const T> reg, std::span<const T> seg, Threshold h,
                    std::span<T> out, const TransformParams& tp = {}) {
    detail::require_same_size(reg.size(), seg.size(), "combine_output");
    detail::require_same_size(reg.size(), out.size(), "combine_output output");
    for (std::size_t i = 0; i < reg.size(); ++i) {
        out[i] = static_cast<double>(seg[i]) >= h.h ? inverse_transform(reg[i], tp)
                                                    : static_cast<T>(0);
    }
}

// Transform-free variant: the regression head already predicts raw values.
template <typename T>
void combine_output_without_transform(std::span<const T> reg, std::span<const T> seg, Threshold h,
                                      std::span<T> out) {
    detail::require_same_size(reg.size(), seg.size(), "combine_output_without_transform");
    detail::require_same_size(reg.size(), out.size(), "combine_output_without_transform output");
    for (std::size_t i = 0; i < reg.size(); ++i) {
        out[i] = static_cast<double>(seg[i]) >= h.h ? reg[i] : static_cast<T>(0);
    }
}

// Mean squared error over all M voxels, zeros included; row-major 64-bit
// accumulation so reductions are deterministic.
template <typename T, typename U>
double regression_loss(std::span<const T> combined, std::span<const U> truth) {
    detail::require_same_size(combined.size(), truth.size(), "regression_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < combined.size(); ++i) {
        const double d = static_cast<double>(combined[i]) - static_cast<double>(truth[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(combined.size());
}

// Fused training path: evaluates the gated regression loss and its gradient
// with respect to the regression head output. The gate is part of the forward
// value only; gradient reaches the regression head solely through voxels that
// pass, and never reaches the segmentation head from here.
template <typename T, typename U>
double regression_loss_and_grad(std::span<const T> reg, std::span<const T> seg,
                                std::span<const U> truth, Threshold h, bool with_transform,
                                std::span<T> grad_reg, const TransformParams& tp = {}) {
    detail::require_same_size(reg.size(), seg.size(), "regression_loss_and_grad");
    detail::require_same_size(reg.size(), truth.size(), "regression_loss_and_grad truth");
    detail::require_same_size(reg.size(), grad_reg.size(), "regression_loss_and_grad output");
    const double inv_m = 1.0 / static_cast<double>(reg.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < reg.size(); ++i) {
        const double v = static_cast<double>(truth[i]);
        if (static_cast<double>(seg[i]) >= h.h) {
            const double raw = static_cast<double>(reg[i]);
            double recon, drecon;
            if (with_transform) {
                recon = std::exp(tp.scale * raw) + tp.shift;
                drecon = tp.scale * (recon - tp.shift);
            } else {
                recon = raw;
                drecon = 1.0;
            }
            const double d = recon - v;
            acc += d * d;
            grad_reg[i] = static_cast<T>(2.0 * d * drecon * inv_m);
        } else {
            acc += v * v;
            grad_reg[i] = static_cast<T>(0);
        }
    }
    return acc * inv_m;
}

// Balancing rule: seg_weight for epoch t+1 = rho_r(t) / rho_s(t). A zero
// segmentation loss keeps the previous weight and flags it.
LossState update_loss_weight(const LossState& state);

}  // namespace bcae
