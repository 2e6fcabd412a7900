#pragma once

#include "gsopt/common.hpp"
#include "gsopt/so3.hpp"

#include <cstdint>
#include <vector>

namespace gsopt {

/// One anisotropic 3D Gaussian primitive.
///  - rotation: quaternion (w, x, y, z), renormalized before any covariance use
///  - log_scale: per-axis standard deviations stored in log space
///  - opacity_logit: opacity stored as a logit, alpha = logistic(opacity_logit)
///  - color: RGB in [0, 1] (degree-0 appearance)
struct Gaussian3D {
    Vec3 center = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0);
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Constant(0.5);
};

/// 3x3 world-space covariance R(q) diag(exp(log_scale)^2) R(q)^T.
Mat3 covariance(const Gaussian3D& g);
Mat3 covariance_from(const Vec4& rotation, const Vec3& log_scale);

/// Gradient buffers congruent with GaussianCloud storage.
struct CloudGrads {
    std::vector<Vec3> centers;
    std::vector<Vec4> rotations;
    std::vector<Vec3> log_scales;
    std::vector<double> opacity_logits;
    std::vector<Vec3> colors;

    void resize(std::size_t n);
    void zero();
    std::size_t size() const { return centers.size(); }
};

/// Index translation returned by the maintenance operations.
/// old_to_new[i] is the surviving slot of old Gaussian i, -1 when it no
/// longer exists (pruned, or replaced by split children). new_to_old[j] is
/// the source of new Gaussian j: itself when it survived, the parent when
/// it is a fresh split child. Slot j carries over per-Gaussian optimizer
/// state exactly when old_to_new[new_to_old[j]] == j.
struct IndexRemap {
    std::vector<std::int64_t> old_to_new;
    std::vector<std::int64_t> new_to_old;

    bool identity() const;
    bool emptied() const { return new_to_old.empty() && !old_to_new.empty(); }
};

/// Structure-of-arrays Gaussian scene with congruent gradient buffers.
struct GaussianCloud {
    std::vector<Vec3> centers;
    std::vector<Vec4> rotations;      // (w, x, y, z)
    std::vector<Vec3> log_scales;
    std::vector<double> opacity_logits;
    std::vector<Vec3> colors;

    CloudGrads grad;

    // Densification statistics: accumulated center-gradient norms and how
    // many backward passes contributed since the last maintenance event.
    std::vector<double> pos_grad_norm_accum;
    std::vector<int> pos_grad_steps;

    std::size_t size() const { return centers.size(); }
    bool empty() const { return centers.empty(); }
    void resize(std::size_t n);
    void reserve(std::size_t n);
    void push_back(const Gaussian3D& g);
    Gaussian3D get(std::size_t i) const;
    void set(std::size_t i, const Gaussian3D& g);

    double alpha(std::size_t i) const { return logistic(opacity_logits[i]); }

    void zero_grad();
    /// Adds the current center-gradient norms into the densify statistics.
    void accumulate_densify_stats();
    void reset_densify_stats();

    /// Checks buffer congruence and field invariants; throws ContractError.
    void validate() const;
};

/// Splits every Gaussian whose mean accumulated positional gradient norm
/// exceeds grad_threshold into two children sampled from the parent
/// distribution, with scales divided by scale_divisor. The first child
/// takes the parent slot, the second is appended. Gradient buffers are
/// reallocated (zeroed) and densify statistics reset when anything split.
IndexRemap densify_split(GaussianCloud& cloud, double grad_threshold, Rng& rng,
                         double scale_divisor = 1.6);

/// Removes every Gaussian with alpha < opacity_threshold, preserving order.
IndexRemap prune(GaussianCloud& cloud, double opacity_threshold);

} // namespace gsopt
