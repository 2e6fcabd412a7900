#include "gsopt/scene.hpp"

#include <cmath>
#include <numeric>

namespace gsopt {

Mat3 covariance_from(const Vec4& rotation, const Vec3& log_scale) {
    const Mat3 r = quat_to_rotmat_raw(rotation);
    const Vec3 s2 = (2.0 * log_scale.array()).exp();
    return r * s2.asDiagonal() * r.transpose();
}

Mat3 covariance(const Gaussian3D& g) {
    return covariance_from(g.rotation, g.log_scale);
}

void CloudGrads::resize(std::size_t n) {
    centers.resize(n, Vec3::Zero());
    rotations.resize(n, Vec4::Zero());
    log_scales.resize(n, Vec3::Zero());
    opacity_logits.resize(n, 0.0);
    colors.resize(n, Vec3::Zero());
}

void CloudGrads::zero() {
    std::fill(centers.begin(), centers.end(), Vec3::Zero());
    std::fill(rotations.begin(), rotations.end(), Vec4::Zero());
    std::fill(log_scales.begin(), log_scales.end(), Vec3::Zero());
    std::fill(opacity_logits.begin(), opacity_logits.end(), 0.0);
    std::fill(colors.begin(), colors.end(), Vec3::Zero());
}

bool IndexRemap::identity() const {
    if (old_to_new.size() != new_to_old.size()) return false;
    for (std::size_t i = 0; i < old_to_new.size(); ++i) {
        if (old_to_new[i] != static_cast<std::int64_t>(i)) return false;
        if (new_to_old[i] != static_cast<std::int64_t>(i)) return false;
    }
    return true;
}

void GaussianCloud::resize(std::size_t n) {
    centers.resize(n, Vec3::Zero());
    rotations.resize(n, Vec4(1, 0, 0, 0));
    log_scales.resize(n, Vec3::Zero());
    opacity_logits.resize(n, 0.0);
    colors.resize(n, Vec3::Constant(0.5));
    grad.resize(n);
    pos_grad_norm_accum.resize(n, 0.0);
    pos_grad_steps.resize(n, 0);
}

void GaussianCloud::reserve(std::size_t n) {
    centers.reserve(n);
    rotations.reserve(n);
    log_scales.reserve(n);
    opacity_logits.reserve(n);
    colors.reserve(n);
}

void GaussianCloud::push_back(const Gaussian3D& g) {
    centers.push_back(g.center);
    rotations.push_back(g.rotation);
    log_scales.push_back(g.log_scale);
    opacity_logits.push_back(g.opacity_logit);
    colors.push_back(g.color);
    grad.resize(size());
    pos_grad_norm_accum.push_back(0.0);
    pos_grad_steps.push_back(0);
}

Gaussian3D GaussianCloud::get(std::size_t i) const {
    require(i < size(), "GaussianCloud::get: index out of range");
    return {centers[i], rotations[i], log_scales[i], opacity_logits[i], colors[i]};
}

void GaussianCloud::set(std::size_t i, const Gaussian3D& g) {
    require(i < size(), "GaussianCloud::set: index out of range");
    centers[i] = g.center;
    rotations[i] = g.rotation;
    log_scales[i] = g.log_scale;
    opacity_logits[i] = g.opacity_logit;
    colors[i] = g.color;
}

void GaussianCloud::zero_grad() { grad.zero(); }

void GaussianCloud::accumulate_densify_stats() {
    for (std::size_t i = 0; i < size(); ++i) {
        pos_grad_norm_accum[i] += grad.centers[i].norm();
        pos_grad_steps[i] += 1;
    }
}

void GaussianCloud::reset_densify_stats() {
    std::fill(pos_grad_norm_accum.begin(), pos_grad_norm_accum.end(), 0.0);
    std::fill(pos_grad_steps.begin(), pos_grad_steps.end(), 0);
}

void GaussianCloud::validate() const {
    const std::size_t n = size();
    require(rotations.size() == n && log_scales.size() == n &&
                opacity_logits.size() == n && colors.size() == n,
            "GaussianCloud: parameter buffers not congruent");
    require(grad.size() == n, "GaussianCloud: gradient buffers not congruent");
    require(pos_grad_norm_accum.size() == n && pos_grad_steps.size() == n,
            "GaussianCloud: densify statistics not congruent");
    for (std::size_t i = 0; i < n; ++i) {
        require(rotations[i].norm() > 0.0, "GaussianCloud: zero quaternion");
        require(std::isfinite(opacity_logits[i]), "GaussianCloud: non-finite opacity logit");
        require(centers[i].allFinite() && log_scales[i].allFinite(),
                "GaussianCloud: non-finite geometry");
        require((colors[i].array() >= 0.0).all() && (colors[i].array() <= 1.0).all(),
                "GaussianCloud: color outside [0,1]");
    }
}

IndexRemap densify_split(GaussianCloud& cloud, double grad_threshold, Rng& rng,
                         double scale_divisor) {
    require(scale_divisor > 0.0, "densify_split: scale_divisor must be positive");
    const std::size_t n = cloud.size();

    std::vector<char> split(n, 0);
    std::size_t n_split = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double steps = std::max(cloud.pos_grad_steps[i], 1);
        if (cloud.pos_grad_norm_accum[i] / steps > grad_threshold) {
            split[i] = 1;
            ++n_split;
        }
    }

    IndexRemap remap;
    remap.old_to_new.resize(n);
    std::iota(remap.old_to_new.begin(), remap.old_to_new.end(), 0);
    remap.new_to_old.resize(n);
    std::iota(remap.new_to_old.begin(), remap.new_to_old.end(), 0);
    if (n_split == 0) return remap;

    std::normal_distribution<double> normal(0.0, 1.0);
    const double log_div = std::log(scale_divisor);

    cloud.reserve(n + n_split);
    for (std::size_t i = 0; i < n; ++i) {
        if (!split[i]) continue;
        remap.old_to_new[i] = -1;  // replaced: children start fresh
        Gaussian3D parent = cloud.get(i);
        const Mat3 r = quat_to_rotmat_raw(parent.rotation);
        const Vec3 s = parent.log_scale.array().exp();

        Gaussian3D child = parent;
        child.log_scale = parent.log_scale.array() - log_div;
        for (int k = 0; k < 2; ++k) {
            Vec3 u(normal(rng), normal(rng), normal(rng));
            child.center = parent.center + r * (s.asDiagonal() * u);
            if (k == 0) {
                cloud.set(i, child);
            } else {
                cloud.push_back(child);
                remap.new_to_old.push_back(static_cast<std::int64_t>(i));
            }
        }
    }

    cloud.grad.resize(cloud.size());
    cloud.grad.zero();
    cloud.pos_grad_norm_accum.assign(cloud.size(), 0.0);
    cloud.pos_grad_steps.assign(cloud.size(), 0);
    return remap;
}

IndexRemap prune(GaussianCloud& cloud, double opacity_threshold) {
    const std::size_t n = cloud.size();
    IndexRemap remap;
    remap.old_to_new.assign(n, -1);

    std::size_t w = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (cloud.alpha(i) < opacity_threshold) continue;
        remap.old_to_new[i] = static_cast<std::int64_t>(w);
        remap.new_to_old.push_back(static_cast<std::int64_t>(i));
        if (w != i) {
            cloud.centers[w] = cloud.centers[i];
            cloud.rotations[w] = cloud.rotations[i];
            cloud.log_scales[w] = cloud.log_scales[i];
            cloud.opacity_logits[w] = cloud.opacity_logits[i];
            cloud.colors[w] = cloud.colors[i];
        }
        ++w;
    }
    cloud.resize(w);
    cloud.grad.resize(w);
    cloud.reset_densify_stats();
    return remap;
}

} // namespace gsopt
