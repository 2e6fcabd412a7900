#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gsopt {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Thrown when a caller violates a documented precondition.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown by file readers/writers; message carries path and byte context.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown when the optimization loop hits a non-finite loss or an empty scene.
class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

using Rng = std::mt19937_64;

/// Derives an independent deterministic stream from a base seed and a tag.
/// Used so the composed distillation branches consume disjoint streams.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0);

inline Rng derive_rng(std::uint64_t base, std::string_view tag, std::uint64_t index = 0) {
    return Rng(derive_seed(base, tag, index));
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) {
    require(p > 0.0 && p < 1.0, "logit: argument must lie in (0,1)");
    return std::log(p) - std::log1p(-p);
}

/// Flat double view over a vector of fixed-size Eigen vectors.
template <typename V>
std::span<double> flat_span(std::vector<V>& v) {
    return {reinterpret_cast<double*>(v.data()), v.size() * V::RowsAtCompileTime};
}

template <typename V>
std::span<const double> flat_span(const std::vector<V>& v) {
    return {reinterpret_cast<const double*>(v.data()), v.size() * V::RowsAtCompileTime};
}

} // namespace gsopt
