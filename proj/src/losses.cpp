#include "gsopt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gsopt {

double tv_loss(const Image& image, Image* d_image, double eps) {
    require(!image.empty(), "tv_loss: empty image");
    if (d_image) require(d_image->same_shape(image), "tv_loss: gradient shape mismatch");
    const int h = image.height(), w = image.width(), c = image.channels();
    const std::int64_t count =
        static_cast<std::int64_t>(c) *
        (static_cast<std::int64_t>(h) * (w - 1) + static_cast<std::int64_t>(h - 1) * w);
    if (count <= 0) return 0.0;
    const double inv = 1.0 / static_cast<double>(count);

    double acc = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int k = 0; k < c; ++k) {
                if (x + 1 < w) {
                    const double d = image.at(y, x + 1, k) - image.at(y, x, k);
                    const double phi = std::sqrt(d * d + eps * eps);
                    acc += phi;
                    if (d_image) {
                        const double g = inv * d / phi;
                        d_image->at(y, x + 1, k) += g;
                        d_image->at(y, x, k) -= g;
                    }
                }
                if (y + 1 < h) {
                    const double d = image.at(y + 1, x, k) - image.at(y, x, k);
                    const double phi = std::sqrt(d * d + eps * eps);
                    acc += phi;
                    if (d_image) {
                        const double g = inv * d / phi;
                        d_image->at(y + 1, x, k) += g;
                        d_image->at(y, x, k) -= g;
                    }
                }
            }
        }
    }
    return acc * inv;
}

double mask_loss(const Image& alpha, const Image& mask_gt, Image* d_alpha) {
    require(alpha.same_shape(mask_gt), "mask_loss: shape mismatch");
    require(!alpha.empty(), "mask_loss: empty image");
    if (d_alpha) require(d_alpha->same_shape(alpha), "mask_loss: gradient shape mismatch");
    const double inv = 1.0 / static_cast<double>(alpha.size());
    double acc = 0.0;
    const double* a = alpha.data();
    const double* m = mask_gt.data();
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        const double d = a[i] - m[i];
        acc += d * d;
        if (d_alpha) d_alpha->data()[i] += 2.0 * inv * d;
    }
    return acc * inv;
}

namespace {

// Axis orders by scale: indices of (smallest, middle, largest).
std::array<int, 3> scale_order(const Vec3& log_scale) {
    std::array<int, 3> idx{0, 1, 2};
    std::sort(idx.begin(), idx.end(),
              [&](int a, int b) { return log_scale[a] < log_scale[b]; });
    return idx;
}

} // namespace

std::vector<std::vector<int>> knn_indices(const GaussianCloud& cloud, int k) {
    const int n = static_cast<int>(cloud.size());
    std::vector<std::vector<int>> out(n);
    if (n <= 1 || k <= 0) return out;
    std::vector<std::pair<double, int>> dist;
    dist.reserve(n - 1);
    for (int i = 0; i < n; ++i) {
        dist.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            dist.emplace_back((cloud.centers[j] - cloud.centers[i]).squaredNorm(), j);
        }
        const int kk = std::min<int>(k, static_cast<int>(dist.size()));
        std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
        out[i].reserve(kk);
        for (int m = 0; m < kk; ++m) out[i].push_back(dist[m].second);
    }
    return out;
}

SugarRegTerms sugar_regularizers(const GaussianCloud& cloud, const SugarRegWeights& weights,
                                 CloudGrads* grads,
                                 const std::vector<std::vector<int>>* neighbors_in) {
    SugarRegTerms terms;
    const std::size_t n = cloud.size();
    if (n == 0) return terms;
    if (grads) require(grads->size() == n, "sugar_regularizers: grads not sized");
    const double inv_n = 1.0 / static_cast<double>(n);

    // Flatness: mean (s_min / s_mid)^2 = mean exp(2 (l_min - l_mid)).
    for (std::size_t i = 0; i < n; ++i) {
        const auto ord = scale_order(cloud.log_scales[i]);
        const double r2 =
            std::exp(2.0 * (cloud.log_scales[i][ord[0]] - cloud.log_scales[i][ord[1]]));
        terms.flatness += r2 * inv_n;
        if (grads) {
            const double g = weights.lambda_flat * inv_n * 2.0 * r2;
            grads->log_scales[i][ord[0]] += g;
            grads->log_scales[i][ord[1]] -= g;
        }
    }

    // Alignment: each Gaussian's flat-axis direction vs the sign-aligned mean
    // direction of its k nearest neighbours; deviation 1 - (u . n_hat)^2.
    if (n > 1 && weights.k_neighbors > 0) {
        std::vector<Vec3> flat_axis(n);
        std::vector<int> flat_idx(n);
        for (std::size_t i = 0; i < n; ++i) {
            flat_idx[i] = scale_order(cloud.log_scales[i])[0];
            flat_axis[i] = quat_to_rotmat_raw(cloud.rotations[i]).col(flat_idx[i]);
        }
        if (neighbors_in)
            require(neighbors_in->size() == n,
                    "sugar_regularizers: neighbor table size mismatch");
        const auto neighbors =
            neighbors_in ? *neighbors_in : knn_indices(cloud, weights.k_neighbors);
        std::vector<Mat3> d_rot(grads ? n : 0, Mat3::Zero());

        for (std::size_t i = 0; i < n; ++i) {
            const auto& nb = neighbors[i];
            if (nb.empty()) continue;
            const Vec3& u = flat_axis[i];
            Vec3 m = Vec3::Zero();
            std::vector<double> sgn(nb.size());
            for (std::size_t j = 0; j < nb.size(); ++j) {
                sgn[j] = u.dot(flat_axis[nb[j]]) >= 0.0 ? 1.0 : -1.0;
                m += sgn[j] * flat_axis[nb[j]];
            }
            const double mn = m.norm();
            if (mn < 1e-12) continue;
            const Vec3 nh = m / mn;
            const double y = u.dot(nh);
            terms.alignment += (1.0 - y * y) * inv_n;
            if (grads) {
                const double scale = weights.lambda_align * inv_n * (-2.0 * y);
                const Vec3 du = scale * nh;
                const Vec3 dm = scale * (u - nh * y) / mn;
                d_rot[i].col(flat_idx[i]) += du;
                for (std::size_t j = 0; j < nb.size(); ++j) {
                    d_rot[nb[j]].col(flat_idx[nb[j]]) += sgn[j] * dm;
                }
            }
        }
        if (grads) {
            for (std::size_t i = 0; i < n; ++i) {
                if (d_rot[i].isZero(0.0)) continue;
                grads->rotations[i] += rotmat_backward(cloud.rotations[i], d_rot[i]);
            }
        }
    }

    terms.total = weights.lambda_flat * terms.flatness + weights.lambda_align * terms.alignment;
    return terms;
}

double mean_flat_ratio(const GaussianCloud& cloud) {
    if (cloud.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto ord = scale_order(cloud.log_scales[i]);
        acc += std::exp(cloud.log_scales[i][ord[0]] - cloud.log_scales[i][ord[1]]);
    }
    return acc / static_cast<double>(cloud.size());
}

Stage2RegTerms stage2_reg_terms(const Image& depth, const Image& alpha,
                                const CameraView& view, const Image* mask_gt,
                                const Stage2Weights& weights,
                                Image* d_depth, Image* d_alpha) {
    Stage2RegTerms terms;

    if (weights.lambda_tv_depth != 0.0) {
        Image g(depth.height(), depth.width(), 1);
        terms.tv_depth = tv_loss(depth, d_depth ? &g : nullptr);
        if (d_depth) axpby(weights.lambda_tv_depth, g, 1.0, *d_depth);
    } else {
        terms.tv_depth = tv_loss(depth);
    }

    {
        const Image normals = normals_from_depth(depth, alpha, view);
        if (d_depth && weights.lambda_tv_normal != 0.0) {
            Image d_norm(normals.height(), normals.width(), 3);
            terms.tv_normal = tv_loss(normals, &d_norm);
            const Image g = normals_from_depth_backward(depth, alpha, view, d_norm);
            axpby(weights.lambda_tv_normal, g, 1.0, *d_depth);
        } else {
            terms.tv_normal = tv_loss(normals);
        }
    }

    if (mask_gt) {
        if (d_alpha && weights.lambda_mask != 0.0) {
            Image g(alpha.height(), alpha.width(), 1);
            terms.mask = mask_loss(alpha, *mask_gt, &g);
            axpby(weights.lambda_mask, g, 1.0, *d_alpha);
        } else {
            terms.mask = mask_loss(alpha, *mask_gt);
        }
    }

    terms.total = weights.lambda_tv_depth * terms.tv_depth +
                  weights.lambda_tv_normal * terms.tv_normal +
                  weights.lambda_mask * terms.mask;
    return terms;
}

Stage3RegTerms stage3_reg_terms(const Image& depth, const Image& alpha,
                                const Image& normal_image, const Image* mask_gt,
                                const Stage3Weights& weights,
                                Image* d_depth, Image* d_alpha, Image* d_normal_image) {
    Stage3RegTerms terms;

    if (d_depth && weights.lambda_tv_depth != 0.0) {
        Image g(depth.height(), depth.width(), 1);
        terms.tv_depth = tv_loss(depth, &g);
        axpby(weights.lambda_tv_depth, g, 1.0, *d_depth);
    } else {
        terms.tv_depth = tv_loss(depth);
    }

    if (d_normal_image && weights.lambda_tv_normal != 0.0) {
        Image g(normal_image.height(), normal_image.width(), normal_image.channels());
        terms.tv_normal = tv_loss(normal_image, &g);
        axpby(weights.lambda_tv_normal, g, 1.0, *d_normal_image);
    } else {
        terms.tv_normal = tv_loss(normal_image);
    }

    if (mask_gt) {
        if (d_alpha && weights.lambda_mask != 0.0) {
            Image g(alpha.height(), alpha.width(), 1);
            terms.mask = mask_loss(alpha, *mask_gt, &g);
            axpby(weights.lambda_mask, g, 1.0, *d_alpha);
        } else {
            terms.mask = mask_loss(alpha, *mask_gt);
        }
    }

    terms.total = weights.lambda_tv_depth * terms.tv_depth +
                  weights.lambda_tv_normal * terms.tv_normal +
                  weights.lambda_mask * terms.mask;
    return terms;
}

} // namespace gsopt
