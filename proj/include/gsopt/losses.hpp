#pragma once

#include "gsopt/camera.hpp"
#include "gsopt/image.hpp"
#include "gsopt/renderer.hpp"
#include "gsopt/scene.hpp"

#include <vector>

namespace gsopt {

/// Anisotropic total variation over forward differences with a smoothed
/// absolute value sqrt(u^2 + eps^2), averaged over the number of counted
/// differences across all channels. If d_image is non-null the gradient of
/// the returned value is accumulated into it (shapes must match).
double tv_loss(const Image& image, Image* d_image = nullptr, double eps = 1e-6);

/// Mean squared error between an alpha image and a foreground mask.
/// Accumulates the gradient w.r.t. alpha when d_alpha is non-null.
double mask_loss(const Image& alpha, const Image& mask_gt, Image* d_alpha = nullptr);

struct SugarRegWeights {
    double lambda_flat = 1.0;
    double lambda_align = 1.0;
    int k_neighbors = 8;
};

struct SugarRegTerms {
    double flatness = 0.0;   // mean (s_min / s_mid)^2
    double alignment = 0.0;  // mean squared deviation from the neighbour consensus
    double total = 0.0;      // lambda_flat * flatness + lambda_align * alignment
};

/// Indices of the k nearest neighbours of every center (brute force).
std::vector<std::vector<int>> knn_indices(const GaussianCloud& cloud, int k);

/// Flatness pushes the smallest axis toward zero relative to the middle one;
/// alignment pulls each Gaussian's flat-axis direction toward the consensus
/// direction of its k nearest neighbours (compared up to sign). Weighted
/// gradients are accumulated into `grads` when non-null. A precomputed
/// neighbour table can be supplied to amortize the search across steps.
SugarRegTerms sugar_regularizers(const GaussianCloud& cloud, const SugarRegWeights& weights,
                                 CloudGrads* grads = nullptr,
                                 const std::vector<std::vector<int>>* neighbors = nullptr);

/// Diagnostic used to quantify the flattening effect: mean of s_min / s_mid.
double mean_flat_ratio(const GaussianCloud& cloud);

struct Stage2Weights {
    double lambda_tv_depth = 0.1;
    double lambda_tv_normal = 0.1;
    double lambda_mask = 1.0;
};

struct Stage2RegTerms {
    double tv_depth = 0.0;
    double tv_normal = 0.0;
    double mask = 0.0;
    double total = 0.0;
};

/// Geometry regularizers of the first optimization stage for one rendered
/// view: TV on the depth image, TV on normals derived from depth (chained
/// back to a depth adjoint), and an optional mask term. Weighted adjoints
/// are accumulated into d_depth / d_alpha when non-null.
Stage2RegTerms stage2_reg_terms(const Image& depth, const Image& alpha,
                                const CameraView& view, const Image* mask_gt,
                                const Stage2Weights& weights,
                                Image* d_depth = nullptr, Image* d_alpha = nullptr);

struct Stage3Weights {
    double lambda_tv_depth = 0.1;
    double lambda_tv_normal = 0.1;
    double lambda_mask = 1.0;
};

struct Stage3RegTerms {
    double tv_depth = 0.0;
    double tv_normal = 0.0;
    double mask = 0.0;
    double total = 0.0;
};

/// Mesh-stage regularizers for one rendered view. The normal image comes
/// from rendering face normals, so its adjoint flows through the color
/// compositing path rather than through depth.
Stage3RegTerms stage3_reg_terms(const Image& depth, const Image& alpha,
                                const Image& normal_image, const Image* mask_gt,
                                const Stage3Weights& weights,
                                Image* d_depth = nullptr, Image* d_alpha = nullptr,
                                Image* d_normal_image = nullptr);

} // namespace gsopt
