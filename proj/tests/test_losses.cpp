#include "gsopt/losses.hpp"

#include "test_util.hpp"

#include "doctest.h"

#include <random>
#include <set>

using namespace gsopt;
using namespace gsopt::testutil;

TEST_SUITE("losses") {

TEST_CASE("tv_loss closed form on a two-pixel ramp") {
    // One horizontal difference of 3, one counted difference, eps = 1e-6:
    // loss = sqrt(9 + 1e-12).
    Image img(1, 2, 1);
    img.at(0, 0, 0) = 1.0;
    img.at(0, 1, 0) = 4.0;
    CHECK(tv_loss(img) == doctest::Approx(std::sqrt(9.0 + 1e-12)));
    // Constant image: every difference is zero up to the smoothing.
    Image flat(4, 4, 2, 0.7);
    CHECK(tv_loss(flat) == doctest::Approx(1e-6).epsilon(1e-9));
}

TEST_CASE("tv_loss gradient matches finite differences") {
    Rng rng(51);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Image img(5, 4, 2);
    for (double& v : img.span()) v = u(rng);
    Image grad(5, 4, 2);
    tv_loss(img, &grad);
    auto loss = [&] { return tv_loss(img); };
    double worst = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double fd = central_diff(loss, img.data()[i], 1e-6);
        worst = std::max(worst, rel_err(grad.data()[i], fd));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("mask_loss is the mean squared error with its gradient") {
    Image alpha(2, 2, 1);
    Image mask(2, 2, 1);
    alpha.at(0, 0, 0) = 1.0;
    mask.at(1, 1, 0) = 1.0;
    // Differences: 1, 0, 0, -1 -> mse = 2/4.
    CHECK(mask_loss(alpha, mask) == doctest::Approx(0.5));
    Image grad(2, 2, 1);
    mask_loss(alpha, mask, &grad);
    CHECK(grad.at(0, 0, 0) == doctest::Approx(2.0 * 1.0 / 4.0));
    CHECK(grad.at(1, 1, 0) == doctest::Approx(2.0 * -1.0 / 4.0));
}

TEST_CASE("flatness term closed form and gradient") {
    GaussianCloud cloud;
    Gaussian3D g;
    g.log_scale = Vec3(std::log(0.02), std::log(0.1), std::log(0.3));
    cloud.push_back(g);
    cloud.zero_grad();
    SugarRegWeights w;
    w.lambda_flat = 1.0;
    w.lambda_align = 0.0;
    const SugarRegTerms terms = sugar_regularizers(cloud, w, &cloud.grad);
    // s_min / s_mid = 0.02 / 0.1.
    CHECK(terms.flatness == doctest::Approx(0.04));
    CHECK(terms.total == doctest::Approx(0.04));

    auto loss = [&] { return sugar_regularizers(cloud, w).total; };
    for (int k = 0; k < 3; ++k) {
        const double fd = central_diff(loss, cloud.log_scales[0][k], 1e-6);
        CHECK(rel_err(cloud.grad.log_scales[0][k], fd) < 1e-5);
    }
}

TEST_CASE("alignment vanishes for identically oriented neighbours") {
    GaussianCloud cloud;
    for (int i = 0; i < 4; ++i) {
        Gaussian3D g;
        g.center = Vec3(0.1 * i, 0, 0);
        g.log_scale = Vec3(std::log(0.01), std::log(0.1), std::log(0.1));
        cloud.push_back(g);
    }
    cloud.zero_grad();
    SugarRegWeights w;
    w.lambda_flat = 0.0;
    w.lambda_align = 1.0;
    w.k_neighbors = 3;
    const SugarRegTerms terms = sugar_regularizers(cloud, w);
    CHECK(terms.alignment == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("sugar gradients pass finite differences on a random cloud") {
    Rng rng(52);
    GaussianCloud cloud = random_cloud(rng, 5);
    cloud.zero_grad();
    SugarRegWeights w;
    w.lambda_flat = 0.7;
    w.lambda_align = 0.4;
    w.k_neighbors = 3;
    const auto neighbors = knn_indices(cloud, w.k_neighbors);
    sugar_regularizers(cloud, w, &cloud.grad, &neighbors);
    // Differentiate with the neighbour table frozen, matching the backward.
    auto loss = [&] { return sugar_regularizers(cloud, w, nullptr, &neighbors).total; };
    double worst = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int k = 0; k < 4; ++k) {
            const double fd = central_diff(loss, cloud.rotations[i][k], 1e-6);
            worst = std::max(worst, rel_err(cloud.grad.rotations[i][k], fd));
        }
        for (int k = 0; k < 3; ++k) {
            const double fd = central_diff(loss, cloud.log_scales[i][k], 1e-6);
            worst = std::max(worst, rel_err(cloud.grad.log_scales[i][k], fd));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("precomputed neighbour table reproduces the recomputed path") {
    Rng rng(53);
    GaussianCloud cloud = random_cloud(rng, 8);
    SugarRegWeights w;
    w.k_neighbors = 4;
    CloudGrads g1, g2;
    g1.resize(cloud.size());
    g2.resize(cloud.size());
    g1.zero();
    g2.zero();
    const SugarRegTerms a = sugar_regularizers(cloud, w, &g1);
    const auto neighbors = knn_indices(cloud, w.k_neighbors);
    const SugarRegTerms b = sugar_regularizers(cloud, w, &g2, &neighbors);
    CHECK(a.total == b.total);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK((g1.rotations[i] - g2.rotations[i]).norm() == 0.0);
        CHECK((g1.log_scales[i] - g2.log_scales[i]).norm() == 0.0);
    }
}

TEST_CASE("knn_indices finds the true nearest neighbours on a line") {
    GaussianCloud cloud;
    for (int i = 0; i < 5; ++i) {
        Gaussian3D g;
        g.center = Vec3(i, 0, 0);
        cloud.push_back(g);
    }
    const auto nn = knn_indices(cloud, 2);
    REQUIRE(nn.size() == 5);
    CHECK(nn[0] == std::vector<int>{1, 2});
    CHECK(std::set<int>(nn[2].begin(), nn[2].end()) == std::set<int>{1, 3});
    CHECK(nn[4] == std::vector<int>{3, 2});
}

TEST_CASE("mean_flat_ratio averages s_min over s_mid") {
    GaussianCloud cloud;
    Gaussian3D a, b;
    a.log_scale = Vec3(std::log(0.1), std::log(0.2), std::log(0.4));  // ratio 0.5
    b.log_scale = Vec3(std::log(0.3), std::log(0.3), std::log(0.3));  // ratio 1.0
    cloud.push_back(a);
    cloud.push_back(b);
    CHECK(mean_flat_ratio(cloud) == doctest::Approx(0.75));
}

TEST_CASE("stage2_reg_terms weights its parts and differentiates") {
    Rng rng(54);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const CameraView view = make_orbit_camera(0, 0, 1.5, 50, 6, 6);
    Image depth(6, 6, 1), alpha(6, 6, 1), mask(6, 6, 1);
    // Gentle relief keeps the derived normals away from the orientation flip.
    for (double& v : depth.span()) v = 1.3 + 0.05 * u(rng);
    for (double& v : alpha.span()) v = 0.2 + 0.6 * u(rng);
    for (double& v : mask.span()) v = u(rng) > 0.5 ? 1.0 : 0.0;

    Stage2Weights w;
    w.lambda_tv_depth = 0.3;
    w.lambda_tv_normal = 0.2;
    w.lambda_mask = 0.5;
    Image d_depth(6, 6, 1), d_alpha(6, 6, 1);
    const Stage2RegTerms terms = stage2_reg_terms(depth, alpha, view, &mask, w, &d_depth, &d_alpha);
    CHECK(terms.total == doctest::Approx(0.3 * terms.tv_depth + 0.2 * terms.tv_normal +
                                         0.5 * terms.mask));

    auto loss = [&] { return stage2_reg_terms(depth, alpha, view, &mask, w).total; };
    double worst = 0.0;
    for (std::size_t i = 0; i < depth.size(); ++i) {
        const double fd = central_diff(loss, depth.data()[i], 1e-6);
        worst = std::max(worst, rel_err(d_depth.data()[i], fd));
    }
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        const double fd = central_diff(loss, alpha.data()[i], 1e-6);
        worst = std::max(worst, rel_err(d_alpha.data()[i], fd));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("stage3_reg_terms routes the normal adjoint through its image") {
    Rng rng(55);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image depth(5, 5, 1), alpha(5, 5, 1), normal(5, 5, 3);
    for (double& v : depth.span()) v = 1.3 + 0.05 * u(rng);
    for (double& v : alpha.span()) v = 0.2 + 0.6 * u(rng);
    for (double& v : normal.span()) v = u(rng);

    Stage3Weights w;
    w.lambda_tv_depth = 0.4;
    w.lambda_tv_normal = 0.6;
    w.lambda_mask = 0.0;
    Image d_depth(5, 5, 1), d_alpha(5, 5, 1), d_normal(5, 5, 3);
    const Stage3RegTerms terms =
        stage3_reg_terms(depth, alpha, normal, nullptr, w, &d_depth, &d_alpha, &d_normal);
    CHECK(terms.mask == 0.0);
    CHECK(terms.total == doctest::Approx(0.4 * terms.tv_depth + 0.6 * terms.tv_normal));

    auto loss = [&] { return stage3_reg_terms(depth, alpha, normal, nullptr, w).total; };
    double worst = 0.0;
    for (std::size_t i = 0; i < normal.size(); ++i) {
        const double fd = central_diff(loss, normal.data()[i], 1e-6);
        worst = std::max(worst, rel_err(d_normal.data()[i], fd));
    }
    for (std::size_t i = 0; i < depth.size(); ++i) {
        const double fd = central_diff(loss, depth.data()[i], 1e-6);
        worst = std::max(worst, rel_err(d_depth.data()[i], fd));
    }
    CHECK(worst < 1e-3);
}

} // TEST_SUITE
