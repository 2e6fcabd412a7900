#include "gsopt/guidance.hpp"

#include "test_util.hpp"

#include "doctest.h"

#include <random>

using namespace gsopt;
using namespace gsopt::testutil;

namespace {

/// Distillation target over free images: render returns the stored images,
/// backprop accumulates the adjoints verbatim.
struct ImageTarget : DistillationTarget {
    std::vector<Image> images;
    std::vector<Image> grads;

    explicit ImageTarget(std::vector<Image> imgs) : images(std::move(imgs)) {
        for (const Image& im : images) grads.emplace_back(im.height(), im.width(), im.channels());
    }
    int view_count() const override { return static_cast<int>(images.size()); }
    Image render_view(int k) override { return images[static_cast<std::size_t>(k)]; }
    void backprop_view(int k, const Image& adjoint) override {
        axpby(1.0, adjoint, 1.0, grads[static_cast<std::size_t>(k)]);
    }
};

std::vector<Image> random_images(Rng& rng, int count, int h, int w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Image> out;
    for (int k = 0; k < count; ++k) {
        Image im(h, w, 3);
        for (double& v : im.span()) v = u(rng);
        out.push_back(std::move(im));
    }
    return out;
}

} // namespace

TEST_SUITE("guidance") {

TEST_CASE("linear-beta schedule closed forms") {
    const NoiseSchedule s = NoiseSchedule::ddpm_linear();
    REQUIRE(s.steps() == 1000);
    CHECK(s.alpha_bar(0) == doctest::Approx(1.0 - 1e-4).epsilon(1e-12));
    // alpha_bar(1) = (1 - beta_0)(1 - beta_1) with betas linear in t.
    const double b0 = 1e-4;
    const double b1 = 1e-4 + (2e-2 - 1e-4) / 999.0;
    CHECK(s.alpha_bar(1) == doctest::Approx((1 - b0) * (1 - b1)).epsilon(1e-12));
    // Monotone decreasing, all in (0, 1); weight is the complement.
    for (int t = 1; t < 1000; ++t) {
        CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
        CHECK(s.alpha_bar(t) > 0.0);
        CHECK(s.alpha_bar(t) < 1.0);
        CHECK(s.weight(t) == doctest::Approx(1.0 - s.alpha_bar(t)));
    }
}

TEST_CASE("timestep sampling stays in the configured band with mean half") {
    const NoiseSchedule s = NoiseSchedule::ddpm_linear();
    Rng rng(61);
    double sum = 0.0;
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
        const int t = s.sample_timestep(rng);
        CHECK(t >= 20);
        CHECK(t <= 980);
        sum += t;
    }
    // Uniform on [0.02 T, 0.98 T]: the mean fraction is 0.5.
    CHECK(sum / draws / 1000.0 == doctest::Approx(0.5).epsilon(0.01));
    // Narrow band override.
    for (int i = 0; i < 100; ++i) {
        const int t = s.sample_timestep(rng, 0.4, 0.6);
        CHECK(t >= 400);
        CHECK(t <= 600);
    }
}

TEST_CASE("add_noise closed form") {
    Image x(1, 1, 1, 2.0);
    Image n(1, 1, 1, -1.0);
    const Image z = add_noise(x, 0.25, n);
    CHECK(z.at(0, 0, 0) == doctest::Approx(0.5 * 2.0 + std::sqrt(0.75) * -1.0));
}

TEST_CASE("echo provider yields exactly zero accumulated gradients") {
    Rng rng(62);
    ImageTarget target(random_images(rng, 3, 8, 8));
    auto echo = make_echo_provider();
    const NoiseSchedule schedule = NoiseSchedule::ddpm_linear();
    GuidanceContext ctx;
    Rng sds_rng(63);
    const SdsStats stats = sds_grad(target, schedule, *echo, ctx, 1.0, sds_rng);
    CHECK(stats.pseudo_loss == 0.0);
    CHECK(stats.residual_rms == 0.0);
    for (const Image& g : target.grads) {
        for (double v : g.span()) CHECK(v == 0.0);
    }
}

TEST_CASE("pull provider substitutes the photometric residual") {
    // eps_hat - eps = strength * (clean - target), so the accumulated adjoint
    // must equal scale * w(t) * sqrt(alpha_bar) * strength * (clean - target).
    Rng rng(64);
    auto clean = random_images(rng, 2, 6, 6);
    auto targets = random_images(rng, 2, 6, 6);
    const double strength = 0.7;
    const double scale = 1.3;

    ImageTarget target(clean);
    auto pull = make_pull_provider(targets, strength);
    const NoiseSchedule schedule = NoiseSchedule::ddpm_linear();
    GuidanceContext ctx;
    Rng sds_rng(65);
    const SdsStats stats = sds_grad(target, schedule, *pull, ctx, scale, sds_rng);

    const double coeff =
        scale * schedule.weight(stats.t) * std::sqrt(schedule.alpha_bar(stats.t)) * strength;
    double worst = 0.0;
    for (int k = 0; k < 2; ++k) {
        for (std::size_t i = 0; i < clean[k].size(); ++i) {
            const double expect = coeff * (clean[k].data()[i] - targets[k].data()[i]);
            worst = std::max(worst, std::abs(target.grads[k].data()[i] - expect));
        }
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("pull provider honors view_ids indirection") {
    Rng rng(66);
    auto clean = random_images(rng, 1, 4, 4);
    auto targets = random_images(rng, 3, 4, 4);
    ImageTarget target(clean);
    auto pull = make_pull_provider(targets, 1.0);
    const NoiseSchedule schedule = NoiseSchedule::ddpm_linear();
    GuidanceContext ctx;
    ctx.view_ids = {2};  // compare the single view against targets[2]
    Rng sds_rng(67);
    const SdsStats stats = sds_grad(target, schedule, *pull, ctx, 1.0, sds_rng);
    const double coeff = schedule.weight(stats.t) * std::sqrt(schedule.alpha_bar(stats.t));
    for (std::size_t i = 0; i < clean[0].size(); ++i) {
        const double expect = coeff * (clean[0].data()[i] - targets[2].data()[i]);
        CHECK(target.grads[0].data()[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("hybrid composition equals the branches run alone, bitwise") {
    Rng rng(68);
    auto imgs_2d = random_images(rng, 1, 6, 6);
    auto imgs_3d = random_images(rng, 4, 6, 6);
    auto targets_3d = random_images(rng, 4, 6, 6);
    const NoiseSchedule schedule = NoiseSchedule::ddpm_linear();
    HybridWeights weights;
    weights.lambda_2d = 0.1;
    weights.lambda_3d = 0.01;

    // Composed run.
    ImageTarget t2(imgs_2d), t3(imgs_3d);
    auto echo = make_echo_provider();
    auto pull = make_pull_provider(targets_3d, 0.9);
    GuidanceContext c2, c3;
    c3.view_ids = {0, 1, 2, 3};
    Rng hybrid_rng(69);
    const HybridStats hs =
        hybrid_sds_grad(t2, t3, schedule, *echo, *pull, c2, c3, weights, hybrid_rng);

    // Each branch alone, consuming the same derived stream.
    Rng split_rng(69);
    Rng rng_2d(split_rng());
    Rng rng_3d(split_rng());
    ImageTarget u2(imgs_2d), u3(imgs_3d);
    const SdsStats s2 = sds_grad(u2, schedule, *echo, c2, weights.lambda_2d, rng_2d);
    const SdsStats s3 = sds_grad(u3, schedule, *pull, c3, weights.lambda_3d, rng_3d);

    CHECK(hs.sds_2d.t == s2.t);
    CHECK(hs.sds_3d.t == s3.t);
    CHECK(hs.sds_2d.pseudo_loss == s2.pseudo_loss);
    CHECK(hs.sds_3d.pseudo_loss == s3.pseudo_loss);
    for (std::size_t i = 0; i < t2.grads[0].size(); ++i) {
        CHECK(t2.grads[0].data()[i] == u2.grads[0].data()[i]);
    }
    for (int k = 0; k < 4; ++k) {
        for (std::size_t i = 0; i < t3.grads[k].size(); ++i) {
            CHECK(t3.grads[k].data()[i] == u3.grads[k].data()[i]);
        }
    }
}

TEST_CASE("the drawn timestep precedes the per-view noise in the stream") {
    // Same rng, different view counts: the timestep draw must match because
    // it is taken before any noise is generated.
    Rng rng(70);
    auto one = random_images(rng, 1, 4, 4);
    auto two = random_images(rng, 2, 4, 4);
    ImageTarget t1(one), t2(two);
    auto echo = make_echo_provider();
    const NoiseSchedule schedule = NoiseSchedule::ddpm_linear();
    Rng ra(71), rb(71);
    const SdsStats sa = sds_grad(t1, schedule, *echo, {}, 1.0, ra);
    const SdsStats sb = sds_grad(t2, schedule, *echo, {}, 1.0, rb);
    CHECK(sa.t == sb.t);
}

TEST_CASE("fill_normal produces standard normal statistics") {
    Image img(64, 64, 3);
    Rng rng(72);
    fill_normal(img, rng);
    double mean = 0.0, var = 0.0;
    for (double v : img.span()) mean += v;
    mean /= static_cast<double>(img.size());
    for (double v : img.span()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(img.size() - 1);
    CHECK(std::abs(mean) < 0.03);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("cloud targets chain adjoints into cloud gradients") {
    Rng rng(73);
    GaussianCloud cloud = random_cloud(rng, 4);
    const CameraView view = random_view(rng, 12, 12);
    CloudRgbTarget target(cloud, {view}, Vec3::Constant(0.5), RenderSettings{});
    const Image img = target.render_view(0);
    CHECK(img.channels() == 3);
    Image adj(12, 12, 3, 0.25);
    cloud.zero_grad();
    target.backprop_view(0, adj);
    double norm = 0.0;
    for (const Vec3& g : cloud.grad.centers) norm += g.norm();
    CHECK(norm > 0.0);
}

} // TEST_SUITE
