#include "gsopt/pipeline.hpp"

#include "gsopt/renderer.hpp"

#include "test_util.hpp"

#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

using namespace gsopt;
using namespace gsopt::testutil;

namespace {

/// Expected single Adam update from zero state at group step `t`.
double adam_update(double grad, long t, double lr, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8) {
    const double m = (1.0 - beta1) * grad;
    const double v = (1.0 - beta2) * grad * grad;
    const double mh = m / (1.0 - std::pow(beta1, double(t)));
    const double vh = v / (1.0 - std::pow(beta2, double(t)));
    return lr * mh / (std::sqrt(vh) + eps);
}

Config small_config() {
    Config cfg = Config::defaults();
    cfg.set("render.width", "24");
    cfg.set("render.height", "24");
    cfg.set("init.count", "32");
    cfg.set("init.opacity", "0.6");
    cfg.set("init.scale", "0.08");
    cfg.set("stage2.steps", "10");
    cfg.set("stage2.densify_from", "1000");   // out of range: disabled
    cfg.set("stage2.densify_until", "1000");
    cfg.set("stage2.sugar_from", "1000");
    cfg.set("stage2.lambda_tv_depth", "0");
    cfg.set("stage2.lambda_tv_normal", "0");
    cfg.set("stage2.lambda_mask", "0");
    cfg.set("stage3.lambda_tv_depth", "0");
    cfg.set("stage3.lambda_tv_normal", "0");
    cfg.set("stage3.lambda_mask", "0");
    return cfg;
}

GaussianCloud blob_cloud(const Vec3& center, double s, double alpha, const Vec3& color) {
    GaussianCloud cloud;
    Gaussian3D g;
    g.center = center;
    g.log_scale = Vec3::Constant(std::log(s));
    g.opacity_logit = logit(alpha);
    g.color = color;
    cloud.push_back(g);
    cloud.zero_grad();
    return cloud;
}

bool clouds_identical(const GaussianCloud& a, const GaussianCloud& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.centers[i] != b.centers[i]) return false;
        if (a.rotations[i] != b.rotations[i]) return false;
        if (a.log_scales[i] != b.log_scales[i]) return false;
        if (a.opacity_logits[i] != b.opacity_logits[i]) return false;
        if (a.colors[i] != b.colors[i]) return false;
    }
    return true;
}

} // namespace

TEST_SUITE("pipeline") {

TEST_CASE("adam first and second step closed forms") {
    Adam adam;
    const int g = adam.add_group("x", 0.1, 2);
    std::vector<double> x = {1.0, -2.0};
    const std::vector<double> grads = {0.5, -1.5};

    adam.step(g, x, grads);
    CHECK(x[0] == doctest::Approx(1.0 - adam_update(0.5, 1, 0.1)).epsilon(1e-12));
    CHECK(x[1] == doctest::Approx(-2.0 + adam_update(1.5, 1, 0.1)).epsilon(1e-12));
    CHECK(adam.step_count(g) == 1);

    // With the same gradient again the bias-corrected moments are unchanged,
    // so the update repeats exactly.
    const std::vector<double> x_after_1 = x;
    adam.step(g, x, grads);
    CHECK(x[0] == doctest::Approx(x_after_1[0] - adam_update(0.5, 1, 0.1)).epsilon(1e-10));
    CHECK(adam.step_count(g) == 2);
}

TEST_CASE("adam group bookkeeping") {
    Adam adam;
    const int a = adam.add_group("a", 0.1, 3);
    const int b = adam.add_group("b", 0.2, 1);
    CHECK(adam.group_size(a) == 3);
    CHECK(adam.lr(b) == 0.2);
    adam.set_lr(b, 0.05);
    CHECK(adam.lr(b) == 0.05);

    std::vector<double> x = {0, 0, 0};
    std::vector<double> g2 = {1.0, 1.0};
    CHECK_THROWS_AS(adam.step(a, std::span<double>(x.data(), 2), g2), ContractError);
    adam.resize(a, 2);
    CHECK(adam.group_size(a) == 2);
}

TEST_CASE("adam remap carries moments for surviving slots only") {
    // Reference: an optimizer that always had the surviving two elements.
    Adam ref;
    const int gr = ref.add_group("x", 0.1, 2);
    std::vector<double> xr = {1.0, 3.0};
    ref.step(gr, xr, std::vector<double>{0.4, -0.8});

    // Full run: three elements, then the middle one is pruned.
    Adam full;
    const int gf = full.add_group("x", 0.1, 3);
    std::vector<double> xf = {1.0, 2.0, 3.0};
    full.step(gf, xf, std::vector<double>{0.4, 9.9, -0.8});

    IndexRemap remap;
    remap.old_to_new = {0, -1, 1};
    remap.new_to_old = {0, 2};
    full.remap(gf, remap, 1);
    CHECK(full.group_size(gf) == 2);

    std::vector<double> xs = {xf[0], xf[2]};
    REQUIRE(xs[0] == xr[0]);
    REQUIRE(xs[1] == xr[1]);
    full.step(gf, xs, std::vector<double>{0.2, 0.1});
    ref.step(gr, xr, std::vector<double>{0.2, 0.1});
    CHECK(xs[0] == xr[0]);
    CHECK(xs[1] == xr[1]);
}

TEST_CASE("adam remap zeroes state for fresh split children") {
    Adam adam;
    const int g = adam.add_group("x", 0.1, 1);
    std::vector<double> x = {5.0};
    adam.step(g, x, std::vector<double>{2.0});

    // The lone element splits into two fresh children.
    IndexRemap remap;
    remap.old_to_new = {-1};
    remap.new_to_old = {0, 0};
    adam.remap(g, remap, 1);
    CHECK(adam.group_size(g) == 2);

    // Both children update like zero-moment elements at group step 2.
    std::vector<double> c = {1.0, 1.0};
    adam.step(g, c, std::vector<double>{0.7, 0.7});
    const double expected = 1.0 - adam_update(0.7, 2, 0.1);
    CHECK(c[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(c[1] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(c[0] == c[1]);
}

TEST_CASE("cloud optimizer decays the center learning rate") {
    Config cfg = Config::defaults();
    GaussianCloud cloud = blob_cloud(Vec3::Zero(), 0.1, 0.5, Vec3::Constant(0.5));
    const int total = 100;
    CloudOptimizer opt(cloud, cfg, total);

    const double lr0 = cfg.get_double("opt.lr_position");
    const double final_scale = cfg.get_double("opt.lr_position_final_scale");
    const double decay = std::pow(final_scale, 1.0 / total);

    for (int s = 0; s < 10; ++s) {
        cloud.zero_grad();
        opt.step();
    }
    // The last applied rate corresponds to step index 9.
    CHECK(opt.adam().lr(0) == doctest::Approx(lr0 * std::pow(decay, 9)).epsilon(1e-12));
    // Parameters stay put under zero gradients.
    CHECK(cloud.centers[0] == Vec3::Zero());

    // Over the full schedule the rate lands on lr0 * final_scale.
    for (int s = 10; s < total; ++s) opt.step();
    CHECK(opt.adam().lr(0) ==
          doctest::Approx(lr0 * final_scale / decay).epsilon(1e-9));
}

TEST_CASE("cloud optimizer remap keeps surviving state aligned") {
    Config cfg = Config::defaults();
    GaussianCloud cloud;
    for (int i = 0; i < 3; ++i) {
        Gaussian3D g;
        g.center = Vec3(i, 0, 0);
        cloud.push_back(g);
    }
    cloud.zero_grad();
    CloudOptimizer opt(cloud, cfg, 50);
    cloud.grad.centers[0] = Vec3(1, 1, 1);
    cloud.grad.centers[2] = Vec3(-1, 0, 1);
    opt.step();

    cloud.opacity_logits[1] = -20.0;  // mark the middle one for removal
    const IndexRemap remap = prune(cloud, 0.05);
    opt.apply_remap(remap);
    CHECK(cloud.size() == 2);
    cloud.grad.centers.assign(2, Vec3::Zero());
    cloud.grad.rotations.assign(2, Vec4::Zero());
    cloud.grad.log_scales.assign(2, Vec3::Zero());
    cloud.grad.opacity_logits.assign(2, 0.0);
    cloud.grad.colors.assign(2, Vec3::Zero());
    CHECK_NOTHROW(opt.step());  // sizes agree after the remap
}

TEST_CASE("sphere directions are unit and well spread") {
    const std::vector<Vec3> dirs = sphere_directions(500);
    REQUIRE(dirs.size() == 500);
    Vec3 mean = Vec3::Zero();
    for (const Vec3& d : dirs) {
        CHECK(d.norm() == doctest::Approx(1.0).epsilon(1e-12));
        mean += d;
    }
    mean /= 500.0;
    CHECK(mean.norm() < 0.05);

    // No two directions coincide.
    double closest = 1e9;
    for (int i = 1; i < 500; ++i) closest = std::min(closest, (dirs[i] - dirs[i - 1]).norm());
    CHECK(closest > 1e-6);
}

TEST_CASE("sphere cloud honours the init block") {
    Config cfg = Config::defaults();
    cfg.set("init.count", "200");
    cfg.set("init.radius", "0.4");
    cfg.set("init.scale", "0.05");
    cfg.set("init.opacity", "0.25");
    const GaussianCloud cloud = init_sphere_cloud(cfg);
    REQUIRE(cloud.size() == 200);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK(cloud.centers[i].norm() == doctest::Approx(0.4).epsilon(1e-12));
        CHECK(cloud.log_scales[i].x() == doctest::Approx(std::log(0.05)));
        CHECK(cloud.alpha(i) == doctest::Approx(0.25));
        CHECK(cloud.colors[i].x() == doctest::Approx(0.5));
    }
}

TEST_CASE("run log appends one JSON object per line") {
    const std::string path = "runlog_test.jsonl";
    std::remove(path.c_str());
    {
        RunLog log(path, false);
        CHECK(log.enabled());
        CHECK(!log.timing());
        log.write_line("{\"a\":1}");
        log.write_line("{\"b\":2}");
    }
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    CHECK(line == "{\"a\":1}");
    std::getline(in, line);
    CHECK(line == "{\"b\":2}");
    CHECK(!std::getline(in, line));
    in.close();
    std::remove(path.c_str());

    RunLog disabled;
    CHECK(!disabled.enabled());
    CHECK_NOTHROW(disabled.write_line("{}"));
}

TEST_CASE("echo guidance leaves the cloud untouched except the final prune") {
    Config cfg = small_config();
    cfg.set("stage2.steps", "6");
    cfg.set("stage2.final_prune_ratio", "0.5");

    GaussianCloud cloud;
    for (int i = 0; i < 10; ++i) {
        Gaussian3D g;
        g.center = 0.3 * Vec3(std::sin(0.7 * i), std::cos(0.9 * i), std::sin(1.3 * i + 1));
        g.log_scale = Vec3::Constant(std::log(0.06));
        g.opacity_logit = logit(0.9);
        g.color = Vec3(0.3, 0.5, 0.7);
        cloud.push_back(g);
    }
    Gaussian3D faint;
    faint.center = Vec3(0, 0.2, 0);
    faint.log_scale = Vec3::Constant(std::log(0.06));
    faint.opacity_logit = logit(1e-4);
    cloud.push_back(faint);
    cloud.zero_grad();
    const GaussianCloud before = cloud;

    auto echo = make_echo_provider();
    Stage2Inputs inputs;
    inputs.provider_2d = echo.get();
    RunLog log;
    const Stage2Report report = run_stage2(cloud, inputs, cfg, log);

    CHECK(report.steps == 6);
    CHECK(report.last_pseudo_loss_2d == 0.0);
    CHECK(report.last_pseudo_loss_3d == 0.0);
    // Echo predicts the injected noise exactly: zero gradients everywhere,
    // so the ten solid Gaussians are bitwise where they started.
    REQUIRE(cloud.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(cloud.centers[i] == before.centers[i]);
        CHECK(cloud.opacity_logits[i] == before.opacity_logits[i]);
    }
    CHECK(report.gaussians == 10);
}

TEST_CASE("stage 2 reruns are bitwise identical") {
    Config cfg = small_config();
    cfg.set("stage2.steps", "14");
    cfg.set("stage2.densify_from", "4");
    cfg.set("stage2.densify_until", "10");
    cfg.set("stage2.densify_every", "3");
    cfg.set("stage2.densify_grad_threshold", "1e-7");
    cfg.set("stage2.sugar_from", "8");
    cfg.set("stage2.lambda_tv_depth", "0.05");
    cfg.set("stage2.lambda_tv_normal", "0.05");
    cfg.set("guidance.lambda_2d", "0.5");
    cfg.set("guidance.lambda_3d", "0.5");
    cfg.set("seed", "11");

    // Pull targets: four fixed views of a reference blob.
    const GaussianCloud target_cloud =
        blob_cloud(Vec3(0.05, 0, 0), 0.25, 0.9, Vec3(0.9, 0.4, 0.2));
    const CanonicalRig rig = rig_from_config(cfg);
    std::vector<Image> targets;
    const Vec3 bg = Vec3::Constant(cfg.get_double("render.background"));
    for (const CameraView& v : rig.views) {
        targets.push_back(render_cloud(target_cloud, v, bg, RenderSettings{}).color);
    }
    auto run_once = [&](GaussianCloud& cloud) {
        auto provider = make_pull_provider(targets, 1.0);
        Stage2Inputs inputs;
        inputs.provider_2d = provider.get();
        RunLog log;
        return run_stage2(cloud, inputs, cfg, log);
    };

    GaussianCloud a = init_sphere_cloud(cfg);
    GaussianCloud b = init_sphere_cloud(cfg);
    REQUIRE(clouds_identical(a, b));
    const Stage2Report ra = run_once(a);
    const Stage2Report rb = run_once(b);
    CHECK(ra.gaussians == rb.gaussians);
    CHECK(ra.last_pseudo_loss_2d == rb.last_pseudo_loss_2d);
    CHECK(clouds_identical(a, b));
    // The run did something: the cloud moved away from the shared init.
    const GaussianCloud fresh = init_sphere_cloud(cfg);
    CHECK((a.size() != fresh.size() || !clouds_identical(a, fresh)));
}

TEST_CASE("stage 2 writes one log row per step") {
    Config cfg = small_config();
    cfg.set("stage2.steps", "5");
    GaussianCloud cloud = init_sphere_cloud(cfg);
    auto echo = make_echo_provider();
    Stage2Inputs inputs;
    inputs.provider_2d = echo.get();
    const std::string path = "stage2_log_test.jsonl";
    std::remove(path.c_str());
    {
        RunLog log(path, false);
        run_stage2(cloud, inputs, cfg, log);
    }
    std::ifstream in(path);
    REQUIRE(in.good());
    int rows = 0, step_rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        REQUIRE(!line.empty());
        CHECK(line.front() == '{');
        CHECK(line.back() == '}');
        if (line.find("\"step\"") != std::string::npos) ++step_rows;
        ++rows;
    }
    CHECK(step_rows >= 5);
    CHECK(rows >= step_rows);
    in.close();
    std::remove(path.c_str());
}

TEST_CASE("bound refinement reruns are bitwise identical") {
    Config cfg = small_config();
    cfg.set("stage3.steps", "6");
    cfg.set("stage3.lambda_tv_depth", "0.05");
    cfg.set("stage3.lambda_tv_normal", "0.05");
    cfg.set("guidance.lambda_2d", "0.5");
    cfg.set("guidance.lambda_3d", "0.5");
    cfg.set("seed", "21");

    const GaussianCloud target_cloud =
        blob_cloud(Vec3(0, 0.05, 0), 0.25, 0.9, Vec3(0.2, 0.7, 0.4));
    const CanonicalRig rig = rig_from_config(cfg);
    std::vector<Image> targets;
    const Vec3 bg = Vec3::Constant(cfg.get_double("render.background"));
    for (const CameraView& v : rig.views) {
        targets.push_back(render_cloud(target_cloud, v, bg, RenderSettings{}).color);
    }

    TriMesh mesh;
    mesh.vertices = {Vec3(0.3, 0.3, 0.3), Vec3(0.3, -0.3, -0.3), Vec3(-0.3, 0.3, -0.3),
                     Vec3(-0.3, -0.3, 0.3)};
    mesh.faces = {Eigen::Vector3i(0, 2, 1), Eigen::Vector3i(0, 1, 3), Eigen::Vector3i(0, 3, 2),
                  Eigen::Vector3i(1, 2, 3)};

    auto run_once = [&](BoundGaussianCloud& bound) {
        auto provider = make_pull_provider(targets, 1.0);
        Stage2Inputs inputs;
        inputs.provider_2d = provider.get();
        RunLog log;
        Stage3Report report;
        optimize_bound(bound, inputs, cfg, log, &report);
        return report;
    };

    BoundGaussianCloud a = bind_gaussians(mesh, BindOptions{});
    BoundGaussianCloud b = bind_gaussians(mesh, BindOptions{});
    const Stage3Report ra = run_once(a);
    const Stage3Report rb = run_once(b);
    CHECK(ra.steps == 6);
    CHECK(ra.last_pseudo_loss_2d == rb.last_pseudo_loss_2d);

    bool identical = a.size() == b.size() && a.mesh.vertex_count() == b.mesh.vertex_count();
    for (std::size_t i = 0; identical && i < a.size(); ++i) {
        identical = a.rots[i] == b.rots[i] && a.log_scales_2d[i] == b.log_scales_2d[i] &&
                    a.thickness_logits[i] == b.thickness_logits[i] &&
                    a.opacity_logits[i] == b.opacity_logits[i] && a.colors[i] == b.colors[i];
    }
    for (std::size_t v = 0; identical && v < a.mesh.vertex_count(); ++v) {
        identical = a.mesh.vertices[v] == b.mesh.vertices[v];
    }
    CHECK(identical);

    // Vertices actually moved during refinement.
    bool moved = false;
    for (std::size_t v = 0; v < a.mesh.vertex_count(); ++v) {
        if (a.mesh.vertices[v] != mesh.vertices[v]) moved = true;
    }
    CHECK(moved);
}

TEST_CASE("full mesh stage runs end to end at toy scale") {
    Config cfg = small_config();
    cfg.set("stage3.steps", "3");
    cfg.set("mesh.resolution", "28");
    cfg.set("guidance.lambda_2d", "0.2");

    const GaussianCloud coarse = blob_cloud(Vec3::Zero(), 0.3, 0.9, Vec3(0.7, 0.5, 0.3));
    auto echo = make_echo_provider();
    Stage2Inputs inputs;
    inputs.provider_2d = echo.get();
    RunLog log;
    Stage3Report report;
    const BoundGaussianCloud bound = run_stage3(coarse, inputs, cfg, log, &report);

    CHECK(report.steps == 3);
    CHECK(report.mesh_faces > 0);
    CHECK(report.mesh_vertices > 0);
    CHECK(report.gaussians == bound.size());
    CHECK(bound.size() == bound.mesh.face_count());
    CHECK_NOTHROW(bound.validate());
    CHECK(is_watertight(bound.mesh));
}

} // TEST_SUITE
