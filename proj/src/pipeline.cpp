#include "gsopt/pipeline.hpp"

#include "gsopt/io_ply.hpp"
#include "gsopt/renderer.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numbers>

namespace gsopt {

namespace {

using ordered_json = nlohmann::ordered_json;

/// Zeroes non-finite entries in place and reports how many there were.
std::size_t sanitize(std::span<double> values) {
    std::size_t bad = 0;
    for (double& v : values) {
        if (!std::isfinite(v)) {
            v = 0.0;
            ++bad;
        }
    }
    return bad;
}

std::size_t sanitize_cloud_grads(CloudGrads& g) {
    return sanitize(flat_span(g.centers)) + sanitize(flat_span(g.rotations)) +
           sanitize(flat_span(g.log_scales)) + sanitize(std::span<double>(g.opacity_logits)) +
           sanitize(flat_span(g.colors));
}

std::size_t sanitize_bound_grads(BoundGrads& g) {
    return sanitize(flat_span(g.d_rot)) + sanitize(flat_span(g.d_log_scale_2d)) +
           sanitize(std::span<double>(g.d_thickness_logit)) +
           sanitize(std::span<double>(g.d_opacity_logit)) + sanitize(flat_span(g.d_color)) +
           sanitize(flat_span(g.d_vertex));
}

void clamp_colors(std::vector<Vec3>& colors) {
    for (Vec3& c : colors) {
        c = c.cwiseMax(0.0).cwiseMin(1.0);
    }
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
        .count();
}

} // namespace

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0,
            "Adam: invalid hyperparameters");
}

Adam::Group& Adam::at(int group) {
    require(group >= 0 && group < static_cast<int>(groups_.size()), "Adam: bad group id");
    return groups_[static_cast<std::size_t>(group)];
}

const Adam::Group& Adam::at(int group) const {
    require(group >= 0 && group < static_cast<int>(groups_.size()), "Adam: bad group id");
    return groups_[static_cast<std::size_t>(group)];
}

int Adam::add_group(const std::string& name, double lr, std::size_t size) {
    require(lr >= 0.0, "Adam: negative learning rate");
    Group g;
    g.name = name;
    g.lr = lr;
    g.m.assign(size, 0.0);
    g.v.assign(size, 0.0);
    groups_.push_back(std::move(g));
    return static_cast<int>(groups_.size()) - 1;
}

void Adam::set_lr(int group, double lr) {
    require(lr >= 0.0, "Adam: negative learning rate");
    at(group).lr = lr;
}

double Adam::lr(int group) const { return at(group).lr; }

std::size_t Adam::group_size(int group) const { return at(group).m.size(); }

long Adam::step_count(int group) const { return at(group).t; }

void Adam::step(int group, std::span<double> values, std::span<const double> grads) {
    Group& g = at(group);
    require(values.size() == g.m.size() && grads.size() == g.m.size(),
            "Adam::step: span size does not match group");
    g.t += 1;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(g.t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(g.t));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double gr = grads[i];
        g.m[i] = beta1_ * g.m[i] + (1.0 - beta1_) * gr;
        g.v[i] = beta2_ * g.v[i] + (1.0 - beta2_) * gr * gr;
        const double mhat = g.m[i] / bc1;
        const double vhat = g.v[i] / bc2;
        values[i] -= g.lr * mhat / (std::sqrt(vhat) + eps_);
    }
}

void Adam::remap(int group, const IndexRemap& remap, int components) {
    Group& g = at(group);
    require(components > 0, "Adam::remap: components must be positive");
    const std::size_t comps = static_cast<std::size_t>(components);
    require(g.m.size() == remap.old_to_new.size() * comps,
            "Adam::remap: group size does not match remap");
    const std::size_t n_new = remap.new_to_old.size();
    std::vector<double> m(n_new * comps, 0.0), v(n_new * comps, 0.0);
    for (std::size_t j = 0; j < n_new; ++j) {
        const std::int64_t src = remap.new_to_old[j];
        // Carry state only for true survivors; fresh split children restart.
        if (src >= 0 && remap.old_to_new[static_cast<std::size_t>(src)] ==
                            static_cast<std::int64_t>(j)) {
            for (std::size_t c = 0; c < comps; ++c) {
                m[j * comps + c] = g.m[static_cast<std::size_t>(src) * comps + c];
                v[j * comps + c] = g.v[static_cast<std::size_t>(src) * comps + c];
            }
        }
    }
    g.m = std::move(m);
    g.v = std::move(v);
}

void Adam::resize(int group, std::size_t size) {
    Group& g = at(group);
    g.m.resize(size, 0.0);
    g.v.resize(size, 0.0);
}

// ---------------------------------------------------------------------------
// CloudOptimizer

CloudOptimizer::CloudOptimizer(GaussianCloud& cloud, const Config& cfg, int total_steps)
    : cloud_(cloud),
      adam_(cfg.get_double("opt.beta1"), cfg.get_double("opt.beta2"), cfg.get_double("opt.eps")) {
    require(total_steps > 0, "CloudOptimizer: total_steps must be positive");
    const std::size_t n = cloud.size();
    lr_pos_0_ = cfg.get_double("opt.lr_position");
    const double final_scale = cfg.get_double("opt.lr_position_final_scale");
    require(final_scale > 0.0, "CloudOptimizer: final lr scale must be positive");
    decay_per_step_ = std::pow(final_scale, 1.0 / static_cast<double>(total_steps));
    g_pos_ = adam_.add_group("position", lr_pos_0_, n * 3);
    g_rot_ = adam_.add_group("rotation", cfg.get_double("opt.lr_rotation"), n * 4);
    g_scale_ = adam_.add_group("scale", cfg.get_double("opt.lr_scale"), n * 3);
    g_opa_ = adam_.add_group("opacity", cfg.get_double("opt.lr_opacity"), n);
    g_col_ = adam_.add_group("color", cfg.get_double("opt.lr_color"), n * 3);
}

void CloudOptimizer::step() {
    require(cloud_.grad.size() == cloud_.size(), "CloudOptimizer::step: gradients not sized");
    adam_.set_lr(g_pos_, lr_pos_0_ * std::pow(decay_per_step_, static_cast<double>(steps_done_)));
    adam_.step(g_pos_, flat_span(cloud_.centers), flat_span(cloud_.grad.centers));
    adam_.step(g_rot_, flat_span(cloud_.rotations), flat_span(cloud_.grad.rotations));
    adam_.step(g_scale_, flat_span(cloud_.log_scales), flat_span(cloud_.grad.log_scales));
    adam_.step(g_opa_, std::span<double>(cloud_.opacity_logits),
               std::span<const double>(cloud_.grad.opacity_logits));
    adam_.step(g_col_, flat_span(cloud_.colors), flat_span(cloud_.grad.colors));
    steps_done_ += 1;
}

void CloudOptimizer::apply_remap(const IndexRemap& remap) {
    if (remap.identity()) return;
    adam_.remap(g_pos_, remap, 3);
    adam_.remap(g_rot_, remap, 4);
    adam_.remap(g_scale_, remap, 3);
    adam_.remap(g_opa_, remap, 1);
    adam_.remap(g_col_, remap, 3);
}

// ---------------------------------------------------------------------------
// RunLog

RunLog::RunLog(const std::string& path, bool timing) : path_(path), timing_(timing) {
    if (path_.empty()) return;
    std::FILE* f = std::fopen(path_.c_str(), "ab");
    if (!f) throw IoError("RunLog: cannot open " + path_);
    file_ = f;
}

RunLog::~RunLog() {
    if (file_) std::fclose(static_cast<std::FILE*>(file_));
}

void RunLog::write_line(const std::string& json_object) {
    if (!file_) return;
    std::FILE* f = static_cast<std::FILE*>(file_);
    std::fwrite(json_object.data(), 1, json_object.size(), f);
    std::fputc('\n', f);
    std::fflush(f);
}

// ---------------------------------------------------------------------------
// Initialization

std::vector<Vec3> sphere_directions(int count) {
    require(count > 0, "sphere_directions: count must be positive");
    std::vector<Vec3> dirs;
    dirs.reserve(static_cast<std::size_t>(count));
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
        const double y = count == 1 ? 0.0 : 1.0 - 2.0 * i / static_cast<double>(count - 1);
        const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double phi = golden * i;
        dirs.emplace_back(r * std::cos(phi), y, r * std::sin(phi));
    }
    return dirs;
}

GaussianCloud init_sphere_cloud(const Config& cfg) {
    const int count = cfg.get_int("init.count");
    const double radius = cfg.get_double("init.radius");
    const double scale = cfg.get_double("init.scale");
    const double opacity = cfg.get_double("init.opacity");
    require(radius > 0.0 && scale > 0.0, "init_sphere_cloud: radius and scale must be positive");
    GaussianCloud cloud;
    cloud.reserve(static_cast<std::size_t>(count));
    for (const Vec3& dir : sphere_directions(count)) {
        Gaussian3D g;
        g.center = radius * dir;
        g.log_scale = Vec3::Constant(std::log(scale));
        g.opacity_logit = logit(opacity);
        g.color = Vec3::Constant(0.5);
        cloud.push_back(g);
    }
    cloud.zero_grad();
    return cloud;
}

GaussianCloud init_cloud_from_ply(const Config& cfg, const std::string& path) {
    try {
        GaussianCloud cloud = read_gaussian_ply(path);
        cloud.zero_grad();
        return cloud;
    } catch (const IoError&) {
        // Fall through to a positions-only read with defaulted parameters.
    }
    const std::vector<Vec3> positions = read_ply_positions(path);
    require(!positions.empty(), "init_cloud_from_ply: no vertices in " + path);
    const double scale = cfg.get_double("init.scale");
    const double opacity = cfg.get_double("init.opacity");
    GaussianCloud cloud;
    cloud.reserve(positions.size());
    for (const Vec3& p : positions) {
        Gaussian3D g;
        g.center = p;
        g.log_scale = Vec3::Constant(std::log(scale));
        g.opacity_logit = logit(opacity);
        cloud.push_back(g);
    }
    cloud.zero_grad();
    return cloud;
}

CanonicalRig rig_from_config(const Config& cfg) {
    return make_canonical_rig(cfg.get_double("rig.azimuth0_deg"), cfg.get_double("rig.elevation_deg"),
                              cfg.get_double("rig.distance"), cfg.get_double("rig.fov_deg"),
                              cfg.get_int("render.width"), cfg.get_int("render.height"));
}

RenderSettings render_settings_from_config(const Config& cfg) {
    RenderSettings settings;
    settings.parallel = cfg.get_bool("parallel");
    return settings;
}

// ---------------------------------------------------------------------------
// Stage 2

Stage2Report run_stage2(GaussianCloud& cloud, const Stage2Inputs& inputs, const Config& cfg,
                        RunLog& log) {
    require(inputs.provider_2d != nullptr, "run_stage2: provider_2d is required");
    NoisePredictor& provider_2d = *inputs.provider_2d;
    NoisePredictor& provider_3d = inputs.provider_3d ? *inputs.provider_3d : provider_2d;
    require(!cloud.empty(), "run_stage2: empty cloud");

    const int steps = cfg.get_int("stage2.steps");
    require(steps > 0, "run_stage2: stage2.steps must be positive");
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    const int width = cfg.get_int("render.width");
    const int height = cfg.get_int("render.height");
    const Vec3 background = Vec3::Constant(cfg.get_double("render.background"));
    const RenderSettings settings = render_settings_from_config(cfg);
    const CanonicalRig rig = rig_from_config(cfg);
    const std::vector<CameraView> rig_views(rig.views.begin(), rig.views.end());

    const NoiseSchedule schedule = NoiseSchedule::ddpm_linear();
    const double t_lo = cfg.get_double("guidance.t_lo");
    const double t_hi = cfg.get_double("guidance.t_hi");
    const double guidance_scale = cfg.get_double("guidance.scale");
    // The overall guidance scale multiplies both branch weights.
    const HybridWeights hybrid_weights{guidance_scale * cfg.get_double("guidance.lambda_2d"),
                                       guidance_scale * cfg.get_double("guidance.lambda_3d")};

    const Stage2Weights reg_weights{cfg.get_double("stage2.lambda_tv_depth"),
                                    cfg.get_double("stage2.lambda_tv_normal"),
                                    cfg.get_double("stage2.lambda_mask")};
    const int normal_every = cfg.get_int("stage2.normal_every");
    const int densify_from = cfg.get_int("stage2.densify_from");
    const int densify_until = cfg.get_int("stage2.densify_until");
    const int densify_every = cfg.get_int("stage2.densify_every");
    const double densify_threshold = cfg.get_double("stage2.densify_grad_threshold");
    const double prune_opacity = cfg.get_double("stage2.prune_opacity");
    const int sugar_from = cfg.get_int("stage2.sugar_from");
    const SugarRegWeights sugar_weights{cfg.get_double("stage2.lambda_flat"),
                                        cfg.get_double("stage2.lambda_align"),
                                        cfg.get_int("stage2.knn")};
    const int knn_refresh = std::max(1, cfg.get_int("stage2.knn_refresh"));
    const double final_prune_ratio = cfg.get_double("stage2.final_prune_ratio");
    const bool sugar_enabled =
        sugar_weights.lambda_flat > 0.0 || sugar_weights.lambda_align > 0.0;

    const CameraSampleRanges ranges;
    CloudOptimizer opt(cloud, cfg, steps);
    std::vector<std::vector<int>> neighbors;
    int steps_since_knn = knn_refresh;  // force a build on first use
    Stage2Report report;

    for (int s = 0; s < steps; ++s) {
        const auto step_start = std::chrono::steady_clock::now();
        const int step_no = s + 1;
        cloud.zero_grad();

        Rng cam_rng = derive_rng(seed, "stage2-cam", static_cast<std::uint64_t>(s));
        Rng sds_rng = derive_rng(seed, "stage2-sds", static_cast<std::uint64_t>(s));
        const CameraView rand_view = sample_random_camera(cam_rng, ranges, width, height);

        // Hybrid distillation: one random view against the plain provider,
        // the canonical rig against the conditioned provider.
        const bool normal_step = normal_every > 0 && step_no % normal_every == 0;
        std::unique_ptr<DistillationTarget> target_2d;
        if (normal_step) {
            target_2d = std::make_unique<CloudNormalTarget>(cloud, std::vector{rand_view},
                                                            background, settings);
        } else {
            target_2d = std::make_unique<CloudRgbTarget>(cloud, std::vector{rand_view},
                                                         background, settings);
        }
        CloudRgbTarget target_3d(cloud, rig_views, background, settings);
        GuidanceContext ctx_2d;
        ctx_2d.prompt_tag = "stage2/random";
        GuidanceContext ctx_3d;
        ctx_3d.prompt_tag = "stage2/rig";
        ctx_3d.condition = inputs.condition;
        ctx_3d.cameras = &rig_views;
        ctx_3d.view_ids = {0, 1, 2, 3};
        const HybridStats hs = hybrid_sds_grad(*target_2d, target_3d, schedule, provider_2d,
                                               provider_3d, ctx_2d, ctx_3d, hybrid_weights,
                                               sds_rng, t_lo, t_hi);

        // Geometry regularizers over the rig views.
        Stage2RegTerms reg_sum;
        const bool any_reg = reg_weights.lambda_tv_depth > 0.0 ||
                             reg_weights.lambda_tv_normal > 0.0 ||
                             (reg_weights.lambda_mask > 0.0 && inputs.mask_reference);
        if (any_reg) {
            for (int k = 0; k < static_cast<int>(rig_views.size()); ++k) {
                const RenderOutput ro = render_cloud(cloud, rig_views[k], background, settings);
                Image d_depth(height, width, 1);
                Image d_alpha(height, width, 1);
                const Image* mask = k == 0 ? inputs.mask_reference : nullptr;
                const Stage2RegTerms terms = stage2_reg_terms(ro.depth, ro.alpha, rig_views[k],
                                                              mask, reg_weights, &d_depth,
                                                              &d_alpha);
                reg_sum.tv_depth += terms.tv_depth;
                reg_sum.tv_normal += terms.tv_normal;
                reg_sum.mask += terms.mask;
                reg_sum.total += terms.total;
                RenderAdjoints adj;
                adj.depth = &d_depth;
                adj.alpha = &d_alpha;
                render_cloud_backward(cloud, rig_views[k], background, settings, adj, cloud.grad);
            }
        }

        // Surface regularizers once the cloud has roughly settled.
        SugarRegTerms sugar;
        if (sugar_enabled && step_no >= sugar_from) {
            if (steps_since_knn >= knn_refresh || neighbors.size() != cloud.size()) {
                neighbors = knn_indices(cloud, sugar_weights.k_neighbors);
                steps_since_knn = 0;
            }
            steps_since_knn += 1;
            sugar = sugar_regularizers(cloud, sugar_weights, &cloud.grad, &neighbors);
        }

        cloud.accumulate_densify_stats();
        const std::size_t bad = sanitize_cloud_grads(cloud.grad);
        if (bad > 0 && log.enabled()) {
            ordered_json j;
            j["event"] = "nonfinite_grads";
            j["stage"] = 2;
            j["step"] = step_no;
            j["count"] = bad;
            log.write_line(j.dump());
        }

        opt.step();
        clamp_colors(cloud.colors);

        // Periodic densify + prune during the early schedule window.
        if (densify_every > 0 && step_no >= densify_from && step_no <= densify_until &&
            (step_no - densify_from) % densify_every == 0) {
            Rng den_rng = derive_rng(seed, "stage2-densify", static_cast<std::uint64_t>(s));
            const std::size_t before = cloud.size();
            const IndexRemap split = densify_split(cloud, densify_threshold, den_rng);
            opt.apply_remap(split);
            const IndexRemap pruned = prune(cloud, prune_opacity);
            opt.apply_remap(pruned);
            cloud.reset_densify_stats();
            neighbors.clear();
            steps_since_knn = knn_refresh;
            if (log.enabled()) {
                ordered_json j;
                j["event"] = "maintenance";
                j["stage"] = 2;
                j["step"] = step_no;
                j["before"] = before;
                j["after"] = cloud.size();
                log.write_line(j.dump());
            }
            require(!cloud.empty(), "run_stage2: maintenance removed every Gaussian");
        }

        report.last_pseudo_loss_2d = hs.sds_2d.pseudo_loss;
        report.last_pseudo_loss_3d = hs.sds_3d.pseudo_loss;

        if (log.enabled()) {
            ordered_json j;
            j["stage"] = 2;
            j["step"] = step_no;
            j["gaussians"] = cloud.size();
            j["t_2d"] = hs.sds_2d.t;
            j["t_3d"] = hs.sds_3d.t;
            j["pseudo_2d"] = hs.sds_2d.pseudo_loss;
            j["pseudo_3d"] = hs.sds_3d.pseudo_loss;
            j["tv_depth"] = reg_sum.tv_depth;
            j["tv_normal"] = reg_sum.tv_normal;
            j["mask"] = reg_sum.mask;
            j["flatness"] = sugar.flatness;
            j["alignment"] = sugar.alignment;
            j["lr_position"] = opt.adam().lr(0);
            if (log.timing()) j["ms"] = elapsed_ms(step_start);
            log.write_line(j.dump());
        }
    }

    // Drop Gaussians that ended far below the mean opacity.
    if (final_prune_ratio > 0.0 && !cloud.empty()) {
        double mean_alpha = 0.0;
        for (std::size_t i = 0; i < cloud.size(); ++i) mean_alpha += cloud.alpha(i);
        mean_alpha /= static_cast<double>(cloud.size());
        const IndexRemap pruned = prune(cloud, final_prune_ratio * mean_alpha);
        opt.apply_remap(pruned);
        require(!cloud.empty(), "run_stage2: final prune removed every Gaussian");
    }

    report.steps = steps;
    report.gaussians = cloud.size();
    report.mean_flat_ratio = mean_flat_ratio(cloud);
    return report;
}

// ---------------------------------------------------------------------------
// Stage 3

BoundGaussianCloud run_stage3(const GaussianCloud& coarse, const Stage2Inputs& inputs,
                              const Config& cfg, RunLog& log, Stage3Report* report) {
    ExtractOptions extract;
    extract.resolution = cfg.get_int("mesh.resolution");
    extract.iso = cfg.get_double("mesh.iso");
    extract.margin = cfg.get_double("mesh.margin");
    extract.cutoff_sigma = cfg.get_double("mesh.cutoff_sigma");
    extract.parallel = cfg.get_bool("parallel");
    const TriMesh mesh = extract_isosurface(coarse, extract);
    require(mesh.face_count() > 0, "run_stage3: isosurface came out empty");
    if (log.enabled()) {
        ordered_json j;
        j["event"] = "extracted";
        j["stage"] = 3;
        j["vertices"] = mesh.vertex_count();
        j["faces"] = mesh.face_count();
        log.write_line(j.dump());
    }

    BindOptions bind;
    bind.per_face = cfg.get_int("stage3.per_face");
    BoundGaussianCloud bound = bind_gaussians(mesh, bind);
    optimize_bound(bound, inputs, cfg, log, report);
    return bound;
}

void optimize_bound(BoundGaussianCloud& cloud, const Stage2Inputs& inputs, const Config& cfg,
                    RunLog& log, Stage3Report* report) {
    require(inputs.provider_2d != nullptr, "optimize_bound: provider_2d is required");
    NoisePredictor& provider_2d = *inputs.provider_2d;
    NoisePredictor& provider_3d = inputs.provider_3d ? *inputs.provider_3d : provider_2d;
    require(cloud.size() > 0, "optimize_bound: empty bound cloud");

    const int steps = cfg.get_int("stage3.steps");
    require(steps > 0, "optimize_bound: stage3.steps must be positive");
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    const int width = cfg.get_int("render.width");
    const int height = cfg.get_int("render.height");
    const Vec3 background = Vec3::Constant(cfg.get_double("render.background"));
    const Vec3 normal_background = Vec3::Constant(0.5);  // encodes the zero normal
    const RenderSettings settings = render_settings_from_config(cfg);
    const CanonicalRig rig = rig_from_config(cfg);
    const std::vector<CameraView> rig_views(rig.views.begin(), rig.views.end());

    const NoiseSchedule schedule = NoiseSchedule::ddpm_linear();
    const double t_lo = cfg.get_double("guidance.t_lo");
    const double t_hi = cfg.get_double("guidance.t_hi");
    const double guidance_scale = cfg.get_double("guidance.scale");
    const HybridWeights hybrid_weights{guidance_scale * cfg.get_double("guidance.lambda_2d"),
                                       guidance_scale * cfg.get_double("guidance.lambda_3d")};
    const Stage3Weights reg_weights{cfg.get_double("stage3.lambda_tv_depth"),
                                    cfg.get_double("stage3.lambda_tv_normal"),
                                    cfg.get_double("stage3.lambda_mask")};
    const CameraSampleRanges ranges;

    Adam adam(cfg.get_double("opt.beta1"), cfg.get_double("opt.beta2"), cfg.get_double("opt.eps"));
    const std::size_t n = cloud.size();
    const std::size_t nv = cloud.mesh.vertex_count();
    const int g_rot = adam.add_group("rotation", cfg.get_double("opt.lr_rotation"), n * 2);
    const int g_scale = adam.add_group("scale", cfg.get_double("opt.lr_scale"), n * 2);
    const int g_thick = adam.add_group("thickness", cfg.get_double("opt.lr_scale"), n);
    const int g_opa = adam.add_group("opacity", cfg.get_double("opt.lr_opacity"), n);
    const int g_col = adam.add_group("color", cfg.get_double("opt.lr_color"), n * 3);
    const int g_vert = adam.add_group("vertices", cfg.get_double("opt.lr_vertices"), nv * 3);

    Stage3Report local;
    Stage3Report& rep = report ? *report : local;

    for (int s = 0; s < steps; ++s) {
        const auto step_start = std::chrono::steady_clock::now();
        const int step_no = s + 1;
        cloud.zero_grad();

        Rng cam_rng = derive_rng(seed, "stage3-cam", static_cast<std::uint64_t>(s));
        Rng sds_rng = derive_rng(seed, "stage3-sds", static_cast<std::uint64_t>(s));
        const CameraView rand_view = sample_random_camera(cam_rng, ranges, width, height);

        auto render_rgb = [&](const CameraView& view) {
            return render_bound(cloud, view, background, settings).color;
        };
        auto backprop_rgb = [&](const CameraView& view, const Image& adjoint) {
            RenderAdjoints adj;
            adj.color = &adjoint;
            render_bound_backward(cloud, view, background, settings, adj);
        };
        CallbackTarget target_2d(
            1, [&](int) { return render_rgb(rand_view); },
            [&](int, const Image& a) { backprop_rgb(rand_view, a); });
        CallbackTarget target_3d(
            static_cast<int>(rig_views.size()),
            [&](int k) { return render_rgb(rig_views[static_cast<std::size_t>(k)]); },
            [&](int k, const Image& a) { backprop_rgb(rig_views[static_cast<std::size_t>(k)], a); });
        GuidanceContext ctx_2d;
        ctx_2d.prompt_tag = "stage3/random";
        GuidanceContext ctx_3d;
        ctx_3d.prompt_tag = "stage3/rig";
        ctx_3d.condition = inputs.condition;
        ctx_3d.cameras = &rig_views;
        ctx_3d.view_ids = {0, 1, 2, 3};
        const HybridStats hs = hybrid_sds_grad(target_2d, target_3d, schedule, provider_2d,
                                               provider_3d, ctx_2d, ctx_3d, hybrid_weights,
                                               sds_rng, t_lo, t_hi);

        Stage3RegTerms reg_sum;
        const bool any_reg = reg_weights.lambda_tv_depth > 0.0 ||
                             reg_weights.lambda_tv_normal > 0.0 ||
                             (reg_weights.lambda_mask > 0.0 && inputs.mask_reference);
        if (any_reg) {
            for (int k = 0; k < static_cast<int>(rig_views.size()); ++k) {
                const CameraView& view = rig_views[static_cast<std::size_t>(k)];
                const RenderOutput ro = render_bound(cloud, view, background, settings);
                const Image normal_img =
                    render_bound_normals(cloud, view, normal_background, settings).color;
                Image d_depth(height, width, 1);
                Image d_alpha(height, width, 1);
                Image d_normal(height, width, 3);
                const Image* mask = k == 0 ? inputs.mask_reference : nullptr;
                const Stage3RegTerms terms =
                    stage3_reg_terms(ro.depth, ro.alpha, normal_img, mask, reg_weights, &d_depth,
                                     &d_alpha, &d_normal);
                reg_sum.tv_depth += terms.tv_depth;
                reg_sum.tv_normal += terms.tv_normal;
                reg_sum.mask += terms.mask;
                reg_sum.total += terms.total;
                RenderAdjoints adj;
                adj.depth = &d_depth;
                adj.alpha = &d_alpha;
                render_bound_backward(cloud, view, background, settings, adj);
                RenderAdjoints nadj;
                nadj.color = &d_normal;
                render_bound_normals_backward(cloud, view, normal_background, settings, nadj);
            }
        }

        const std::size_t bad = sanitize_bound_grads(cloud.grad);
        if (bad > 0 && log.enabled()) {
            ordered_json j;
            j["event"] = "nonfinite_grads";
            j["stage"] = 3;
            j["step"] = step_no;
            j["count"] = bad;
            log.write_line(j.dump());
        }

        adam.step(g_rot, flat_span(cloud.rots), flat_span(cloud.grad.d_rot));
        adam.step(g_scale, flat_span(cloud.log_scales_2d), flat_span(cloud.grad.d_log_scale_2d));
        adam.step(g_thick, std::span<double>(cloud.thickness_logits),
                  std::span<const double>(cloud.grad.d_thickness_logit));
        adam.step(g_opa, std::span<double>(cloud.opacity_logits),
                  std::span<const double>(cloud.grad.d_opacity_logit));
        adam.step(g_col, flat_span(cloud.colors), flat_span(cloud.grad.d_color));
        adam.step(g_vert, flat_span(cloud.mesh.vertices), flat_span(cloud.grad.d_vertex));
        clamp_colors(cloud.colors);

        rep.last_pseudo_loss_2d = hs.sds_2d.pseudo_loss;
        rep.last_pseudo_loss_3d = hs.sds_3d.pseudo_loss;

        if (log.enabled()) {
            ordered_json j;
            j["stage"] = 3;
            j["step"] = step_no;
            j["gaussians"] = cloud.size();
            j["t_2d"] = hs.sds_2d.t;
            j["t_3d"] = hs.sds_3d.t;
            j["pseudo_2d"] = hs.sds_2d.pseudo_loss;
            j["pseudo_3d"] = hs.sds_3d.pseudo_loss;
            j["tv_depth"] = reg_sum.tv_depth;
            j["tv_normal"] = reg_sum.tv_normal;
            j["mask"] = reg_sum.mask;
            if (log.timing()) j["ms"] = elapsed_ms(step_start);
            log.write_line(j.dump());
        }
    }

    rep.steps = steps;
    rep.gaussians = cloud.size();
    rep.mesh_vertices = cloud.mesh.vertex_count();
    rep.mesh_faces = cloud.mesh.face_count();
}

} // namespace gsopt
