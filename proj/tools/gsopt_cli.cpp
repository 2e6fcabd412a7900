/// Command-line front end: init, optimize, extract, refine, render, export,
/// and config subcommands over the gsopt library. Runtime failures print a
/// one-line JSON object to stderr and exit nonzero so callers can script
/// against the tool.

#include "gsopt/conditioning.hpp"
#include "gsopt/io_archive.hpp"
#include "gsopt/io_image.hpp"
#include "gsopt/io_obj.hpp"
#include "gsopt/io_ply.hpp"
#include "gsopt/pipeline.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace {

using gsopt::Config;
using gsopt::GaussianCloud;
using gsopt::Image;
using ordered_json = nlohmann::ordered_json;

/// Options shared by every subcommand.
struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<long> seed;
    std::string log_path;
    bool timing = false;
};

void add_common(CLI::App* cmd, Common& common) {
    cmd->add_option("--config", common.config_path, "configuration file (key = value lines)");
    cmd->add_option("--set", common.sets, "override one key, KEY=VALUE, repeatable");
    cmd->add_option("--seed", common.seed, "override the base seed");
    cmd->add_option("--log", common.log_path, "append JSONL progress events to this file");
    cmd->add_flag("--timing", common.timing, "include wall-clock timings in the log");
}

Config build_config(const Common& common) {
    Config cfg = common.config_path.empty() ? Config::defaults()
                                            : Config::from_file(common.config_path);
    for (const std::string& kv : common.sets) cfg.apply_line(kv, "--set");
    if (common.seed) cfg.set("seed", std::to_string(*common.seed));
    if (common.timing) cfg.set("log.timing", "true");
    return cfg;
}

gsopt::RunLog make_log(const Common& common, const Config& cfg) {
    if (common.log_path.empty()) return gsopt::RunLog();
    return gsopt::RunLog(common.log_path, cfg.get_bool("log.timing"));
}

/// Collapses an RGB(A) mask image to one channel and matches the render size.
Image load_mask(const std::string& path, int height, int width) {
    Image img = gsopt::read_png(path);
    if (img.channels() != 1) {
        Image gray(img.height(), img.width(), 1);
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                double sum = 0.0;
                for (int c = 0; c < img.channels(); ++c) sum += img.at(y, x, c);
                gray.at(y, x, 0) = sum / img.channels();
            }
        }
        img = std::move(gray);
    }
    if (img.height() != height || img.width() != width) {
        img = gsopt::resize_nearest(img, height, width);
    }
    return img;
}

Image load_rgb(const std::string& path, int height, int width) {
    Image img = gsopt::read_png(path);
    gsopt::require(img.channels() == 3, path + ": expected an RGB image");
    if (img.height() != height || img.width() != width) {
        img = gsopt::resize_nearest(img, height, width);
    }
    return img;
}

/// Providers for the distillation branches. The random-view branch always
/// uses the echo provider; guidance.provider selects the rig branch:
/// "echo", "pull" (toward --target images), or "conditioned" (toy control
/// net, optionally restored from --weights).
struct Providers {
    std::unique_ptr<gsopt::NoisePredictor> for_2d;
    std::unique_ptr<gsopt::NoisePredictor> for_3d;
    std::shared_ptr<gsopt::ToyControlNet> net;
};

Providers build_providers(const Config& cfg, const std::vector<std::string>& target_paths,
                          const std::string& weights_path) {
    const int width = cfg.get_int("render.width");
    const int height = cfg.get_int("render.height");
    Providers p;
    p.for_2d = gsopt::make_echo_provider();
    const std::string& kind = cfg.get_string("guidance.provider");
    if (kind == "echo") {
        p.for_3d = gsopt::make_echo_provider();
    } else if (kind == "pull") {
        gsopt::require(!target_paths.empty(),
                       "guidance.provider = pull needs at least one --target image");
        std::vector<Image> targets;
        for (const std::string& path : target_paths) {
            targets.push_back(load_rgb(path, height, width));
        }
        // One target serves every rig view; otherwise one per view.
        if (targets.size() == 1) {
            targets.resize(4, targets[0]);
        }
        gsopt::require(targets.size() == 4, "--target must be given once or four times");
        p.for_3d = gsopt::make_pull_provider(std::move(targets),
                                             cfg.get_double("guidance.strength"));
    } else if (kind == "conditioned") {
        p.net = std::make_shared<gsopt::ToyControlNet>(
            static_cast<std::uint64_t>(cfg.get_int("seed")));
        if (!weights_path.empty()) {
            gsopt::load_params(weights_path, p.net->all_params());
        }
        p.for_3d = gsopt::make_conditioned_provider(p.net);
    } else {
        throw gsopt::ContractError("unknown guidance.provider '" + kind +
                                   "' (expected echo, pull, or conditioned)");
    }
    return p;
}

void emit(const ordered_json& j) { std::printf("%s\n", j.dump().c_str()); }

std::string derived_mesh_path(const std::string& output) {
    std::filesystem::path p(output);
    p.replace_extension();
    return p.string() + "_mesh.obj";
}

int run(int argc, char** argv) {
    CLI::App app{"Controllable Gaussian-splat asset generator"};
    app.require_subcommand(1);

    // init ------------------------------------------------------------------
    auto* cmd_init = app.add_subcommand("init", "write a sphere-initialized Gaussian cloud");
    Common c_init;
    add_common(cmd_init, c_init);
    std::string init_output;
    cmd_init->add_option("-o,--output", init_output, "output Gaussian PLY")->required();
    cmd_init->callback([&] {
        const Config cfg = build_config(c_init);
        const GaussianCloud cloud = gsopt::init_sphere_cloud(cfg);
        gsopt::write_gaussian_ply(init_output, cloud);
        ordered_json j;
        j["command"] = "init";
        j["gaussians"] = cloud.size();
        j["output"] = init_output;
        emit(j);
    });

    // optimize --------------------------------------------------------------
    auto* cmd_opt = app.add_subcommand("optimize", "coarse-stage cloud optimization");
    Common c_opt;
    add_common(cmd_opt, c_opt);
    std::string opt_input, opt_output, opt_condition, opt_mask, opt_weights;
    std::vector<std::string> opt_targets;
    cmd_opt->add_option("-i,--input", opt_input, "input Gaussian PLY (sphere init if omitted)");
    cmd_opt->add_option("-o,--output", opt_output, "output Gaussian PLY")->required();
    cmd_opt->add_option("--condition", opt_condition, "condition image for the rig branch");
    cmd_opt->add_option("--mask", opt_mask, "silhouette mask for rig view 0");
    cmd_opt->add_option("--target", opt_targets, "pull-provider target image, 1 or 4 times");
    cmd_opt->add_option("--weights", opt_weights, "parameter archive for the conditioned provider");
    cmd_opt->callback([&] {
        const Config cfg = build_config(c_opt);
        const int width = cfg.get_int("render.width");
        const int height = cfg.get_int("render.height");
        GaussianCloud cloud = opt_input.empty() ? gsopt::init_sphere_cloud(cfg)
                                                : gsopt::init_cloud_from_ply(cfg, opt_input);
        Providers providers = build_providers(cfg, opt_targets, opt_weights);
        std::optional<Image> condition, mask;
        if (!opt_condition.empty()) condition = load_rgb(opt_condition, 64, 64);
        if (!opt_mask.empty()) mask = load_mask(opt_mask, height, width);
        gsopt::Stage2Inputs inputs;
        inputs.provider_2d = providers.for_2d.get();
        inputs.provider_3d = providers.for_3d.get();
        inputs.condition = condition ? &*condition : nullptr;
        inputs.mask_reference = mask ? &*mask : nullptr;
        gsopt::RunLog log = make_log(c_opt, cfg);
        const gsopt::Stage2Report report = gsopt::run_stage2(cloud, inputs, cfg, log);
        gsopt::write_gaussian_ply(opt_output, cloud);
        ordered_json j;
        j["command"] = "optimize";
        j["steps"] = report.steps;
        j["gaussians"] = report.gaussians;
        j["mean_flat_ratio"] = report.mean_flat_ratio;
        j["output"] = opt_output;
        emit(j);
    });

    // extract ----------------------------------------------------------------
    auto* cmd_ext = app.add_subcommand("extract", "isosurface mesh from a Gaussian cloud");
    Common c_ext;
    add_common(cmd_ext, c_ext);
    std::string ext_input, ext_output;
    cmd_ext->add_option("-i,--input", ext_input, "input Gaussian PLY")->required();
    cmd_ext->add_option("-o,--output", ext_output, "output OBJ mesh")->required();
    cmd_ext->callback([&] {
        const Config cfg = build_config(c_ext);
        const GaussianCloud cloud = gsopt::init_cloud_from_ply(cfg, ext_input);
        gsopt::ExtractOptions options;
        options.resolution = cfg.get_int("mesh.resolution");
        options.iso = cfg.get_double("mesh.iso");
        options.margin = cfg.get_double("mesh.margin");
        options.cutoff_sigma = cfg.get_double("mesh.cutoff_sigma");
        options.parallel = cfg.get_bool("parallel");
        const gsopt::TriMesh mesh = gsopt::extract_isosurface(cloud, options);
        gsopt::write_obj(ext_output, mesh);
        ordered_json j;
        j["command"] = "extract";
        j["vertices"] = mesh.vertex_count();
        j["faces"] = mesh.face_count();
        j["watertight"] = gsopt::is_watertight(mesh);
        j["components"] = gsopt::count_connected_components(mesh);
        j["output"] = ext_output;
        emit(j);
    });

    // refine -----------------------------------------------------------------
    auto* cmd_ref = app.add_subcommand("refine", "mesh-stage refinement of a coarse cloud");
    Common c_ref;
    add_common(cmd_ref, c_ref);
    std::string ref_input, ref_output, ref_mesh_output, ref_condition, ref_mask, ref_weights;
    std::vector<std::string> ref_targets;
    cmd_ref->add_option("-i,--input", ref_input, "input coarse Gaussian PLY")->required();
    cmd_ref->add_option("-o,--output", ref_output, "output bound-Gaussian PLY")->required();
    cmd_ref->add_option("--mesh-output", ref_mesh_output,
                        "output OBJ for the refined mesh (defaults beside --output)");
    cmd_ref->add_option("--condition", ref_condition, "condition image for the rig branch");
    cmd_ref->add_option("--mask", ref_mask, "silhouette mask for rig view 0");
    cmd_ref->add_option("--target", ref_targets, "pull-provider target image, 1 or 4 times");
    cmd_ref->add_option("--weights", ref_weights, "parameter archive for the conditioned provider");
    cmd_ref->callback([&] {
        const Config cfg = build_config(c_ref);
        const int width = cfg.get_int("render.width");
        const int height = cfg.get_int("render.height");
        const GaussianCloud coarse = gsopt::init_cloud_from_ply(cfg, ref_input);
        Providers providers = build_providers(cfg, ref_targets, ref_weights);
        std::optional<Image> condition, mask;
        if (!ref_condition.empty()) condition = load_rgb(ref_condition, 64, 64);
        if (!ref_mask.empty()) mask = load_mask(ref_mask, height, width);
        gsopt::Stage2Inputs inputs;
        inputs.provider_2d = providers.for_2d.get();
        inputs.provider_3d = providers.for_3d.get();
        inputs.condition = condition ? &*condition : nullptr;
        inputs.mask_reference = mask ? &*mask : nullptr;
        gsopt::RunLog log = make_log(c_ref, cfg);
        gsopt::Stage3Report report;
        const gsopt::BoundGaussianCloud bound =
            gsopt::run_stage3(coarse, inputs, cfg, log, &report);
        gsopt::write_bound_ply(ref_output, bound);
        const std::string mesh_out =
            ref_mesh_output.empty() ? derived_mesh_path(ref_output) : ref_mesh_output;
        gsopt::write_obj(mesh_out, bound.mesh);
        ordered_json j;
        j["command"] = "refine";
        j["steps"] = report.steps;
        j["gaussians"] = report.gaussians;
        j["vertices"] = report.mesh_vertices;
        j["faces"] = report.mesh_faces;
        j["output"] = ref_output;
        j["mesh_output"] = mesh_out;
        emit(j);
    });

    // render -----------------------------------------------------------------
    auto* cmd_ren = app.add_subcommand("render", "render the canonical rig views to PNG");
    Common c_ren;
    add_common(cmd_ren, c_ren);
    std::string ren_input, ren_mesh, ren_prefix;
    bool ren_depth = false;
    cmd_ren->add_option("-i,--input", ren_input, "Gaussian PLY, or bound PLY with --mesh")
        ->required();
    cmd_ren->add_option("--mesh", ren_mesh, "OBJ mesh for a bound-Gaussian input");
    cmd_ren->add_option("-o,--output", ren_prefix, "output prefix for <prefix>_view<k>.png")
        ->required();
    cmd_ren->add_flag("--depth", ren_depth, "also write <prefix>_view<k>_depth.pfm");
    cmd_ren->callback([&] {
        const Config cfg = build_config(c_ren);
        const gsopt::CanonicalRig rig = gsopt::rig_from_config(cfg);
        const gsopt::RenderSettings settings = gsopt::render_settings_from_config(cfg);
        const gsopt::Vec3 background =
            gsopt::Vec3::Constant(cfg.get_double("render.background"));
        std::optional<gsopt::BoundGaussianCloud> bound;
        std::optional<GaussianCloud> cloud;
        if (ren_mesh.empty()) {
            cloud = gsopt::init_cloud_from_ply(cfg, ren_input);
        } else {
            bound = gsopt::read_bound_ply(ren_input, gsopt::read_obj(ren_mesh));
        }
        for (int k = 0; k < 4; ++k) {
            const gsopt::RenderOutput out =
                bound ? gsopt::render_bound(*bound, rig.views[k], background, settings)
                      : gsopt::render_cloud(*cloud, rig.views[k], background, settings);
            const std::string stem = ren_prefix + "_view" + std::to_string(k);
            gsopt::write_png(stem + ".png", out.color);
            if (ren_depth) gsopt::write_pfm(stem + "_depth.pfm", out.depth);
        }
        ordered_json j;
        j["command"] = "render";
        j["views"] = 4;
        j["prefix"] = ren_prefix;
        emit(j);
    });

    // export -----------------------------------------------------------------
    auto* cmd_exp = app.add_subcommand("export", "bake bound-Gaussian colors into an OBJ mesh");
    Common c_exp;
    add_common(cmd_exp, c_exp);
    std::string exp_input, exp_mesh, exp_output;
    cmd_exp->add_option("-i,--input", exp_input, "bound-Gaussian PLY")->required();
    cmd_exp->add_option("--mesh", exp_mesh, "OBJ mesh the Gaussians are bound to")->required();
    cmd_exp->add_option("-o,--output", exp_output, "output OBJ with baked vertex colors")
        ->required();
    cmd_exp->callback([&] {
        gsopt::BoundGaussianCloud bound =
            gsopt::read_bound_ply(exp_input, gsopt::read_obj(exp_mesh));
        bound.mesh.colors = gsopt::bake_vertex_colors(bound);
        gsopt::write_obj(exp_output, bound.mesh);
        ordered_json j;
        j["command"] = "export";
        j["vertices"] = bound.mesh.vertex_count();
        j["faces"] = bound.mesh.face_count();
        j["output"] = exp_output;
        emit(j);
    });

    // config -----------------------------------------------------------------
    auto* cmd_cfg = app.add_subcommand("config", "print the effective configuration");
    Common c_cfg;
    add_common(cmd_cfg, c_cfg);
    cmd_cfg->callback([&] { std::fputs(build_config(c_cfg).to_string().c_str(), stdout); });

    CLI11_PARSE(app, argc, argv);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const gsopt::ContractError& e) {
        ordered_json j;
        j["error"] = e.what();
        j["type"] = "contract";
        std::fprintf(stderr, "%s\n", j.dump().c_str());
    } catch (const gsopt::IoError& e) {
        ordered_json j;
        j["error"] = e.what();
        j["type"] = "io";
        std::fprintf(stderr, "%s\n", j.dump().c_str());
    } catch (const gsopt::PipelineError& e) {
        ordered_json j;
        j["error"] = e.what();
        j["type"] = "pipeline";
        std::fprintf(stderr, "%s\n", j.dump().c_str());
    } catch (const std::exception& e) {
        ordered_json j;
        j["error"] = e.what();
        j["type"] = "error";
        std::fprintf(stderr, "%s\n", j.dump().c_str());
    }
    return 1;
}
