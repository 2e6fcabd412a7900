#pragma once

#include "gsopt/binding.hpp"
#include "gsopt/config.hpp"
#include "gsopt/guidance.hpp"
#include "gsopt/losses.hpp"
#include "gsopt/mesh.hpp"
#include "gsopt/scene.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gsopt {

/// Adam with bias correction and independent parameter groups. Group state
/// survives cloud maintenance through remap(), which re-threads the
/// per-element moments and zeroes them for freshly created elements.
class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    int add_group(const std::string& name, double lr, std::size_t size);
    void set_lr(int group, double lr);
    double lr(int group) const;
    std::size_t group_size(int group) const;
    long step_count(int group) const;

    /// One update; spans must match the group size exactly.
    void step(int group, std::span<double> values, std::span<const double> grads);

    /// Re-threads the moment vectors after densify/prune; `components` is
    /// the number of doubles per remapped element.
    void remap(int group, const IndexRemap& remap, int components);
    /// Grows (zero state) or shrinks the group.
    void resize(int group, std::size_t size);

private:
    struct Group {
        std::string name;
        double lr = 0.0;
        long t = 0;
        std::vector<double> m, v;
    };
    double beta1_, beta2_, eps_;
    std::vector<Group> groups_;
    Group& at(int group);
    const Group& at(int group) const;
};

/// Five-group Adam over a free Gaussian cloud, with the center learning rate
/// decayed exponentially toward lr * final_scale over `total_steps`.
class CloudOptimizer {
public:
    CloudOptimizer(GaussianCloud& cloud, const Config& cfg, int total_steps);
    /// Applies one update from cloud.grad and advances the decay clock.
    void step();
    /// Call after densify/prune with the returned remap.
    void apply_remap(const IndexRemap& remap);
    Adam& adam() { return adam_; }

private:
    GaussianCloud& cloud_;
    Adam adam_;
    int g_pos_, g_rot_, g_scale_, g_opa_, g_col_;
    double lr_pos_0_, decay_per_step_;
    int steps_done_ = 0;
};

/// Append-only JSONL event log; timing fields are included only when
/// enabled, so default logs are bit-identical across reruns.
class RunLog {
public:
    RunLog() = default;  ///< Disabled.
    RunLog(const std::string& path, bool timing);
    ~RunLog();
    RunLog(const RunLog&) = delete;
    RunLog& operator=(const RunLog&) = delete;

    bool enabled() const { return !path_.empty(); }
    bool timing() const { return timing_; }
    /// Writes one pre-serialized JSON object line.
    void write_line(const std::string& json_object);

private:
    std::string path_;
    bool timing_ = false;
    void* file_ = nullptr;  // std::FILE*
};

/// Evenly distributed unit directions (Fibonacci lattice).
std::vector<Vec3> sphere_directions(int count);

/// Isotropic Gaussians on a sphere around the origin, gray, uniform scale
/// and opacity from the config.
GaussianCloud init_sphere_cloud(const Config& cfg);

/// Gaussian cloud from a full parameter PLY, or positions-only PLY with the
/// remaining parameters defaulted from the config.
GaussianCloud init_cloud_from_ply(const Config& cfg, const std::string& path);

/// Canonical four-view rig from the config.
CanonicalRig rig_from_config(const Config& cfg);
RenderSettings render_settings_from_config(const Config& cfg);

/// Everything run_stage2 needs besides the cloud and the config.
struct Stage2Inputs {
    NoisePredictor* provider_2d = nullptr;  ///< Required.
    NoisePredictor* provider_3d = nullptr;  ///< Defaults to provider_2d.
    const Image* condition = nullptr;       ///< Forwarded on the rig branch.
    const Image* mask_reference = nullptr;  ///< Silhouette target, rig view 0.
};

struct Stage2Report {
    int steps = 0;
    std::size_t gaussians = 0;
    double last_pseudo_loss_2d = 0.0;
    double last_pseudo_loss_3d = 0.0;
    double mean_flat_ratio = 1.0;
};

/// Coarse stage: hybrid score distillation over one random view and the
/// canonical rig, alternating RGB and normal-map targets on the random
/// branch, with depth/normal smoothness and optional silhouette terms,
/// periodic densify+prune early on, surface regularizers late, and a final
/// prune of Gaussians far below the mean opacity.
Stage2Report run_stage2(GaussianCloud& cloud, const Stage2Inputs& inputs, const Config& cfg,
                        RunLog& log);

struct Stage3Report {
    int steps = 0;
    std::size_t gaussians = 0;
    std::size_t mesh_vertices = 0;
    std::size_t mesh_faces = 0;
    double last_pseudo_loss_2d = 0.0;
    double last_pseudo_loss_3d = 0.0;
};

/// Mesh stage: isosurface extraction from the coarse cloud, Gaussian
/// binding, and joint refinement of the bound parameters and mesh vertices
/// under the same hybrid distillation plus mesh-stage regularizers.
/// Returns the refined bound cloud (which owns the mesh).
BoundGaussianCloud run_stage3(const GaussianCloud& coarse, const Stage2Inputs& inputs,
                              const Config& cfg, RunLog& log, Stage3Report* report = nullptr);

/// Refinement half of stage 3, exposed for tests that bring their own mesh.
void optimize_bound(BoundGaussianCloud& cloud, const Stage2Inputs& inputs, const Config& cfg,
                    RunLog& log, Stage3Report* report = nullptr);

} // namespace gsopt
