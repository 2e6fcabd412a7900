#pragma once

#include "gsopt/camera.hpp"
#include "gsopt/image.hpp"
#include "gsopt/renderer.hpp"
#include "gsopt/scene.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace gsopt {

/// Diffusion noise schedule held as the cumulative signal fraction
/// alpha_bar(t); the default is the linear-beta schedule with T = 1000,
/// beta in [1e-4, 2e-2]. The per-step distillation weight is w(t) = 1 - alpha_bar(t).
class NoiseSchedule {
public:
    static NoiseSchedule ddpm_linear(int steps = 1000, double beta_start = 1e-4,
                                     double beta_end = 2e-2);
    /// Custom schedule from explicit alpha_bar values (tests use this).
    static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar);

    int steps() const { return static_cast<int>(alpha_bar_.size()); }
    double alpha_bar(int t) const;
    double weight(int t) const { return 1.0 - alpha_bar(t); }

    /// Uniform draw from [lo_frac * T, hi_frac * T] (inclusive integer range).
    int sample_timestep(Rng& rng, double lo_frac = 0.02, double hi_frac = 0.98) const;

private:
    std::vector<double> alpha_bar_;
};

/// z_t = sqrt(alpha_bar) * x + sqrt(1 - alpha_bar) * noise.
Image add_noise(const Image& x, double alpha_bar, const Image& noise);
Image add_noise(const Image& x, const NoiseSchedule& schedule, int t, const Image& noise);

/// Per-call context handed to noise predictors. The clean renders, the drawn
/// noise, and the schedule are populated by sds_grad for the benefit of the
/// synthetic test providers; trained predictors ignore them.
struct GuidanceContext {
    std::string prompt_tag;
    const Image* condition = nullptr;
    const std::vector<CameraView>* cameras = nullptr;
    std::vector<int> view_ids;

    const std::vector<Image>* clean = nullptr;
    const std::vector<Image>* noise = nullptr;
    const NoiseSchedule* schedule = nullptr;
    int t = -1;
};

/// Pluggable epsilon-prediction interface; outputs must match input shapes.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual std::vector<Image> predict(const std::vector<Image>& z_t,
                                       const GuidanceContext& ctx) = 0;
};

/// Returns the exact noise that was added: the distillation residual is
/// identically zero, so accumulated gradients are exactly zero.
std::unique_ptr<NoisePredictor> make_echo_provider();

/// eps_hat = eps + strength * (clean render - target): distillation descends
/// the photometric gap toward per-view target images.
std::unique_ptr<NoisePredictor> make_pull_provider(std::vector<Image> targets,
                                                   double strength);

enum class SyntheticKind { EchoNoise, PullToTarget };
std::unique_ptr<NoisePredictor> make_synthetic_provider(SyntheticKind kind,
                                                        std::vector<Image> targets = {},
                                                        double strength = 1.0);

/// A differentiable image source seen by the distillation rule: forward
/// renders one image per view; backward pushes an image adjoint into the
/// underlying scene parameters.
class DistillationTarget {
public:
    virtual ~DistillationTarget() = default;
    virtual int view_count() const = 0;
    virtual Image render_view(int view_index) = 0;
    virtual void backprop_view(int view_index, const Image& adjoint) = 0;
};

/// RGB renders of a free Gaussian cloud; adjoints accumulate into cloud.grad.
class CloudRgbTarget : public DistillationTarget {
public:
    CloudRgbTarget(GaussianCloud& cloud, std::vector<CameraView> views, Vec3 background,
                   RenderSettings settings);
    int view_count() const override { return static_cast<int>(views_.size()); }
    Image render_view(int k) override;
    void backprop_view(int k, const Image& adjoint) override;
    const std::vector<CameraView>& views() const { return views_; }

private:
    GaussianCloud& cloud_;
    std::vector<CameraView> views_;
    Vec3 background_;
    RenderSettings settings_;
};

/// Normal maps encoded as 0.5 * (n + 1), with n derived from rendered depth;
/// adjoints chain through the depth channel.
class CloudNormalTarget : public DistillationTarget {
public:
    CloudNormalTarget(GaussianCloud& cloud, std::vector<CameraView> views, Vec3 background,
                      RenderSettings settings);
    int view_count() const override { return static_cast<int>(views_.size()); }
    Image render_view(int k) override;
    void backprop_view(int k, const Image& adjoint) override;

private:
    GaussianCloud& cloud_;
    std::vector<CameraView> views_;
    Vec3 background_;
    RenderSettings settings_;
    std::vector<RenderOutput> cache_;
};

/// Adapter for tests and bound-Gaussian scenes.
class CallbackTarget : public DistillationTarget {
public:
    CallbackTarget(int views, std::function<Image(int)> render,
                   std::function<void(int, const Image&)> backprop)
        : views_(views), render_(std::move(render)), backprop_(std::move(backprop)) {}
    int view_count() const override { return views_; }
    Image render_view(int k) override { return render_(k); }
    void backprop_view(int k, const Image& adjoint) override { backprop_(k, adjoint); }

private:
    int views_;
    std::function<Image(int)> render_;
    std::function<void(int, const Image&)> backprop_;
};

struct SdsStats {
    int t = -1;
    double pseudo_loss = 0.0;  // 0.5 * mean squared residual, monitoring only
    double residual_rms = 0.0;
};

/// One distillation step: renders every view, draws (t, noise), forms z_t,
/// queries the provider, and backpropagates
///   scale * w(t) * sqrt(alpha_bar(t)) * (eps_hat - eps)
/// as the per-view image adjoint. Draw order: t first, then per-view noise
/// in view order, each image in storage order.
SdsStats sds_grad(DistillationTarget& target, const NoiseSchedule& schedule,
                  NoisePredictor& provider, GuidanceContext ctx, double scale, Rng& rng,
                  double t_lo_frac = 0.02, double t_hi_frac = 0.98);

struct HybridWeights {
    double lambda_2d = 0.1;
    double lambda_3d = 0.01;
};

struct HybridStats {
    SdsStats sds_2d, sds_3d;
};

/// Weighted sum of the random-view branch (no condition) and the canonical
/// rig branch (condition forwarded): the branch weights multiply the
/// residuals, so the composition equals running each branch alone with the
/// same derived rng stream. The rng splits deterministically: one draw seeds
/// the 2D stream, the next seeds the 3D stream.
HybridStats hybrid_sds_grad(DistillationTarget& target_2d, DistillationTarget& target_3d,
                            const NoiseSchedule& schedule, NoisePredictor& provider_2d,
                            NoisePredictor& provider_3d, GuidanceContext ctx_2d,
                            GuidanceContext ctx_3d, const HybridWeights& weights, Rng& rng,
                            double t_lo_frac = 0.02, double t_hi_frac = 0.98);

/// Fills an image with independent standard normal draws in storage order.
void fill_normal(Image& img, Rng& rng);

} // namespace gsopt
