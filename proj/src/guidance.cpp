#include "gsopt/guidance.hpp"

#include <algorithm>
#include <cmath>

namespace gsopt {

NoiseSchedule NoiseSchedule::ddpm_linear(int steps, double beta_start, double beta_end) {
    require(steps >= 2, "NoiseSchedule: need at least two steps");
    require(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end,
            "NoiseSchedule: invalid beta range");
    std::vector<double> ab(steps);
    double prod = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double beta = beta_start + (beta_end - beta_start) * t / (steps - 1);
        prod *= (1.0 - beta);
        ab[t] = prod;
    }
    return from_alpha_bar(std::move(ab));
}

NoiseSchedule NoiseSchedule::from_alpha_bar(std::vector<double> alpha_bar) {
    require(!alpha_bar.empty(), "NoiseSchedule: empty schedule");
    for (std::size_t t = 0; t < alpha_bar.size(); ++t) {
        require(alpha_bar[t] > 0.0 && alpha_bar[t] <= 1.0,
                "NoiseSchedule: alpha_bar outside (0,1]");
        if (t > 0) {
            require(alpha_bar[t] < alpha_bar[t - 1],
                    "NoiseSchedule: alpha_bar must be strictly decreasing");
        }
    }
    NoiseSchedule s;
    s.alpha_bar_ = std::move(alpha_bar);
    return s;
}

double NoiseSchedule::alpha_bar(int t) const {
    require(t >= 0 && t < steps(), "NoiseSchedule: timestep out of range");
    return alpha_bar_[t];
}

int NoiseSchedule::sample_timestep(Rng& rng, double lo_frac, double hi_frac) const {
    const int t_max = steps() - 1;
    int lo = static_cast<int>(std::ceil(lo_frac * steps()));
    int hi = static_cast<int>(std::floor(hi_frac * steps()));
    lo = std::clamp(lo, 0, t_max);
    hi = std::clamp(hi, lo, t_max);
    std::uniform_int_distribution<int> dist(lo, hi);
    return dist(rng);
}

Image add_noise(const Image& x, double alpha_bar, const Image& noise) {
    require(x.same_shape(noise), "add_noise: noise shape mismatch");
    require(alpha_bar > 0.0 && alpha_bar <= 1.0, "add_noise: alpha_bar outside (0,1]");
    const double sa = std::sqrt(alpha_bar);
    const double sn = std::sqrt(1.0 - alpha_bar);
    Image z = x;
    double* zp = z.data();
    const double* np = noise.data();
    for (std::size_t i = 0; i < z.size(); ++i) zp[i] = sa * zp[i] + sn * np[i];
    return z;
}

Image add_noise(const Image& x, const NoiseSchedule& schedule, int t, const Image& noise) {
    return add_noise(x, schedule.alpha_bar(t), noise);
}

void fill_normal(Image& img, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    double* p = img.data();
    for (std::size_t i = 0; i < img.size(); ++i) p[i] = n(rng);
}

namespace {

class EchoProvider : public NoisePredictor {
public:
    std::vector<Image> predict(const std::vector<Image>& z_t,
                               const GuidanceContext& ctx) override {
        require(ctx.noise != nullptr && ctx.noise->size() == z_t.size(),
                "echo provider: context noise missing");
        return *ctx.noise;
    }
};

class PullProvider : public NoisePredictor {
public:
    PullProvider(std::vector<Image> targets, double strength)
        : targets_(std::move(targets)), strength_(strength) {
        require(!targets_.empty(), "pull provider: no targets");
    }

    std::vector<Image> predict(const std::vector<Image>& z_t,
                               const GuidanceContext& ctx) override {
        require(ctx.noise != nullptr && ctx.clean != nullptr &&
                    ctx.noise->size() == z_t.size() && ctx.clean->size() == z_t.size(),
                "pull provider: context noise/clean missing");
        std::vector<Image> out;
        out.reserve(z_t.size());
        for (std::size_t k = 0; k < z_t.size(); ++k) {
            const std::size_t tk = ctx.view_ids.empty()
                                       ? k
                                       : static_cast<std::size_t>(ctx.view_ids[k]);
            require(tk < targets_.size(), "pull provider: view id out of range");
            const Image& target = targets_[tk];
            const Image& clean = (*ctx.clean)[k];
            require(clean.same_shape(target), "pull provider: target shape mismatch");
            Image e = (*ctx.noise)[k];
            double* ep = e.data();
            const double* cp = clean.data();
            const double* tp = target.data();
            for (std::size_t i = 0; i < e.size(); ++i) {
                ep[i] += strength_ * (cp[i] - tp[i]);
            }
            out.push_back(std::move(e));
        }
        return out;
    }

private:
    std::vector<Image> targets_;
    double strength_;
};

} // namespace

std::unique_ptr<NoisePredictor> make_echo_provider() {
    return std::make_unique<EchoProvider>();
}

std::unique_ptr<NoisePredictor> make_pull_provider(std::vector<Image> targets,
                                                   double strength) {
    return std::make_unique<PullProvider>(std::move(targets), strength);
}

std::unique_ptr<NoisePredictor> make_synthetic_provider(SyntheticKind kind,
                                                        std::vector<Image> targets,
                                                        double strength) {
    switch (kind) {
    case SyntheticKind::EchoNoise:
        return make_echo_provider();
    case SyntheticKind::PullToTarget:
        return make_pull_provider(std::move(targets), strength);
    }
    throw ContractError("make_synthetic_provider: unknown kind");
}

CloudRgbTarget::CloudRgbTarget(GaussianCloud& cloud, std::vector<CameraView> views,
                               Vec3 background, RenderSettings settings)
    : cloud_(cloud), views_(std::move(views)), background_(background), settings_(settings) {}

Image CloudRgbTarget::render_view(int k) {
    require(k >= 0 && k < view_count(), "CloudRgbTarget: view index out of range");
    return render_cloud(cloud_, views_[k], background_, settings_).color;
}

void CloudRgbTarget::backprop_view(int k, const Image& adjoint) {
    require(k >= 0 && k < view_count(), "CloudRgbTarget: view index out of range");
    RenderAdjoints adj;
    adj.color = &adjoint;
    render_cloud_backward(cloud_, views_[k], background_, settings_, adj, cloud_.grad);
}

CloudNormalTarget::CloudNormalTarget(GaussianCloud& cloud, std::vector<CameraView> views,
                                     Vec3 background, RenderSettings settings)
    : cloud_(cloud), views_(std::move(views)), background_(background), settings_(settings) {
    cache_.resize(views_.size());
}

Image CloudNormalTarget::render_view(int k) {
    require(k >= 0 && k < view_count(), "CloudNormalTarget: view index out of range");
    cache_[k] = render_cloud(cloud_, views_[k], background_, settings_);
    const Image n = normals_from_depth(cache_[k].depth, cache_[k].alpha, views_[k]);
    Image enc(n.height(), n.width(), 3);
    const double* np = n.data();
    double* ep = enc.data();
    for (std::size_t i = 0; i < n.size(); ++i) ep[i] = 0.5 * (np[i] + 1.0);
    return enc;
}

void CloudNormalTarget::backprop_view(int k, const Image& adjoint) {
    require(k >= 0 && k < view_count(), "CloudNormalTarget: view index out of range");
    const RenderOutput& out = cache_[k];
    require(!out.depth.empty(), "CloudNormalTarget: backprop before render");
    Image d_n = adjoint;
    for (double& v : d_n.span()) v *= 0.5;  // through the 0.5 * (n + 1) encoding
    const Image d_depth = normals_from_depth_backward(out.depth, out.alpha, views_[k], d_n);
    RenderAdjoints adj;
    adj.depth = &d_depth;
    render_cloud_backward(cloud_, views_[k], background_, settings_, adj, cloud_.grad);
}

SdsStats sds_grad(DistillationTarget& target, const NoiseSchedule& schedule,
                  NoisePredictor& provider, GuidanceContext ctx, double scale, Rng& rng,
                  double t_lo_frac, double t_hi_frac) {
    const int b = target.view_count();
    require(b >= 1, "sds_grad: target has no views");

    std::vector<Image> clean;
    clean.reserve(b);
    for (int k = 0; k < b; ++k) clean.push_back(target.render_view(k));

    const int t = schedule.sample_timestep(rng, t_lo_frac, t_hi_frac);
    const double ab = schedule.alpha_bar(t);

    std::vector<Image> noise;
    noise.reserve(b);
    for (int k = 0; k < b; ++k) {
        Image e(clean[k].height(), clean[k].width(), clean[k].channels());
        fill_normal(e, rng);
        noise.push_back(std::move(e));
    }

    std::vector<Image> z;
    z.reserve(b);
    for (int k = 0; k < b; ++k) z.push_back(add_noise(clean[k], ab, noise[k]));

    ctx.clean = &clean;
    ctx.noise = &noise;
    ctx.schedule = &schedule;
    ctx.t = t;

    const std::vector<Image> eps_hat = provider.predict(z, ctx);
    require(eps_hat.size() == static_cast<std::size_t>(b),
            "sds_grad: provider returned wrong batch size");

    const double coeff = scale * schedule.weight(t) * std::sqrt(ab);
    SdsStats stats;
    stats.t = t;
    double sq = 0.0;
    std::size_t count = 0;
    for (int k = 0; k < b; ++k) {
        require(eps_hat[k].same_shape(clean[k]), "sds_grad: provider output shape mismatch");
        Image r = eps_hat[k];
        const double* ep = noise[k].data();
        double* rp = r.data();
        for (std::size_t i = 0; i < r.size(); ++i) {
            rp[i] = coeff * (rp[i] - ep[i]);
            sq += rp[i] * rp[i];
        }
        count += r.size();
        target.backprop_view(k, r);
    }
    stats.pseudo_loss = 0.5 * sq / static_cast<double>(count);
    stats.residual_rms = std::sqrt(sq / static_cast<double>(count));
    return stats;
}

HybridStats hybrid_sds_grad(DistillationTarget& target_2d, DistillationTarget& target_3d,
                            const NoiseSchedule& schedule, NoisePredictor& provider_2d,
                            NoisePredictor& provider_3d, GuidanceContext ctx_2d,
                            GuidanceContext ctx_3d, const HybridWeights& weights, Rng& rng,
                            double t_lo_frac, double t_hi_frac) {
    Rng rng_2d(rng());
    Rng rng_3d(rng());
    HybridStats stats;
    stats.sds_2d = sds_grad(target_2d, schedule, provider_2d, std::move(ctx_2d),
                            weights.lambda_2d, rng_2d, t_lo_frac, t_hi_frac);
    stats.sds_3d = sds_grad(target_3d, schedule, provider_3d, std::move(ctx_3d),
                            weights.lambda_3d, rng_3d, t_lo_frac, t_hi_frac);
    return stats;
}

} // namespace gsopt
