#pragma once

#include "gsopt/camera.hpp"
#include "gsopt/guidance.hpp"
#include "gsopt/nn.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace gsopt {

/// Toy multi-view noise predictor with an image-conditioned control branch.
///
/// The base branch is a small per-view convolutional trunk driven by the
/// timestep embedding and the view's pose relative to the first view; it is
/// locked (never trained, excluded from trainable_params). The control
/// branch encodes a reference RGB image, adds a zero-initialized local
/// projection of the encoding to the latent, runs a trainable copy of the
/// trunk with a globally pooled condition embedding mixed in, and feeds the
/// result back through a second zero-initialized projection. Both injections
/// start at exactly zero, so a freshly constructed module reproduces the
/// base branch bit for bit.
struct ToyControlNet {
    int latent_c = 8;
    int latent_hw = 16;
    int cond_hw = 64;
    int embed_n = 32;
    int trunk_c = 16;

    // Base branch, locked.
    Linear t_embed;
    Linear pose_embed;
    Linear emb_proj;
    Conv2d conv1, conv2, conv3;

    // Condition encoder, trainable.
    Conv2d enc1, enc2, enc3;

    // Control branch, trainable; the trunk starts as a copy of the base one.
    Conv2d local_proj;   // 1x1, zero-initialized
    Linear global_proj;  // random-initialized
    Linear ctrl_emb_proj;
    Conv2d ctrl_conv1, ctrl_conv2;
    Conv2d out_proj;  // 1x1, zero-initialized

    explicit ToyControlNet(std::uint64_t seed);

    /// Cached activations of one controlled forward, for backward.
    struct Workspace {
        Tensor3 cond, p1p, p1, p2p, p2, p3;
        std::vector<double> pool, emb, emb_c;
        Tensor3 xc, c1p, c1, c2p, c2;
    };

    Tensor3 predict_base(const Tensor3& latent, const Mat4& rel_pose, int t) const;
    Tensor3 predict_controlled(const Tensor3& latent, const Tensor3& condition,
                               const Mat4& rel_pose, int t) const;
    /// Controlled forward that also fills the workspace.
    Tensor3 forward_cached(const Tensor3& latent, const Tensor3& condition,
                           const Mat4& rel_pose, int t, Workspace& ws) const;
    /// Accumulates parameter gradients for one cached forward. The base
    /// branch is locked, so only the control path is traversed.
    void backward(const Workspace& ws, const Tensor3& d_out);

    std::vector<ParamRef> trainable_params();
    std::vector<ParamRef> all_params();
    void zero_grad();
};

/// Noise predictor over RGB views backed by a ToyControlNet: views are
/// resized to the latent resolution and zero-padded to the latent channel
/// count on the way in, and cropped/resized back on the way out. Camera
/// poses and the condition image come from the guidance context; the
/// condition is resized to the encoder input size.
class ConditionedProvider : public NoisePredictor {
public:
    explicit ConditionedProvider(std::shared_ptr<ToyControlNet> net) : net_(std::move(net)) {}
    std::vector<Image> predict(const std::vector<Image>& z_t, const GuidanceContext& ctx) override;
    ToyControlNet& net() { return *net_; }

private:
    std::shared_ptr<ToyControlNet> net_;
};

std::unique_ptr<NoisePredictor> make_conditioned_provider(std::shared_ptr<ToyControlNet> net);

} // namespace gsopt
