#include "gsopt/conditioning.hpp"

#include <cmath>

namespace gsopt {

namespace {

std::vector<double> flatten_pose(const Mat4& pose) {
    std::vector<double> v(16);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) v[r * 4 + c] = pose(r, c);
    return v;
}

std::vector<double> add(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> y(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
    return y;
}

/// Adds one value per channel across the spatial extent.
void add_channel_bias(Tensor3& x, const std::vector<double>& per_channel) {
    for (int c = 0; c < x.c; ++c)
        for (int y = 0; y < x.h; ++y)
            for (int xx = 0; xx < x.w; ++xx) x.at(c, y, xx) += per_channel[c];
}

/// Per-channel spatial sums, the adjoint of add_channel_bias.
std::vector<double> channel_sums(const Tensor3& g) {
    std::vector<double> s(g.c, 0.0);
    for (int c = 0; c < g.c; ++c)
        for (int y = 0; y < g.h; ++y)
            for (int xx = 0; xx < g.w; ++xx) s[c] += g.at(c, y, xx);
    return s;
}

} // namespace

ToyControlNet::ToyControlNet(std::uint64_t seed)
    : t_embed(embed_n, embed_n),
      pose_embed(16, embed_n),
      emb_proj(embed_n, trunk_c),
      conv1(latent_c, trunk_c, 3, 1, 1),
      conv2(trunk_c, trunk_c, 3, 1, 1),
      conv3(trunk_c, latent_c, 3, 1, 1),
      enc1(3, latent_c, 3, 2, 1),
      enc2(latent_c, trunk_c, 3, 2, 1),
      enc3(trunk_c, trunk_c, 3, 1, 1),
      local_proj(trunk_c, latent_c, 1, 1, 0),
      global_proj(trunk_c, embed_n),
      ctrl_emb_proj(embed_n, trunk_c),
      ctrl_conv1(latent_c, trunk_c, 3, 1, 1),
      ctrl_conv2(trunk_c, trunk_c, 3, 1, 1),
      out_proj(trunk_c, latent_c, 1, 1, 0) {
    Rng rng = derive_rng(seed, "toy-control-net", 0);
    t_embed.init_random(rng);
    pose_embed.init_random(rng);
    emb_proj.init_random(rng);
    conv1.init_random(rng);
    conv2.init_random(rng);
    conv3.init_random(rng);
    enc1.init_random(rng);
    enc2.init_random(rng);
    enc3.init_random(rng);
    global_proj.init_random(rng);
    ctrl_emb_proj.copy_weights_from(emb_proj);
    ctrl_conv1.copy_weights_from(conv1);
    ctrl_conv2.copy_weights_from(conv2);
    local_proj.init_zero();
    out_proj.init_zero();
}

Tensor3 ToyControlNet::predict_base(const Tensor3& latent, const Mat4& rel_pose, int t) const {
    require(latent.c == latent_c && latent.h == latent_hw && latent.w == latent_hw,
            "predict_base: latent shape mismatch");
    const std::vector<double> emb =
        silu(add(t_embed.forward(sinusoidal_embedding(t, embed_n)),
                 pose_embed.forward(flatten_pose(rel_pose))));
    Tensor3 h1p = conv1.forward(latent);
    add_channel_bias(h1p, emb_proj.forward(emb));
    const Tensor3 h1 = silu(h1p);
    const Tensor3 h2 = silu(conv2.forward(h1));
    return conv3.forward(h2);
}

Tensor3 ToyControlNet::forward_cached(const Tensor3& latent, const Tensor3& condition,
                                      const Mat4& rel_pose, int t, Workspace& ws) const {
    require(latent.c == latent_c && latent.h == latent_hw && latent.w == latent_hw,
            "forward_cached: latent shape mismatch");
    require(condition.c == 3 && condition.h == cond_hw && condition.w == cond_hw,
            "forward_cached: condition shape mismatch");
    ws.emb = silu(add(t_embed.forward(sinusoidal_embedding(t, embed_n)),
                      pose_embed.forward(flatten_pose(rel_pose))));

    // Base trunk; its activations are not cached because the branch is locked
    // and nothing trainable feeds it.
    Tensor3 h1p = conv1.forward(latent);
    add_channel_bias(h1p, emb_proj.forward(ws.emb));
    const Tensor3 h1 = silu(h1p);
    const Tensor3 h2 = silu(conv2.forward(h1));
    Tensor3 out = conv3.forward(h2);

    // Condition encoder.
    ws.cond = condition;
    ws.p1p = enc1.forward(condition);
    ws.p1 = silu(ws.p1p);
    ws.p2p = enc2.forward(ws.p1);
    ws.p2 = silu(ws.p2p);
    ws.p3 = enc3.forward(ws.p2);
    ws.pool = mean_pool(ws.p3);
    ws.emb_c = add(ws.emb, global_proj.forward(ws.pool));

    // Control trunk on the locally conditioned latent.
    const Tensor3 local = local_proj.forward(ws.p3);
    ws.xc = latent;
    for (std::size_t i = 0; i < ws.xc.data.size(); ++i) ws.xc.data[i] += local.data[i];
    ws.c1p = ctrl_conv1.forward(ws.xc);
    add_channel_bias(ws.c1p, ctrl_emb_proj.forward(ws.emb_c));
    ws.c1 = silu(ws.c1p);
    ws.c2p = ctrl_conv2.forward(ws.c1);
    ws.c2 = silu(ws.c2p);

    const Tensor3 residual = out_proj.forward(ws.c2);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += residual.data[i];
    return out;
}

Tensor3 ToyControlNet::predict_controlled(const Tensor3& latent, const Tensor3& condition,
                                          const Mat4& rel_pose, int t) const {
    Workspace ws;
    return forward_cached(latent, condition, rel_pose, t, ws);
}

void ToyControlNet::backward(const Workspace& ws, const Tensor3& d_out) {
    Tensor3 g_c2 = out_proj.backward(ws.c2, d_out);
    Tensor3 g_c2p = silu_backward(ws.c2p, g_c2);
    Tensor3 g_c1 = ctrl_conv2.backward(ws.c1, g_c2p);
    Tensor3 g_c1p = silu_backward(ws.c1p, g_c1);
    Tensor3 g_xc = ctrl_conv1.backward(ws.xc, g_c1p);
    const std::vector<double> g_emb_out = channel_sums(g_c1p);
    const std::vector<double> g_emb_c = ctrl_emb_proj.backward(ws.emb_c, g_emb_out);
    // ws.emb itself comes from locked layers only; the trainable part of
    // emb_c is the pooled-condition projection.
    const std::vector<double> g_pool = global_proj.backward(ws.pool, g_emb_c);
    Tensor3 g_p3 = mean_pool_backward(ws.p3, g_pool);
    const Tensor3 g_local = local_proj.backward(ws.p3, g_xc);
    for (std::size_t i = 0; i < g_p3.data.size(); ++i) g_p3.data[i] += g_local.data[i];
    Tensor3 g_p2 = enc3.backward(ws.p2, g_p3);
    Tensor3 g_p2p = silu_backward(ws.p2p, g_p2);
    Tensor3 g_p1 = enc2.backward(ws.p1, g_p2p);
    Tensor3 g_p1p = silu_backward(ws.p1p, g_p1);
    (void)enc1.backward(ws.cond, g_p1p);
}

std::vector<ParamRef> ToyControlNet::trainable_params() {
    std::vector<ParamRef> out;
    enc1.collect_params("enc1", out);
    enc2.collect_params("enc2", out);
    enc3.collect_params("enc3", out);
    local_proj.collect_params("local_proj", out);
    global_proj.collect_params("global_proj", out);
    ctrl_emb_proj.collect_params("ctrl_emb_proj", out);
    ctrl_conv1.collect_params("ctrl_conv1", out);
    ctrl_conv2.collect_params("ctrl_conv2", out);
    out_proj.collect_params("out_proj", out);
    return out;
}

std::vector<ParamRef> ToyControlNet::all_params() {
    std::vector<ParamRef> out = trainable_params();
    t_embed.collect_params("t_embed", out);
    pose_embed.collect_params("pose_embed", out);
    emb_proj.collect_params("emb_proj", out);
    conv1.collect_params("conv1", out);
    conv2.collect_params("conv2", out);
    conv3.collect_params("conv3", out);
    return out;
}

void ToyControlNet::zero_grad() {
    for (ParamRef& p : all_params()) std::fill(p.grad->begin(), p.grad->end(), 0.0);
}

std::vector<Image> ConditionedProvider::predict(const std::vector<Image>& z_t,
                                                const GuidanceContext& ctx) {
    require(ctx.cameras != nullptr && ctx.cameras->size() >= z_t.size(),
            "ConditionedProvider: context must carry one camera per view");
    require(ctx.condition != nullptr, "ConditionedProvider: context must carry a condition image");
    require(ctx.t >= 0, "ConditionedProvider: context must carry the timestep");
    ToyControlNet& net = *net_;
    const Tensor3 cond =
        image_to_tensor(resize_nearest(*ctx.condition, net.cond_hw, net.cond_hw));
    const CameraView& ref = (*ctx.cameras)[0];

    std::vector<Image> out;
    out.reserve(z_t.size());
    for (std::size_t k = 0; k < z_t.size(); ++k) {
        const Image& z = z_t[k];
        const Tensor3 small =
            image_to_tensor(resize_nearest(z, net.latent_hw, net.latent_hw));
        Tensor3 latent(net.latent_c, net.latent_hw, net.latent_hw);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < net.latent_hw; ++y)
                for (int x = 0; x < net.latent_hw; ++x)
                    latent.at(c, y, x) = small.at(c, y, x);
        const Mat4 rel = relative_pose(ref, (*ctx.cameras)[k]);
        const Tensor3 pred = net.predict_controlled(latent, cond, rel, ctx.t);
        Tensor3 rgb(3, net.latent_hw, net.latent_hw);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < net.latent_hw; ++y)
                for (int x = 0; x < net.latent_hw; ++x) rgb.at(c, y, x) = pred.at(c, y, x);
        out.push_back(resize_nearest(tensor_to_image(rgb), z.height(), z.width()));
    }
    return out;
}

std::unique_ptr<NoisePredictor> make_conditioned_provider(std::shared_ptr<ToyControlNet> net) {
    return std::make_unique<ConditionedProvider>(std::move(net));
}

} // namespace gsopt
