#include "foley/adapters.hpp"

#include <algorithm>
#include <cmath>

namespace foley {

SemanticAdapter::SemanticAdapter(ParamStore& ps, int frame_dim, int d_ctx, int n_tokens,
                                 int n_attn_layers, Rng& rng)
    : n_tokens_(n_tokens), d_ctx_(d_ctx) {
    fe1_ = make_linear(ps, "semantic.fe1", frame_dim, 64, rng);
    fe2_ = make_linear(ps, "semantic.fe2", 64, d_ctx, rng);
    proj1_ = make_linear(ps, "semantic.proj1", d_ctx, 2 * d_ctx, rng);
    proj2_ = make_linear(ps, "semantic.proj2", 2 * d_ctx, n_tokens * d_ctx, rng);
    for (int i = 0; i < n_attn_layers; ++i) {
        wk_vis_.push_back(
            ps.add("semantic.attn" + std::to_string(i) + ".wk", Tensor::zeros({d_ctx, d_ctx})));
        wv_vis_.push_back(
            ps.add("semantic.attn" + std::to_string(i) + ".wv", Tensor::zeros({d_ctx, d_ctx})));
    }
}

Tensor SemanticAdapter::encode_video(const Tensor& frames) const {
    if (frames.rank() != 2 || frames.dim(0) < 1)
        throw ShapeError("video track must be [n_frames x dim], got " +
                         shape_str(frames.shape()));
    Tensor h = fe2_(silu(fe1_(frames)));          // [F, d_ctx]
    Tensor pooled = mean_axis(h, 0, true);        // [1, d_ctx]
    Tensor p = proj2_(silu(proj1_(pooled)));      // [1, n_tokens * d_ctx]
    return reshape(p, {n_tokens_, d_ctx_});
}

void SemanticAdapter::init_from_text_weights(UNet& unet) {
    auto layers = unet.attn_layers();
    if (layers.size() != wk_vis_.size())
        throw ValueError("adapter was built for " + std::to_string(wk_vis_.size()) +
                         " attention layers, backbone has " + std::to_string(layers.size()));
    for (size_t i = 0; i < layers.size(); ++i) {
        std::copy(layers[i]->wk.data(), layers[i]->wk.data() + layers[i]->wk.numel(),
                  wk_vis_[i].data());
        std::copy(layers[i]->wv.data(), layers[i]->wv.data() + layers[i]->wv.numel(),
                  wv_vis_[i].data());
    }
}

void SemanticAdapter::attach(UNet& unet) const {
    auto layers = unet.attn_layers();
    if (layers.size() != wk_vis_.size())
        throw ValueError("adapter/backbone attention layer count mismatch");
    for (size_t i = 0; i < layers.size(); ++i) {
        layers[i]->wk_vis = wk_vis_[i];
        layers[i]->wv_vis = wv_vis_[i];
    }
}

void SemanticAdapter::detach(UNet& unet) {
    for (CrossAttnLayer* l : unet.attn_layers()) {
        l->wk_vis = Tensor();
        l->wv_vis = Tensor();
    }
}

TemporalAdapter::TemporalAdapter(ParamStore& ps, const UNetConfig& cfg, Rng& rng)
    : ps_(&ps), cfg_(cfg) {
    const int c0 = cfg.channels[0], c1 = cfg.channels[1], c2 = cfg.channels[2];
    enc_ = make_unet_encoder(ps, "temporal.", cfg, rng);
    hint1_ = make_conv2d(ps, "temporal.hint1", 1, 16, 3, 1, 1, rng);
    hint2_ = make_conv2d(ps, "temporal.hint2", 16, c0, 3, 1, 1, rng);
    zc0_ = make_conv2d(ps, "temporal.zc0", c0, c0, 1, 1, 0, rng, true);
    zc1_ = make_conv2d(ps, "temporal.zc1", c1, c1, 1, 1, 0, rng, true);
    zc2_ = make_conv2d(ps, "temporal.zc2", c2, c2, 1, 1, 0, rng, true);
    zcm_ = make_conv2d(ps, "temporal.zcm", c2, c2, 1, 1, 0, rng, true);
}

void TemporalAdapter::init_from_backbone(const ParamStore& backbone) {
    const std::string dst_prefix = "temporal.";
    for (const auto& [name, t] : ps_->items()) {
        if (name.rfind(dst_prefix, 0) != 0) continue;
        const Tensor* src = backbone.find("unet." + name.substr(dst_prefix.size()));
        if (!src) continue;  // hint and output convolutions keep their init
        if (src->shape() != t.shape())
            throw ShapeError("backbone tensor for " + name + " has shape " +
                             shape_str(src->shape()) + ", expected " + shape_str(t.shape()));
        Tensor dst = t;
        std::copy(src->data(), src->data() + src->numel(), dst.data());
    }
}

TemporalResiduals TemporalAdapter::forward(const Tensor& z, const std::vector<int>& t,
                                           const CtxBatch& ctx, const Tensor& mask) const {
    if (mask.rank() != 2 || mask.dim(0) != z.dim(0) || mask.dim(1) != cfg_.latent_w)
        throw ShapeError("mask must be [N x " + std::to_string(cfg_.latent_w) + "], got " +
                         shape_str(mask.shape()));
    const int n = z.dim(0);
    // tile the mask across the frequency axis to a 1-channel image
    Tensor plane = add(Tensor::zeros({n, 1, cfg_.latent_h, cfg_.latent_w}),
                       reshape(mask, {n, 1, 1, cfg_.latent_w}));
    Tensor hint = hint2_(silu(hint1_(plane)));
    Tensor temb = enc_.time_embed(t);
    EncoderFeatures f = enc_.forward(z, temb, ctx, &hint);
    return {zc0_(f.skip0), zc1_(f.skip1), zc2_(f.skip2), zcm_(f.mid)};
}

TimestampDetector::TimestampDetector(ParamStore& ps, int frame_dim, int hidden, Rng& rng) {
    c1_ = make_conv1d(ps, "detector.c1", frame_dim, hidden, 5, 1, 2, rng);
    c2_ = make_conv1d(ps, "detector.c2", hidden, hidden, 5, 1, 2, rng);
    c3_ = make_conv1d(ps, "detector.c3", hidden, hidden, 5, 1, 2, rng);
    head_ = make_conv1d(ps, "detector.head", hidden, 1, 5, 1, 2, rng);
}

Tensor TimestampDetector::forward(const Tensor& frames, int out_len) const {
    if (frames.rank() != 3 || frames.dim(1) < 1)
        throw ShapeError("detector input must be [N x n_frames x dim], got " +
                         shape_str(frames.shape()));
    const int n = frames.dim(0), f = frames.dim(1);
    Tensor h = transpose_last2(frames);  // [N, dim, F]
    h = silu(c1_(h));
    h = silu(c2_(h));
    h = silu(c3_(h));
    Tensor probs = sigmoid(reshape(head_(h), {n, f}));
    if (f == out_len) return probs;
    std::vector<int> idx(static_cast<size_t>(out_len));
    for (int i = 0; i < out_len; ++i)
        idx[static_cast<size_t>(i)] = std::min(
            f - 1, static_cast<int>((static_cast<int64_t>(i) * 2 + 1) * f / (2 * out_len)));
    return gather_lastdim(probs, idx);
}

Tensor bce_loss(const Tensor& y, const Tensor& y_hat) {
    if (y.shape() != y_hat.shape())
        throw ShapeError("label shape " + shape_str(y.shape()) + " does not match predictions " +
                         shape_str(y_hat.shape()));
    Tensor p = clamp(y_hat, 1e-7f, 1.0f - 1e-7f);
    Tensor pos = mul(y, log_t(p));
    Tensor neg = mul(add_scalar(mul_scalar(y, -1.0f), 1.0f),
                     log_t(add_scalar(mul_scalar(p, -1.0f), 1.0f)));
    return mul_scalar(mean(add(pos, neg)), -1.0f);
}

Tensor binarize(const Tensor& probs, float threshold) {
    std::vector<float> out(static_cast<size_t>(probs.numel()));
    const float* p = probs.data();
    for (int64_t i = 0; i < probs.numel(); ++i) out[static_cast<size_t>(i)] = p[i] >= threshold ? 1.0f : 0.0f;
    return Tensor::from(probs.shape(), std::move(out));
}

}  // namespace foley
