#pragma once

#include <optional>
#include <vector>

#include "foley/nn.hpp"
#include "foley/tensor.hpp"

namespace foley {

struct UNetConfig {
    int in_channels = 4;
    std::vector<int> channels = {64, 128, 256};
    int d_ctx = 128;
    int t_dim = 256;
    int groups = 8;
    int latent_h = 16;
    int latent_w = 64;
};

// Per-item conditioning for one batch. txt is required (use the embedder's
// null context for unconditional items); vis is empty or one entry per item.
struct CtxBatch {
    std::vector<Tensor> txt;
    std::vector<Tensor> vis;
    float lambda = 0.0f;
};

// Residual-connected two-conv block with a per-block projection of the
// timestep embedding.
struct ResBlock {
    GroupNorm gn1, gn2;
    Conv2d conv1, conv2;
    Linear tproj;
    Conv2d skip;
    bool has_skip = false;
    Tensor operator()(const Tensor& x, const Tensor& temb) const;
};
ResBlock make_resblock(ParamStore& ps, const std::string& name, int cin, int cout, int t_dim,
                       int groups, Rng& rng);

// Single-head cross-attention over flattened spatial positions. The visual
// branch shares Q and the output projection with the text branch and
// contributes lambda * softmax(Q Kv^T / sqrt(d)) Vv on top of the text
// attention; it is skipped entirely when lambda == 0 or no visual context or
// weights are present.
struct CrossAttnLayer {
    GroupNorm norm;
    Tensor wq;  // [C, d]
    Tensor wk;  // [d_ctx, d]
    Tensor wv;  // [d_ctx, d]
    Tensor wo;  // [d, C]
    Tensor wk_vis, wv_vis;  // attached by the semantic adapter; may be undefined

    // attention mix for pre-projected queries: [P, d]
    Tensor mix(const Tensor& q, const Tensor& ctx_txt, const Tensor* ctx_vis, float lambda) const;
    // full block: x [N,C,H,W] -> x + Wo(mix), per-item contexts
    Tensor operator()(const Tensor& x, const CtxBatch& ctx) const;
};
CrossAttnLayer make_cross_attn(ParamStore& ps, const std::string& name, int channels, int d_ctx,
                               int groups, Rng& rng);

struct EncoderFeatures {
    Tensor skip0;  // [N, c0, H, W]
    Tensor skip1;  // [N, c1, H/2, W/2]
    Tensor skip2;  // [N, c2, H/4, W/4]
    Tensor mid;    // [N, c2, H/4, W/4]
};

// Downsampling half of the denoiser, reused verbatim by the temporal adapter.
struct UNetEncoder {
    UNetConfig cfg;
    Linear tlin1, tlin2;
    Conv2d in_conv;
    ResBlock enc0;
    Conv2d down0;
    ResBlock enc1;
    CrossAttnLayer attn1;
    Conv2d down1;
    ResBlock enc2;
    CrossAttnLayer attn2;
    ResBlock mid1;
    CrossAttnLayer attn_mid;
    ResBlock mid2;

    Tensor time_embed(const std::vector<int>& t_ids) const;
    // extra, when given, is added right after in_conv (hint injection point)
    EncoderFeatures forward(const Tensor& z, const Tensor& temb, const CtxBatch& ctx,
                            const Tensor* extra = nullptr) const;
};
UNetEncoder make_unet_encoder(ParamStore& ps, const std::string& prefix, const UNetConfig& cfg,
                              Rng& rng);

struct TemporalResiduals {
    Tensor r0, r1, r2, rmid;
};

class UNet {
  public:
    UNet(ParamStore& ps, const UNetConfig& cfg, Rng& rng);

    // z [N, in, H, W], one timestep and one text context per item.
    Tensor forward(const Tensor& z, const std::vector<int>& t, const CtxBatch& ctx,
                   const TemporalResiduals* res = nullptr) const;

    UNetEncoder& encoder() { return enc_; }
    const UNetConfig& config() const { return cfg_; }
    // cross-attention layers in encoder order: attn1, attn2, attn_mid
    std::vector<CrossAttnLayer*> attn_layers();

  private:
    UNetConfig cfg_;
    UNetEncoder enc_;
    ResBlock dec2_, dec1_, dec0_;
    Conv2d up1_, up0_;
    GroupNorm out_gn_;
    Conv2d out_conv_;
};

}  // namespace foley
