#pragma once

#include <vector>

#include "foley/nn.hpp"
#include "foley/tensor.hpp"
#include "foley/unet.hpp"

namespace foley {

// Video branch: per-frame MLP, mean pooling over frames, projection to a
// fixed number of context tokens, plus per-attention-layer key/value
// projections that start as copies of the text ones.
class SemanticAdapter {
  public:
    SemanticAdapter(ParamStore& ps, int frame_dim, int d_ctx, int n_tokens, int n_attn_layers,
                    Rng& rng);

    // frames [n_frames x frame_dim] -> [n_tokens x d_ctx]
    Tensor encode_video(const Tensor& frames) const;

    void init_from_text_weights(UNet& unet);
    // points the UNet's visual projections at this adapter's tensors
    void attach(UNet& unet) const;
    static void detach(UNet& unet);

    const std::vector<Tensor>& visual_keys() const { return wk_vis_; }
    const std::vector<Tensor>& visual_values() const { return wv_vis_; }

  private:
    int n_tokens_, d_ctx_;
    Linear fe1_, fe2_;
    Linear proj1_, proj2_;
    std::vector<Tensor> wk_vis_, wv_vis_;
};

// Mask-conditioned copy of the denoiser encoder with zero-initialized output
// convolutions, producing additive residuals for the decoder skips.
class TemporalAdapter {
  public:
    TemporalAdapter(ParamStore& ps, const UNetConfig& cfg, Rng& rng);

    // copies every encoder tensor from the backbone store ("unet.<x>" ->
    // "temporal.<x>"); hint and output convolutions keep their init
    void init_from_backbone(const ParamStore& backbone);

    // mask [N x latent_w] in [0,1]
    TemporalResiduals forward(const Tensor& z, const std::vector<int>& t, const CtxBatch& ctx,
                              const Tensor& mask) const;

  private:
    ParamStore* ps_ = nullptr;
    UNetConfig cfg_;
    UNetEncoder enc_;
    Conv2d hint1_, hint2_;
    Conv2d zc0_, zc1_, zc2_, zcm_;
};

// Per-frame sound/silence classifier over video features.
class TimestampDetector {
  public:
    TimestampDetector(ParamStore& ps, int frame_dim, int hidden, Rng& rng);

    // frames [N x n_frames x frame_dim] -> probabilities [N x out_len],
    // strictly inside (0, 1), nearest-resampled along time
    Tensor forward(const Tensor& frames, int out_len) const;

  private:
    Conv1d c1_, c2_, c3_, head_;
};

// Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7].
Tensor bce_loss(const Tensor& y, const Tensor& y_hat);

Tensor binarize(const Tensor& probs, float threshold = 0.5f);

}  // namespace foley
