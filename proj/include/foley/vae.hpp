#pragma once

#include <utility>

#include "foley/nn.hpp"
#include "foley/tensor.hpp"

namespace foley {

// Small convolutional VAE compressing [N,1,64,256] mels to [N,4,16,64]
// latents (4x per axis).
class Vae {
  public:
    Vae(ParamStore& ps, int base_channels, int latent_channels, int groups, Rng& rng);

    std::pair<Tensor, Tensor> encode(const Tensor& mel) const;  // (mu, logvar)
    Tensor decode(const Tensor& z) const;                       // clamped to [-1, 1]
    // unclamped variant used by the reconstruction loss, where a hard clamp
    // would zero gradients for saturated pixels
    Tensor decode_raw(const Tensor& z) const;

    int latent_channels() const { return latent_channels_; }

  private:
    int latent_channels_;
    Conv2d e1_, e2_, e3_, e4_;
    GroupNorm en1_, en2_, en3_;
    Conv2d d1_, d2_, d3_, d4_;
    GroupNorm dn1_, dn2_, dn3_;
};

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& eps);

// MSE(recon, mel) + kl_weight * mean(0.5 (mu^2 + e^logvar - 1 - logvar))
Tensor vae_loss(const Tensor& mel, const Tensor& recon, const Tensor& mu, const Tensor& logvar,
                float kl_weight);

}  // namespace foley
