#include "foley/vae.hpp"

namespace foley {

Vae::Vae(ParamStore& ps, int base_channels, int latent_channels, int groups, Rng& rng)
    : latent_channels_(latent_channels) {
    const int b = base_channels;
    e1_ = make_conv2d(ps, "vae.e1", 1, b, 3, 2, 1, rng);
    en1_ = make_group_norm(ps, "vae.en1", b, groups);
    e2_ = make_conv2d(ps, "vae.e2", b, 2 * b, 3, 2, 1, rng);
    en2_ = make_group_norm(ps, "vae.en2", 2 * b, groups);
    e3_ = make_conv2d(ps, "vae.e3", 2 * b, 2 * b, 3, 1, 1, rng);
    en3_ = make_group_norm(ps, "vae.en3", 2 * b, groups);
    e4_ = make_conv2d(ps, "vae.e4", 2 * b, 2 * latent_channels, 3, 1, 1, rng);

    d1_ = make_conv2d(ps, "vae.d1", latent_channels, 2 * b, 3, 1, 1, rng);
    dn1_ = make_group_norm(ps, "vae.dn1", 2 * b, groups);
    d2_ = make_conv2d(ps, "vae.d2", 2 * b, b, 3, 1, 1, rng);
    dn2_ = make_group_norm(ps, "vae.dn2", b, groups);
    d3_ = make_conv2d(ps, "vae.d3", b, b, 3, 1, 1, rng);
    dn3_ = make_group_norm(ps, "vae.dn3", b, groups);
    d4_ = make_conv2d(ps, "vae.d4", b, 1, 3, 1, 1, rng);
}

std::pair<Tensor, Tensor> Vae::encode(const Tensor& mel) const {
    if (mel.rank() != 4 || mel.dim(1) != 1)
        throw ShapeError("encoder input must be [N,1,H,W], got " + shape_str(mel.shape()));
    Tensor h = silu(en1_(e1_(mel)));
    h = silu(en2_(e2_(h)));
    h = silu(en3_(e3_(h)));
    h = e4_(h);
    const int c = latent_channels_;
    return {slice(h, 1, 0, c), slice(h, 1, c, 2 * c)};
}

Tensor Vae::decode_raw(const Tensor& z) const {
    if (z.rank() != 4 || z.dim(1) != latent_channels_)
        throw ShapeError("decoder input must be [N," + std::to_string(latent_channels_) +
                         ",h,w], got " + shape_str(z.shape()));
    Tensor h = silu(dn1_(d1_(z)));
    h = silu(dn2_(d2_(upsample_nearest2x(h))));
    h = silu(dn3_(d3_(upsample_nearest2x(h))));
    return d4_(h);
}

Tensor Vae::decode(const Tensor& z) const { return clamp(decode_raw(z), -1.0f, 1.0f); }

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& eps) {
    return add(mu, mul(exp_t(mul_scalar(logvar, 0.5f)), eps));
}

Tensor vae_loss(const Tensor& mel, const Tensor& recon, const Tensor& mu, const Tensor& logvar,
                float kl_weight) {
    Tensor kl = mul_scalar(
        sub(add(square(mu), exp_t(logvar)), add_scalar(logvar, 1.0f)), 0.5f);
    return add(mse(recon, mel), mul_scalar(mean(kl), kl_weight));
}

}  // namespace foley
