#include "foley/unet.hpp"

#include <cmath>

namespace foley {

Tensor ResBlock::operator()(const Tensor& x, const Tensor& temb) const {
    Tensor h = conv1(silu(gn1(x)));
    Tensor tb = tproj(silu(temb));  // [N, cout]
    h = add(h, reshape(tb, {tb.dim(0), tb.dim(1), 1, 1}));
    h = conv2(silu(gn2(h)));
    return add(h, has_skip ? skip(x) : x);
}

ResBlock make_resblock(ParamStore& ps, const std::string& name, int cin, int cout, int t_dim,
                       int groups, Rng& rng) {
    ResBlock r;
    r.gn1 = make_group_norm(ps, name + ".gn1", cin, groups);
    r.conv1 = make_conv2d(ps, name + ".conv1", cin, cout, 3, 1, 1, rng);
    r.tproj = make_linear(ps, name + ".tproj", t_dim, cout, rng);
    r.gn2 = make_group_norm(ps, name + ".gn2", cout, groups);
    r.conv2 = make_conv2d(ps, name + ".conv2", cout, cout, 3, 1, 1, rng);
    r.has_skip = cin != cout;
    if (r.has_skip) r.skip = make_conv2d(ps, name + ".skip", cin, cout, 1, 1, 0, rng);
    return r;
}

Tensor CrossAttnLayer::mix(const Tensor& q, const Tensor& ctx_txt, const Tensor* ctx_vis,
                           float lambda) const {
    const int d = wk.dim(1);
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    Tensor k = matmul(ctx_txt, wk);
    Tensor v = matmul(ctx_txt, wv);
    Tensor attn = matmul(softmax(mul_scalar(matmul_nt(q, k), scale), -1), v);
    if (ctx_vis != nullptr && lambda != 0.0f) {
        if (!wk_vis.defined())
            throw ValueError("visual context given but no visual projections are attached");
        Tensor kv = matmul(*ctx_vis, wk_vis);
        Tensor vv = matmul(*ctx_vis, wv_vis);
        Tensor attn_vis = matmul(softmax(mul_scalar(matmul_nt(q, kv), scale), -1), vv);
        attn = add(attn, mul_scalar(attn_vis, lambda));
    }
    return attn;
}

Tensor CrossAttnLayer::operator()(const Tensor& x, const CtxBatch& ctx) const {
    const int n = x.dim(0);
    if (static_cast<int>(ctx.txt.size()) != n)
        throw ShapeError("expected " + std::to_string(n) + " text contexts, got " +
                         std::to_string(ctx.txt.size()));
    if (!ctx.vis.empty() && static_cast<int>(ctx.vis.size()) != n)
        throw ShapeError("visual contexts must be absent or one per batch item");
    const int d_ctx = wk.dim(0);
    for (const Tensor& t : ctx.txt)
        if (t.rank() != 2 || t.dim(1) != d_ctx)
            throw ShapeError("context width " + shape_str(t.shape()) + " does not match d_ctx " +
                             std::to_string(d_ctx));

    Tensor flat = flatten_spatial(norm(x));  // [N, P, C]
    const int p = flat.dim(1), c = flat.dim(2);
    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Tensor qi = matmul(reshape(slice(flat, 0, i, i + 1), {p, c}), wq);
        const Tensor* vis = ctx.vis.empty() ? nullptr : &ctx.vis[static_cast<size_t>(i)];
        Tensor out = matmul(mix(qi, ctx.txt[static_cast<size_t>(i)], vis, ctx.lambda), wo);
        rows.push_back(reshape(out, {1, p, c}));
    }
    return add(x, unflatten_spatial(cat(rows, 0), x.dim(2), x.dim(3)));
}

CrossAttnLayer make_cross_attn(ParamStore& ps, const std::string& name, int channels, int d_ctx,
                               int groups, Rng& rng) {
    CrossAttnLayer a;
    a.norm = make_group_norm(ps, name + ".norm", channels, groups);
    const float sq = std::sqrt(1.0f / static_cast<float>(channels));
    const float sc = std::sqrt(1.0f / static_cast<float>(d_ctx));
    a.wq = ps.add(name + ".wq", Tensor::randn({channels, d_ctx}, rng, sq));
    a.wk = ps.add(name + ".wk", Tensor::randn({d_ctx, d_ctx}, rng, sc));
    a.wv = ps.add(name + ".wv", Tensor::randn({d_ctx, d_ctx}, rng, sc));
    a.wo = ps.add(name + ".wo", Tensor::randn({d_ctx, channels}, rng, sc * 0.2f));
    return a;
}

Tensor UNetEncoder::time_embed(const std::vector<int>& t_ids) const {
    const int n = static_cast<int>(t_ids.size());
    const int sin_dim = cfg.t_dim / 2;
    const int half = sin_dim / 2;
    std::vector<float> d(static_cast<size_t>(n) * sin_dim);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < half; ++k) {
            const double freq =
                std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
            const double arg = static_cast<double>(t_ids[static_cast<size_t>(i)]) * freq;
            d[static_cast<size_t>(i) * sin_dim + k] = static_cast<float>(std::sin(arg));
            d[static_cast<size_t>(i) * sin_dim + half + k] = static_cast<float>(std::cos(arg));
        }
    }
    Tensor sine = Tensor::from({n, sin_dim}, std::move(d));
    return tlin2(silu(tlin1(sine)));
}

EncoderFeatures UNetEncoder::forward(const Tensor& z, const Tensor& temb, const CtxBatch& ctx,
                                     const Tensor* extra) const {
    Tensor h = in_conv(z);
    if (extra) h = add(h, *extra);
    EncoderFeatures f;
    f.skip0 = enc0(h, temb);
    h = down0(f.skip0);
    f.skip1 = attn1(enc1(h, temb), ctx);
    h = down1(f.skip1);
    f.skip2 = attn2(enc2(h, temb), ctx);
    h = mid1(f.skip2, temb);
    h = attn_mid(h, ctx);
    f.mid = mid2(h, temb);
    return f;
}

UNetEncoder make_unet_encoder(ParamStore& ps, const std::string& prefix, const UNetConfig& cfg,
                              Rng& rng) {
    UNetEncoder e;
    e.cfg = cfg;
    const int c0 = cfg.channels[0], c1 = cfg.channels[1], c2 = cfg.channels[2];
    const int sin_dim = cfg.t_dim / 2;
    e.tlin1 = make_linear(ps, prefix + "t1", sin_dim, cfg.t_dim, rng);
    e.tlin2 = make_linear(ps, prefix + "t2", cfg.t_dim, cfg.t_dim, rng);
    e.in_conv = make_conv2d(ps, prefix + "in_conv", cfg.in_channels, c0, 3, 1, 1, rng);
    e.enc0 = make_resblock(ps, prefix + "enc0", c0, c0, cfg.t_dim, cfg.groups, rng);
    e.down0 = make_conv2d(ps, prefix + "down0", c0, c1, 3, 2, 1, rng);
    e.enc1 = make_resblock(ps, prefix + "enc1", c1, c1, cfg.t_dim, cfg.groups, rng);
    e.attn1 = make_cross_attn(ps, prefix + "attn1", c1, cfg.d_ctx, cfg.groups, rng);
    e.down1 = make_conv2d(ps, prefix + "down1", c1, c2, 3, 2, 1, rng);
    e.enc2 = make_resblock(ps, prefix + "enc2", c2, c2, cfg.t_dim, cfg.groups, rng);
    e.attn2 = make_cross_attn(ps, prefix + "attn2", c2, cfg.d_ctx, cfg.groups, rng);
    e.mid1 = make_resblock(ps, prefix + "mid1", c2, c2, cfg.t_dim, cfg.groups, rng);
    e.attn_mid = make_cross_attn(ps, prefix + "attn_mid", c2, cfg.d_ctx, cfg.groups, rng);
    e.mid2 = make_resblock(ps, prefix + "mid2", c2, c2, cfg.t_dim, cfg.groups, rng);
    return e;
}

UNet::UNet(ParamStore& ps, const UNetConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int c0 = cfg.channels[0], c1 = cfg.channels[1], c2 = cfg.channels[2];
    enc_ = make_unet_encoder(ps, "unet.", cfg, rng);
    dec2_ = make_resblock(ps, "unet.dec2", c2 + c2, c2, cfg.t_dim, cfg.groups, rng);
    up1_ = make_conv2d(ps, "unet.up1", c2, c1, 3, 1, 1, rng);
    dec1_ = make_resblock(ps, "unet.dec1", c1 + c1, c1, cfg.t_dim, cfg.groups, rng);
    up0_ = make_conv2d(ps, "unet.up0", c1, c0, 3, 1, 1, rng);
    dec0_ = make_resblock(ps, "unet.dec0", c0 + c0, c0, cfg.t_dim, cfg.groups, rng);
    out_gn_ = make_group_norm(ps, "unet.out_gn", c0, cfg.groups);
    // zeroed head so training starts from a null prediction
    out_conv_ = make_conv2d(ps, "unet.out_conv", c0, cfg.in_channels, 3, 1, 1, rng, true);
}

std::vector<CrossAttnLayer*> UNet::attn_layers() {
    return {&enc_.attn1, &enc_.attn2, &enc_.attn_mid};
}

Tensor UNet::forward(const Tensor& z, const std::vector<int>& t, const CtxBatch& ctx,
                     const TemporalResiduals* res) const {
    if (z.rank() != 4 || z.dim(1) != cfg_.in_channels)
        throw ShapeError("denoiser input must be [N," + std::to_string(cfg_.in_channels) +
                         ",H,W], got " + shape_str(z.shape()));
    if (static_cast<int>(t.size()) != z.dim(0))
        throw ValueError("need one timestep per batch item");
    Tensor temb = enc_.time_embed(t);
    EncoderFeatures f = enc_.forward(z, temb, ctx);
    Tensor skip0 = f.skip0, skip1 = f.skip1, skip2 = f.skip2, mid = f.mid;
    if (res) {
        skip0 = add(skip0, res->r0);
        skip1 = add(skip1, res->r1);
        skip2 = add(skip2, res->r2);
        mid = add(mid, res->rmid);
    }
    Tensor h = dec2_(cat(std::vector<Tensor>{mid, skip2}, 1), temb);
    h = up1_(upsample_nearest2x(h));
    h = dec1_(cat(std::vector<Tensor>{h, skip1}, 1), temb);
    h = up0_(upsample_nearest2x(h));
    h = dec0_(cat(std::vector<Tensor>{h, skip0}, 1), temb);
    return out_conv_(silu(out_gn_(h)));
}

}  // namespace foley
