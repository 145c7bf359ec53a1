#include "foley/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <unordered_map>

#include "foley/adapters.hpp"
#include "foley/audio.hpp"
#include "foley/checkpoint.hpp"
#include "foley/dataset.hpp"
#include "foley/image.hpp"
#include "foley/metrics.hpp"
#include "foley/optim.hpp"
#include "foley/sampler.hpp"
#include "foley/schedule.hpp"
#include "foley/text_embed.hpp"
#include "foley/unet.hpp"
#include "foley/vae.hpp"
#include "foley/wav.hpp"

namespace fs = std::filesystem;

namespace foley {

namespace {

constexpr const char* kHashKey = "__config_hash";
constexpr int kLossWindow = 50;
constexpr int kSemanticTokens = 4;
constexpr int kEvalBatch = 8;

// ---- config plumbing ----

struct Paths {
    std::string data, ckpt, out;
};

Paths paths_from(const Config& c) {
    return {c.get_str("paths.data"), c.get_str("paths.ckpt"), c.get_str("paths.out")};
}

AudioConfig audio_from(const Config& c) {
    AudioConfig a;
    a.sample_rate = c.get_int("audio.sample_rate");
    a.n_fft = c.get_int("audio.n_fft");
    a.hop = c.get_int("audio.hop");
    a.n_mels = c.get_int("audio.n_mels");
    a.mel_frames = c.get_int("audio.mel_frames");
    a.fmin = static_cast<float>(c.get_num("audio.fmin"));
    a.fmax = static_cast<float>(c.get_num("audio.fmax"));
    a.griffin_lim_iters = c.get_int("audio.griffin_lim_iters");
    a.clip_samples = static_cast<int>(std::lround(c.get_num("audio.clip_seconds") * a.sample_rate));
    return a;
}

DatasetConfig dataset_from(const Config& c) {
    DatasetConfig d;
    d.sample_rate = c.get_int("audio.sample_rate");
    d.clip_samples = static_cast<int>(std::lround(c.get_num("audio.clip_seconds") * d.sample_rate));
    d.n_frames = c.get_int("dataset.n_frames");
    d.frame_dim = c.get_int("dataset.frame_dim");
    d.mask_len = c.get_int("audio.mel_frames") / 4;
    return d;
}

UNetConfig unet_from(const Config& c) {
    UNetConfig u;
    u.in_channels = c.get_int("vae.latent_channels");
    u.channels = c.get_int_list("unet.channels");
    u.d_ctx = c.get_int("unet.d_ctx");
    u.t_dim = c.get_int("unet.t_dim");
    u.groups = c.get_int("unet.groups");
    u.latent_h = c.get_int("audio.n_mels") / 4;
    u.latent_w = c.get_int("audio.mel_frames") / 4;
    return u;
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Architecture-relevant subtree only, so evaluation-time flag overrides do not
// trip the checkpoint compatibility warning.
// Keys that determine tensor shapes or the diffusion process itself; training
// hyperparameters deliberately stay out so a checkpoint trained with, say, a
// different step count still loads without complaint.
uint64_t model_hash(const Config& c) {
    static constexpr const char* kArchKeys[] = {
        "audio.sample_rate", "audio.clip_seconds", "audio.n_fft",     "audio.hop",
        "audio.n_mels",      "audio.mel_frames",   "audio.fmin",      "audio.fmax",
        "dataset.n_frames",  "dataset.frame_dim",  "vae.base_channels",
        "vae.latent_channels", "schedule.T",       "schedule.beta_start",
        "schedule.beta_end", "unet.channels",      "unet.d_ctx",      "unet.t_dim",
        "unet.groups",       "text.max_len",       "detector.hidden",
    };
    nlohmann::json sub;
    for (const char* key : kArchKeys) {
        const std::string k(key);
        const auto dot = k.find('.');
        sub[k] = c.json().at(k.substr(0, dot)).at(k.substr(dot + 1));
    }
    return fnv1a(sub.dump());
}

Tensor hash_tensor(uint64_t h) {
    std::vector<float> v(2);
    const uint32_t lo = static_cast<uint32_t>(h & 0xffffffffULL);
    const uint32_t hi = static_cast<uint32_t>(h >> 32);
    std::memcpy(&v[0], &lo, 4);
    std::memcpy(&v[1], &hi, 4);
    return Tensor::from({2}, std::move(v));
}

std::optional<uint64_t> hash_of(const std::vector<std::pair<std::string, Tensor>>& entries) {
    const Tensor* t = find_entry(entries, kHashKey);
    if (!t || t->numel() != 2) return std::nullopt;
    uint32_t lo = 0, hi = 0;
    std::memcpy(&lo, t->data(), 4);
    std::memcpy(&hi, t->data() + 1, 4);
    return (static_cast<uint64_t>(hi) << 32) | lo;
}

void save_stage(const std::string& path, const ParamStore& ps, const Config& cfg,
                std::vector<std::pair<std::string, Tensor>> extras = {}) {
    fs::create_directories(fs::path(path).parent_path());
    auto entries = ps.items();
    for (auto& e : extras) entries.push_back(std::move(e));
    entries.emplace_back(kHashKey, hash_tensor(model_hash(cfg)));
    save_checkpoint(path, entries);
}

std::vector<std::pair<std::string, Tensor>> load_stage(const std::string& path, const Config& cfg,
                                                       const char* producer) {
    if (!fs::exists(path))
        throw MissingPrerequisiteError("checkpoint " + path + " not found; run '" +
                                       std::string(producer) + "' first");
    auto entries = load_checkpoint(path);
    if (auto h = hash_of(entries); h && *h != model_hash(cfg))
        std::cerr << "warning: " << path
                  << " was trained under a different model config; proceeding\n";
    return entries;
}

// ---- model container ----

struct Models {
    Config cfg;
    Paths paths;
    AudioConfig audio;
    DatasetConfig dcfg;
    UNetConfig ucfg;
    NoiseSchedule sched;
    uint64_t seed = 0;

    ParamStore vae_ps;
    std::optional<Vae> vae;
    float latent_scale = 1.0f;

    ParamStore unet_ps;
    std::optional<UNet> unet;
    std::optional<TextEmbedder> text;

    ParamStore sem_ps;
    std::optional<SemanticAdapter> sem;

    ParamStore det_ps;
    std::optional<TimestampDetector> det;

    ParamStore tmp_ps;
    std::optional<TemporalAdapter> tmp;

    ParamStore clf_ps;
    std::optional<AudioClassifier> clf;

    std::string ckpt(const char* name) const {
        return (fs::path(paths.ckpt) / name).string();
    }
};

Models make_models(const Config& cfg) {
    Models m;
    m.cfg = cfg;
    m.paths = paths_from(cfg);
    m.audio = audio_from(cfg);
    m.dcfg = dataset_from(cfg);
    m.ucfg = unet_from(cfg);
    m.sched = make_schedule(cfg.get_int("schedule.T"), cfg.get_num("schedule.beta_start"),
                            cfg.get_num("schedule.beta_end"));
    m.seed = static_cast<uint64_t>(cfg.get_int("seed"));
    return m;
}

void build_vae(Models& m) {
    Rng r = Rng(m.seed).fork(11);
    m.vae.emplace(m.vae_ps, m.cfg.get_int("vae.base_channels"),
                  m.cfg.get_int("vae.latent_channels"), m.cfg.get_int("unet.groups"), r);
}

void build_backbone(Models& m) {
    Rng ru = Rng(m.seed).fork(21);
    m.unet.emplace(m.unet_ps, m.ucfg, ru);
    Rng rt = Rng(m.seed).fork(22);
    m.text.emplace(m.unet_ps, m.ucfg.d_ctx, m.cfg.get_int("text.max_len"), rt);
}

void load_vae(Models& m) {
    build_vae(m);
    auto e = load_stage(m.ckpt("vae.ntc"), m.cfg, "train-vae");
    m.vae_ps.load(e);
    if (const Tensor* s = find_entry(e, "latent_scale"); s && s->numel() == 1)
        m.latent_scale = s->data()[0];
    m.vae_ps.freeze();
}

void load_backbone(Models& m) {
    build_backbone(m);
    m.unet_ps.load(load_stage(m.ckpt("t2a.ntc"), m.cfg, "train-t2a"));
    m.unet_ps.freeze();
}

void build_semantic(Models& m) {
    Rng r = Rng(m.seed).fork(31);
    m.sem.emplace(m.sem_ps, m.dcfg.frame_dim, m.ucfg.d_ctx, kSemanticTokens,
                  static_cast<int>(m.unet->attn_layers().size()), r);
}

void load_semantic(Models& m) {
    build_semantic(m);
    m.sem_ps.load(load_stage(m.ckpt("semantic.ntc"), m.cfg, "train-semantic"));
    m.sem_ps.freeze();
    m.sem->attach(*m.unet);
}

void build_detector(Models& m) {
    Rng r = Rng(m.seed).fork(41);
    m.det.emplace(m.det_ps, m.dcfg.frame_dim, m.cfg.get_int("detector.hidden"), r);
}

void load_detector(Models& m) {
    build_detector(m);
    m.det_ps.load(load_stage(m.ckpt("detector.ntc"), m.cfg, "train-detector"));
    m.det_ps.freeze();
}

void build_temporal(Models& m) {
    Rng r = Rng(m.seed).fork(51);
    m.tmp.emplace(m.tmp_ps, m.ucfg, r);
}

void load_temporal(Models& m) {
    build_temporal(m);
    m.tmp_ps.load(load_stage(m.ckpt("temporal.ntc"), m.cfg, "train-temporal"));
    m.tmp_ps.freeze();
}

void build_classifier(Models& m) {
    Rng r = Rng(m.seed).fork(61);
    m.clf.emplace(m.clf_ps, n_classes(), r);
}

// ---- data plumbing ----

struct SplitData {
    std::vector<ManifestEntry> entries;
    std::vector<int> cls;
    std::vector<Tensor> videos;
    std::vector<std::vector<float>> masks;
    std::vector<std::vector<double>> onsets;  // event start times, seconds
};

SplitData load_split(const Models& m, const std::string& split, int limit, bool with_tracks) {
    const std::string manifest = (fs::path(m.paths.data) / "manifest.jsonl").string();
    if (!fs::exists(manifest))
        throw MissingPrerequisiteError("dataset manifest " + manifest +
                                       " not found; run 'gen-data' first");
    SplitData sd;
    sd.entries = manifest_for_split(read_manifest(manifest), split);
    if (limit >= 0 && static_cast<int>(sd.entries.size()) > limit) sd.entries.resize(limit);
    if (sd.entries.empty())
        throw MissingPrerequisiteError("split '" + split + "' is empty; rerun 'gen-data'");
    for (const ManifestEntry& e : sd.entries) {
        const int cls = class_index(e.cls);
        if (cls < 0) throw ValueError("manifest has unknown class '" + e.cls + "'");
        sd.cls.push_back(cls);
        std::vector<double> starts;
        for (const auto& [s, d] : e.event_times) starts.push_back(s);
        sd.onsets.push_back(std::move(starts));
        if (with_tracks) {
            LoadedSample ls = load_sample(m.paths.data, e.id, m.dcfg);
            sd.videos.push_back(ls.video);
            sd.masks.push_back(std::move(ls.mask));
        }
    }
    return sd;
}

// Mel spectrograms per manifest entry, cached as a checkpoint file keyed by id.
std::vector<Tensor> load_or_build_mels(const Models& m, const SplitData& sd,
                                       const std::string& split) {
    const std::string cache = m.ckpt(("mels_" + split + ".ntc").c_str());
    if (fs::exists(cache)) {
        auto entries = load_checkpoint(cache);
        std::unordered_map<std::string, const Tensor*> by_name;
        for (const auto& [name, t] : entries) by_name[name] = &t;
        std::vector<Tensor> mels;
        bool ok = true;
        for (const ManifestEntry& e : sd.entries) {
            auto it = by_name.find(e.id);
            if (it == by_name.end()) {
                ok = false;
                break;
            }
            mels.push_back(*it->second);
        }
        if (ok) return mels;
    }
    std::vector<Tensor> mels;
    std::vector<std::pair<std::string, Tensor>> entries;
    for (const ManifestEntry& e : sd.entries) {
        LoadedSample ls = load_sample(m.paths.data, e.id, m.dcfg);
        Tensor mel = mel_forward(ls.audio, m.audio);
        mels.push_back(mel);
        entries.emplace_back(e.id, mel);
    }
    fs::create_directories(m.paths.ckpt);
    save_checkpoint(cache, entries);
    return mels;
}

std::vector<Tensor> load_latents(const Models& m, const SplitData& sd) {
    const std::string cache = m.ckpt("latents_train.ntc");
    if (!fs::exists(cache))
        throw MissingPrerequisiteError("latent cache " + cache +
                                       " not found; run 'train-vae' first");
    auto entries = load_checkpoint(cache);
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : entries) by_name[name] = &t;
    std::vector<Tensor> latents;
    for (const ManifestEntry& e : sd.entries) {
        auto it = by_name.find(e.id);
        if (it == by_name.end())
            throw MissingPrerequisiteError("latent cache has no entry for " + e.id +
                                           "; rerun 'train-vae'");
        latents.push_back(*it->second);
    }
    return latents;
}

Tensor stack(const std::vector<Tensor>& pool, const std::vector<int>& ids) {
    Shape s = pool[static_cast<size_t>(ids[0])].shape();
    Shape out_shape = s;
    out_shape.insert(out_shape.begin(), static_cast<int>(ids.size()));
    const int64_t per = shape_numel(s);
    std::vector<float> buf(static_cast<size_t>(per) * ids.size());
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(pool[static_cast<size_t>(ids[i])].data(), per,
                    buf.data() + static_cast<int64_t>(i) * per);
    return Tensor::from(out_shape, std::move(buf));
}

Tensor stack_masks(const std::vector<std::vector<float>>& masks, const std::vector<int>& ids) {
    const int len = static_cast<int>(masks[static_cast<size_t>(ids[0])].size());
    std::vector<float> buf(ids.size() * static_cast<size_t>(len));
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(masks[static_cast<size_t>(ids[i])].data(), len, buf.data() + i * len);
    return Tensor::from({static_cast<int>(ids.size()), len}, std::move(buf));
}

std::vector<int> draw_batch(Rng& rng, int pool, int batch) {
    std::vector<int> ids(static_cast<size_t>(batch));
    for (int& id : ids) id = rng.uniform_int(pool);
    return ids;
}

// Accumulates per-step losses into fixed windows for the stage report.
struct LossWindow {
    std::vector<double> windows;
    double acc = 0.0;
    int n = 0;
    void push(double v) {
        acc += v;
        if (++n == kLossWindow) {
            windows.push_back(acc / n);
            acc = 0.0;
            n = 0;
        }
    }
    void finish() {
        if (n > 0) {
            windows.push_back(acc / n);
            acc = 0.0;
            n = 0;
        }
    }
};

struct NoiseBatch {
    Tensor z_t;
    Tensor eps;
    std::vector<int> t;
};

NoiseBatch make_noise_batch(const std::vector<Tensor>& latents, const std::vector<int>& ids,
                            const NoiseSchedule& sched, Rng& rng) {
    const Tensor& first = latents[static_cast<size_t>(ids[0])];
    const int64_t per = first.numel();
    Shape shape = first.shape();
    shape.insert(shape.begin(), static_cast<int>(ids.size()));
    NoiseBatch nb;
    nb.t.resize(ids.size());
    std::vector<float> zt(static_cast<size_t>(per) * ids.size());
    std::vector<float> ep(zt.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        const int t = rng.uniform_int(sched.T);
        nb.t[i] = t;
        const float sa = std::sqrt(sched.alpha_bar[static_cast<size_t>(t)]);
        const float sb = std::sqrt(1.0f - sched.alpha_bar[static_cast<size_t>(t)]);
        const float* src = latents[static_cast<size_t>(ids[i])].data();
        float* z = zt.data() + static_cast<int64_t>(i) * per;
        float* e = ep.data() + static_cast<int64_t>(i) * per;
        for (int64_t j = 0; j < per; ++j) {
            e[j] = static_cast<float>(rng.normal());
            z[j] = sa * src[j] + sb * e[j];
        }
    }
    nb.z_t = Tensor::from(shape, std::move(zt));
    nb.eps = Tensor::from(shape, std::move(ep));
    return nb;
}

Tensor caption_ctx(const Models& m, const std::string& caption, double drop_p, Rng& rng) {
    if (drop_p >= 1.0 || (drop_p > 0.0 && rng.bernoulli(drop_p))) return m.text->null_context();
    return m.text->encode(caption);
}

// ---- shared sampling path ----

struct SampleSpec {
    CtxBatch cond;
    CtxBatch uncond;
    CtxBatch temporal_ctx;  // text-only view of cond, used by the mask branch
    Tensor mask;            // [n x latent_w]; undefined disables the mask branch
};

Tensor run_sampler(const Models& m, const SampleSpec& spec, int steps, float scale, Rng& rng) {
    const bool with_mask = spec.mask.defined() && m.tmp.has_value();
    EpsFn eps_fn = [&](const Tensor& z, const std::vector<int>& t) {
        TemporalResiduals res;
        const TemporalResiduals* rp = nullptr;
        if (with_mask) {
            res = m.tmp->forward(z, t, spec.temporal_ctx, spec.mask);
            rp = &res;
        }
        Tensor ec, eu;
        if (scale != 0.0f) ec = m.unet->forward(z, t, spec.cond, rp);
        if (scale != 1.0f) eu = m.unet->forward(z, t, spec.uncond, rp);
        return cfg_combine(eu, ec, scale);
    };
    const int n = static_cast<int>(spec.cond.txt.size());
    return ddim_sample(m.sched, eps_fn,
                       {n, m.ucfg.in_channels, m.ucfg.latent_h, m.ucfg.latent_w}, steps, rng);
}

Tensor decode_mel(const Models& m, const Tensor& z) {
    NoGradGuard ng;
    return m.vae->decode(mul_scalar(z, 1.0f / m.latent_scale));
}

void ensure_classifier(Models& m) {
    const std::string path = m.ckpt("classifier.ntc");
    build_classifier(m);
    if (fs::exists(path)) {
        m.clf_ps.load(load_stage(path, m.cfg, "evaluate"));
        m.clf_ps.freeze();
        return;
    }
    SplitData sd = load_split(m, "train", -1, false);
    std::vector<Tensor> mels = load_or_build_mels(m, sd, "train");
    const int steps = m.cfg.get_int("classifier.steps");
    const int batch = m.cfg.get_int("classifier.batch");
    AdamWConfig oc;
    oc.lr = static_cast<float>(m.cfg.get_num("classifier.lr"));
    AdamW opt(m.clf_ps.tensors(), oc);
    Rng rng = Rng(m.seed).fork(62);
    std::cerr << "training eval classifier (" << steps << " steps)\n";
    for (int step = 0; step < steps; ++step) {
        Rng sr = rng.fork(static_cast<uint64_t>(step));
        const std::vector<int> ids = draw_batch(sr, static_cast<int>(mels.size()), batch);
        Tensor x = stack(mels, ids);
        x = reshape(x, {batch, 1, m.audio.n_mels, m.audio.mel_frames});
        std::vector<int> labels;
        for (int id : ids) labels.push_back(sd.cls[static_cast<size_t>(id)]);
        Tensor loss = cross_entropy(m.clf->logits(x), labels, 0.1f);
        loss.backward();
        opt.step();
        opt.zero_grad();
    }
    save_stage(path, m.clf_ps, m.cfg);
    m.clf_ps.freeze();
}

std::vector<int> range_ids(int lo, int hi) {
    std::vector<int> ids;
    for (int i = lo; i < hi; ++i) ids.push_back(i);
    return ids;
}

}  // namespace

// ---- stages ----

StageReport cmd_gen_data(const Config& cfg) {
    const Paths paths = paths_from(cfg);
    const DatasetConfig dcfg = dataset_from(cfg);
    auto manifest =
        make_dataset(paths.data, cfg.get_int("dataset.n_train"), cfg.get_int("dataset.n_val"),
                     cfg.get_int("dataset.n_test"), static_cast<uint64_t>(cfg.get_int("seed")),
                     dcfg);
    StageReport r;
    r.metric = static_cast<double>(manifest.size());
    return r;
}

StageReport cmd_train_vae(const Config& cfg) {
    Models m = make_models(cfg);
    SplitData sd = load_split(m, "train", -1, false);
    std::vector<Tensor> mels = load_or_build_mels(m, sd, "train");
    build_vae(m);

    const int steps = cfg.get_int("vae.steps");
    const int batch = cfg.get_int("vae.batch");
    const float klw = static_cast<float>(cfg.get_num("vae.kl_weight"));
    AdamWConfig oc;
    oc.lr = static_cast<float>(cfg.get_num("vae.lr"));
    AdamW opt(m.vae_ps.tensors(), oc);
    Rng rng = Rng(m.seed).fork(12);

    LossWindow lw;
    for (int step = 0; step < steps; ++step) {
        Rng sr = rng.fork(static_cast<uint64_t>(step));
        const std::vector<int> ids = draw_batch(sr, static_cast<int>(mels.size()), batch);
        Tensor x = reshape(stack(mels, ids), {batch, 1, m.audio.n_mels, m.audio.mel_frames});
        auto [mu, logvar] = m.vae->encode(x);
        Tensor eps = Tensor::randn(mu.shape(), sr);
        Tensor recon = m.vae->decode_raw(reparameterize(mu, logvar, eps));
        Tensor loss = vae_loss(x, recon, mu, logvar, klw);
        loss.backward();
        opt.step();
        opt.zero_grad();
        lw.push(loss.item());
    }
    lw.finish();

    // cache scaled training latents for the diffusion stages
    NoGradGuard ng;
    std::vector<Tensor> mus;
    double sq = 0.0;
    int64_t count = 0;
    for (size_t i = 0; i < mels.size(); i += 16) {
        const size_t hi = std::min(mels.size(), i + 16);
        Tensor x = reshape(stack(mels, range_ids(static_cast<int>(i), static_cast<int>(hi))),
                           {static_cast<int>(hi - i), 1, m.audio.n_mels, m.audio.mel_frames});
        Tensor mu = m.vae->encode(x).first;
        for (size_t j = 0; j < hi - i; ++j) {
            Tensor row = slice(mu, 0, static_cast<int>(j), static_cast<int>(j) + 1);
            mus.push_back(reshape(row, {mu.dim(1), mu.dim(2), mu.dim(3)}));
        }
        for (int64_t j = 0; j < mu.numel(); ++j) sq += static_cast<double>(mu.data()[j]) * mu.data()[j];
        count += mu.numel();
    }
    const float scale = static_cast<float>(1.0 / std::sqrt(std::max(sq / count, 1e-12)));
    std::vector<std::pair<std::string, Tensor>> latent_entries;
    for (size_t i = 0; i < mus.size(); ++i)
        latent_entries.emplace_back(sd.entries[i].id, mul_scalar(mus[i], scale));
    fs::create_directories(m.paths.ckpt);
    save_checkpoint(m.ckpt("latents_train.ntc"), latent_entries);
    save_stage(m.ckpt("vae.ntc"), m.vae_ps, cfg,
               {{"latent_scale", Tensor::from({1}, {scale})}});

    StageReport r;
    r.losses = lw.windows;
    r.metric = lw.windows.empty() ? 0.0 : lw.windows.back();
    return r;
}

StageReport cmd_train_t2a(const Config& cfg) {
    Models m = make_models(cfg);
    SplitData sd = load_split(m, "train", -1, false);
    std::vector<Tensor> latents = load_latents(m, sd);
    build_backbone(m);

    const int steps = cfg.get_int("t2a.steps");
    const int batch = cfg.get_int("t2a.batch");
    const double drop_p = cfg.get_num("t2a.drop_p");
    AdamWConfig oc;
    oc.lr = static_cast<float>(cfg.get_num("t2a.lr"));
    AdamW opt(m.unet_ps.tensors(), oc);
    Rng rng = Rng(m.seed).fork(23);

    LossWindow lw;
    for (int step = 0; step < steps; ++step) {
        Rng sr = rng.fork(static_cast<uint64_t>(step));
        const std::vector<int> ids = draw_batch(sr, static_cast<int>(latents.size()), batch);
        NoiseBatch nb = make_noise_batch(latents, ids, m.sched, sr);
        CtxBatch ctx;
        for (int id : ids)
            ctx.txt.push_back(caption_ctx(m, sd.entries[static_cast<size_t>(id)].caption, drop_p, sr));
        Tensor loss = mse(m.unet->forward(nb.z_t, nb.t, ctx), nb.eps);
        loss.backward();
        opt.step();
        opt.zero_grad();
        lw.push(loss.item());
    }
    lw.finish();
    save_stage(m.ckpt("t2a.ntc"), m.unet_ps, cfg);

    StageReport r;
    r.losses = lw.windows;
    r.metric = lw.windows.empty() ? 0.0 : lw.windows.back();
    return r;
}

StageReport cmd_train_semantic(const Config& cfg) {
    Models m = make_models(cfg);
    SplitData sd = load_split(m, "train", -1, true);
    std::vector<Tensor> latents = load_latents(m, sd);
    load_backbone(m);
    build_semantic(m);
    m.sem->init_from_text_weights(*m.unet);
    m.sem->attach(*m.unet);

    const int steps = cfg.get_int("semantic.steps");
    const int batch = cfg.get_int("semantic.batch");
    const double drop_text_p = cfg.get_num("semantic.drop_text_p");
    const float lambda = static_cast<float>(cfg.get_num("semantic.lambda"));
    AdamWConfig oc;
    oc.lr = static_cast<float>(cfg.get_num("semantic.lr"));
    AdamW opt(m.sem_ps.tensors(), oc);
    Rng rng = Rng(m.seed).fork(32);

    LossWindow lw;
    for (int step = 0; step < steps; ++step) {
        Rng sr = rng.fork(static_cast<uint64_t>(step));
        const std::vector<int> ids = draw_batch(sr, static_cast<int>(latents.size()), batch);
        NoiseBatch nb = make_noise_batch(latents, ids, m.sched, sr);
        CtxBatch ctx;
        ctx.lambda = lambda;
        for (int id : ids) {
            ctx.txt.push_back(
                caption_ctx(m, sd.entries[static_cast<size_t>(id)].caption, drop_text_p, sr));
            ctx.vis.push_back(m.sem->encode_video(sd.videos[static_cast<size_t>(id)]));
        }
        Tensor loss = mse(m.unet->forward(nb.z_t, nb.t, ctx), nb.eps);
        loss.backward();
        opt.step();
        opt.zero_grad();
        lw.push(loss.item());
    }
    lw.finish();
    save_stage(m.ckpt("semantic.ntc"), m.sem_ps, cfg);

    StageReport r;
    r.losses = lw.windows;
    r.metric = lw.windows.empty() ? 0.0 : lw.windows.back();
    return r;
}

StageReport cmd_train_detector(const Config& cfg) {
    Models m = make_models(cfg);
    SplitData sd = load_split(m, "train", -1, true);
    build_detector(m);

    const int steps = cfg.get_int("detector.steps");
    const int batch = cfg.get_int("detector.batch");
    AdamWConfig oc;
    oc.lr = static_cast<float>(cfg.get_num("detector.lr"));
    AdamW opt(m.det_ps.tensors(), oc);
    Rng rng = Rng(m.seed).fork(42);

    LossWindow lw;
    for (int step = 0; step < steps; ++step) {
        Rng sr = rng.fork(static_cast<uint64_t>(step));
        const std::vector<int> ids = draw_batch(sr, static_cast<int>(sd.videos.size()), batch);
        Tensor v = stack(sd.videos, ids);
        Tensor y = stack_masks(sd.masks, ids);
        Tensor loss = bce_loss(y, m.det->forward(v, m.dcfg.mask_len));
        loss.backward();
        opt.step();
        opt.zero_grad();
        lw.push(loss.item());
    }
    lw.finish();
    save_stage(m.ckpt("detector.ntc"), m.det_ps, cfg);

    // frame-level ranking quality on the validation split
    SplitData val = load_split(m, "val", -1, true);
    NoGradGuard ng;
    Tensor probs = m.det->forward(stack(val.videos, range_ids(0, static_cast<int>(val.videos.size()))),
                                  m.dcfg.mask_len);
    std::vector<double> scores;
    std::vector<int> labels;
    for (size_t i = 0; i < val.masks.size(); ++i)
        for (int j = 0; j < m.dcfg.mask_len; ++j) {
            scores.push_back(probs.data()[i * static_cast<size_t>(m.dcfg.mask_len) + j]);
            labels.push_back(val.masks[i][static_cast<size_t>(j)] >= 0.5f ? 1 : 0);
        }

    StageReport r;
    r.losses = lw.windows;
    r.metric = ranking_ap(scores, labels);
    return r;
}

StageReport cmd_train_temporal(const Config& cfg) {
    Models m = make_models(cfg);
    SplitData sd = load_split(m, "train", -1, true);
    std::vector<Tensor> latents = load_latents(m, sd);
    load_backbone(m);
    build_temporal(m);
    m.tmp->init_from_backbone(m.unet_ps);

    const int steps = cfg.get_int("temporal.steps");
    const int batch = cfg.get_int("temporal.batch");
    const double drop_p = cfg.get_num("t2a.drop_p");
    AdamWConfig oc;
    oc.lr = static_cast<float>(cfg.get_num("temporal.lr"));
    AdamW opt(m.tmp_ps.tensors(), oc);
    Rng rng = Rng(m.seed).fork(52);

    LossWindow lw;
    for (int step = 0; step < steps; ++step) {
        Rng sr = rng.fork(static_cast<uint64_t>(step));
        const std::vector<int> ids = draw_batch(sr, static_cast<int>(latents.size()), batch);
        NoiseBatch nb = make_noise_batch(latents, ids, m.sched, sr);
        CtxBatch ctx;
        for (int id : ids)
            ctx.txt.push_back(caption_ctx(m, sd.entries[static_cast<size_t>(id)].caption, drop_p, sr));
        Tensor mask = stack_masks(sd.masks, ids);
        TemporalResiduals res = m.tmp->forward(nb.z_t, nb.t, ctx, mask);
        Tensor loss = mse(m.unet->forward(nb.z_t, nb.t, ctx, &res), nb.eps);
        loss.backward();
        opt.step();
        opt.zero_grad();
        lw.push(loss.item());
    }
    lw.finish();
    save_stage(m.ckpt("temporal.ntc"), m.tmp_ps, cfg);

    StageReport r;
    r.losses = lw.windows;
    r.metric = lw.windows.empty() ? 0.0 : lw.windows.back();
    return r;
}

StageReport cmd_generate(const Config& cfg, const GenerateArgs& args) {
    Models m = make_models(cfg);
    load_vae(m);
    load_backbone(m);

    const float lambda = static_cast<float>(cfg.get_num("semantic.lambda"));
    const int steps = cfg.get_int("sampler.steps");
    const float scale = static_cast<float>(cfg.get_num("sampler.cfg_scale"));

    SampleSpec spec;
    Tensor video;
    if (!args.video_path.empty()) {
        video = read_video_track(args.video_path);
        if (lambda > 0.0f) {
            load_semantic(m);
        }
    }

    NoGradGuard ng;
    spec.cond.lambda = lambda;
    spec.cond.txt.push_back(args.prompt.empty() ? m.text->null_context()
                                                : m.text->encode(args.prompt));
    if (video.defined() && lambda > 0.0f) spec.cond.vis.push_back(m.sem->encode_video(video));
    spec.uncond.txt.push_back(args.negative_prompt.empty()
                                  ? m.text->null_context()
                                  : m.text->encode(args.negative_prompt));
    spec.temporal_ctx.txt = spec.cond.txt;

    if (video.defined()) {
        std::vector<float> mask;
        if (args.gt_mask) {
            const std::string suffix = ".video.f32";
            if (args.video_path.size() <= suffix.size() ||
                args.video_path.substr(args.video_path.size() - suffix.size()) != suffix)
                throw ValueError("--gt-mask needs a <name>.video.f32 input to locate the mask");
            const std::string mask_path =
                args.video_path.substr(0, args.video_path.size() - suffix.size()) + ".mask.u8";
            mask = read_mask_file(mask_path, m.dcfg.mask_len);
        } else if (fs::exists(m.ckpt("detector.ntc"))) {
            load_detector(m);
            Tensor v3 = reshape(video, {1, video.dim(0), video.dim(1)});
            Tensor probs = m.det->forward(v3, m.dcfg.mask_len);
            Tensor bin = binarize(probs);
            mask.assign(bin.data(), bin.data() + bin.numel());
        } else {
            std::cerr << "note: no detector checkpoint, generating without timing control\n";
        }
        if (!mask.empty()) {
            if (fs::exists(m.ckpt("temporal.ntc"))) {
                load_temporal(m);
                spec.mask = Tensor::from({1, m.dcfg.mask_len}, std::move(mask));
            } else {
                std::cerr << "note: no temporal checkpoint, mask ignored\n";
            }
        }
    }

    Rng sample_rng = Rng(m.seed).fork(71);
    Tensor z = run_sampler(m, spec, steps, scale, sample_rng);
    if (!z.all_finite()) throw NumericError("sampler produced non-finite latents");
    Tensor mel = decode_mel(m, z);
    Tensor mel2d = reshape(mel, {m.audio.n_mels, m.audio.mel_frames});

    fs::create_directories(args.out_dir);
    const std::string wav_path = (fs::path(args.out_dir) / "sample.wav").string();
    const std::string pgm_path = (fs::path(args.out_dir) / "sample.pgm").string();
    std::vector<float> audio = griffin_lim(mel2d, m.audio, splitmix64(m.seed ^ 0x9e3779b9ULL));
    write_wav(wav_path, audio, m.audio.sample_rate);
    write_pgm(pgm_path, mel2d);
    std::cout << "wrote " << wav_path << " and " << pgm_path << "\n";

    StageReport r;
    r.metric = static_cast<double>(audio.size());
    return r;
}

nlohmann::json cmd_evaluate(const Config& cfg) {
    Models m = make_models(cfg);
    load_vae(m);
    load_backbone(m);

    const int limit = cfg.get_int("eval.n");
    const int steps = cfg.get_int("eval.sampler_steps");
    const float scale = static_cast<float>(cfg.get_num("eval.cfg_scale"));
    const bool use_text = cfg.get_bool("eval.use_text");
    const bool use_semantic = cfg.get_bool("eval.use_semantic");
    const bool use_temporal = cfg.get_bool("eval.use_temporal");
    const bool gt_mask = cfg.get_bool("eval.gt_mask");
    const bool flip_mask = cfg.get_bool("eval.flip_mask");
    const float lambda = static_cast<float>(cfg.get_num("semantic.lambda"));
    const uint64_t eval_seed = static_cast<uint64_t>(cfg.get_int("eval.seed"));

    if (use_semantic) load_semantic(m);
    if (use_temporal) {
        load_temporal(m);
        if (!gt_mask) load_detector(m);
    }
    ensure_classifier(m);

    SplitData sd = load_split(m, "test", limit, true);
    const int n = static_cast<int>(sd.entries.size());

    NoGradGuard ng;
    std::vector<int> pred_cls(static_cast<size_t>(n));
    std::vector<int> gt_pred_cls(static_cast<size_t>(n));
    std::vector<float> probs_ref_buf, probs_gen_buf, feats_ref_buf, feats_gen_buf;
    std::vector<std::vector<OnsetCandidate>> cands(static_cast<size_t>(n));
    std::vector<std::vector<double>> picked(static_cast<size_t>(n));
    double onset_acc_sum = 0.0;
    Rng rng = Rng(eval_seed);

    for (int lo = 0; lo < n; lo += kEvalBatch) {
        const int hi = std::min(n, lo + kEvalBatch);
        const int b = hi - lo;
        const std::vector<int> ids = range_ids(lo, hi);

        SampleSpec spec;
        spec.cond.lambda = use_semantic ? lambda : 0.0f;
        for (int id : ids) {
            spec.cond.txt.push_back(use_text
                                        ? m.text->encode(sd.entries[static_cast<size_t>(id)].caption)
                                        : m.text->null_context());
            if (use_semantic)
                spec.cond.vis.push_back(m.sem->encode_video(sd.videos[static_cast<size_t>(id)]));
            spec.uncond.txt.push_back(m.text->null_context());
        }
        spec.temporal_ctx.txt = spec.cond.txt;
        if (use_temporal) {
            std::vector<float> mbuf;
            for (int id : ids) {
                std::vector<float> row;
                if (gt_mask) {
                    row = sd.masks[static_cast<size_t>(id)];
                } else {
                    Tensor v = sd.videos[static_cast<size_t>(id)];
                    Tensor probs =
                        m.det->forward(reshape(v, {1, v.dim(0), v.dim(1)}), m.dcfg.mask_len);
                    Tensor bin = binarize(probs);
                    row.assign(bin.data(), bin.data() + bin.numel());
                }
                if (flip_mask)
                    for (float& v : row) v = 1.0f - v;
                mbuf.insert(mbuf.end(), row.begin(), row.end());
            }
            spec.mask = Tensor::from({b, m.dcfg.mask_len}, std::move(mbuf));
        }

        Rng batch_rng = rng.fork(static_cast<uint64_t>(1000 + lo));
        Tensor z = run_sampler(m, spec, steps, scale, batch_rng);
        if (!z.all_finite()) throw NumericError("sampler produced non-finite latents");
        Tensor mel_gen = decode_mel(m, z);

        std::vector<Tensor> ref_mels;
        for (int id : ids) {
            LoadedSample ls = load_sample(m.paths.data, sd.entries[static_cast<size_t>(id)].id,
                                          m.dcfg);
            ref_mels.push_back(mel_forward(ls.audio, m.audio));
        }
        Tensor mel_ref = reshape(stack(ref_mels, range_ids(0, b)),
                                 {b, 1, m.audio.n_mels, m.audio.mel_frames});

        Tensor feats_gen = m.clf->features(mel_gen);
        Tensor feats_ref = m.clf->features(mel_ref);
        Tensor probs_gen = softmax(m.clf->logits(mel_gen), 1);
        Tensor probs_ref = softmax(m.clf->logits(mel_ref), 1);
        probs_gen_buf.insert(probs_gen_buf.end(), probs_gen.data(),
                             probs_gen.data() + probs_gen.numel());
        probs_ref_buf.insert(probs_ref_buf.end(), probs_ref.data(),
                             probs_ref.data() + probs_ref.numel());
        feats_gen_buf.insert(feats_gen_buf.end(), feats_gen.data(),
                             feats_gen.data() + feats_gen.numel());
        feats_ref_buf.insert(feats_ref_buf.end(), feats_ref.data(),
                             feats_ref.data() + feats_ref.numel());

        for (int i = 0; i < b; ++i) {
            const int k = n_classes();
            auto argmax = [&](const Tensor& p) {
                int best = 0;
                for (int j = 1; j < k; ++j)
                    if (p.data()[i * k + j] > p.data()[i * k + best]) best = j;
                return best;
            };
            pred_cls[static_cast<size_t>(lo + i)] = argmax(probs_gen);
            gt_pred_cls[static_cast<size_t>(lo + i)] = argmax(probs_ref);

            Tensor one = reshape(slice(mel_gen, 0, i, i + 1),
                                 {m.audio.n_mels, m.audio.mel_frames});
            auto cc = onset_candidates(one, m.audio);
            std::vector<double> on = pick_onsets(cc);
            onset_acc_sum += onset_metrics(on, sd.onsets[static_cast<size_t>(lo + i)]).acc;
            cands[static_cast<size_t>(lo + i)] = std::move(cc);
            picked[static_cast<size_t>(lo + i)] = std::move(on);
        }
    }

    const int k = n_classes();
    Tensor probs_gen_t = Tensor::from({n, k}, std::move(probs_gen_buf));
    Tensor probs_ref_t = Tensor::from({n, k}, std::move(probs_ref_buf));
    Tensor feats_gen_t = Tensor::from({n, 64}, std::move(feats_gen_buf));
    Tensor feats_ref_t = Tensor::from({n, 64}, std::move(feats_ref_buf));

    int correct = 0, gt_correct = 0;
    for (int i = 0; i < n; ++i) {
        if (pred_cls[static_cast<size_t>(i)] == sd.cls[static_cast<size_t>(i)]) ++correct;
        if (gt_pred_cls[static_cast<size_t>(i)] == sd.cls[static_cast<size_t>(i)]) ++gt_correct;
    }

    nlohmann::json report;
    report["mkl"] = mkl(probs_ref_t, probs_gen_t);
    report["fid"] = fid(feats_ref_t, feats_gen_t);
    report["onset_acc"] = onset_acc_sum / n;
    report["onset_ap"] = detection_ap(cands, sd.onsets);
    report["classifier_acc"] = static_cast<double>(correct) / n;
    report["classifier_gt_acc"] = static_cast<double>(gt_correct) / n;
    report["n_samples"] = n;
    report["config_hash"] = cfg.hash_hex();
    auto clips = nlohmann::json::array();
    for (int i = 0; i < n; ++i) {
        nlohmann::json c;
        c["id"] = sd.entries[static_cast<size_t>(i)].id;
        c["class"] = sd.entries[static_cast<size_t>(i)].cls;
        c["pred_class"] = class_name(pred_cls[static_cast<size_t>(i)]);
        c["onsets"] = picked[static_cast<size_t>(i)];
        clips.push_back(std::move(c));
    }
    report["clips"] = std::move(clips);

    fs::create_directories(m.paths.out);
    std::ofstream out((fs::path(m.paths.out) / "report.json").string());
    out << report.dump(2) << "\n";
    return report;
}

}  // namespace foley
