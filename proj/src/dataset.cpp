#include "foley/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "foley/errors.hpp"
#include "foley/wav.hpp"

namespace foley {

namespace {

constexpr int kMinLenVf = 2;
constexpr int kMaxLenVf = 6;
constexpr int kGapVf = 2;      // 0.256 s, clears the 0.2 s minimum
constexpr int kLastEndVf = 31; // keeps events inside the real 4 s of audio
constexpr int kFadeSamples = 160;  // 10 ms raised-cosine edges

const std::vector<std::string> kClasses = {"click_train", "tone_burst", "noise_burst", "chirp"};

float fade_env(int i, int n) {
    const int f = std::min(kFadeSamples, n / 2);
    float e = 1.0f;
    if (i < f) e = 0.5f * (1.0f - std::cos(std::numbers::pi_v<float> * (i + 0.5f) / f));
    const int j = n - 1 - i;
    if (j < f) e = std::min(e, 0.5f * (1.0f - std::cos(std::numbers::pi_v<float> * (j + 0.5f) / f)));
    return e;
}

// RBJ cookbook band-pass (constant peak gain), applied in place.
void bandpass(std::vector<float>& x, double f0, double q, int sr) {
    const double w0 = 2.0 * std::numbers::pi * f0 / sr;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    const double b0 = alpha / a0, b2 = -alpha / a0;
    const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (float& v : x) {
        const double xn = v;
        const double yn = b0 * xn + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1; x1 = xn;
        y2 = y1; y1 = yn;
        v = static_cast<float>(yn);
    }
}

void render_event(int cls, int n, Rng& rng, int sr, std::vector<float>& out) {
    out.assign(static_cast<size_t>(n), 0.0f);
    const float pi = std::numbers::pi_v<float>;
    switch (cls) {
        case 0: {  // decaying click train over a low sine bed
            for (int i = 0; i < n; ++i)
                out[static_cast<size_t>(i)] = 0.2f * std::sin(2.0f * pi * 160.0f * i / sr);
            float gain = 1.0f;
            for (int k = 0; k * 800 + 80 <= n; ++k, gain *= 0.55f) {
                const int base = k * 800;
                for (int j = 0; j < 80; ++j) {
                    const float w = 0.5f * (1.0f - std::cos(2.0f * pi * (j + 0.5f) / 80.0f));
                    out[static_cast<size_t>(base + j)] +=
                        gain * w * std::sin(2.0f * pi * 3000.0f * j / sr);
                }
            }
            break;
        }
        case 1: {  // steady tone
            for (int i = 0; i < n; ++i)
                out[static_cast<size_t>(i)] = std::sin(2.0f * pi * 1000.0f * i / sr);
            break;
        }
        case 2: {  // band-limited noise
            for (float& v : out) v = static_cast<float>(rng.normal());
            bandpass(out, 4000.0, 1.0, sr);
            break;
        }
        case 3: {  // rising sweep
            const float f0 = 400.0f, f1 = 3200.0f;
            const float dur = static_cast<float>(n) / sr;
            for (int i = 0; i < n; ++i) {
                const float t = static_cast<float>(i) / sr;
                out[static_cast<size_t>(i)] =
                    std::sin(2.0f * pi * (f0 * t + 0.5f * (f1 - f0) / dur * t * t));
            }
            break;
        }
        default:
            throw ValueError("unknown class id " + std::to_string(cls));
    }
    float peak = 0.0f;
    for (float v : out) peak = std::max(peak, std::abs(v));
    if (peak > 0.0f)
        for (float& v : out) v /= peak;
}

std::string split_of(const std::string& id) {
    const auto dash = id.find('-');
    return dash == std::string::npos ? id : id.substr(0, dash);
}

}  // namespace

int n_classes() { return static_cast<int>(kClasses.size()); }

const std::string& class_name(int cls) {
    if (cls < 0 || cls >= n_classes())
        throw ValueError("class id " + std::to_string(cls) + " out of range");
    return kClasses[static_cast<size_t>(cls)];
}

int class_index(const std::string& name) {
    for (int i = 0; i < n_classes(); ++i)
        if (kClasses[static_cast<size_t>(i)] == name) return i;
    return -1;
}

std::string caption_for(int cls) {
    std::string words = class_name(cls);
    std::replace(words.begin(), words.end(), '_', ' ');
    return "The sound of " + words;
}

double Event::start_s(const DatasetConfig& cfg) const {
    return static_cast<double>(start_vf) * cfg.samples_per_frame() / cfg.sample_rate;
}

double Event::duration_s(const DatasetConfig& cfg) const {
    return static_cast<double>(len_vf) * cfg.samples_per_frame() / cfg.sample_rate;
}

std::vector<Event> draw_events(Rng& rng, const DatasetConfig& cfg) {
    (void)cfg;
    const int count = 1 + rng.uniform_int(4);
    std::vector<int> lens;
    while (true) {
        lens.clear();
        int used = kGapVf * (count - 1);
        for (int i = 0; i < count; ++i) {
            lens.push_back(kMinLenVf + rng.uniform_int(kMaxLenVf - kMinLenVf + 1));
            used += lens.back();
        }
        if (used <= kLastEndVf) break;
    }
    int used = kGapVf * (count - 1);
    for (int l : lens) used += l;
    const int slack = kLastEndVf - used;

    std::vector<int> extra(static_cast<size_t>(count));
    for (int& e : extra) e = rng.uniform_int(slack + 1);
    std::sort(extra.begin(), extra.end());

    std::vector<Event> events;
    int cursor = 0;
    for (int i = 0; i < count; ++i) {
        const int start = cursor + extra[static_cast<size_t>(i)] -
                          (i > 0 ? extra[static_cast<size_t>(i - 1)] : 0);
        Event ev;
        ev.start_vf = start;
        ev.len_vf = lens[static_cast<size_t>(i)];
        ev.amp = static_cast<float>(rng.uniform(0.4, 1.0));
        events.push_back(ev);
        cursor = start + ev.len_vf + kGapVf;
    }
    return events;
}

std::vector<float> render_audio(int cls, const std::vector<Event>& events,
                                const DatasetConfig& cfg, Rng& rng) {
    std::vector<float> audio(static_cast<size_t>(cfg.clip_samples), 0.0f);
    std::vector<float> ev_buf;
    for (const Event& ev : events) {
        const int s0 = ev.start_vf * cfg.samples_per_frame();
        const int n = ev.len_vf * cfg.samples_per_frame();
        if (s0 + n > cfg.clip_samples)
            throw ValueError("event extends past the clip");
        render_event(cls, n, rng, cfg.sample_rate, ev_buf);
        for (int i = 0; i < n; ++i)
            audio[static_cast<size_t>(s0 + i)] +=
                ev.amp * fade_env(i, n) * ev_buf[static_cast<size_t>(i)];
    }
    float peak = 0.0f;
    for (float v : audio) peak = std::max(peak, std::abs(v));
    if (peak <= 0.0f) throw ValueError("rendered clip is silent");
    const float scale = 0.7f / peak;
    for (float& v : audio) v *= scale;
    return audio;
}

Tensor make_frame_features(int cls, const std::vector<Event>& events, const DatasetConfig& cfg,
                           Rng& rng) {
    if (cfg.frame_dim < n_classes() + 2)
        throw ValueError("frame_dim too small for class one-hot plus activity and intensity");
    std::vector<float> feat(static_cast<size_t>(cfg.n_frames) * cfg.frame_dim, 0.0f);
    for (int j = 0; j < cfg.n_frames; ++j) {
        float* row = feat.data() + static_cast<size_t>(j) * cfg.frame_dim;
        row[cls] = 1.0f;
        for (const Event& ev : events) {
            if (j >= ev.start_vf && j < ev.start_vf + ev.len_vf) {
                row[n_classes()] = 1.0f;
                row[n_classes() + 1] = ev.amp;
                break;
            }
        }
    }
    for (float& v : feat) v += 0.1f * static_cast<float>(rng.normal());
    return Tensor::from({cfg.n_frames, cfg.frame_dim}, std::move(feat));
}

std::vector<float> make_mask(const std::vector<Event>& events, const DatasetConfig& cfg) {
    std::vector<float> mask(static_cast<size_t>(cfg.mask_len), 0.0f);
    const int per_vf = cfg.samples_per_frame() / cfg.samples_per_latent();
    for (const Event& ev : events) {
        const int lo = ev.start_vf * per_vf;
        const int hi = std::min((ev.start_vf + ev.len_vf) * per_vf, cfg.mask_len);
        for (int i = lo; i < hi; ++i) mask[static_cast<size_t>(i)] = 1.0f;
    }
    return mask;
}

FoleySample generate_sample(const std::string& id, int cls, Rng& rng, const DatasetConfig& cfg) {
    FoleySample s;
    s.id = id;
    s.cls = cls;
    s.caption = caption_for(cls);
    s.events = draw_events(rng, cfg);
    s.audio = render_audio(cls, s.events, cfg, rng);
    s.video = make_frame_features(cls, s.events, cfg, rng);
    s.mask = make_mask(s.events, cfg);
    return s;
}

void write_video_track(const std::string& path, const Tensor& video) {
    if (video.rank() != 2) throw ShapeError("video track must be rank 2");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write("VTRK", 4);
    const uint32_t nf = static_cast<uint32_t>(video.dim(0));
    const uint32_t dim = static_cast<uint32_t>(video.dim(1));
    unsigned char hdr[8];
    for (int i = 0; i < 4; ++i) hdr[i] = static_cast<unsigned char>((nf >> (8 * i)) & 0xff);
    for (int i = 0; i < 4; ++i) hdr[4 + i] = static_cast<unsigned char>((dim >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<const char*>(hdr), 8);
    f.write(reinterpret_cast<const char*>(video.data()),
            static_cast<std::streamsize>(video.numel() * sizeof(float)));
    if (!f) throw IoError("short write to " + path);
}

Tensor read_video_track(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open video track " + path);
    char magic[4];
    unsigned char hdr[8];
    if (!f.read(magic, 4) || std::string(magic, 4) != "VTRK")
        throw IoError(path + " is not a video track file");
    if (!f.read(reinterpret_cast<char*>(hdr), 8)) throw IoError(path + " truncated header");
    uint32_t nf = 0, dim = 0;
    for (int i = 0; i < 4; ++i) nf |= static_cast<uint32_t>(hdr[i]) << (8 * i);
    for (int i = 0; i < 4; ++i) dim |= static_cast<uint32_t>(hdr[4 + i]) << (8 * i);
    if (nf == 0 || dim == 0 || nf > (1u << 20) || dim > (1u << 20))
        throw IoError(path + " has an implausible track header");
    std::vector<float> data(static_cast<size_t>(nf) * dim);
    if (!f.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(float))))
        throw IoError(path + " truncated data");
    return Tensor::from({static_cast<int>(nf), static_cast<int>(dim)}, std::move(data));
}

void write_mask_file(const std::string& path, const std::vector<float>& mask) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    std::vector<unsigned char> bytes(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) bytes[i] = mask[i] >= 0.5f ? 1 : 0;
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path);
}

std::vector<float> read_mask_file(const std::string& path, int expect_len) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open mask " + path);
    std::vector<unsigned char> bytes(static_cast<size_t>(expect_len));
    if (!f.read(reinterpret_cast<char*>(bytes.data()), expect_len))
        throw IoError(path + " shorter than " + std::to_string(expect_len) + " bytes");
    std::vector<float> mask(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) mask[i] = bytes[i] ? 1.0f : 0.0f;
    return mask;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    for (const ManifestEntry& e : entries) {
        nlohmann::json j;
        j["id"] = e.id;
        j["class"] = e.cls;
        j["caption"] = e.caption;
        auto times = nlohmann::json::array();
        for (const auto& [start, dur] : e.event_times) times.push_back({start, dur});
        j["event_times"] = times;
        f << j.dump() << "\n";
    }
    if (!f) throw IoError("short write to " + path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw IoError("bad JSON line in " + path);
        ManifestEntry e;
        e.id = j.at("id").get<std::string>();
        e.cls = j.at("class").get<std::string>();
        e.caption = j.at("caption").get<std::string>();
        for (const auto& t : j.at("event_times"))
            e.event_times.emplace_back(t.at(0).get<double>(), t.at(1).get<double>());
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<ManifestEntry> manifest_for_split(const std::vector<ManifestEntry>& all,
                                              const std::string& split) {
    std::vector<ManifestEntry> out;
    for (const ManifestEntry& e : all)
        if (split_of(e.id) == split) out.push_back(e);
    return out;
}

std::vector<ManifestEntry> make_dataset(const std::string& root, int n_train, int n_val,
                                        int n_test, uint64_t seed, const DatasetConfig& cfg) {
    const std::vector<std::pair<std::string, int>> splits = {
        {"train", n_train}, {"val", n_val}, {"test", n_test}};
    Rng base(seed);
    std::vector<ManifestEntry> manifest;
    for (size_t si = 0; si < splits.size(); ++si) {
        const auto& [split, n] = splits[si];
        const std::filesystem::path dir = std::filesystem::path(root) / split;
        std::filesystem::create_directories(dir);
        for (int i = 0; i < n; ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%s-%04d", split.c_str(), i);
            const std::string id = buf;
            Rng rng = base.fork((static_cast<uint64_t>(si + 1) << 32) | static_cast<uint64_t>(i));
            FoleySample s = generate_sample(id, i % n_classes(), rng, cfg);
            write_wav((dir / (id + ".wav")).string(), s.audio, cfg.sample_rate);
            write_video_track((dir / (id + ".video.f32")).string(), s.video);
            write_mask_file((dir / (id + ".mask.u8")).string(), s.mask);
            ManifestEntry e;
            e.id = id;
            e.cls = class_name(s.cls);
            e.caption = s.caption;
            for (const Event& ev : s.events)
                e.event_times.emplace_back(ev.start_s(cfg), ev.duration_s(cfg));
            manifest.push_back(std::move(e));
        }
    }
    write_manifest((std::filesystem::path(root) / "manifest.jsonl").string(), manifest);
    return manifest;
}

LoadedSample load_sample(const std::string& root, const std::string& id,
                         const DatasetConfig& cfg) {
    const std::filesystem::path dir = std::filesystem::path(root) / split_of(id);
    LoadedSample s;
    WavData w = read_wav((dir / (id + ".wav")).string());
    if (w.sample_rate != cfg.sample_rate)
        throw ValueError(id + " has sample rate " + std::to_string(w.sample_rate) +
                         ", expected " + std::to_string(cfg.sample_rate));
    s.audio = std::move(w.samples);
    s.video = read_video_track((dir / (id + ".video.f32")).string());
    s.mask = read_mask_file((dir / (id + ".mask.u8")).string(), cfg.mask_len);
    return s;
}

}  // namespace foley
