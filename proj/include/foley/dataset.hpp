#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "foley/rng.hpp"
#include "foley/tensor.hpp"

namespace foley {

// Clip geometry shared by synthesis, feature building and mask derivation.
// Events live on the video-frame grid; one video frame spans two latent
// frames, so activity per video frame and the latent onset mask agree exactly
// under nearest-neighbor resampling.
struct DatasetConfig {
    int sample_rate = 16000;
    int clip_samples = 64000;
    int n_frames = 32;   // video frames per clip
    int frame_dim = 16;  // features per video frame
    int mask_len = 64;   // latent time axis

    int samples_per_frame() const { return 2048; }
    int samples_per_latent() const { return 1024; }
};

int n_classes();
const std::string& class_name(int cls);
int class_index(const std::string& name);  // -1 when unknown
std::string caption_for(int cls);

// One sound event, snapped to the video-frame grid.
struct Event {
    int start_vf = 0;
    int len_vf = 0;
    float amp = 0.0f;
    double start_s(const DatasetConfig& cfg) const;
    double duration_s(const DatasetConfig& cfg) const;
};

struct FoleySample {
    std::string id;
    int cls = 0;
    std::string caption;
    std::vector<Event> events;
    std::vector<float> audio;  // [clip_samples], peak 0.7
    Tensor video;              // [n_frames, frame_dim]
    std::vector<float> mask;   // [mask_len], values 0/1
};

// 1-4 non-overlapping events with uniform starts and at least one empty
// video frame (0.128 s) between them.
std::vector<Event> draw_events(Rng& rng, const DatasetConfig& cfg);

std::vector<float> render_audio(int cls, const std::vector<Event>& events,
                                const DatasetConfig& cfg, Rng& rng);

// one-hot class, activity flag, event intensity, zero padding; independent
// N(0, 0.1) noise on every entry
Tensor make_frame_features(int cls, const std::vector<Event>& events, const DatasetConfig& cfg,
                           Rng& rng);

// mask[i] = 1 iff some event overlaps latent frame i
std::vector<float> make_mask(const std::vector<Event>& events, const DatasetConfig& cfg);

FoleySample generate_sample(const std::string& id, int cls, Rng& rng, const DatasetConfig& cfg);

// raw little-endian track file: "VTRK", u32 n_frames, u32 dim, f32 data
void write_video_track(const std::string& path, const Tensor& video);
Tensor read_video_track(const std::string& path);

void write_mask_file(const std::string& path, const std::vector<float>& mask);
std::vector<float> read_mask_file(const std::string& path, int expect_len);

struct ManifestEntry {
    std::string id;
    std::string cls;
    std::string caption;
    std::vector<std::pair<double, double>> event_times;  // (start_s, duration_s)
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);
std::vector<ManifestEntry> manifest_for_split(const std::vector<ManifestEntry>& all,
                                              const std::string& split);

// Writes <root>/<split>/<id>.{wav,video.f32,mask.u8} for the three splits plus
// one manifest.jsonl at the root. Per-sample generators are forked from the
// seed and the sample index, so output depends only on (seed, sizes).
std::vector<ManifestEntry> make_dataset(const std::string& root, int n_train, int n_val,
                                        int n_test, uint64_t seed, const DatasetConfig& cfg);

struct LoadedSample {
    std::vector<float> audio;
    Tensor video;
    std::vector<float> mask;
};
LoadedSample load_sample(const std::string& root, const std::string& id,
                         const DatasetConfig& cfg);

}  // namespace foley
