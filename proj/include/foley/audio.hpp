#pragma once

#include <complex>
#include <vector>

#include "foley/errors.hpp"
#include "foley/rng.hpp"
#include "foley/tensor.hpp"

namespace foley {

struct AudioConfig {
    int sample_rate = 16000;
    int n_fft = 1024;
    int hop = 256;
    int n_mels = 64;
    int mel_frames = 256;  // mel width after right-padding, divisible by 4
    float fmin = 0.0f;
    float fmax = 8000.0f;
    float log_floor = 1e-5f;
    float db_low = -5.0f;  // log10 range mapped onto [-1, 1]
    float db_high = 0.0f;
    int griffin_lim_iters = 60;

    int clip_samples = 64000;
    int stft_frames() const { return 1 + clip_samples / hop; }
};

enum class Window { hann, rect };

// In-place iterative radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<float>>& buf, bool inverse);

// One-sided complex STFT, frame-major: values[frame * bins + bin],
// bins = n_fft/2 + 1. With center=true the signal is reflect-padded by
// n_fft/2 on each side, giving 1 + floor(len/hop) frames.
struct Stft {
    int bins = 0;
    int frames = 0;
    std::vector<std::complex<float>> values;
};
Stft stft(const std::vector<float>& samples, int n_fft, int hop, Window window, bool center);

// Weighted overlap-add inverse of the center-padded Hann STFT; returns
// out_len samples.
std::vector<float> istft(const Stft& spec, int n_fft, int hop, int out_len);

// Triangular HTK-scale filterbank, rows normalized to sum 1; [n_mels x bins].
std::vector<float> mel_filterbank(int n_mels, int n_fft, int sample_rate, float fmin, float fmax);

// Waveform -> normalized log-mel [n_mels x mel_frames] in [-1, 1]. Power is
// referenced to the window sum so a full-scale DC signal hits the top of the
// range; real frames beyond clip length are padded with -1 (silence).
Tensor mel_forward(const std::vector<float>& samples, const AudioConfig& cfg);

// Inverse of the log/affine stage only: mel in [-1,1] -> per-bin power.
void mel_denormalize(const Tensor& mel, std::vector<float>& power_out, const AudioConfig& cfg);

// Phase recovery from a normalized mel; deterministic given seed.
std::vector<float> griffin_lim(const Tensor& mel, const AudioConfig& cfg, uint64_t seed);

}  // namespace foley
