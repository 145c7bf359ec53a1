#include "foley/audio.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace foley {

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

std::vector<float> make_window(Window w, int n) {
    std::vector<float> out(static_cast<size_t>(n), 1.0f);
    if (w == Window::hann) {
        for (int i = 0; i < n; ++i)
            out[static_cast<size_t>(i)] = 0.5f - 0.5f * std::cos(2.0f * std::numbers::pi_v<float> *
                                                                 static_cast<float>(i) /
                                                                 static_cast<float>(n));
    }
    return out;
}

// Reflect-pads by n_fft/2 on each side (librosa-style center padding).
std::vector<float> center_pad(const std::vector<float>& x, int n_fft) {
    const int p = n_fft / 2;
    const int n = static_cast<int>(x.size());
    if (n < 2) throw ValueError("waveform too short for reflect padding");
    std::vector<float> out(static_cast<size_t>(n + 2 * p));
    for (int i = 0; i < p; ++i) out[static_cast<size_t>(i)] = x[static_cast<size_t>(std::min(n - 1, p - i))];
    std::copy(x.begin(), x.end(), out.begin() + p);
    for (int i = 0; i < p; ++i)
        out[static_cast<size_t>(p + n + i)] = x[static_cast<size_t>(std::max(0, n - 2 - i))];
    return out;
}

}  // namespace

void fft_inplace(std::vector<std::complex<float>>& buf, bool inverse) {
    const int n = static_cast<int>(buf.size());
    if (!is_pow2(n)) throw ValueError("fft size must be a power of two, got " + std::to_string(n));
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(buf[static_cast<size_t>(i)], buf[static_cast<size_t>(j)]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * std::numbers::pi / len;
        const std::complex<float> wl(static_cast<float>(std::cos(ang)),
                                     static_cast<float>(std::sin(ang)));
        for (int i = 0; i < n; i += len) {
            std::complex<float> w(1.0f, 0.0f);
            for (int k = 0; k < len / 2; ++k) {
                const std::complex<float> u = buf[static_cast<size_t>(i + k)];
                const std::complex<float> v = buf[static_cast<size_t>(i + k + len / 2)] * w;
                buf[static_cast<size_t>(i + k)] = u + v;
                buf[static_cast<size_t>(i + k + len / 2)] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse) {
        const float inv = 1.0f / static_cast<float>(n);
        for (auto& c : buf) c *= inv;
    }
}

Stft stft(const std::vector<float>& samples, int n_fft, int hop, Window window, bool center) {
    if (!is_pow2(n_fft)) throw ValueError("n_fft must be a power of two");
    if (hop <= 0 || hop > n_fft) throw ValueError("hop must be in (0, n_fft]");
    const std::vector<float> x = center ? center_pad(samples, n_fft) : samples;
    const int len = static_cast<int>(x.size());
    if (len < n_fft)
        throw ValueError("waveform of " + std::to_string(len) +
                         " samples is shorter than one fft frame");
    const std::vector<float> win = make_window(window, n_fft);

    Stft out;
    out.bins = n_fft / 2 + 1;
    out.frames = 1 + (len - n_fft) / hop;
    out.values.resize(static_cast<size_t>(out.bins) * out.frames);
    std::vector<std::complex<float>> buf(static_cast<size_t>(n_fft));
    for (int f = 0; f < out.frames; ++f) {
        const float* seg = x.data() + static_cast<int64_t>(f) * hop;
        for (int i = 0; i < n_fft; ++i)
            buf[static_cast<size_t>(i)] = {seg[i] * win[static_cast<size_t>(i)], 0.0f};
        fft_inplace(buf, false);
        for (int b = 0; b < out.bins; ++b)
            out.values[static_cast<size_t>(f) * out.bins + b] = buf[static_cast<size_t>(b)];
    }
    return out;
}

std::vector<float> istft(const Stft& spec, int n_fft, int hop, int out_len) {
    const std::vector<float> win = make_window(Window::hann, n_fft);
    const int padded = (spec.frames - 1) * hop + n_fft;
    std::vector<float> acc(static_cast<size_t>(padded), 0.0f);
    std::vector<float> norm(static_cast<size_t>(padded), 0.0f);
    std::vector<std::complex<float>> buf(static_cast<size_t>(n_fft));
    for (int f = 0; f < spec.frames; ++f) {
        const std::complex<float>* row = spec.values.data() + static_cast<int64_t>(f) * spec.bins;
        for (int b = 0; b < spec.bins; ++b) buf[static_cast<size_t>(b)] = row[b];
        for (int b = spec.bins; b < n_fft; ++b)
            buf[static_cast<size_t>(b)] = std::conj(row[n_fft - b]);
        fft_inplace(buf, true);
        float* dst = acc.data() + static_cast<int64_t>(f) * hop;
        float* nrm = norm.data() + static_cast<int64_t>(f) * hop;
        for (int i = 0; i < n_fft; ++i) {
            dst[i] += buf[static_cast<size_t>(i)].real() * win[static_cast<size_t>(i)];
            nrm[i] += win[static_cast<size_t>(i)] * win[static_cast<size_t>(i)];
        }
    }
    // drop the center padding
    const int off = n_fft / 2;
    std::vector<float> out(static_cast<size_t>(out_len), 0.0f);
    for (int i = 0; i < out_len; ++i) {
        const int j = i + off;
        if (j < padded && norm[static_cast<size_t>(j)] > 1e-8f)
            out[static_cast<size_t>(i)] = acc[static_cast<size_t>(j)] / norm[static_cast<size_t>(j)];
    }
    return out;
}

std::vector<float> mel_filterbank(int n_mels, int n_fft, int sample_rate, float fmin, float fmax) {
    const int bins = n_fft / 2 + 1;
    auto hz_to_mel = [](float f) { return 2595.0f * std::log10(1.0f + f / 700.0f); };
    auto mel_to_hz = [](float m) { return 700.0f * (std::pow(10.0f, m / 2595.0f) - 1.0f); };
    const float mlo = hz_to_mel(fmin), mhi = hz_to_mel(fmax);
    std::vector<float> centers(static_cast<size_t>(n_mels) + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        centers[static_cast<size_t>(i)] =
            mel_to_hz(mlo + (mhi - mlo) * static_cast<float>(i) / static_cast<float>(n_mels + 1));

    std::vector<float> fb(static_cast<size_t>(n_mels) * bins, 0.0f);
    for (int m = 0; m < n_mels; ++m) {
        const float lo = centers[static_cast<size_t>(m)];
        const float c = centers[static_cast<size_t>(m) + 1];
        const float hi = centers[static_cast<size_t>(m) + 2];
        double row_sum = 0.0;
        for (int b = 0; b < bins; ++b) {
            const float f = static_cast<float>(b) * static_cast<float>(sample_rate) /
                            static_cast<float>(n_fft);
            float w = 0.0f;
            if (f > lo && f < hi) w = f <= c ? (f - lo) / (c - lo) : (hi - f) / (hi - c);
            fb[static_cast<size_t>(m) * bins + b] = w;
            row_sum += w;
        }
        if (row_sum <= 0.0)
            throw ValueError("mel filter " + std::to_string(m) + " covers no fft bins");
        for (int b = 0; b < bins; ++b)
            fb[static_cast<size_t>(m) * bins + b] = static_cast<float>(fb[static_cast<size_t>(m) * bins + b] / row_sum);
    }
    return fb;
}

Tensor mel_forward(const std::vector<float>& samples, const AudioConfig& cfg) {
    const Stft spec = stft(samples, cfg.n_fft, cfg.hop, Window::hann, true);
    const int bins = spec.bins;
    const std::vector<float> win = make_window(Window::hann, cfg.n_fft);
    double wsum = 0.0;
    for (float w : win) wsum += w;
    const float ref = static_cast<float>(wsum * wsum);

    const std::vector<float> fb =
        mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.fmin, cfg.fmax);
    const int frames = std::min(spec.frames, cfg.mel_frames);
    std::vector<float> mel(static_cast<size_t>(cfg.n_mels) * cfg.mel_frames, -1.0f);
    const float span = cfg.db_high - cfg.db_low;
    for (int f = 0; f < frames; ++f) {
        const std::complex<float>* row = spec.values.data() + static_cast<int64_t>(f) * bins;
        for (int m = 0; m < cfg.n_mels; ++m) {
            const float* w = fb.data() + static_cast<int64_t>(m) * bins;
            double acc = 0.0;
            for (int b = 0; b < bins; ++b) acc += static_cast<double>(std::norm(row[b])) * w[b];
            const float p = std::max(cfg.log_floor, static_cast<float>(acc) / ref);
            const float db = std::log10(p);
            const float unit = std::clamp((db - cfg.db_low) / span, 0.0f, 1.0f);
            mel[static_cast<size_t>(m) * cfg.mel_frames + f] = 2.0f * unit - 1.0f;
        }
    }
    return Tensor::from({cfg.n_mels, cfg.mel_frames}, std::move(mel));
}

void mel_denormalize(const Tensor& mel, std::vector<float>& power_out, const AudioConfig& cfg) {
    if (mel.rank() != 2 || mel.dim(0) != cfg.n_mels)
        throw ShapeError("mel must be [" + std::to_string(cfg.n_mels) + " x frames], got " +
                         shape_str(mel.shape()));
    const float span = cfg.db_high - cfg.db_low;
    power_out.resize(static_cast<size_t>(mel.numel()));
    const float* md = mel.data();
    for (int64_t i = 0; i < mel.numel(); ++i) {
        // the bottom of the range is the log floor; map it to true silence
        if (md[i] <= -1.0f + 1e-6f) {
            power_out[static_cast<size_t>(i)] = 0.0f;
            continue;
        }
        const float unit = (md[i] + 1.0f) * 0.5f;
        power_out[static_cast<size_t>(i)] = std::pow(10.0f, cfg.db_low + span * unit);
    }
}

std::vector<float> griffin_lim(const Tensor& mel, const AudioConfig& cfg, uint64_t seed) {
    if (cfg.griffin_lim_iters < 1) throw ValueError("griffin_lim needs at least one iteration");
    const int bins = cfg.n_fft / 2 + 1;
    const int frames = mel.dim(1);

    // mel power -> linear power via least squares against the filterbank
    std::vector<float> mel_power;
    mel_denormalize(mel, mel_power, cfg);
    const std::vector<float> fbv =
        mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.fmin, cfg.fmax);
    Eigen::MatrixXf M(cfg.n_mels, bins);
    for (int m = 0; m < cfg.n_mels; ++m)
        for (int b = 0; b < bins; ++b) M(m, b) = fbv[static_cast<size_t>(m) * bins + b];
    Eigen::MatrixXf gram = M * M.transpose();
    gram.diagonal().array() += 1e-8f;
    Eigen::MatrixXf pinv = M.transpose() * gram.ldlt().solve(
                                               Eigen::MatrixXf::Identity(cfg.n_mels, cfg.n_mels));

    Eigen::MatrixXf mp(cfg.n_mels, frames);
    for (int m = 0; m < cfg.n_mels; ++m)
        for (int f = 0; f < frames; ++f) mp(m, f) = mel_power[static_cast<size_t>(m) * frames + f];
    Eigen::MatrixXf lin = (pinv * mp).cwiseMax(0.0f);  // [bins x frames]

    const std::vector<float> win = make_window(Window::hann, cfg.n_fft);
    double wsum = 0.0;
    for (float w : win) wsum += w;
    const float ref = static_cast<float>(wsum);

    Stft spec;
    spec.bins = bins;
    spec.frames = frames;
    spec.values.resize(static_cast<size_t>(bins) * frames);
    Rng rng(seed);
    std::vector<float> target_mag(static_cast<size_t>(bins) * frames);
    for (int f = 0; f < frames; ++f)
        for (int b = 0; b < bins; ++b) {
            const float mag = std::sqrt(lin(b, f)) * ref;
            target_mag[static_cast<size_t>(f) * bins + b] = mag;
            const float ph = static_cast<float>(rng.uniform()) * 2.0f * std::numbers::pi_v<float>;
            spec.values[static_cast<size_t>(f) * bins + b] =
                std::polar(mag, ph);
        }

    std::vector<float> x;
    for (int it = 0; it < cfg.griffin_lim_iters; ++it) {
        x = istft(spec, cfg.n_fft, cfg.hop, cfg.clip_samples);
        const Stft re = stft(x, cfg.n_fft, cfg.hop, Window::hann, true);
        const int nf = std::min(re.frames, frames);
        for (int f = 0; f < nf; ++f)
            for (int b = 0; b < bins; ++b) {
                const std::complex<float> c = re.values[static_cast<size_t>(f) * bins + b];
                const float a = std::abs(c);
                const std::complex<float> phase =
                    a > 1e-12f ? c / a : std::complex<float>(1.0f, 0.0f);
                spec.values[static_cast<size_t>(f) * bins + b] =
                    phase * target_mag[static_cast<size_t>(f) * bins + b];
            }
    }
    x = istft(spec, cfg.n_fft, cfg.hop, cfg.clip_samples);
    for (auto& v : x) v = std::clamp(v, -1.0f, 1.0f);
    return x;
}

}  // namespace foley
