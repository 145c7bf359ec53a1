#include <cmath>
#include <complex>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "foley/audio.hpp"
#include "foley/errors.hpp"

using namespace foley;

namespace {
constexpr double kPi = 3.14159265358979323846;

std::vector<float> sine(int n, double freq_hz, int sr, float amp = 1.0f) {
    std::vector<float> s(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        s[static_cast<size_t>(i)] = amp * static_cast<float>(std::sin(2.0 * kPi * freq_hz * i / sr));
    return s;
}
}  // namespace

TEST_CASE("fft of an impulse is flat, and of a bin-aligned sine is a spike") {
    std::vector<std::complex<float>> buf(8, {0, 0});
    buf[0] = {1, 0};
    fft_inplace(buf, false);
    for (const auto& c : buf) {
        CHECK(c.real() == doctest::Approx(1.0f).epsilon(1e-6));
        CHECK(std::abs(c.imag()) < 1e-6f);
    }

    // cos(2*pi*2k/N) concentrates in bins 2 and N-2 with weight N/2
    const int N = 64;
    std::vector<std::complex<float>> cosb(N);
    for (int i = 0; i < N; ++i)
        cosb[static_cast<size_t>(i)] = {static_cast<float>(std::cos(2.0 * kPi * 2 * i / N)), 0.0f};
    fft_inplace(cosb, false);
    for (int k = 0; k < N; ++k) {
        const float mag = std::abs(cosb[static_cast<size_t>(k)]);
        if (k == 2 || k == N - 2)
            CHECK(mag == doctest::Approx(N / 2.0f).epsilon(1e-4));
        else
            CHECK(mag < 1e-3f);
    }
}

TEST_CASE("fft inverse round-trips and preserves energy") {
    const int N = 128;
    Rng rng(9);
    std::vector<std::complex<float>> buf(N);
    double time_energy = 0.0;
    for (auto& c : buf) {
        c = {static_cast<float>(rng.normal()), static_cast<float>(rng.normal())};
        time_energy += std::norm(c);
    }
    std::vector<std::complex<float>> orig = buf;
    fft_inplace(buf, false);
    double freq_energy = 0.0;
    for (const auto& c : buf) freq_energy += std::norm(c);
    // Parseval: sum |X|^2 = N * sum |x|^2
    CHECK(freq_energy / N == doctest::Approx(time_energy).epsilon(1e-4));
    fft_inplace(buf, true);
    for (int i = 0; i < N; ++i) {
        CHECK(buf[static_cast<size_t>(i)].real() ==
              doctest::Approx(orig[static_cast<size_t>(i)].real()).epsilon(1e-4));
        CHECK(buf[static_cast<size_t>(i)].imag() ==
              doctest::Approx(orig[static_cast<size_t>(i)].imag()).epsilon(1e-4));
    }

    std::vector<std::complex<float>> bad(12);
    CHECK_THROWS_AS(fft_inplace(bad, false), ValueError);
}

TEST_CASE("stft shape matches the centered framing contract") {
    AudioConfig cfg;
    std::vector<float> s(static_cast<size_t>(cfg.clip_samples), 0.25f);
    Stft sp = stft(s, cfg.n_fft, cfg.hop, Window::hann, true);
    CHECK(sp.bins == cfg.n_fft / 2 + 1);
    CHECK(sp.bins == 513);
    CHECK(sp.frames == 1 + cfg.clip_samples / cfg.hop);
    CHECK(sp.frames == 251);
    CHECK(static_cast<int>(sp.values.size()) == sp.bins * sp.frames);
}

TEST_CASE("bin-aligned sine lands in exactly one stft bin") {
    AudioConfig cfg;
    // 1 kHz at 16 kHz with n_fft 1024: bin = 1000/16000*1024 = 64 exactly
    std::vector<float> s = sine(cfg.clip_samples, 1000.0, cfg.sample_rate);
    Stft sp = stft(s, cfg.n_fft, cfg.hop, Window::hann, true);
    const int mid = sp.frames / 2;
    int peak = 0;
    float best = 0.0f;
    for (int b = 0; b < sp.bins; ++b) {
        const float mag = std::abs(sp.values[static_cast<size_t>(mid * sp.bins + b)]);
        if (mag > best) {
            best = mag;
            peak = b;
        }
    }
    CHECK(peak == 64);
    // Hann leakage is confined to adjacent bins
    const float far = std::abs(sp.values[static_cast<size_t>(mid * sp.bins + 70)]);
    CHECK(far < best * 1e-3f);
}

TEST_CASE("istft reconstructs the waveform from a hann stft") {
    AudioConfig cfg;
    const int n = 8192;
    std::vector<float> s = sine(n, 523.25, cfg.sample_rate, 0.6f);
    Stft sp = stft(s, cfg.n_fft, cfg.hop, Window::hann, true);
    std::vector<float> r = istft(sp, cfg.n_fft, cfg.hop, n);
    REQUIRE(static_cast<int>(r.size()) == n);
    double err = 0.0, ref = 0.0;
    for (int i = 0; i < n; ++i) {
        err += (r[static_cast<size_t>(i)] - s[static_cast<size_t>(i)]) *
               (r[static_cast<size_t>(i)] - s[static_cast<size_t>(i)]);
        ref += s[static_cast<size_t>(i)] * s[static_cast<size_t>(i)];
    }
    CHECK(std::sqrt(err / ref) < 1e-4);
}

TEST_CASE("mel filterbank rows are normalized and cover the band") {
    AudioConfig cfg;
    std::vector<float> fb = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.fmin,
                                           cfg.fmax);
    const int bins = cfg.n_fft / 2 + 1;
    REQUIRE(static_cast<int>(fb.size()) == cfg.n_mels * bins);
    for (int m = 0; m < cfg.n_mels; ++m) {
        double row = 0.0;
        for (int b = 0; b < bins; ++b) row += fb[static_cast<size_t>(m * bins + b)];
        CHECK(row == doctest::Approx(1.0).epsilon(1e-4));
    }
    // energy above fmax contributes to no filter
    const int cut = static_cast<int>(cfg.fmax / cfg.sample_rate * cfg.n_fft) + 2;
    for (int m = 0; m < cfg.n_mels; ++m)
        for (int b = cut; b < bins; ++b) CHECK(fb[static_cast<size_t>(m * bins + b)] == 0.0f);
}

TEST_CASE("silence maps to the mel floor and denormalizes to zero power") {
    AudioConfig cfg;
    std::vector<float> s(static_cast<size_t>(cfg.clip_samples), 0.0f);
    Tensor mel = mel_forward(s, cfg);
    CHECK(mel.shape() == Shape{cfg.n_mels, cfg.mel_frames});
    for (float v : mel.vec()) CHECK(v == -1.0f);

    std::vector<float> power;
    mel_denormalize(mel, power, cfg);
    for (float p : power) CHECK(p == 0.0f);
}

TEST_CASE("mel of a tone is loud in the right band and in range") {
    AudioConfig cfg;
    std::vector<float> s = sine(cfg.clip_samples, 1000.0, cfg.sample_rate, 0.8f);
    Tensor mel = mel_forward(s, cfg);
    float lo = 1e9f, hi = -1e9f;
    for (float v : mel.vec()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo >= -1.0f);
    CHECK(hi <= 1.0f);
    CHECK(hi > -0.6f);  // a strong tone sits well above the floor

    // the loudest mel channel covers 1 kHz
    int best_m = 0;
    float best_e = -1e9f;
    const int F = cfg.mel_frames;
    for (int m = 0; m < cfg.n_mels; ++m) {
        float e = 0.0f;
        for (int f = 0; f < F; ++f) e += mel.vec()[static_cast<size_t>(m * F + f)];
        if (e > best_e) {
            best_e = e;
            best_m = m;
        }
    }
    std::vector<float> fb = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.fmin,
                                           cfg.fmax);
    const int bins = cfg.n_fft / 2 + 1;
    CHECK(fb[static_cast<size_t>(best_m * bins + 64)] > 0.0f);
}

TEST_CASE("trailing mel frames past the clip are padded with silence") {
    AudioConfig cfg;
    std::vector<float> s = sine(cfg.clip_samples, 440.0, cfg.sample_rate, 0.5f);
    Tensor mel = mel_forward(s, cfg);
    const int real = cfg.stft_frames();  // 251 of 256
    for (int m = 0; m < cfg.n_mels; ++m)
        for (int f = real; f < cfg.mel_frames; ++f)
            CHECK(mel.vec()[static_cast<size_t>(m * cfg.mel_frames + f)] == -1.0f);
}

TEST_CASE("griffin lim is deterministic and recovers a dominant tone") {
    AudioConfig cfg;
    cfg.griffin_lim_iters = 30;
    std::vector<float> s = sine(cfg.clip_samples, 1000.0, cfg.sample_rate, 0.7f);
    Tensor mel = mel_forward(s, cfg);

    std::vector<float> a = griffin_lim(mel, cfg, 77);
    std::vector<float> b = griffin_lim(mel, cfg, 77);
    CHECK(a == b);
    std::vector<float> c = griffin_lim(mel, cfg, 78);
    CHECK(a != c);
    REQUIRE(static_cast<int>(a.size()) == cfg.clip_samples);

    // spectrum of the reconstruction peaks near the original bin
    Stft sp = stft(a, cfg.n_fft, cfg.hop, Window::hann, true);
    const int mid = sp.frames / 2;
    int peak = 0;
    float best = 0.0f;
    for (int bin = 0; bin < sp.bins; ++bin) {
        const float mag = std::abs(sp.values[static_cast<size_t>(mid * sp.bins + bin)]);
        if (mag > best) {
            best = mag;
            peak = bin;
        }
    }
    CHECK(std::abs(peak - 64) <= 2);
}

TEST_CASE("griffin lim of the all-silence mel is all zeros") {
    AudioConfig cfg;
    cfg.griffin_lim_iters = 5;
    Tensor mel = Tensor::full({cfg.n_mels, cfg.mel_frames}, -1.0f);
    std::vector<float> out = griffin_lim(mel, cfg, 1);
    for (float v : out) CHECK(v == 0.0f);
}
