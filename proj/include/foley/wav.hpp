#pragma once

#include <string>
#include <vector>

#include "foley/errors.hpp"

namespace foley {

// Mono 16-bit PCM RIFF files. Samples are float in [-1, 1]; values outside are
// clipped on write.
void write_wav(const std::string& path, const std::vector<float>& samples, int sample_rate);

struct WavData {
    std::vector<float> samples;
    int sample_rate = 0;
};
WavData read_wav(const std::string& path);

}  // namespace foley
