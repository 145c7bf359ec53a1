#include "foley/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace foley {

namespace {

void put_u32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t get_u16(const unsigned char* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

void write_wav(const std::string& path, const std::vector<float>& samples, int sample_rate) {
    const uint32_t n = static_cast<uint32_t>(samples.size());
    const uint32_t data_bytes = n * 2;
    std::string out;
    out.reserve(44 + data_bytes);
    out += "RIFF";
    put_u32(out, 36 + data_bytes);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<uint32_t>(sample_rate));
    put_u32(out, static_cast<uint32_t>(sample_rate) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out += "data";
    put_u32(out, data_bytes);
    for (float s : samples) {
        const float c = std::clamp(s, -1.0f, 1.0f);
        const auto v = static_cast<int16_t>(std::lround(c * 32767.0f));
        put_u16(out, static_cast<uint16_t>(v));
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw IoError("write failed for '" + path + "'");
}

WavData read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    if (raw.size() < 44 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
        std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
        throw IoError("'" + path + "' is not a RIFF wav file");

    WavData out;
    int bits = 0, channels = 0;
    size_t pos = 12;
    bool have_fmt = false, have_data = false;
    while (pos + 8 <= raw.size()) {
        const uint32_t chunk_len = get_u32(raw.data() + pos + 4);
        const unsigned char* body = raw.data() + pos + 8;
        if (pos + 8 + chunk_len > raw.size()) throw IoError("'" + path + "' has a truncated chunk");
        if (std::memcmp(raw.data() + pos, "fmt ", 4) == 0 && chunk_len >= 16) {
            if (get_u16(body) != 1) throw IoError("'" + path + "': only PCM wav supported");
            channels = get_u16(body + 2);
            out.sample_rate = static_cast<int>(get_u32(body + 4));
            bits = get_u16(body + 14);
            have_fmt = true;
        } else if (std::memcmp(raw.data() + pos, "data", 4) == 0) {
            if (!have_fmt) throw IoError("'" + path + "': data chunk before fmt");
            if (channels != 1 || bits != 16)
                throw IoError("'" + path + "': expected mono 16-bit PCM");
            const uint32_t n = chunk_len / 2;
            out.samples.resize(n);
            for (uint32_t i = 0; i < n; ++i) {
                const auto v = static_cast<int16_t>(get_u16(body + 2 * i));
                out.samples[i] = static_cast<float>(v) / 32767.0f;
            }
            have_data = true;
        }
        pos += 8 + chunk_len + (chunk_len & 1);
    }
    if (!have_data) throw IoError("'" + path + "' has no data chunk");
    return out;
}

}  // namespace foley
