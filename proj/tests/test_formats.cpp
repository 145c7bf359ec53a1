#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "foley/checkpoint.hpp"
#include "foley/dataset.hpp"
#include "foley/errors.hpp"
#include "foley/image.hpp"
#include "foley/rng.hpp"
#include "foley/tensor.hpp"
#include "foley/wav.hpp"

using namespace foley;
namespace fs = std::filesystem;

namespace {
struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("foley_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}
}  // namespace

TEST_CASE("checkpoint round-trips tensors bit-exactly") {
    TempDir td;
    Rng rng(31);
    std::vector<std::pair<std::string, Tensor>> entries;
    entries.emplace_back("enc.w", Tensor::randn({4, 3, 2}, rng));
    entries.emplace_back("enc.b", Tensor::randn({3}, rng));
    entries.emplace_back("scalar", Tensor::scalar(0.25f));
    const std::string p = td.file("model.ntc");
    save_checkpoint(p, entries);

    auto back = load_checkpoint(p);
    REQUIRE(back.size() == 3);
    for (size_t i = 0; i < entries.size(); ++i) {
        CHECK(back[i].first == entries[i].first);
        CHECK(back[i].second.shape() == entries[i].second.shape());
        CHECK(back[i].second.vec() == entries[i].second.vec());
    }
    CHECK(find_entry(back, "enc.b") != nullptr);
    CHECK(find_entry(back, "enc.b")->vec() == entries[1].second.vec());
    CHECK(find_entry(back, "nope") == nullptr);

    // byte-stable: writing the same entries again produces the same file
    const std::string p2 = td.file("model2.ntc");
    save_checkpoint(p2, entries);
    CHECK(slurp(p) == slurp(p2));

    // empty checkpoint is legal
    const std::string pe = td.file("empty.ntc");
    save_checkpoint(pe, {});
    CHECK(load_checkpoint(pe).empty());
}

TEST_CASE("checkpoint loader rejects damage with the right error kind") {
    TempDir td;
    Rng rng(32);
    const std::string p = td.file("m.ntc");
    save_checkpoint(p, {{"w", Tensor::randn({8, 8}, rng)}});
    std::vector<char> good = slurp(p);

    auto kind_of = [&](const std::string& path) {
        try {
            load_checkpoint(path);
        } catch (const CheckpointError& e) {
            return e.kind;
        }
        FAIL("expected CheckpointError");
        return CheckpointError::Kind::bad_magic;
    };

    std::vector<char> magic = good;
    magic[0] = 'X';
    spit(td.file("bad_magic.ntc"), magic);
    CHECK(kind_of(td.file("bad_magic.ntc")) == CheckpointError::Kind::bad_magic);

    std::vector<char> cut(good.begin(), good.end() - 9);
    spit(td.file("cut.ntc"), cut);
    CHECK(kind_of(td.file("cut.ntc")) == CheckpointError::Kind::truncated);

    std::vector<char> tiny(good.begin(), good.begin() + 6);
    spit(td.file("tiny.ntc"), tiny);
    CHECK(kind_of(td.file("tiny.ntc")) == CheckpointError::Kind::truncated);

    CHECK_THROWS_AS(load_checkpoint(td.file("missing.ntc")), IoError);

    // the writer refuses duplicates outright
    std::vector<std::pair<std::string, Tensor>> dup;
    dup.emplace_back("w", Tensor::zeros({1}));
    dup.emplace_back("w", Tensor::zeros({1}));
    try {
        save_checkpoint(td.file("dup_save.ntc"), dup);
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(e.kind == CheckpointError::Kind::duplicate_name);
    }

    // so a duplicate on disk is forged by renaming the second entry byte
    const std::string pd = td.file("dup.ntc");
    save_checkpoint(pd, {{"w", Tensor::zeros({1})}, {"x", Tensor::zeros({1})}});
    std::vector<char> forged = slurp(pd);
    // header 8, then per entry: u16 len, name, dtype, rank, u64 dim, f32 value
    const size_t second_name_at = 8 + (2 + 1 + 1 + 1 + 8 + 4) + 2;
    REQUIRE(forged[second_name_at] == 'x');
    forged[second_name_at] = 'w';
    spit(pd, forged);
    CHECK(kind_of(pd) == CheckpointError::Kind::duplicate_name);
}

TEST_CASE("checkpoint dtype byte is validated") {
    TempDir td;
    const std::string p = td.file("d.ntc");
    save_checkpoint(p, {{"w", Tensor::scalar(1.0f)}});
    std::vector<char> bytes = slurp(p);
    // entry layout after the 8-byte header: u16 len, name, then dtype
    const size_t dtype_at = 8 + 2 + 1;
    REQUIRE(bytes[dtype_at] == 0);
    bytes[dtype_at] = 7;
    spit(p, bytes);
    try {
        load_checkpoint(p);
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(e.kind == CheckpointError::Kind::bad_dtype);
    }
}

TEST_CASE("wav round-trips within 16-bit quantization and clips out of range") {
    TempDir td;
    Rng rng(33);
    std::vector<float> s(2048);
    for (auto& v : s) v = static_cast<float>(rng.uniform(-0.99, 0.99));
    const std::string p = td.file("a.wav");
    write_wav(p, s, 16000);
    WavData back = read_wav(p);
    CHECK(back.sample_rate == 16000);
    REQUIRE(back.samples.size() == s.size());
    for (size_t i = 0; i < s.size(); ++i)
        CHECK(std::abs(back.samples[i] - s[i]) <= 2.0f / 32768.0f);

    write_wav(td.file("c.wav"), {2.0f, -3.0f, 0.5f}, 8000);
    WavData clipped = read_wav(td.file("c.wav"));
    CHECK(clipped.sample_rate == 8000);
    CHECK(clipped.samples[0] >= 0.999f);
    CHECK(clipped.samples[1] <= -0.999f);
    CHECK(clipped.samples[2] == doctest::Approx(0.5f).epsilon(1e-3));

    // deterministic bytes for identical input
    write_wav(td.file("d1.wav"), s, 16000);
    write_wav(td.file("d2.wav"), s, 16000);
    CHECK(slurp(td.file("d1.wav")) == slurp(td.file("d2.wav")));

    CHECK_THROWS_AS(read_wav(td.file("none.wav")), IoError);
}

TEST_CASE("video track file round-trips and rejects a bad magic") {
    TempDir td;
    Rng rng(34);
    Tensor frames = Tensor::randn({32, 16}, rng);
    const std::string p = td.file("v.vtrk");
    write_video_track(p, frames);
    Tensor back = read_video_track(p);
    CHECK(back.shape() == frames.shape());
    CHECK(back.vec() == frames.vec());

    std::vector<char> bytes = slurp(p);
    bytes[0] = 'Z';
    spit(p, bytes);
    CHECK_THROWS_AS(read_video_track(p), IoError);
    CHECK_THROWS_AS(read_video_track(td.file("none.vtrk")), IoError);
}

TEST_CASE("mask file is one raw byte per frame") {
    TempDir td;
    std::vector<float> mask(64, 0.0f);
    for (int i = 10; i < 20; ++i) mask[static_cast<size_t>(i)] = 1.0f;
    const std::string p = td.file("m.u8");
    write_mask_file(p, mask);
    CHECK(fs::file_size(p) == 64);
    std::vector<float> back = read_mask_file(p, 64);
    CHECK(back == mask);
    CHECK_THROWS_AS(read_mask_file(p, 128), IoError);
    CHECK_THROWS_AS(read_mask_file(td.file("none.u8"), 64), IoError);
}

TEST_CASE("pgm writes a valid P5 header with row zero on top") {
    TempDir td;
    // 2x3 ramp: -1 -> 0, +1 -> 255
    Tensor img = Tensor::from({2, 3}, {-1.0f, 0.0f, 1.0f, 1.0f, 0.0f, -1.0f});
    const std::string p = td.file("i.pgm");
    write_pgm(p, img);
    std::vector<char> bytes = slurp(p);
    const std::string head(bytes.begin(), bytes.begin() + 3);
    CHECK(head == "P5\n");
    const std::string text(bytes.begin(), bytes.end());
    CHECK(text.find("3 2") != std::string::npos);
    CHECK(text.find("255") != std::string::npos);
    // last 6 bytes are the pixels, first row first
    const auto* px = reinterpret_cast<const uint8_t*>(bytes.data() + bytes.size() - 6);
    CHECK(px[0] == 0);
    CHECK(px[2] == 255);
    CHECK(px[3] == 255);
    CHECK(px[5] == 0);
}

TEST_CASE("manifest round-trips entries as json lines") {
    TempDir td;
    std::vector<ManifestEntry> entries;
    entries.push_back({"train_000017", "dog_bark", "a dog barking", {{0.512, 0.256}, {1.792, 0.384}}});
    entries.push_back({"train_000018", "hammer", "a hammer striking wood", {}});
    const std::string p = td.file("manifest.jsonl");
    write_manifest(p, entries);

    std::vector<ManifestEntry> back = read_manifest(p);
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "train_000017");
    CHECK(back[0].cls == "dog_bark");
    CHECK(back[0].caption == "a dog barking");
    REQUIRE(back[0].event_times.size() == 2);
    CHECK(back[0].event_times[0].first == doctest::Approx(0.512));
    CHECK(back[0].event_times[0].second == doctest::Approx(0.256));
    CHECK(back[0].event_times[1].first == doctest::Approx(1.792));
    CHECK(back[1].event_times.empty());

    // one json object per line
    std::ifstream in(p);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            ++lines;
            CHECK(line.front() == '{');
        }
    }
    CHECK(lines == 2);
    CHECK_THROWS_AS(read_manifest(td.file("none.jsonl")), IoError);
}
