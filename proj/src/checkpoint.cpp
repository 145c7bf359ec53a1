#include "foley/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_set>

namespace foley {

namespace {

constexpr char kMagic[4] = {'N', 'T', 'C', '1'};

template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    auto u = static_cast<uint64_t>(v);
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is)
        throw CheckpointError(CheckpointError::Kind::truncated,
                              "checkpoint ends in the middle of a field");
    uint64_t u = 0;
    for (size_t i = 0; i < sizeof(T); ++i) u |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return static_cast<T>(u);
}

void write_f32_le(std::ostream& os, const float* p, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        uint32_t u;
        std::memcpy(&u, &p[i], 4);
        write_le<uint32_t>(os, u);
    }
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& entries) {
    {
        std::unordered_set<std::string> seen;
        for (const auto& [name, t] : entries)
            if (!seen.insert(name).second)
                throw CheckpointError(CheckpointError::Kind::duplicate_name,
                                      "duplicate tensor name '" + name + "'");
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open '" + tmp + "' for writing");
        os.write(kMagic, 4);
        write_le<uint32_t>(os, static_cast<uint32_t>(entries.size()));
        uint64_t total = 4 + 4;
        for (const auto& [name, t] : entries) {
            if (name.size() > 0xffff) throw ValueError("tensor name too long: " + name);
            write_le<uint16_t>(os, static_cast<uint16_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_le<uint8_t>(os, 0);
            write_le<uint8_t>(os, static_cast<uint8_t>(t.rank()));
            for (int d = 0; d < t.rank(); ++d) write_le<uint64_t>(os, static_cast<uint64_t>(t.dim(d)));
            write_f32_le(os, t.data(), t.numel());
            total += 2 + name.size() + 1 + 1 + 8ull * t.rank() + 4ull * t.numel();
        }
        total += 8;
        write_le<uint64_t>(os, total);
        os.flush();
        if (!os) throw IoError("write failed for '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint '" + path + "'");
    const uint64_t file_size = static_cast<uint64_t>(std::filesystem::file_size(path));

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError(CheckpointError::Kind::bad_magic,
                              "'" + path + "' is not a checkpoint file");
    const uint32_t count = read_le<uint32_t>(is);
    std::vector<std::pair<std::string, Tensor>> entries;
    entries.reserve(count);
    std::unordered_set<std::string> seen;
    for (uint32_t e = 0; e < count; ++e) {
        const uint16_t name_len = read_le<uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is)
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  "checkpoint ends inside a tensor name");
        if (!seen.insert(name).second)
            throw CheckpointError(CheckpointError::Kind::duplicate_name,
                                  "duplicate tensor name '" + name + "'");
        const uint8_t dtype = read_le<uint8_t>(is);
        if (dtype != 0)
            throw CheckpointError(CheckpointError::Kind::bad_dtype,
                                  "tensor '" + name + "' has unknown dtype code " +
                                      std::to_string(dtype));
        const uint8_t rank = read_le<uint8_t>(is);
        Shape shape(rank);
        int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            const uint64_t dim = read_le<uint64_t>(is);
            if (dim == 0 || dim > (1ull << 32))
                throw CheckpointError(CheckpointError::Kind::truncated,
                                      "tensor '" + name + "' has implausible dim");
            shape[d] = static_cast<int>(dim);
            numel *= shape[d];
        }
        std::vector<float> data(static_cast<size_t>(numel));
        for (int64_t i = 0; i < numel; ++i) {
            const uint32_t u = read_le<uint32_t>(is);
            std::memcpy(&data[static_cast<size_t>(i)], &u, 4);
        }
        entries.emplace_back(name, Tensor::from(shape, std::move(data)));
    }
    const uint64_t recorded = read_le<uint64_t>(is);
    if (recorded != file_size)
        throw CheckpointError(CheckpointError::Kind::truncated,
                              "checkpoint length check failed: recorded " +
                                  std::to_string(recorded) + " bytes, file has " +
                                  std::to_string(file_size));
    return entries;
}

const Tensor* find_entry(const std::vector<std::pair<std::string, Tensor>>& entries,
                         const std::string& name) {
    for (const auto& [n, t] : entries)
        if (n == name) return &t;
    return nullptr;
}

}  // namespace foley
