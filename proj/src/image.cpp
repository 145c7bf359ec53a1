#include "foley/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "foley/errors.hpp"

namespace foley {

void write_pgm(const std::string& path, const Tensor& img) {
    if (img.rank() != 2) throw ShapeError("pgm output needs a [H x W] tensor");
    const int h = img.dim(0), w = img.dim(1);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "P5\n" << w << " " << h << "\n255\n";
    const float* d = img.data();
    std::string row(static_cast<size_t>(w), '\0');
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float v = std::clamp(d[static_cast<int64_t>(y) * w + x], -1.0f, 1.0f);
            row[static_cast<size_t>(x)] =
                static_cast<char>(std::lround((v + 1.0f) * 0.5f * 255.0f));
        }
        os.write(row.data(), w);
    }
    if (!os) throw IoError("write failed for '" + path + "'");
}

}  // namespace foley
