#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "partswap/common.hpp"

namespace partswap {

// Planar float RGB in [0,1], channel-major [3][h][w].
struct Image {
    int h = 0, w = 0;
    std::vector<float> rgb;

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), rgb(size_t(3) * h_ * w_, 0.0f) {}

    float& at(int c, int y, int x) { return rgb[(size_t(c) * h + y) * w + x]; }
    float at(int c, int y, int x) const { return rgb[(size_t(c) * h + y) * w + x]; }
};

Image load_ppm(const std::string& path);
void save_ppm(const Image& img, const std::string& path);

// quantize to the 8-bit grid used on disk
Image quantize8(const Image& img);

double image_mse(const Image& a, const Image& b);

namespace pnm_detail {
int next_header_int(std::istream& is, const std::string& path);
}

}  // namespace partswap
