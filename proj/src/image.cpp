#include "partswap/image.hpp"

#include <cmath>
#include <fstream>

namespace partswap {

namespace pnm_detail {

// skips whitespace and '#' comments between header tokens
int next_header_int(std::istream& is, const std::string& path) {
    int c = is.get();
    for (;;) {
        if (c == EOF) throw DataError("pnm: truncated header in " + path);
        if (c == '#') {
            do c = is.get();
            while (c != EOF && c != '\n');
            continue;
        }
        if (std::isspace(c)) {
            c = is.get();
            continue;
        }
        break;
    }
    int v = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        any = true;
        c = is.get();
    }
    if (!any) throw DataError("pnm: malformed header in " + path);
    return v;
}

}  // namespace pnm_detail

namespace {

uint8_t to_byte(float f) {
    float c = f < 0.0f ? 0.0f : (f > 1.0f ? 1.0f : f);
    return uint8_t(std::lround(c * 255.0f));
}

}  // namespace

Image load_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("ppm: cannot open " + path);
    char m0 = char(is.get()), m1 = char(is.get());
    if (m0 != 'P' || m1 != '6') throw DataError("ppm: not a P6 file: " + path);
    int w = pnm_detail::next_header_int(is, path);
    int h = pnm_detail::next_header_int(is, path);
    int maxv = pnm_detail::next_header_int(is, path);
    if (maxv != 255) throw DataError("ppm: only maxval 255 supported: " + path);
    // header ends with exactly one whitespace byte, already consumed above
    std::vector<unsigned char> buf(size_t(3) * h * w);
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (!is) throw DataError("ppm: truncated pixel data in " + path);
    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = float(buf[(size_t(y) * w + x) * 3 + c]) / 255.0f;
    return img;
}

void save_ppm(const Image& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("ppm: cannot open " + path + " for writing");
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    std::vector<unsigned char> buf(size_t(3) * img.h * img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                buf[(size_t(y) * img.w + x) * 3 + c] = to_byte(img.at(c, y, x));
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!os) throw DataError("ppm: write failed for " + path);
}

Image quantize8(const Image& img) {
    Image q(img.h, img.w);
    for (size_t i = 0; i < img.rgb.size(); ++i) q.rgb[i] = float(to_byte(img.rgb[i])) / 255.0f;
    return q;
}

double image_mse(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w)
        throw DimensionError("image_mse: extents differ");
    double s = 0;
    for (size_t i = 0; i < a.rgb.size(); ++i) {
        double d = double(a.rgb[i]) - double(b.rgb[i]);
        s += d * d;
    }
    return s / double(a.rgb.size());
}

}  // namespace partswap
