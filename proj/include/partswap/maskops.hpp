#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "partswap/common.hpp"
#include "partswap/image.hpp"
#include "partswap/tensor.hpp"

namespace partswap {

struct Mask {
    int h = 0, w = 0;
    std::vector<uint8_t> v;  // strictly 0 or 1

    Mask() = default;
    Mask(int h_, int w_) : h(h_), w(w_), v(size_t(h_) * w_, 0) {}

    uint8_t& at(int y, int x) { return v[size_t(y) * w + x]; }
    uint8_t at(int y, int x) const { return v[size_t(y) * w + x]; }
    int64_t count() const {
        int64_t n = 0;
        for (uint8_t c : v) n += c;
        return n;
    }
    bool same_extent(const Mask& o) const { return h == o.h && w == o.w; }
};

// inclusive bounds
struct BBox {
    int r0 = 0, r1 = 0, c0 = 0, c1 = 0;
    int height() const { return r1 - r0 + 1; }
    int width() const { return c1 - c0 + 1; }
};

enum class PartSlot { Eyes = 0, Nose = 1, Mouth = 2, Remain = 3 };
constexpr std::array<PartSlot, 3> kSwappableSlots{PartSlot::Eyes, PartSlot::Nose,
                                                  PartSlot::Mouth};
const char* slot_name(PartSlot s);

Mask complement(const Mask& m);
Mask mask_union(const Mask& a, const Mask& b);

// cellwise product of the three complements; parts must be pairwise disjoint
Mask remaining_mask(const Mask& eyes, const Mask& nose, const Mask& mouth);

// block majority vote, output cell is 1 iff covered fraction >= 0.5
Mask downsample_mask(const Mask& m, int h2, int w2);

BBox bbox(const Mask& m);

struct PartMaskSet {
    Mask eyes, nose, mouth, remain;

    static PartMaskSet from_parts(const Mask& eyes, const Mask& nose, const Mask& mouth);
    void validate() const;
    const Mask& slot(PartSlot s) const;
};

// Projects pixel-resolution part masks onto a gh x gw feature grid as an
// exact partition. A cell goes to the first part in slot order covering at
// least half of it; a part whose majority vote comes up empty falls back to
// claiming its best remaining cell, so nonempty pixel masks always yield
// nonempty grid masks. Everything unclaimed is remain.
PartMaskSet partition_to_grid(const PartMaskSet& pixel, int gh, int gw);

Mask load_pgm(const std::string& path);
void save_pgm(const Mask& m, const std::string& path);

// pixels outside the mask are zeroed in all three channels
Image apply_mask(const Image& img, const Mask& m);

template <class T>
Tensor<T> mask_tensor(const Mask& m) {
    std::vector<T> v(m.v.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = T(m.v[i]);
    return Tensor<T>::from({1, m.h, m.w}, std::move(v));
}

template <class T>
Tensor<T> image_tensor(const Image& img) {
    std::vector<T> v(img.rgb.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = T(img.rgb[i]);
    return Tensor<T>::from({3, img.h, img.w}, std::move(v));
}

template <class T>
Image tensor_image(const Tensor<T>& t) {
    const Shape& s = t.shape();
    if (s.size() != 3 || s[0] != 3)
        throw DimensionError("tensor_image expects [3,H,W], got " + shape_str(s));
    Image img(s[1], s[2]);
    for (size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = float(t.values()[i]);
    return img;
}

}  // namespace partswap
