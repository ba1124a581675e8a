#pragma once

#include <array>
#include <string>

#include "partswap/encoder.hpp"
#include "partswap/maskops.hpp"
#include "partswap/param_store.hpp"
#include "partswap/tensor.hpp"

namespace partswap {

// Mask as a constant [d,h,w] tensor for cellwise feature masking.
template <class T>
Tensor<T> mask_expand(const Mask& m, int d) {
    std::vector<T> v(size_t(d) * m.h * m.w);
    for (int c = 0; c < d; ++c)
        for (size_t i = 0; i < m.v.size(); ++i) v[size_t(c) * m.v.size() + i] = T(m.v[i]);
    return Tensor<T>::from({d, m.h, m.w}, std::move(v));
}

// Per-slot feature maps over the feature grid plus the grid partition masks.
template <class T>
struct PartFeatures {
    std::array<Tensor<T>, 4> f;  // indexed by PartSlot
    std::array<Mask, 4> m;

    const Tensor<T>& feat(PartSlot s) const { return f[size_t(s)]; }
    const Mask& mask(PartSlot s) const { return m[size_t(s)]; }
};

template <class T>
struct SwapSource {
    Tensor<T> f;  // source face features on the same grid geometry
    Mask m;       // source part mask on the feature grid
};

// Which swappable slots to replace and where from. The remain slot has no
// entry here: it always stays with the target face.
template <class T>
struct SwapSpec {
    std::array<bool, 3> replace{false, false, false};
    std::array<SwapSource<T>, 3> src;

    void set(PartSlot slot, SwapSource<T> s) {
        if (slot == PartSlot::Remain) throw ContractError("the remain slot is not swappable");
        replace[size_t(slot)] = true;
        src[size_t(slot)] = std::move(s);
    }
};

// Resizes the source region to the target region: crop bbox(m_src) out of
// f_src, bilinear-resize to bbox(m_tgt) extents, place it there in an
// otherwise-zero map, keep only cells under m_tgt.
template <class T>
Tensor<T> region_resize_G(const Tensor<T>& f_src, const Mask& m_src, const Mask& m_tgt) {
    const Shape& s = f_src.shape();
    if (s.size() != 3) throw DimensionError("region_resize_G: features must be [d,h,w]");
    if (s[1] != m_src.h || s[2] != m_src.w)
        throw DimensionError("region_resize_G: source mask extents do not match features");
    BBox sb = bbox(m_src);
    BBox tb = bbox(m_tgt);
    Tensor<T> region = crop2d(f_src, sb.r0, sb.c0, sb.height(), sb.width());
    Tensor<T> sized = bilinear_resize(region, tb.height(), tb.width());
    Tensor<T> placed = embed2d(sized, m_tgt.h, m_tgt.w, tb.r0, tb.c0);
    return mul(placed, mask_expand<T>(m_tgt, s[0]));
}

// The transplant step: kept slots pass through untouched (same tensors);
// a replaced slot keeps its own features outside the target region and takes
// the resized source part inside it.
template <class T>
PartFeatures<T> transplant(const PartFeatures<T>& target, const SwapSpec<T>& spec) {
    PartFeatures<T> out = target;
    for (PartSlot slot : kSwappableSlots) {
        size_t i = size_t(slot);
        if (!spec.replace[i]) continue;
        const SwapSource<T>& s = spec.src[i];
        if (s.f.shape() != target.f[i].shape())
            throw DimensionError(std::string("transplant: source feature grid ") +
                                 shape_str(s.f.shape()) + " does not match target " +
                                 shape_str(target.f[i].shape()));
        const Mask& m_tgt = target.m[i];
        Tensor<T> kept = mul(target.f[i], mask_expand<T>(complement(m_tgt), target.f[i].shape()[0]));
        Tensor<T> masked_src = mul(s.f, mask_expand<T>(s.m, s.f.shape()[0]));
        out.f[i] = add(kept, region_resize_G(masked_src, s.m, m_tgt));
    }
    return out;
}

// Cellwise masked sum over the four slots.
template <class T>
Tensor<T> mosaic(const PartFeatures<T>& parts) {
    Tensor<T> acc;
    for (size_t i = 0; i < 4; ++i) {
        Tensor<T> term = mul(parts.f[i], mask_expand<T>(parts.m[i], parts.f[i].shape()[0]));
        acc = (i == 0) ? term : add(acc, term);
    }
    return acc;
}

// C = MLP(sum_i f'_i masked), the condition map fed to the denoiser.
template <class T>
class FusionModule {
  public:
    FusionModule(ParamStore<T>& ps, std::string prefix, int dim, int hidden_mult = 2)
        : ps_(&ps), prefix_(std::move(prefix)), dim_(dim), hidden_(dim * hidden_mult) {
        if (dim < 1 || hidden_mult < 1) throw ConfigError("fusion dims must be positive");
    }

    int out_dim() const { return dim_; }

    Tensor<T> aggregate(const PartFeatures<T>& parts) const {
        for (size_t i = 0; i < 4; ++i)
            if (parts.f[i].shape() != parts.f[0].shape())
                throw DimensionError("aggregate: slot feature shapes differ");
        Tensor<T> summed = mosaic(parts);
        const Shape& s = summed.shape();
        if (s[0] != dim_)
            throw DimensionError("aggregate: features have " + std::to_string(s[0]) +
                                 " channels, module is configured for " + std::to_string(dim_));
        Tensor<T> t = to_tokens(summed);
        double sd = std::sqrt(1.0 / dim_);
        Tensor<T> h = silu(linear(t, ps_->param(prefix_ + ".w1", {dim_, hidden_}, Init::normal(sd)),
                                  ps_->param(prefix_ + ".b1", {hidden_}, Init::zeros())));
        Tensor<T> o = linear(h,
                             ps_->param(prefix_ + ".w2", {hidden_, dim_},
                                        Init::normal(std::sqrt(1.0 / hidden_))),
                             ps_->param(prefix_ + ".b2", {dim_}, Init::zeros()));
        return from_tokens(o, s[1], s[2]);
    }

  private:
    ParamStore<T>* ps_;
    std::string prefix_;
    int dim_, hidden_;
};

// Per-slot masked encodings of one face plus the grid partition.
template <class T>
PartFeatures<T> decompose(const PartEncoder<T>& enc, const Image& img, const PartMaskSet& masks,
                          bool hierarchical = false) {
    PartFeatures<T> out;
    for (size_t i = 0; i < 4; ++i) {
        Image masked = apply_mask(img, masks.slot(PartSlot(i)));
        Tensor<T> x = image_tensor<T>(masked);
        out.f[i] = hierarchical ? enc.encode_hierarchical(x) : enc.encode(x);
    }
    const Shape& s = out.f[0].shape();
    PartMaskSet grid = partition_to_grid(masks, s[1], s[2]);
    out.m = {grid.eyes, grid.nose, grid.mouth, grid.remain};
    return out;
}

// Encodes a source face and pulls out one part for use in a SwapSpec.
template <class T>
SwapSource<T> make_swap_source(const PartEncoder<T>& enc, const Image& img,
                               const PartMaskSet& masks, PartSlot slot,
                               bool hierarchical = false) {
    if (slot == PartSlot::Remain) throw ContractError("the remain slot is not swappable");
    Image masked = apply_mask(img, masks.slot(slot));
    Tensor<T> x = image_tensor<T>(masked);
    Tensor<T> f = hierarchical ? enc.encode_hierarchical(x) : enc.encode(x);
    PartMaskSet grid = partition_to_grid(masks, f.shape()[1], f.shape()[2]);
    return SwapSource<T>{f, grid.slot(slot)};
}

}  // namespace partswap
