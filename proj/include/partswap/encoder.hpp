#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "partswap/param_store.hpp"
#include "partswap/tensor.hpp"

namespace partswap {

struct EncoderConfig {
    int patch = 4;
    int dim = 64;
    int blocks = 4;
    std::vector<int> taps = {2, 4};  // 1-indexed stage outputs stacked by encode_hierarchical
};

// Residual conv feature extractor for facial parts. encode() returns the
// penultimate stage: stem, then blocks 1..N-1 with self-attention folded into
// the last of them. The final configured block runs only in hierarchical
// mode, where the tapped stage outputs are stacked channel-wise.
template <class T>
class PartEncoder {
  public:
    PartEncoder(ParamStore<T>& ps, std::string prefix, EncoderConfig cfg)
        : ps_(&ps), prefix_(std::move(prefix)), cfg_(std::move(cfg)) {
        if (cfg_.patch < 1) throw ConfigError("encoder.patch must be >= 1");
        if (cfg_.dim < 8 || cfg_.dim % 8 != 0)
            throw ConfigError("encoder.dim must be a positive multiple of 8");
        if (cfg_.blocks < 2) throw ConfigError("encoder.blocks must be >= 2");
        if (cfg_.taps.empty()) throw ConfigError("encoder.taps must not be empty");
        for (int t : cfg_.taps)
            if (t < 1 || t > cfg_.blocks)
                throw ConfigError("encoder.taps entries must lie in [1, encoder.blocks]");
    }

    int feature_dim(bool hierarchical) const {
        return hierarchical ? cfg_.dim * int(cfg_.taps.size()) : cfg_.dim;
    }
    const EncoderConfig& config() const { return cfg_; }

    Tensor<T> encode(const Tensor<T>& img) const { return run(img, cfg_.blocks - 1, nullptr); }

    Tensor<T> encode_hierarchical(const Tensor<T>& img) const {
        std::vector<Tensor<T>> stage_out;
        run(img, cfg_.blocks, &stage_out);
        std::vector<Tensor<T>> picked;
        for (int t : cfg_.taps) picked.push_back(stage_out[size_t(t) - 1]);
        return concat_ch(picked);
    }

  private:
    Tensor<T> param(const std::string& n, const Shape& s, Init init) const {
        return ps_->param(prefix_ + "." + n, s, init);
    }

    Tensor<T> run(const Tensor<T>& img, int stages, std::vector<Tensor<T>>* outs) const {
        const Shape& in = img.shape();
        if (in.size() != 3 || in[0] != 3)
            throw DimensionError("encoder input must be [3,H,W], got " + shape_str(in));
        if (in[1] % cfg_.patch != 0 || in[2] % cfg_.patch != 0)
            throw DimensionError("encoder input extents must be divisible by encoder.patch");
        const int d = cfg_.dim;
        Tensor<T> h = conv2d(
            img,
            param("stem.k", {d, 3, cfg_.patch, cfg_.patch},
                  Init::normal(std::sqrt(2.0 / (3.0 * cfg_.patch * cfg_.patch)))),
            param("stem.b", {d}, Init::zeros()), cfg_.patch, 0);
        for (int i = 1; i <= stages; ++i) {
            std::string b = "b" + std::to_string(i) + ".";
            Tensor<T> r = conv2d(
                silu(group_norm(h, param(b + "gn1.g", {d}, Init::ones()),
                                param(b + "gn1.b", {d}, Init::zeros()), 8)),
                param(b + "c1.k", {d, d, 3, 3}, Init::normal(std::sqrt(2.0 / (9.0 * d)))),
                param(b + "c1.b", {d}, Init::zeros()), 1, 1);
            r = conv2d(silu(group_norm(r, param(b + "gn2.g", {d}, Init::ones()),
                                       param(b + "gn2.b", {d}, Init::zeros()), 8)),
                       param(b + "c2.k", {d, d, 3, 3}, Init::zeros()),
                       param(b + "c2.b", {d}, Init::zeros()), 1, 1);
            h = add(h, r);
            if (i == cfg_.blocks - 1) h = attn_block(h);
            if (outs) outs->push_back(h);
        }
        return h;
    }

    Tensor<T> attn_block(const Tensor<T>& x) const {
        const int d = cfg_.dim;
        Tensor<T> t = to_tokens(group_norm(x, param("attn.gn.g", {d}, Init::ones()),
                                           param("attn.gn.b", {d}, Init::zeros()), 8));
        double s = std::sqrt(1.0 / d);
        Tensor<T> q = linear_nobias(t, param("attn.q", {d, d}, Init::normal(s)));
        Tensor<T> k = linear_nobias(t, param("attn.k", {d, d}, Init::normal(s)));
        Tensor<T> v = linear_nobias(t, param("attn.v", {d, d}, Init::normal(s)));
        Tensor<T> o = linear_nobias(attention(q, k, v), param("attn.o", {d, d}, Init::zeros()));
        return add(x, from_tokens(o, x.shape()[1], x.shape()[2]));
    }

    ParamStore<T>* ps_;
    std::string prefix_;
    EncoderConfig cfg_;
};

}  // namespace partswap
