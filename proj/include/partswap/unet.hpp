#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "partswap/injection.hpp"
#include "partswap/param_store.hpp"
#include "partswap/tensor.hpp"

namespace partswap {

// Sinusoidal timestep embedding: sin half then cos half over geometric
// frequencies 10000^(-j/half).
template <class T>
Tensor<T> time_embed(int64_t t, int dim, int64_t t_max) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("time embedding dim must be even and >= 2");
    if (t < 0 || t >= t_max)
        throw ContractError("timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(t_max) + ")");
    const int half = dim / 2;
    std::vector<T> v(dim);
    for (int j = 0; j < half; ++j) {
        double w = std::pow(10000.0, -double(j) / half);
        v[j] = T(std::sin(double(t) * w));
        v[half + j] = T(std::cos(double(t) * w));
    }
    return Tensor<T>::from({dim}, std::move(v));
}

// Concat(x_m, keep mask, z_t) along channels, then a 3x3 conv to the
// denoiser's working width.
template <class T>
Tensor<T> concat_adjust(ParamStore<T>& ps, const std::string& prefix, const Tensor<T>& x_m,
                        const Tensor<T>& keep_mask, const Tensor<T>& z_t, int out_ch) {
    if (x_m.shape() != z_t.shape())
        throw DimensionError("concat_adjust: x_m " + shape_str(x_m.shape()) +
                             " does not match z_t " + shape_str(z_t.shape()));
    if (keep_mask.shape() != Shape{1, x_m.dim(1), x_m.dim(2)})
        throw DimensionError("concat_adjust: keep mask must be [1,h,w] at latent extents");
    Tensor<T> z = concat_ch(std::vector<Tensor<T>>{x_m, keep_mask, z_t});
    const int in_ch = z.dim(0);
    return conv2d(z,
                  ps.param(prefix + ".k", {out_ch, in_ch, 3, 3},
                           Init::normal(std::sqrt(2.0 / (9.0 * in_ch)))),
                  ps.param(prefix + ".b", {out_ch}, Init::zeros()), 1, 1);
}

struct UNetConfig {
    int in_channels = 48;
    int base = 32;
    std::vector<int> mults = {1, 2, 4};
    std::vector<int> attn_levels = {2};
    int groups = 8;
    int time_dim = 128;
    int t_steps = 1000;
    InjectionMode mode = InjectionMode::AddInCA;
    double lambda = 1.0;
    bool nearest_inter = false;
};

template <class T>
struct DenoiseInput {
    Tensor<T> x_m;        // latent of the remain-masked image
    Tensor<T> keep_mask;  // [1,h,w] union of part regions at latent extents
    Tensor<T> z_t;        // noisy latent
    int64_t t = 0;
    std::vector<Tensor<T>> cond;  // one condition map, or four in multi mode
};

template <class T>
class UNet {
  public:
    UNet(ParamStore<T>& ps, std::string prefix, UNetConfig cfg)
        : ps_(&ps), prefix_(std::move(prefix)), cfg_(std::move(cfg)) {
        if (cfg_.mults.size() < 2) throw ConfigError("unet.mults needs at least 2 levels");
        if (cfg_.lambda < 0) throw ConfigError("inject.lambda must be >= 0");
        if (cfg_.base < 1 || cfg_.groups < 1) throw ConfigError("unet.base and unet.groups must be positive");
        if (cfg_.t_steps < 1) throw ConfigError("diffusion.T must be positive");
        for (int m : cfg_.mults)
            if (m < 1 || (cfg_.base * m) % cfg_.groups != 0)
                throw ConfigError("unet channel counts must be positive multiples of unet.groups");
        for (int l : cfg_.attn_levels)
            if (l < 0 || l >= int(cfg_.mults.size()))
                throw ConfigError("unet.attn_levels entries must lie in [0, levels)");
    }

    const UNetConfig& config() const { return cfg_; }

    int expected_injection_sites() const {
        const int levels = int(cfg_.mults.size());
        const int attn = int(cfg_.attn_levels.size());
        const int res_blocks = 2 * levels;
        int n = 0;
        if (mode_uses_cross_attn(cfg_.mode)) n += attn;
        if (mode_uses_add_in_ca(cfg_.mode)) n += attn;
        if (mode_uses_add_in_conv(cfg_.mode)) n += res_blocks;
        return n;
    }

    int injection_sites() const { return sites_; }

    Tensor<T> forward(const DenoiseInput<T>& in) const {
        validate(in);
        sites_ = 0;
        const int levels = int(cfg_.mults.size());
        std::vector<int> ch(levels);
        for (int l = 0; l < levels; ++l) ch[l] = cfg_.base * cfg_.mults[l];

        Tensor<T> temb = time_mlp(time_embed<T>(in.t, cfg_.time_dim, cfg_.t_steps));
        Tensor<T> h = concat_adjust(*ps_, prefix_ + ".in", in.x_m, in.keep_mask, in.z_t, ch[0]);

        std::vector<Tensor<T>> skips;
        for (int l = 0; l < levels; ++l) {
            h = res_block("d" + std::to_string(l), h, ch[l], temb, in);
            if (l + 1 < levels) {
                skips.push_back(h);
                h = conv2d(h,
                           param("down" + std::to_string(l) + ".k", {ch[l + 1], ch[l], 3, 3},
                                 Init::normal(std::sqrt(2.0 / (9.0 * ch[l])))),
                           param("down" + std::to_string(l) + ".b", {ch[l + 1]}, Init::zeros()),
                           2, 1);
            }
        }
        if (has_attn(levels - 1)) h = attn_site("mid", h, in);
        h = res_block("mid", h, ch[levels - 1], temb, in);

        for (int l = levels - 2; l >= 0; --l) {
            h = nearest_resize(h, h.dim(1) * 2, h.dim(2) * 2);
            h = conv2d(h,
                       param("up" + std::to_string(l) + ".k", {ch[l], ch[l + 1], 3, 3},
                             Init::normal(std::sqrt(2.0 / (9.0 * ch[l + 1])))),
                       param("up" + std::to_string(l) + ".b", {ch[l]}, Init::zeros()), 1, 1);
            h = concat_ch(std::vector<Tensor<T>>{h, skips[size_t(l)]});
            h = res_block("u" + std::to_string(l), h, ch[l], temb, in);
            if (has_attn(l)) h = attn_site("u" + std::to_string(l), h, in);
        }

        h = conv2d(silu(group_norm(h, param("out.gn.g", {ch[0]}, Init::ones()),
                                   param("out.gn.b", {ch[0]}, Init::zeros()), cfg_.groups)),
                   param("out.k", {cfg_.in_channels, ch[0], 3, 3}, Init::zeros()),
                   param("out.b", {cfg_.in_channels}, Init::zeros()), 1, 1);

        if (sites_ != expected_injection_sites())
            throw ContractError("injection site count " + std::to_string(sites_) +
                                " does not match the configured " +
                                std::to_string(expected_injection_sites()));
        return h;
    }

  private:
    bool has_attn(int level) const {
        for (int l : cfg_.attn_levels)
            if (l == level) return true;
        return false;
    }

    Tensor<T> param(const std::string& n, const Shape& s, Init init) const {
        return ps_->param(prefix_ + "." + n, s, init);
    }

    void validate(const DenoiseInput<T>& in) const {
        if (in.z_t.rank() != 3 || in.z_t.dim(0) != cfg_.in_channels)
            throw DimensionError("unet: z_t must be [" + std::to_string(cfg_.in_channels) +
                                 ",h,w], got " + shape_str(in.z_t.shape()));
        const int stride = 1 << (int(cfg_.mults.size()) - 1);
        if (in.z_t.dim(1) % stride != 0 || in.z_t.dim(2) % stride != 0)
            throw DimensionError("unet: latent extents must be divisible by " +
                                 std::to_string(stride));
        const size_t want = cfg_.mode == InjectionMode::MultiCrossAttn ? 4 : 1;
        if (in.cond.size() != want)
            throw ContractError("unet: mode " + std::string(injection_mode_name(cfg_.mode)) +
                                " expects " + std::to_string(want) + " condition maps, got " +
                                std::to_string(in.cond.size()));
    }

    Tensor<T> time_mlp(const Tensor<T>& e) const {
        const int d = cfg_.time_dim;
        Tensor<T> h = silu(linear(e, param("time.w1", {d, d}, Init::normal(std::sqrt(1.0 / d))),
                                  param("time.b1", {d}, Init::zeros())));
        return linear(h, param("time.w2", {d, d}, Init::normal(std::sqrt(1.0 / d))),
                      param("time.b2", {d}, Init::zeros()));
    }

    Tensor<T> res_block(const std::string& name, const Tensor<T>& x, int cout,
                        const Tensor<T>& temb, const DenoiseInput<T>& in) const {
        const int cin = x.dim(0);
        std::string b = name + ".";
        Tensor<T> r = conv2d(
            silu(group_norm(x, param(b + "gn1.g", {cin}, Init::ones()),
                            param(b + "gn1.b", {cin}, Init::zeros()), cfg_.groups)),
            param(b + "c1.k", {cout, cin, 3, 3}, Init::normal(std::sqrt(2.0 / (9.0 * cin)))),
            param(b + "c1.b", {cout}, Init::zeros()), 1, 1);
        r = add_chbias(r, linear(temb,
                                 param(b + "t.w", {cfg_.time_dim, cout},
                                       Init::normal(std::sqrt(1.0 / cfg_.time_dim))),
                                 param(b + "t.b", {cout}, Init::zeros())));
        if (mode_uses_add_in_conv(cfg_.mode)) {
            r = add_inject(*ps_, prefix_ + ".inject.conv." + name, r, in.cond[0], cfg_.lambda,
                           cfg_.nearest_inter);
            ++sites_;
        }
        r = conv2d(silu(group_norm(r, param(b + "gn2.g", {cout}, Init::ones()),
                                   param(b + "gn2.b", {cout}, Init::zeros()), cfg_.groups)),
                   param(b + "c2.k", {cout, cout, 3, 3}, Init::zeros()),
                   param(b + "c2.b", {cout}, Init::zeros()), 1, 1);
        Tensor<T> skip = x;
        if (cin != cout)
            skip = conv2d(x, param(b + "skip.k", {cout, cin, 1, 1},
                                   Init::normal(std::sqrt(1.0 / cin))),
                          param(b + "skip.b", {cout}, Init::zeros()), 1, 0);
        return add(skip, r);
    }

    Tensor<T> self_attn_tokens(const std::string& p, const Tensor<T>& t) const {
        const int d = t.dim(1);
        double sd = std::sqrt(1.0 / d);
        Tensor<T> q = linear_nobias(t, param(p + ".q", {d, d}, Init::normal(sd)));
        Tensor<T> k = linear_nobias(t, param(p + ".k", {d, d}, Init::normal(sd)));
        Tensor<T> v = linear_nobias(t, param(p + ".v", {d, d}, Init::normal(sd)));
        return attention(q, k, v);
    }

    Tensor<T> attn_site(const std::string& name, const Tensor<T>& x,
                        const DenoiseInput<T>& in) const {
        const int d = x.dim(0);
        std::string p = "attn." + name;
        Tensor<T> t = to_tokens(group_norm(x, param(p + ".gn.g", {d}, Init::ones()),
                                           param(p + ".gn.b", {d}, Init::zeros()), cfg_.groups));
        Tensor<T> t2;
        if (cfg_.mode == InjectionMode::MultiCrossAttn) {
            t2 = multi_cross_attn_inject(*ps_, prefix_ + "." + p + ".multi",
                                         self_attn_tokens(p, t), in.cond, cfg_.lambda);
            ++sites_;
        } else if (mode_uses_cross_attn(cfg_.mode)) {
            t2 = cross_attn_inject(*ps_, prefix_ + "." + p, t, in.cond[0], cfg_.lambda);
            ++sites_;
        } else {
            t2 = self_attn_tokens(p, t);
        }
        Tensor<T> o = linear_nobias(t2, param(p + ".o", {d, d}, Init::zeros()));
        Tensor<T> h = add(x, from_tokens(o, x.dim(1), x.dim(2)));
        if (mode_uses_add_in_ca(cfg_.mode)) {
            h = add_inject(*ps_, prefix_ + ".inject.ca." + name, h, in.cond[0], cfg_.lambda,
                           cfg_.nearest_inter);
            ++sites_;
        }
        return h;
    }

    ParamStore<T>* ps_;
    std::string prefix_;
    UNetConfig cfg_;
    mutable int sites_ = 0;
};

}  // namespace partswap
