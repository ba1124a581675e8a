#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "partswap/param_store.hpp"
#include "partswap/tensor.hpp"

namespace partswap {

enum class InjectionMode {
    AddInCA,
    AddInConv,
    CrossAttn,
    MultiCrossAttn,
    CrossAttnPlusAddInCA,
    CrossAttnPlusAddInConv,
    HierarchyAddInCA,
};

inline InjectionMode parse_injection_mode(const std::string& s) {
    if (s == "add_in_ca") return InjectionMode::AddInCA;
    if (s == "add_in_conv") return InjectionMode::AddInConv;
    if (s == "cross_attn") return InjectionMode::CrossAttn;
    if (s == "multi_cross_attn") return InjectionMode::MultiCrossAttn;
    if (s == "cross_attn_add_in_ca") return InjectionMode::CrossAttnPlusAddInCA;
    if (s == "cross_attn_add_in_conv") return InjectionMode::CrossAttnPlusAddInConv;
    if (s == "hierarchy_add_in_ca") return InjectionMode::HierarchyAddInCA;
    throw ConfigError("unknown inject.mode '" + s + "'");
}

inline const char* injection_mode_name(InjectionMode m) {
    switch (m) {
        case InjectionMode::AddInCA: return "add_in_ca";
        case InjectionMode::AddInConv: return "add_in_conv";
        case InjectionMode::CrossAttn: return "cross_attn";
        case InjectionMode::MultiCrossAttn: return "multi_cross_attn";
        case InjectionMode::CrossAttnPlusAddInCA: return "cross_attn_add_in_ca";
        case InjectionMode::CrossAttnPlusAddInConv: return "cross_attn_add_in_conv";
        case InjectionMode::HierarchyAddInCA: return "hierarchy_add_in_ca";
    }
    throw ContractError("invalid injection mode value");
}

constexpr std::array<InjectionMode, 7> kAllInjectionModes{
    InjectionMode::AddInCA,
    InjectionMode::AddInConv,
    InjectionMode::CrossAttn,
    InjectionMode::MultiCrossAttn,
    InjectionMode::CrossAttnPlusAddInCA,
    InjectionMode::CrossAttnPlusAddInConv,
    InjectionMode::HierarchyAddInCA,
};

inline bool mode_uses_add_in_ca(InjectionMode m) {
    return m == InjectionMode::AddInCA || m == InjectionMode::CrossAttnPlusAddInCA ||
           m == InjectionMode::HierarchyAddInCA;
}
inline bool mode_uses_add_in_conv(InjectionMode m) {
    return m == InjectionMode::AddInConv || m == InjectionMode::CrossAttnPlusAddInConv;
}
inline bool mode_uses_cross_attn(InjectionMode m) {
    return m == InjectionMode::CrossAttn || m == InjectionMode::MultiCrossAttn ||
           m == InjectionMode::CrossAttnPlusAddInCA ||
           m == InjectionMode::CrossAttnPlusAddInConv;
}
inline bool mode_is_hierarchical(InjectionMode m) { return m == InjectionMode::HierarchyAddInCA; }

// Z' = Z + lambda * Inter(Linear(C)). The linear map is per-site (params
// under `prefix`), Inter resizes C's grid onto Z's. lambda == 0 returns Z
// itself so the condition path provably cannot touch the output.
template <class T>
Tensor<T> add_inject(ParamStore<T>& ps, const std::string& prefix, const Tensor<T>& z,
                     const Tensor<T>& c, double lambda, bool nearest = false) {
    if (lambda < 0) throw ConfigError("inject.lambda must be >= 0");
    if (lambda == 0) return z;
    if (z.rank() != 3 || c.rank() != 3) throw DimensionError("add_inject: need [c,h,w] maps");
    const int zc = z.dim(0), dc = c.dim(0);
    Tensor<T> w = ps.param(prefix + ".w", {dc, zc}, Init::zeros());
    Tensor<T> b = ps.param(prefix + ".b", {zc}, Init::zeros());
    Tensor<T> mapped = from_tokens(linear(to_tokens(c), w, b), c.dim(1), c.dim(2));
    Tensor<T> sized = nearest ? nearest_resize(mapped, z.dim(1), z.dim(2))
                              : bilinear_resize(mapped, z.dim(1), z.dim(2));
    return add_scaled(z, sized, T(lambda));
}

// Decoupled attention: self-attention on Z's tokens plus lambda-weighted
// cross-attention with keys/values from C's tokens sharing the same queries.
// Token-space in, token-space out; the caller owns the norm/projection shell.
template <class T>
Tensor<T> cross_attn_inject(ParamStore<T>& ps, const std::string& prefix, const Tensor<T>& zt,
                            const Tensor<T>& c, double lambda) {
    if (lambda < 0) throw ConfigError("inject.lambda must be >= 0");
    if (zt.rank() != 2) throw DimensionError("cross_attn_inject: Z must be tokens [n,d]");
    if (c.rank() != 3) throw DimensionError("cross_attn_inject: C must be [c,h,w]");
    if (c.dim(1) * c.dim(2) == 0) throw ContractError("cross_attn_inject: empty context");
    const int d = zt.dim(1), dc = c.dim(0);
    double sd = std::sqrt(1.0 / d);
    Tensor<T> q = linear_nobias(zt, ps.param(prefix + ".q", {d, d}, Init::normal(sd)));
    Tensor<T> k = linear_nobias(zt, ps.param(prefix + ".k", {d, d}, Init::normal(sd)));
    Tensor<T> v = linear_nobias(zt, ps.param(prefix + ".v", {d, d}, Init::normal(sd)));
    Tensor<T> base = attention(q, k, v);
    if (lambda == 0) return base;
    Tensor<T> ct = to_tokens(c);
    double sc = std::sqrt(1.0 / dc);
    Tensor<T> kc = linear_nobias(ct, ps.param(prefix + ".kc", {dc, d}, Init::normal(sc)));
    Tensor<T> vc = linear_nobias(ct, ps.param(prefix + ".vc", {dc, d}, Init::zeros()));
    return add_scaled(base, attention(q, kc, vc), T(lambda));
}

// Z + lambda * sum_i Attention(Q, K_i, V_i) over exactly four part maps with
// per-part key/value projections.
template <class T>
Tensor<T> multi_cross_attn_inject(ParamStore<T>& ps, const std::string& prefix,
                                  const Tensor<T>& zt, const std::vector<Tensor<T>>& parts,
                                  double lambda) {
    if (lambda < 0) throw ConfigError("inject.lambda must be >= 0");
    if (parts.size() != 4)
        throw ContractError("multi_cross_attn_inject: need 4 part maps, got " +
                            std::to_string(parts.size()));
    if (zt.rank() != 2) throw DimensionError("multi_cross_attn_inject: Z must be tokens [n,d]");
    if (lambda == 0) return zt;
    const int d = zt.dim(1);
    Tensor<T> q = linear_nobias(zt, ps.param(prefix + ".q", {d, d}, Init::normal(std::sqrt(1.0 / d))));
    Tensor<T> acc;
    for (size_t i = 0; i < 4; ++i) {
        const Tensor<T>& c = parts[i];
        if (c.rank() != 3)
            throw DimensionError("multi_cross_attn_inject: part maps must be [c,h,w]");
        const int dc = c.dim(0);
        std::string sp = prefix + ".p" + std::to_string(i);
        Tensor<T> ct = to_tokens(c);
        double sc = std::sqrt(1.0 / dc);
        Tensor<T> kc = linear_nobias(ct, ps.param(sp + ".k", {dc, d}, Init::normal(sc)));
        Tensor<T> vc = linear_nobias(ct, ps.param(sp + ".v", {dc, d}, Init::zeros()));
        Tensor<T> term = attention(q, kc, vc);
        acc = (i == 0) ? term : add(acc, term);
    }
    return add_scaled(zt, acc, T(lambda));
}

}  // namespace partswap
