#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "partswap/common.hpp"
#include "partswap/image.hpp"
#include "partswap/latentcodec.hpp"
#include "partswap/maskops.hpp"
#include "partswap/rng.hpp"
#include "partswap/tensor.hpp"

namespace partswap {

// Variance-preserving schedule with epsilon prediction:
// z_t = alpha[t] * z0 + sigma[t] * eps, alpha^2 + sigma^2 = 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha;
    std::vector<double> sigma;
};

inline NoiseSchedule make_schedule(int T = 1000, double beta_start = 1e-4,
                                   double beta_end = 2e-2) {
    if (T < 1) throw ConfigError("schedule needs T >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.alpha.resize(size_t(T));
    s.sigma.resize(size_t(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        double beta = T == 1 ? beta_start
                             : beta_start + (beta_end - beta_start) * double(t) / double(T - 1);
        prod *= 1.0 - beta;
        s.alpha[size_t(t)] = std::sqrt(prod);
        s.sigma[size_t(t)] = std::sqrt(1.0 - prod);
    }
    return s;
}

template <class T>
Tensor<T> add_noise(const Tensor<T>& z0, int t, const Tensor<T>& eps, const NoiseSchedule& s) {
    if (z0.shape() != eps.shape())
        throw DimensionError("add_noise: z0 " + shape_str(z0.shape()) + " does not match eps " +
                             shape_str(eps.shape()));
    if (t < 0 || t >= s.T) throw ContractError("add_noise: timestep out of range");
    const T a = T(s.alpha[size_t(t)]), g = T(s.sigma[size_t(t)]);
    std::vector<T> v(size_t(z0.size()));
    for (int64_t i = 0; i < z0.size(); ++i)
        v[size_t(i)] = a * z0.values()[size_t(i)] + g * eps.values()[size_t(i)];
    return Tensor<T>::from(z0.shape(), std::move(v));
}

struct DDIMConfig {
    int steps = 50;  // deterministic sampler, eta fixed at 0
    uint64_t seed = 0;
};

// Leading spacing: steps evenly spaced timesteps k*(T/steps), descending to 0.
inline std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) throw ConfigError("ddim.steps must lie in [1, diffusion.T]");
    const int c = T / steps;
    std::vector<int> ts(static_cast<size_t>(steps));
    for (int k = 0; k < steps; ++k) ts[size_t(k)] = (steps - 1 - k) * c;
    return ts;
}

// The denoiser as the sampler sees it: conditioning is baked into the closure.
template <class T>
using DenoiseFn = std::function<Tensor<T>(const Tensor<T>& z_t, int t)>;

namespace ddim_detail {

// One eta=0 update from timestep t down to t_prev (t_prev = -1 means clean).
template <class T>
Tensor<T> update(const Tensor<T>& z, const Tensor<T>& eps, int t, int t_prev,
                 const NoiseSchedule& s) {
    if (eps.shape() != z.shape())
        throw DimensionError("denoiser output " + shape_str(eps.shape()) +
                             " does not match latent " + shape_str(z.shape()));
    const double a_t = s.alpha[size_t(t)], g_t = s.sigma[size_t(t)];
    const double a_p = t_prev < 0 ? 1.0 : s.alpha[size_t(t_prev)];
    const double g_p = t_prev < 0 ? 0.0 : s.sigma[size_t(t_prev)];
    std::vector<T> v(size_t(z.size()));
    for (int64_t i = 0; i < z.size(); ++i) {
        const double e = double(eps.values()[size_t(i)]);
        const double z0_hat = (double(z.values()[size_t(i)]) - g_t * e) / a_t;
        v[size_t(i)] = T(a_p * z0_hat + g_p * e);
    }
    return Tensor<T>::from(z.shape(), std::move(v));
}

template <class T>
Tensor<T> predict(const DenoiseFn<T>& model, const Tensor<T>& z, int t) {
    NoGradGuard ng;
    return model(z, t);
}

}  // namespace ddim_detail

// Deterministic trajectory from a given starting latent at the top timestep.
// When traj is given it records the state at every visited timestep plus the
// final z0 estimate (steps + 1 entries).
template <class T>
Tensor<T> ddim_sample_from(const DenoiseFn<T>& model, Tensor<T> z, const DDIMConfig& cfg,
                           const NoiseSchedule& s, std::vector<Tensor<T>>* traj = nullptr) {
    const std::vector<int> ts = ddim_timesteps(s.T, cfg.steps);
    if (traj) traj->clear();
    for (size_t i = 0; i < ts.size(); ++i) {
        if (traj) traj->push_back(z);
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : -1;
        Tensor<T> eps = ddim_detail::predict(model, z, t);
        z = ddim_detail::update(z, eps, t, t_prev, s);
    }
    if (traj) traj->push_back(z);
    return z;
}

template <class T>
Tensor<T> ddim_sample(const DenoiseFn<T>& model, const Shape& shape, const DDIMConfig& cfg,
                      const NoiseSchedule& s, std::vector<Tensor<T>>* traj = nullptr) {
    Rng rng(cfg.seed);
    std::vector<T> init(size_t(numel(shape)));
    for (auto& v : init) v = T(rng.normal());
    return ddim_sample_from(model, Tensor<T>::from(shape, std::move(init)), cfg, s, traj);
}

namespace ddim_detail {

// Solves forward_update(z_t) == z_from for z_t given a fixed eps estimate.
template <class T>
Tensor<T> invert_step(const Tensor<T>& z_from, const Tensor<T>& eps, int t, int t_from,
                      const NoiseSchedule& s) {
    const double a_t = s.alpha[size_t(t)], g_t = s.sigma[size_t(t)];
    const double a_f = t_from < 0 ? 1.0 : s.alpha[size_t(t_from)];
    const double g_f = t_from < 0 ? 0.0 : s.sigma[size_t(t_from)];
    std::vector<T> v(size_t(z_from.size()));
    for (int64_t j = 0; j < z_from.size(); ++j) {
        const double e = double(eps.values()[size_t(j)]);
        const double z0_hat = (double(z_from.values()[size_t(j)]) - g_f * e) / a_f;
        v[size_t(j)] = T(a_t * z0_hat + g_t * e);
    }
    return Tensor<T>::from(z_from.shape(), std::move(v));
}

}  // namespace ddim_detail

// Reverse traversal z0 -> z_T under the same update rule. Each step solves
// the forward update for its preimage by fixed-point iteration (the naive
// source-state eps estimate refined a fixed number of times), so the round
// trip is exact up to the contraction residual rather than O(step gap).
// When traj is given it records the state after each step, so traj[k] sits at
// timestep ddim_timesteps(...)[steps-1-k] (ascending time order).
template <class T>
Tensor<T> ddim_invert(const DenoiseFn<T>& model, const Tensor<T>& z0, const DDIMConfig& cfg,
                      const NoiseSchedule& s, std::vector<Tensor<T>>* traj = nullptr) {
    constexpr int kRefinements = 3;
    const std::vector<int> ts = ddim_timesteps(s.T, cfg.steps);
    Tensor<T> z = z0;
    if (traj) traj->clear();
    for (int i = int(ts.size()) - 1; i >= 0; --i) {
        const int t = ts[size_t(i)];
        const int t_from = i + 1 < int(ts.size()) ? ts[size_t(i) + 1] : -1;
        Tensor<T> eps = ddim_detail::predict(model, z, t);
        Tensor<T> z_next = ddim_detail::invert_step(z, eps, t, t_from, s);
        for (int it = 0; it < kRefinements; ++it) {
            eps = ddim_detail::predict(model, z_next, t);
            z_next = ddim_detail::invert_step(z, eps, t, t_from, s);
        }
        z = z_next;
        if (traj) traj->push_back(z);
    }
    return z;
}

// Appendix skin fix: rerun the generated trajectory, but for the first n
// steps overwrite latent cells under the skin mask with the target's
// DDIM-inverted latents at the matching timestep, then let the rest run free.
template <class T>
Image skin_latent_replace(const DenoiseFn<T>& model, const Image& target,
                          const std::vector<Tensor<T>>& gen_traj, const Mask& skin, int n,
                          const DDIMConfig& cfg, const NoiseSchedule& s,
                          const LatentMap& lm = {}) {
    if (n < 0 || n > cfg.steps)
        throw ContractError("fix.threshold must lie in [0, ddim.steps]");
    if (gen_traj.empty()) throw ContractError("skin_latent_replace needs a generated trajectory");

    Tensor<T> z0_tgt = lm.to_latent<T>(target);

    const Shape zs = z0_tgt.shape();
    if (skin.h != zs[1] || skin.w != zs[2])
        throw DimensionError("skin mask must match the latent grid " + shape_str(zs));
    if (gen_traj[0].shape() != zs)
        throw DimensionError("generated trajectory does not match the target latent grid");

    std::vector<Tensor<T>> inv;
    ddim_invert(model, z0_tgt, cfg, s, &inv);

    const std::vector<int> ts = ddim_timesteps(s.T, cfg.steps);
    const int64_t plane = int64_t(zs[1]) * zs[2];
    Tensor<T> z = gen_traj[0];
    for (int i = 0; i < cfg.steps; ++i) {
        if (i < n) {
            const Tensor<T>& ref = inv[size_t(cfg.steps - 1 - i)];
            std::vector<T> v(z.values());
            for (int c = 0; c < zs[0]; ++c)
                for (int64_t p = 0; p < plane; ++p)
                    if (skin.v[size_t(p)]) v[size_t(c * plane + p)] = ref.values()[size_t(c * plane + p)];
            z = Tensor<T>::from(zs, std::move(v));
        }
        const int t_prev = i + 1 < cfg.steps ? ts[size_t(i) + 1] : -1;
        Tensor<T> eps = ddim_detail::predict(model, z, ts[size_t(i)]);
        z = ddim_detail::update(z, eps, ts[size_t(i)], t_prev, s);
    }

    return lm.to_image(z);
}

}  // namespace partswap
