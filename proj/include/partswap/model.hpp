#pragma once

#include <array>
#include <string>
#include <vector>

#include "partswap/config.hpp"
#include "partswap/diffusion.hpp"
#include "partswap/encoder.hpp"
#include "partswap/fusion.hpp"
#include "partswap/latentcodec.hpp"
#include "partswap/maskops.hpp"
#include "partswap/unet.hpp"

namespace partswap {

struct ModelConfig {
    LatentMap latent{4, 2.0, -1.0};  // train on centered latents
    EncoderConfig enc;
    int fusion_hidden_mult = 2;
    UNetConfig unet;

    bool hierarchical() const { return mode_is_hierarchical(unet.mode); }
};

inline ModelConfig model_config_from(const RunConfig& rc) {
    ModelConfig mc;
    mc.latent.factor = rc.geti("codec.factor");
    mc.enc.patch = rc.geti("encoder.patch");
    mc.enc.dim = rc.geti("encoder.dim");
    mc.enc.blocks = rc.geti("encoder.blocks");
    mc.enc.taps = rc.get_int_list("encoder.taps");
    mc.fusion_hidden_mult = rc.geti("fusion.hidden_mult");
    mc.unet.in_channels = latent_channels(mc.latent.factor);
    mc.unet.base = rc.geti("unet.base");
    mc.unet.mults = rc.get_int_list("unet.mults");
    mc.unet.attn_levels = rc.get_int_list("unet.attn_levels");
    mc.unet.groups = rc.geti("unet.groups");
    mc.unet.time_dim = rc.geti("unet.time_dim");
    mc.unet.t_steps = rc.geti("diffusion.T");
    mc.unet.mode = parse_injection_mode(rc.gets("inject.mode"));
    mc.unet.lambda = rc.getd("inject.lambda");
    mc.unet.nearest_inter = rc.gets("inject.inter") == "nearest";
    return mc;
}

// The jointly trained stack: part encoder, fusion MLP, denoising UNet.
template <class T>
struct SwapModel {
    ModelConfig mc;
    ParamStore<T>* ps;
    PartEncoder<T> enc;
    FusionModule<T> fus;
    UNet<T> unet;

    SwapModel(ParamStore<T>& store, const ModelConfig& cfg)
        : mc(cfg),
          ps(&store),
          enc(store, "enc", cfg.enc),
          fus(store, "fus", enc.feature_dim(cfg.hierarchical()), cfg.fusion_hidden_mult),
          unet(store, "unet", cfg.unet) {}

    PartFeatures<T> decompose(const Image& img, const PartMaskSet& masks) const {
        return partswap::decompose(enc, img, masks, mc.hierarchical());
    }

    SwapSource<T> swap_source(const Image& img, const PartMaskSet& masks, PartSlot slot) const {
        return make_swap_source(enc, img, masks, slot, mc.hierarchical());
    }

    // Condition maps handed to the UNet: the aggregated C, or the four masked
    // part features when each part feeds its own cross-attention.
    std::vector<Tensor<T>> conditioning(const PartFeatures<T>& fused) const {
        if (mc.unet.mode == InjectionMode::MultiCrossAttn) {
            std::vector<Tensor<T>> parts;
            for (size_t i = 0; i < 4; ++i)
                parts.push_back(mul(fused.f[i], mask_expand<T>(fused.m[i], fused.f[i].dim(0))));
            return parts;
        }
        return {fus.aggregate(fused)};
    }

    // x_m and the keep-mask channel for one face: the remain-region latent
    // plus the union of part regions at latent extents.
    std::pair<Tensor<T>, Tensor<T>> masked_context(const Image& img,
                                                   const PartMaskSet& masks) const {
        Tensor<T> x_m = mc.latent.to_latent<T>(apply_mask(img, masks.remain));
        Mask keep = downsample_mask(complement(masks.remain), x_m.dim(1), x_m.dim(2));
        return {x_m, mask_tensor<T>(keep)};
    }

    DenoiseFn<T> denoiser(Tensor<T> x_m, Tensor<T> keep, std::vector<Tensor<T>> cond) const {
        return [this, x_m = std::move(x_m), keep = std::move(keep),
                cond = std::move(cond)](const Tensor<T>& z_t, int t) {
            DenoiseInput<T> in;
            in.x_m = x_m;
            in.keep_mask = keep;
            in.z_t = z_t;
            in.t = t;
            in.cond = cond;
            return unet.forward(in);
        };
    }
};

// One training example: a target face plus same-identity views supplying the
// eyes/nose/mouth references.
struct TrainItem {
    Image target;
    PartMaskSet masks;
    std::array<Image, 3> ref;
    std::array<PartMaskSet, 3> ref_masks;
};

// The mask-conditioned denoising objective over one batch: every part is
// transplanted from its reference view, the noised target latent must give
// back the noise. Returns the live loss node; the caller backpropagates.
template <class T>
Tensor<T> training_step(const SwapModel<T>& model, const std::vector<TrainItem>& batch,
                        const NoiseSchedule& s, Rng& rng) {
    if (batch.empty()) throw ContractError("training_step: empty batch");
    Tensor<T> total;
    for (size_t bi = 0; bi < batch.size(); ++bi) {
        const TrainItem& item = batch[bi];
        PartFeatures<T> feats = model.decompose(item.target, item.masks);
        SwapSpec<T> spec;
        for (size_t i = 0; i < 3; ++i)
            spec.set(PartSlot(i), model.swap_source(item.ref[i], item.ref_masks[i], PartSlot(i)));
        std::vector<Tensor<T>> cond = model.conditioning(transplant(feats, spec));

        auto [x_m, keep] = model.masked_context(item.target, item.masks);
        Tensor<T> z0 = model.mc.latent.template to_latent<T>(item.target);

        const int t = rng.uniform_int(0, s.T - 1);
        std::vector<T> ev(size_t(z0.size()));
        for (auto& e : ev) e = T(rng.normal());
        Tensor<T> eps = Tensor<T>::from(z0.shape(), std::move(ev));
        Tensor<T> z_t = add_noise(z0, t, eps, s);

        DenoiseInput<T> in;
        in.x_m = x_m;
        in.keep_mask = keep;
        in.z_t = z_t;
        in.t = t;
        in.cond = cond;
        Tensor<T> loss = mse(model.unet.forward(in), eps);
        total = bi == 0 ? loss : add(total, loss);
    }
    return affine(total, T(1.0 / double(batch.size())), T(0));
}

}  // namespace partswap
