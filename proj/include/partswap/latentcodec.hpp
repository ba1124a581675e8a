#pragma once

#include "partswap/image.hpp"
#include "partswap/tensor.hpp"

namespace partswap {

// Lossless space-to-depth codec standing in for a learned VAE. A factor-f
// codec maps [3,H,W] pixels to [3*f*f, H/f, W/f] latents by pure
// rearrangement, so decode(encode(x)) == x bit for bit and latent cell (y,x)
// corresponds exactly to the pixel block (y*f..y*f+f-1, x*f..x*f+f-1).
Tensor<float> encode_latent(const Image& img, int factor = 4);
Image decode_latent(const Tensor<float>& z, int factor = 4);

int latent_channels(int factor);

// Affine bridge between codec latents and the space the denoiser works in
// (the model trains on centered latents). to_image clamps back to [0,1].
struct LatentMap {
    int factor = 4;
    double scale = 1.0, shift = 0.0;

    template <class T>
    Tensor<T> to_latent(const Image& img) const {
        Tensor<float> z = encode_latent(img, factor);
        std::vector<T> v(size_t(z.size()));
        for (int64_t i = 0; i < z.size(); ++i)
            v[size_t(i)] = T(scale * double(z.values()[size_t(i)]) + shift);
        return Tensor<T>::from(z.shape(), std::move(v));
    }

    template <class T>
    Image to_image(const Tensor<T>& z) const {
        std::vector<float> v(size_t(z.size()));
        for (int64_t i = 0; i < z.size(); ++i) {
            double x = (double(z.values()[size_t(i)]) - shift) / scale;
            v[size_t(i)] = float(x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x));
        }
        return decode_latent(Tensor<float>::from(z.shape(), std::move(v)), factor);
    }
};

}  // namespace partswap
