#include "partswap/latentcodec.hpp"

#include "partswap/common.hpp"

namespace partswap {

int latent_channels(int factor) { return 3 * factor * factor; }

Tensor<float> encode_latent(const Image& img, int factor) {
  if (factor < 1) throw ConfigError("codec factor must be >= 1");
  if (img.h % factor != 0 || img.w % factor != 0) {
    throw DimensionError("image extents " + std::to_string(img.h) + "x" +
                         std::to_string(img.w) + " not divisible by codec factor " +
                         std::to_string(factor));
  }
  const int lh = img.h / factor;
  const int lw = img.w / factor;
  const int lc = latent_channels(factor);
  std::vector<float> out(static_cast<size_t>(lc) * lh * lw);
  for (int c = 0; c < 3; ++c) {
    for (int by = 0; by < factor; ++by) {
      for (int bx = 0; bx < factor; ++bx) {
        const int oc = (c * factor + by) * factor + bx;
        float* dst = out.data() + static_cast<size_t>(oc) * lh * lw;
        for (int y = 0; y < lh; ++y)
          for (int x = 0; x < lw; ++x)
            dst[static_cast<size_t>(y) * lw + x] = img.at(c, y * factor + by, x * factor + bx);
      }
    }
  }
  return Tensor<float>::from({lc, lh, lw}, std::move(out));
}

Image decode_latent(const Tensor<float>& z, int factor) {
  if (factor < 1) throw ConfigError("codec factor must be >= 1");
  const Shape& s = z.shape();
  if (s.size() != 3) throw DimensionError("latent must be rank 3, got rank " + std::to_string(s.size()));
  if (s[0] != latent_channels(factor)) {
    throw DimensionError("latent has " + std::to_string(s[0]) + " channels, codec factor " +
                         std::to_string(factor) + " requires " + std::to_string(latent_channels(factor)));
  }
  const int lh = s[1];
  const int lw = s[2];
  Image img(lh * factor, lw * factor);
  const std::vector<float>& v = z.values();
  for (int c = 0; c < 3; ++c) {
    for (int by = 0; by < factor; ++by) {
      for (int bx = 0; bx < factor; ++bx) {
        const int oc = (c * factor + by) * factor + bx;
        const float* src = v.data() + static_cast<size_t>(oc) * lh * lw;
        for (int y = 0; y < lh; ++y)
          for (int x = 0; x < lw; ++x)
            img.at(c, y * factor + by, x * factor + bx) = src[static_cast<size_t>(y) * lw + x];
      }
    }
  }
  return img;
}

}  // namespace partswap
