#pragma once

#include <functional>
#include <vector>

#include "partswap/image.hpp"
#include "partswap/maskops.hpp"

namespace partswap {

constexpr int kEmbedSide = 16;
constexpr int kEmbedDim = kEmbedSide * kEmbedSide * 3;

// Deterministic part embedding: crop the mask's bounding box, bilinear-resize
// to 16x16, flatten, subtract the mean, L2-normalize. Unit norm by
// construction (degenerate crops divide by max(norm, 1e-12)).
std::vector<double> part_embed(const Image& img, const Mask& m);

// Swappable embedding backend; part_embed is the default everywhere.
using EmbedFn = std::function<std::vector<double>(const Image&, const Mask&)>;

double cosine(const std::vector<double>& a, const std::vector<double>& b);

// FPSim: cosine similarity of the two part embeddings.
double fpsim(const Image& gen, const Mask& gen_mask, const Image& ref, const Mask& ref_mask);

// Symmetric PSD square root by eigendecomposition with negative eigenvalues
// clamped to zero. Row-major dim x dim buffers.
std::vector<double> matrix_sqrt_psd(const std::vector<double>& m, int dim);

// Frechet distance between the Gaussian fits of the two feature sets:
// |mu1-mu2|^2 + tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}). Covariances get
// +1e-6 I shrinkage when a set is too small for a full-rank estimate.
double fid(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

// Mean squared channel difference in [0,1]^2 units, over the whole image or
// only the pixels inside region.
double masked_mse(const Image& a, const Image& b, const Mask* region = nullptr);

struct MetricReport {
    double fid = 0.0;
    double fpsim_eyes = 0.0, fpsim_nose = 0.0, fpsim_mouth = 0.0;
    double mse = 0.0;
    int samples = 0;
};

}  // namespace partswap
