#include "partswap/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "partswap/tensor.hpp"

namespace partswap {

std::vector<double> part_embed(const Image& img, const Mask& m) {
    if (img.h != m.h || img.w != m.w)
        throw DimensionError("part_embed: mask extents do not match the image");
    BBox b = bbox(m);  // throws EmptyRegionError on an empty mask

    NoGradGuard ng;
    Tensor<double> t = image_tensor<double>(img);
    Tensor<double> crop = crop2d(t, b.r0, b.c0, b.height(), b.width());
    Tensor<double> sized = bilinear_resize(crop, kEmbedSide, kEmbedSide);

    std::vector<double> e(sized.values().begin(), sized.values().end());
    double mean = 0.0;
    for (double v : e) mean += v;
    mean /= double(e.size());
    double norm2 = 0.0;
    for (double& v : e) {
        v -= mean;
        norm2 += v * v;
    }
    const double inv = 1.0 / std::max(std::sqrt(norm2), 1e-12);
    for (double& v : e) v *= inv;
    return e;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw DimensionError("cosine: vectors must share a nonzero dimension");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
}

double fpsim(const Image& gen, const Mask& gen_mask, const Image& ref, const Mask& ref_mask) {
    return cosine(part_embed(gen, gen_mask), part_embed(ref, ref_mask));
}

namespace {

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
    Eigen::VectorXd d = es.eigenvalues();
    for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = d[i] > 0.0 ? std::sqrt(d[i]) : 0.0;
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

std::vector<double> matrix_sqrt_psd(const std::vector<double>& m, int dim) {
    if (dim < 1 || m.size() != size_t(dim) * size_t(dim))
        throw DimensionError("matrix_sqrt_psd: buffer is not dim x dim");
    Eigen::MatrixXd a(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) a(i, j) = m[size_t(i) * dim + j];
    Eigen::MatrixXd r = sqrt_psd(0.5 * (a + a.transpose()));
    std::vector<double> out(size_t(dim) * dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) out[size_t(i) * dim + j] = r(i, j);
    return out;
}

double fid(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    if (a.empty() || b.empty()) throw ContractError("fid: feature sets must be nonempty");
    const int dim = int(a[0].size());
    for (const auto* set : {&a, &b})
        for (const auto& v : *set)
            if (int(v.size()) != dim) throw DimensionError("fid: feature dimensions differ");

    auto stats = [dim](const std::vector<std::vector<double>>& s, Eigen::VectorXd& mu,
                       Eigen::MatrixXd& cov) {
        const int n = int(s.size());
        mu.setZero(dim);
        for (const auto& v : s)
            for (int i = 0; i < dim; ++i) mu[i] += v[i];
        mu /= double(n);
        cov.setZero(dim, dim);
        if (n > 1) {
            for (const auto& v : s) {
                Eigen::VectorXd d(dim);
                for (int i = 0; i < dim; ++i) d[i] = v[i] - mu[i];
                cov.noalias() += d * d.transpose();
            }
            cov /= double(n - 1);
        }
        if (n < dim + 1) cov += 1e-6 * Eigen::MatrixXd::Identity(dim, dim);
    };

    Eigen::VectorXd mu1, mu2;
    Eigen::MatrixXd c1, c2;
    stats(a, mu1, c1);
    stats(b, mu2, c2);

    Eigen::MatrixXd s1h = sqrt_psd(c1);
    Eigen::MatrixXd inner = s1h * c2 * s1h;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()));
    if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
    double tr_sqrt = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        double l = es.eigenvalues()[i];
        if (l > 0.0) tr_sqrt += std::sqrt(l);
    }

    return (mu1 - mu2).squaredNorm() + c1.trace() + c2.trace() - 2.0 * tr_sqrt;
}

double masked_mse(const Image& a, const Image& b, const Mask* region) {
    if (a.h != b.h || a.w != b.w) throw DimensionError("masked_mse: image extents differ");
    if (region && (region->h != a.h || region->w != a.w))
        throw DimensionError("masked_mse: mask extents do not match the images");
    double acc = 0.0;
    int64_t n = 0;
    for (int y = 0; y < a.h; ++y)
        for (int x = 0; x < a.w; ++x) {
            if (region && !region->at(y, x)) continue;
            for (int c = 0; c < 3; ++c) {
                double d = double(a.at(c, y, x)) - double(b.at(c, y, x));
                acc += d * d;
            }
            n += 3;
        }
    if (n == 0) throw EmptyRegionError("masked_mse: empty region");
    return acc / double(n);
}

}  // namespace partswap
