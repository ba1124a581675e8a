#include <cmath>
#include <cstring>

#include "doctest.h"
#include "gradcheck.hpp"
#include "partswap/fusion.hpp"
#include "partswap/synthface.hpp"

using namespace partswap;

namespace {

Mask rect_mask(int h, int w, int r0, int r1, int c0, int c1) {
    Mask m(h, w);
    for (int y = r0; y <= r1; ++y)
        for (int x = c0; x <= c1; ++x) m.at(y, x) = 1;
    return m;
}

template <class T>
Tensor<T> random_grid(int d, int h, int w, uint64_t seed) {
    Rng rng(seed);
    std::vector<T> v(size_t(d) * h * w);
    for (auto& x : v) x = T(rng.normal());
    return Tensor<T>::from({d, h, w}, std::move(v));
}

// Independent per-cell reference for region_resize_G: same crop / half-pixel
// bilinear / embed / re-mask semantics, written against raw buffers.
template <class T>
std::vector<double> reference_G(const Tensor<T>& f_src, const Mask& m_src, const Mask& m_tgt) {
    const int d = f_src.shape()[0], gh = m_tgt.h, gw = m_tgt.w;
    BBox sb = bbox(m_src), tb = bbox(m_tgt);
    std::vector<double> out(size_t(d) * gh * gw, 0.0);
    for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x) {
            if (!m_tgt.at(y, x)) continue;
            if (y < tb.r0 || y > tb.r1 || x < tb.c0 || x > tb.c1) continue;
            double sy = (y - tb.r0 + 0.5) * double(sb.height()) / tb.height() - 0.5;
            double sx = (x - tb.c0 + 0.5) * double(sb.width()) / tb.width() - 0.5;
            sy = std::min(std::max(sy, 0.0), double(sb.height() - 1));
            sx = std::min(std::max(sx, 0.0), double(sb.width() - 1));
            int y0 = int(std::floor(sy)), x0 = int(std::floor(sx));
            int y1 = std::min(y0 + 1, sb.height() - 1), x1 = std::min(x0 + 1, sb.width() - 1);
            double fy = sy - y0, fx = sx - x0;
            for (int c = 0; c < d; ++c) {
                auto F = [&](int yy, int xx) {
                    return double(
                        f_src.values()[(size_t(c) * m_src.h + sb.r0 + yy) * m_src.w + sb.c0 + xx]);
                };
                double top = (1 - fx) * F(y0, x0) + fx * F(y0, x1);
                double bot = (1 - fx) * F(y1, x0) + fx * F(y1, x1);
                out[(size_t(c) * gh + y) * gw + x] = (1 - fy) * top + fy * bot;
            }
        }
    return out;
}

// A fixed 4x4 partition used by several cases: row 0 eyes, row 1 nose,
// bottom-right 2x2 mouth, rest remain.
std::array<Mask, 4> quad_partition() {
    Mask eyes = rect_mask(4, 4, 0, 0, 0, 3);
    Mask nose = rect_mask(4, 4, 1, 1, 0, 3);
    Mask mouth = rect_mask(4, 4, 2, 3, 2, 3);
    PartMaskSet s = PartMaskSet::from_parts(eyes, nose, mouth);
    return {s.eyes, s.nose, s.mouth, s.remain};
}

}  // namespace

TEST_CASE("region_resize_G identity, constant, and zero cases") {
    auto f = random_grid<float>(3, 5, 5, 1);
    Mask m = rect_mask(5, 5, 1, 3, 2, 4);

    auto g = region_resize_G(f, m, m);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) {
                float want = m.at(y, x) ? f.values()[(size_t(c) * 5 + y) * 5 + x] : 0.0f;
                CHECK(g.values()[(size_t(c) * 5 + y) * 5 + x] == want);
            }

    auto five = Tensor<float>::full({2, 8, 8}, 5.0f);
    Mask src = rect_mask(8, 8, 0, 1, 0, 1);
    Mask tgt = rect_mask(8, 8, 3, 5, 2, 4);
    auto out = region_resize_G(five, src, tgt);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                CHECK(out.values()[(size_t(c) * 8 + y) * 8 + x] == (tgt.at(y, x) ? 5.0f : 0.0f));

    auto zero = Tensor<float>::zeros({2, 8, 8});
    auto zout = region_resize_G(zero, src, tgt);
    for (auto v : zout.values()) CHECK(v == 0.0f);
}

TEST_CASE("region_resize_G rejects empty masks and bad extents") {
    auto f = random_grid<float>(2, 6, 6, 2);
    Mask empty(6, 6);
    Mask ok = rect_mask(6, 6, 1, 2, 1, 2);
    CHECK_THROWS_AS(region_resize_G(f, empty, ok), EmptyRegionError);
    CHECK_THROWS_AS(region_resize_G(f, ok, empty), EmptyRegionError);
    Mask wrong = rect_mask(5, 6, 1, 2, 1, 2);
    CHECK_THROWS_AS(region_resize_G(f, wrong, ok), DimensionError);
}

TEST_CASE("region_resize_G and transplant match the per-cell reference") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(hash_combine(900, seed));
        auto rand_rect = [&] {
            int r0 = int(rng.uniform_int(0, 6)), r1 = int(rng.uniform_int(r0, 7));
            int c0 = int(rng.uniform_int(0, 6)), c1 = int(rng.uniform_int(c0, 7));
            return rect_mask(8, 8, r0, r1, c0, c1);
        };
        auto f_src = random_grid<float>(3, 8, 8, hash_combine(901, seed));
        auto f_tgt = random_grid<float>(3, 8, 8, hash_combine(902, seed));
        Mask m_src = rand_rect();
        Mask m_tgt = rand_rect();

        auto got = region_resize_G(f_src, m_src, m_tgt);
        auto want = reference_G(f_src, m_src, m_tgt);
        double worst = 0;
        for (int64_t i = 0; i < got.size(); ++i)
            worst = std::max(worst, std::fabs(double(got.values()[i]) - want[i]));
        CHECK(worst <= 1e-6);

        // Whole-slot check: outside m_tgt the target features survive, inside
        // the resized masked source lands.
        PartFeatures<float> target;
        Mask rest = complement(m_tgt);
        target.f = {f_tgt, f_tgt, f_tgt, f_tgt};
        target.m = {m_tgt, Mask(8, 8), Mask(8, 8), rest};
        SwapSpec<float> spec;
        spec.set(PartSlot::Eyes, {f_src, m_src});
        auto fused = transplant(target, spec);

        std::vector<float> masked_src(f_src.values());
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 64; ++i) masked_src[size_t(c) * 64 + i] *= m_src.v[i];
        auto srcref = reference_G(Tensor<float>::from({3, 8, 8}, std::move(masked_src)), m_src, m_tgt);
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 64; ++i) {
                double cell = fused.f[0].values()[size_t(c) * 64 + i];
                double ref = m_tgt.v[i] ? srcref[size_t(c) * 64 + i]
                                        : double(f_tgt.values()[size_t(c) * 64 + i]);
                CHECK(std::fabs(cell - ref) <= 1e-6);
            }
    }
}

TEST_CASE("transplant keeps unswapped slots bit-identical") {
    auto masks = quad_partition();
    PartFeatures<float> target;
    target.m = masks;
    for (int i = 0; i < 4; ++i) target.f[size_t(i)] = random_grid<float>(2, 4, 4, 10 + i);

    SwapSpec<float> keep_all;
    auto same = transplant(target, keep_all);
    for (int i = 0; i < 4; ++i) CHECK(same.f[size_t(i)].raw() == target.f[size_t(i)].raw());

    SwapSpec<float> spec;
    spec.set(PartSlot::Mouth, {random_grid<float>(2, 4, 4, 20), rect_mask(4, 4, 1, 2, 1, 2)});
    auto out = transplant(target, spec);
    CHECK(out.f[0].raw() == target.f[0].raw());
    CHECK(out.f[1].raw() == target.f[1].raw());
    CHECK(out.f[3].raw() == target.f[3].raw());
    CHECK(out.f[2].raw() != target.f[2].raw());

    CHECK_THROWS_AS(spec.set(PartSlot::Remain, {target.f[0], masks[0]}), ContractError);
    SwapSpec<float> bad;
    bad.set(PartSlot::Nose, {random_grid<float>(2, 5, 5, 30), rect_mask(5, 5, 0, 1, 0, 1)});
    CHECK_THROWS_AS(transplant(target, bad), DimensionError);
}

TEST_CASE("transplant constant example") {
    auto masks = quad_partition();
    PartFeatures<float> target;
    target.m = masks;
    for (auto& f : target.f) f = Tensor<float>::full({1, 4, 4}, 1.0f);

    SwapSpec<float> spec;
    spec.set(PartSlot::Mouth, {Tensor<float>::full({1, 4, 4}, 5.0f), rect_mask(4, 4, 0, 1, 0, 1)});
    auto out = transplant(target, spec);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            CHECK(out.f[2].values()[size_t(y) * 4 + x] == (masks[2].at(y, x) ? 5.0f : 1.0f));
}

TEST_CASE("mosaic locality outside replaced regions") {
    auto masks = quad_partition();
    PartFeatures<float> target;
    target.m = masks;
    for (int i = 0; i < 4; ++i) target.f[size_t(i)] = random_grid<float>(3, 4, 4, 40 + i);

    SwapSpec<float> spec;
    spec.set(PartSlot::Eyes, {random_grid<float>(3, 4, 4, 50), rect_mask(4, 4, 2, 3, 0, 2)});
    spec.set(PartSlot::Mouth, {random_grid<float>(3, 4, 4, 51), rect_mask(4, 4, 0, 2, 1, 3)});

    auto before = mosaic(target);
    auto after = mosaic(transplant(target, spec));
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 16; ++i) {
            if (masks[0].v[size_t(i)] || masks[2].v[size_t(i)]) continue;
            CHECK(after.values()[size_t(c) * 16 + i] == before.values()[size_t(c) * 16 + i]);
        }
}

TEST_CASE("self-transplant with matching extents is exact") {
    auto masks = quad_partition();
    PartFeatures<float> target;
    target.m = masks;
    for (int i = 0; i < 4; ++i) target.f[size_t(i)] = random_grid<float>(2, 4, 4, 60 + i);

    SwapSpec<float> spec;
    spec.set(PartSlot::Nose, {target.f[1], masks[1]});
    auto out = transplant(target, spec);
    for (int64_t i = 0; i < out.f[1].size(); ++i)
        CHECK(out.f[1].values()[size_t(i)] == target.f[1].values()[size_t(i)]);
}

TEST_CASE("aggregate with an identity MLP reproduces the mosaic") {
    const int d = 2;
    ParamStore<double> ps(3);
    FusionModule<double> fm(ps, "fuse", d, 2);

    auto masks = quad_partition();
    PartFeatures<double> parts;
    parts.m = masks;
    double consts[4] = {2.0, 3.0, 4.0, 0.5};
    for (int i = 0; i < 4; ++i) parts.f[size_t(i)] = Tensor<double>::full({d, 4, 4}, consts[i]);

    fm.aggregate(parts);  // materialize params
    auto w1 = ps.all().at("fuse.w1");
    auto w2 = ps.all().at("fuse.w2");
    std::fill(w1.data(), w1.data() + w1.size(), 0.0);
    std::fill(w2.data(), w2.data() + w2.size(), 0.0);
    for (int i = 0; i < d; ++i) {
        w1.data()[size_t(i) * 2 * d + i] = 1.0;
        w1.data()[size_t(i) * 2 * d + i + d] = -1.0;
        w2.data()[size_t(i) * d + i] = 1.0;
        w2.data()[size_t(i + d) * d + i] = -1.0;
    }

    auto c = fm.aggregate(parts);
    CHECK(c.shape() == Shape{d, 4, 4});
    for (int ch = 0; ch < d; ++ch)
        for (int i = 0; i < 16; ++i) {
            double want = 0;
            for (int s = 0; s < 4; ++s) want += consts[s] * masks[size_t(s)].v[size_t(i)];
            CHECK(c.values()[size_t(ch) * 16 + i] == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("aggregate of zero features is constant over the grid") {
    ParamStore<double> ps(4);
    FusionModule<double> fm(ps, "fuse", 3, 2);
    auto masks = quad_partition();
    PartFeatures<double> parts;
    parts.m = masks;
    for (auto& f : parts.f) f = Tensor<double>::zeros({3, 4, 4});
    auto c = fm.aggregate(parts);
    for (int ch = 0; ch < 3; ++ch)
        for (int i = 1; i < 16; ++i)
            CHECK(c.values()[size_t(ch) * 16 + i] ==
                  doctest::Approx(c.values()[size_t(ch) * 16]).epsilon(1e-12));
}

TEST_CASE("aggregate is invariant to slot processing order") {
    ParamStore<double> ps(5);
    FusionModule<double> fm(ps, "fuse", 2, 2);
    auto masks = quad_partition();
    PartFeatures<double> a;
    a.m = masks;
    for (int i = 0; i < 4; ++i) a.f[size_t(i)] = random_grid<double>(2, 4, 4, 70 + i);

    PartFeatures<double> b;
    b.f = {a.f[2], a.f[1], a.f[0], a.f[3]};
    b.m = {a.m[2], a.m[1], a.m[0], a.m[3]};

    auto ca = fm.aggregate(a);
    auto cb = fm.aggregate(b);
    for (int64_t i = 0; i < ca.size(); ++i)
        CHECK(ca.values()[size_t(i)] == doctest::Approx(cb.values()[size_t(i)]).epsilon(1e-12));
}

TEST_CASE("fusion gradients match finite differences") {
    auto masks = quad_partition();
    for (uint64_t seed : {1u, 2u, 3u}) {
        ParamStore<double> ps(seed);
        FusionModule<double> fm(ps, "fuse", 2, 2);
        PartFeatures<double> target;
        target.m = masks;
        for (int i = 0; i < 4; ++i)
            target.f[size_t(i)] = ps.param("t" + std::to_string(i), {2, 4, 4}, Init::normal(0.7));
        auto src = ps.param("s", {2, 4, 4}, Init::normal(0.7));

        Rng rng(seed + 300);
        std::vector<double> w(size_t(2) * 16);
        for (auto& v : w) v = rng.normal();
        auto wt = Tensor<double>::from({2, 4, 4}, std::move(w));

        testing::gradcheck_store(ps, [&] {
            SwapSpec<double> spec;
            spec.set(PartSlot::Mouth, {src, rect_mask(4, 4, 1, 2, 0, 1)});
            spec.set(PartSlot::Eyes, {src, rect_mask(4, 4, 2, 3, 2, 3)});
            return sum(mul(fm.aggregate(transplant(target, spec)), wt));
        });
    }
}

TEST_CASE("decompose produces a valid grid partition from rendered faces") {
    EncoderConfig cfg;
    cfg.patch = 4;
    cfg.dim = 16;
    cfg.blocks = 3;
    cfg.taps = {2, 3};
    ParamStore<float> ps(1);
    PartEncoder<float> enc(ps, "enc", cfg);

    for (uint64_t seed : {1u, 5u, 9u}) {
        RenderResult rr = render(sample_identity(seed), 64);
        auto parts = decompose(enc, rr.image, rr.masks);
        for (int i = 0; i < 4; ++i) CHECK(parts.f[size_t(i)].shape() == Shape{16, 16, 16});

        PartMaskSet grid = PartMaskSet::from_parts(parts.m[0], parts.m[1], parts.m[2]);
        grid.validate();
        for (int i = 0; i < 3; ++i) CHECK(parts.m[size_t(i)].count() > 0);

        // Eyes claim first, so when the plain majority vote is nonempty the
        // partition must agree with it.
        Mask plain = downsample_mask(rr.masks.eyes, 16, 16);
        if (plain.count() > 0) CHECK(parts.m[0].v == plain.v);

        auto src = make_swap_source(enc, rr.image, rr.masks, PartSlot::Mouth);
        CHECK(src.m.v == parts.m[2].v);
        auto direct = enc.encode(image_tensor<float>(apply_mask(rr.image, rr.masks.mouth)));
        CHECK(std::memcmp(src.f.values().data(), direct.values().data(),
                          sizeof(float) * direct.size()) == 0);
    }
    CHECK_THROWS_AS(make_swap_source(enc, render(sample_identity(1), 64).image,
                                     render(sample_identity(1), 64).masks, PartSlot::Remain),
                    ContractError);
}

TEST_CASE("partition_to_grid fallback claims a cell for starved parts") {
    // eyes cover only a quarter of each top cell, so the majority vote alone
    // would drop them
    Mask eyes = rect_mask(8, 8, 0, 0, 0, 7);
    Mask nose = rect_mask(8, 8, 2, 3, 0, 3);
    Mask mouth = rect_mask(8, 8, 4, 7, 4, 7);
    PartMaskSet pixel = PartMaskSet::from_parts(eyes, nose, mouth);

    CHECK(downsample_mask(eyes, 2, 2).count() == 0);
    PartMaskSet grid = partition_to_grid(pixel, 2, 2);
    grid.validate();
    // The nose majority-claims cell (0,0) (half its pixels), so the starved
    // eyes fall back to their best remaining cell (0,1).
    CHECK(grid.nose.at(0, 0) == 1);
    CHECK(grid.eyes.count() == 1);
    CHECK(grid.eyes.at(0, 1) == 1);
    CHECK(grid.mouth.at(1, 1) == 1);
    CHECK(grid.remain.at(1, 0) == 1);

    CHECK_THROWS_AS(partition_to_grid(pixel, 3, 2), DimensionError);
}
