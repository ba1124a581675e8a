#include "partswap/maskops.hpp"

#include <fstream>

#include "partswap/image.hpp"

namespace partswap {

const char* slot_name(PartSlot s) {
    switch (s) {
        case PartSlot::Eyes: return "eyes";
        case PartSlot::Nose: return "nose";
        case PartSlot::Mouth: return "mouth";
        case PartSlot::Remain: return "remain";
    }
    return "?";
}

Mask complement(const Mask& m) {
    Mask r(m.h, m.w);
    for (size_t i = 0; i < m.v.size(); ++i) r.v[i] = m.v[i] ? 0 : 1;
    return r;
}

Mask mask_union(const Mask& a, const Mask& b) {
    if (!a.same_extent(b)) throw DimensionError("mask_union: extents differ");
    Mask r(a.h, a.w);
    for (size_t i = 0; i < a.v.size(); ++i) r.v[i] = (a.v[i] || b.v[i]) ? 1 : 0;
    return r;
}

Mask remaining_mask(const Mask& eyes, const Mask& nose, const Mask& mouth) {
    if (!eyes.same_extent(nose) || !eyes.same_extent(mouth))
        throw DimensionError("remaining_mask: extents differ");
    Mask r(eyes.h, eyes.w);
    for (size_t i = 0; i < r.v.size(); ++i) {
        int s = eyes.v[i] + nose.v[i] + mouth.v[i];
        if (s > 1) throw OverlapError("remaining_mask: part masks overlap at cell " +
                                      std::to_string(i));
        r.v[i] = s ? 0 : 1;
    }
    return r;
}

Mask downsample_mask(const Mask& m, int h2, int w2) {
    if (h2 < 1 || w2 < 1 || h2 > m.h || w2 > m.w || m.h % h2 != 0 || m.w % w2 != 0)
        throw DimensionError("downsample_mask: " + std::to_string(m.h) + "x" +
                             std::to_string(m.w) + " -> " + std::to_string(h2) + "x" +
                             std::to_string(w2) + " is not an integer block ratio");
    int by = m.h / h2, bx = m.w / w2;
    Mask r(h2, w2);
    for (int y = 0; y < h2; ++y)
        for (int x = 0; x < w2; ++x) {
            int ones = 0;
            for (int i = 0; i < by; ++i)
                for (int j = 0; j < bx; ++j) ones += m.at(y * by + i, x * bx + j);
            r.at(y, x) = (2 * ones >= by * bx) ? 1 : 0;
        }
    return r;
}

BBox bbox(const Mask& m) {
    BBox b{m.h, -1, m.w, -1};
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (m.at(y, x)) {
                if (y < b.r0) b.r0 = y;
                if (y > b.r1) b.r1 = y;
                if (x < b.c0) b.c0 = x;
                if (x > b.c1) b.c1 = x;
            }
    if (b.r1 < 0) throw EmptyRegionError("bbox: mask has no set cells");
    return b;
}

PartMaskSet PartMaskSet::from_parts(const Mask& eyes, const Mask& nose, const Mask& mouth) {
    PartMaskSet s;
    s.eyes = eyes;
    s.nose = nose;
    s.mouth = mouth;
    s.remain = remaining_mask(eyes, nose, mouth);
    return s;
}

void PartMaskSet::validate() const {
    if (!eyes.same_extent(nose) || !eyes.same_extent(mouth) || !eyes.same_extent(remain))
        throw DimensionError("PartMaskSet: extents differ");
    for (size_t i = 0; i < eyes.v.size(); ++i) {
        for (const Mask* m : {&eyes, &nose, &mouth, &remain})
            if (m->v[i] > 1)
                throw ContractError("PartMaskSet: non-binary cell");
        int s = eyes.v[i] + nose.v[i] + mouth.v[i] + remain.v[i];
        if (s > 1) throw OverlapError("PartMaskSet: cell covered more than once");
        if (s == 0) throw ContractError("PartMaskSet: cell left uncovered");
    }
}

const Mask& PartMaskSet::slot(PartSlot s) const {
    switch (s) {
        case PartSlot::Eyes: return eyes;
        case PartSlot::Nose: return nose;
        case PartSlot::Mouth: return mouth;
        case PartSlot::Remain: return remain;
    }
    throw ContractError("PartMaskSet: bad slot");
}

Mask load_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("pgm: cannot open " + path);
    char m0 = char(is.get()), m1 = char(is.get());
    if (m0 != 'P' || m1 != '5') throw DataError("pgm: not a P5 file: " + path);
    int w = pnm_detail::next_header_int(is, path);
    int h = pnm_detail::next_header_int(is, path);
    int maxv = pnm_detail::next_header_int(is, path);
    if (maxv != 255) throw DataError("pgm: only maxval 255 supported: " + path);
    std::vector<unsigned char> buf(size_t(h) * w);
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (!is) throw DataError("pgm: truncated pixel data in " + path);
    Mask m(h, w);
    for (size_t i = 0; i < buf.size(); ++i) m.v[i] = buf[i] >= 128 ? 1 : 0;
    return m;
}

void save_pgm(const Mask& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("pgm: cannot open " + path + " for writing");
    os << "P5\n" << m.w << " " << m.h << "\n255\n";
    std::vector<unsigned char> buf(m.v.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = m.v[i] ? 255 : 0;
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!os) throw DataError("pgm: write failed for " + path);
}

Image apply_mask(const Image& img, const Mask& m) {
    if (img.h != m.h || img.w != m.w)
        throw DimensionError("apply_mask: image and mask extents differ");
    Image out(img.h, img.w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                out.at(c, y, x) = m.at(y, x) ? img.at(c, y, x) : 0.0f;
    return out;
}

PartMaskSet partition_to_grid(const PartMaskSet& pixel, int gh, int gw) {
    pixel.validate();
    const Mask* parts[3] = {&pixel.eyes, &pixel.nose, &pixel.mouth};
    if (gh < 1 || gw < 1 || pixel.eyes.h % gh != 0 || pixel.eyes.w % gw != 0)
        throw DimensionError("partition_to_grid: grid must divide the pixel extents");
    const int by = pixel.eyes.h / gh, bx = pixel.eyes.w / gw;

    // per-part covered pixel count per cell
    std::vector<std::array<int, 3>> cnt(size_t(gh) * gw, {0, 0, 0});
    for (int p = 0; p < 3; ++p)
        for (int y = 0; y < pixel.eyes.h; ++y)
            for (int x = 0; x < pixel.eyes.w; ++x)
                if (parts[p]->at(y, x)) cnt[size_t(y / by) * gw + x / bx][p]++;

    std::vector<int> claim(size_t(gh) * gw, 3);  // 3 = remain
    for (int p = 0; p < 3; ++p)
        for (size_t c = 0; c < claim.size(); ++c)
            if (claim[c] == 3 && 2 * cnt[c][p] >= by * bx) claim[c] = p;

    // majority vote can starve a thin part; give it its best unclaimed cell
    for (int p = 0; p < 3; ++p) {
        bool present = false;
        for (size_t c = 0; c < claim.size(); ++c) present |= (claim[c] == p);
        if (present) continue;
        int best = -1, best_cnt = 0;
        for (size_t c = 0; c < claim.size(); ++c)
            if (claim[c] == 3 && cnt[c][p] > best_cnt) {
                best = int(c);
                best_cnt = cnt[c][p];
            }
        if (best < 0)
            throw GeometryError(std::string("partition_to_grid: no free cell left for ") +
                                slot_name(PartSlot(p)));
        claim[size_t(best)] = p;
    }

    PartMaskSet grid;
    Mask* out[4] = {&grid.eyes, &grid.nose, &grid.mouth, &grid.remain};
    for (int p = 0; p < 4; ++p) *out[p] = Mask(gh, gw);
    for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x) out[claim[size_t(y) * gw + x]]->at(y, x) = 1;
    grid.validate();
    return grid;
}

}  // namespace partswap
