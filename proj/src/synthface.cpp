#include "partswap/synthface.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "partswap/rng.hpp"

namespace partswap {

namespace {

constexpr double kBgR = 0.10, kBgG = 0.11, kBgB = 0.13;

struct Span {
    double x0, x1, y0, y1;
    bool inside_canvas() const { return x0 >= 0 && y0 >= 0 && x1 <= 1 && y1 <= 1; }
};

bool in_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
    double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
}

bool in_rect(double x, double y, double cx, double x_half, double y0, double y1) {
    return std::fabs(x - cx) <= x_half && y >= y0 && y <= y1;
}

// apex-up isoceles triangle centered on cx
bool in_triangle(double x, double y, double cx, double cy, double hw, double hh) {
    double ty = (y - (cy - hh)) / (2 * hh);  // 0 at apex, 1 at base
    if (ty < 0 || ty > 1) return false;
    return std::fabs(x - cx) <= hw * ty;
}

}  // namespace

FaceParams sample_identity(uint64_t seed) {
    Rng rng(hash_combine(seed, "identity"));
    FaceParams p;
    p.id = int(seed);
    p.skin_r = rng.uniform(0.35, 0.9);
    p.skin_g = rng.uniform(0.35, 0.9);
    p.skin_b = rng.uniform(0.35, 0.9);
    p.face_cx = rng.uniform(0.49, 0.51);
    p.face_cy = rng.uniform(0.51, 0.53);
    p.face_ax = rng.uniform(0.34, 0.42);
    p.face_ay = rng.uniform(0.36, 0.42);
    p.eye_dx = rng.uniform(0.09, 0.13);
    p.eye_dy = rng.uniform(0.12, 0.16);
    p.eye_rx = rng.uniform(0.035, 0.055);
    p.eye_ry = rng.uniform(0.032, 0.042);
    p.brow_gap = rng.uniform(0.02, 0.035);
    p.brow_h = rng.uniform(0.012, 0.022);
    p.brow_wscale = rng.uniform(0.9, 1.1);
    p.eyes_r = rng.uniform(0.05, 0.95);
    p.eyes_g = rng.uniform(0.05, 0.95);
    p.eyes_b = rng.uniform(0.05, 0.95);
    p.nose_dy = rng.uniform(0.02, 0.04);
    p.nose_hw = rng.uniform(0.028, 0.04);
    p.nose_hh = rng.uniform(0.04, 0.06);
    p.nose_r = rng.uniform(0.05, 0.95);
    p.nose_g = rng.uniform(0.05, 0.95);
    p.nose_b = rng.uniform(0.05, 0.95);
    p.mouth_dy = rng.uniform(0.17, 0.21);
    p.mouth_rx = rng.uniform(0.05, 0.09);
    p.mouth_ry = rng.uniform(0.032, 0.042);
    p.mouth_r = rng.uniform(0.05, 0.95);
    p.mouth_g = rng.uniform(0.05, 0.95);
    p.mouth_b = rng.uniform(0.05, 0.95);
    p.jit_tx = 0.0;
    p.jit_ty = 0.0;
    p.jit_scale = 1.0;
    p.illum = 1.0;
    return p;
}

FaceParams perturb(const FaceParams& p, uint64_t seed, const PerturbRanges& r) {
    Rng rng(hash_combine(seed, "perturb"));
    FaceParams q = p;
    q.jit_tx = rng.uniform(-r.translate, r.translate);
    q.jit_ty = rng.uniform(-r.translate, r.translate);
    q.jit_scale = 1.0 + rng.uniform(-r.scale, r.scale);
    q.illum = 1.0 + rng.uniform(-r.illum, r.illum);
    return q;
}

RenderResult render(const FaceParams& p, int size) {
    if (size != 32 && size != 64 && size != 128)
        throw DimensionError("render: size must be one of 32/64/128, got " +
                             std::to_string(size));

    const double s = p.jit_scale;
    auto fwd_x = [&](double bx) { return p.face_cx + p.jit_tx + s * (bx - p.face_cx); };
    auto fwd_y = [&](double by) { return p.face_cy + p.jit_ty + s * (by - p.face_cy); };

    // base-space shape extents, mapped through the jitter transform
    double ex_lo = p.face_cx - p.eye_dx, ex_hi = p.face_cx + p.eye_dx;
    double ehw = std::max(p.eye_rx, p.eye_rx * p.brow_wscale);
    double ey_c = p.face_cy - p.eye_dy;
    Span eyes{fwd_x(ex_lo - ehw), fwd_x(ex_hi + ehw),
              fwd_y(ey_c - p.eye_ry - p.brow_gap - p.brow_h), fwd_y(ey_c + p.eye_ry)};
    double ny_c = p.face_cy + p.nose_dy;
    Span nose{fwd_x(p.face_cx - p.nose_hw), fwd_x(p.face_cx + p.nose_hw),
              fwd_y(ny_c - p.nose_hh), fwd_y(ny_c + p.nose_hh)};
    double my_c = p.face_cy + p.mouth_dy;
    Span mouth{fwd_x(p.face_cx - p.mouth_rx), fwd_x(p.face_cx + p.mouth_rx),
               fwd_y(my_c - p.mouth_ry), fwd_y(my_c + p.mouth_ry)};
    for (const auto& [name, sp] :
         {std::pair<const char*, Span>{"eyes", eyes}, {"nose", nose}, {"mouth", mouth}})
        if (!sp.inside_canvas())
            throw GeometryError(std::string("render: ") + name + " extends outside the canvas");

    auto shade = [&](double r, double g, double b, float* out) {
        out[0] = float(std::clamp(r * p.illum, 0.0, 1.0));
        out[1] = float(std::clamp(g * p.illum, 0.0, 1.0));
        out[2] = float(std::clamp(b * p.illum, 0.0, 1.0));
    };

    Image img(size, size);
    Mask me(size, size), mn(size, size), mm(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double px = (x + 0.5) / size, py = (y + 0.5) / size;
            // invert jitter into base space
            double bx = p.face_cx + (px - p.jit_tx - p.face_cx) / s;
            double by = p.face_cy + (py - p.jit_ty - p.face_cy) / s;

            float col[3];
            bool is_eye = in_ellipse(bx, by, p.face_cx - p.eye_dx, ey_c, p.eye_rx, p.eye_ry) ||
                          in_ellipse(bx, by, p.face_cx + p.eye_dx, ey_c, p.eye_rx, p.eye_ry) ||
                          in_rect(bx, by, p.face_cx - p.eye_dx, p.eye_rx * p.brow_wscale,
                                  ey_c - p.eye_ry - p.brow_gap - p.brow_h,
                                  ey_c - p.eye_ry - p.brow_gap) ||
                          in_rect(bx, by, p.face_cx + p.eye_dx, p.eye_rx * p.brow_wscale,
                                  ey_c - p.eye_ry - p.brow_gap - p.brow_h,
                                  ey_c - p.eye_ry - p.brow_gap);
            if (is_eye) {
                me.at(y, x) = 1;
                shade(p.eyes_r, p.eyes_g, p.eyes_b, col);
            } else if (in_triangle(bx, by, p.face_cx, ny_c, p.nose_hw, p.nose_hh)) {
                mn.at(y, x) = 1;
                shade(p.nose_r, p.nose_g, p.nose_b, col);
            } else if (in_ellipse(bx, by, p.face_cx, my_c, p.mouth_rx, p.mouth_ry)) {
                mm.at(y, x) = 1;
                shade(p.mouth_r, p.mouth_g, p.mouth_b, col);
            } else if (in_ellipse(bx, by, p.face_cx, p.face_cy, p.face_ax, p.face_ay)) {
                shade(p.skin_r, p.skin_g, p.skin_b, col);
            } else {
                col[0] = float(kBgR);
                col[1] = float(kBgG);
                col[2] = float(kBgB);
            }
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
        }

    for (const auto& [name, m] : {std::pair<const char*, const Mask*>{"eyes", &me},
                                  {"nose", &mn},
                                  {"mouth", &mm}})
        if (m->count() == 0)
            throw GeometryError(std::string("render: ") + name +
                                " rasterizes to zero pixels at size " + std::to_string(size));
    RenderResult res;
    res.image = std::move(img);
    res.masks = PartMaskSet::from_parts(me, mn, mm);
    return res;
}

namespace {

struct FieldDef {
    const char* name;
    double FaceParams::*ptr;
};

const FieldDef kFields[] = {
    {"skin_r", &FaceParams::skin_r},         {"skin_g", &FaceParams::skin_g},
    {"skin_b", &FaceParams::skin_b},         {"face_cx", &FaceParams::face_cx},
    {"face_cy", &FaceParams::face_cy},       {"face_ax", &FaceParams::face_ax},
    {"face_ay", &FaceParams::face_ay},       {"eye_dx", &FaceParams::eye_dx},
    {"eye_dy", &FaceParams::eye_dy},         {"eye_rx", &FaceParams::eye_rx},
    {"eye_ry", &FaceParams::eye_ry},         {"brow_gap", &FaceParams::brow_gap},
    {"brow_h", &FaceParams::brow_h},         {"brow_wscale", &FaceParams::brow_wscale},
    {"eyes_r", &FaceParams::eyes_r},         {"eyes_g", &FaceParams::eyes_g},
    {"eyes_b", &FaceParams::eyes_b},         {"nose_dy", &FaceParams::nose_dy},
    {"nose_hw", &FaceParams::nose_hw},       {"nose_hh", &FaceParams::nose_hh},
    {"nose_r", &FaceParams::nose_r},         {"nose_g", &FaceParams::nose_g},
    {"nose_b", &FaceParams::nose_b},         {"mouth_dy", &FaceParams::mouth_dy},
    {"mouth_rx", &FaceParams::mouth_rx},     {"mouth_ry", &FaceParams::mouth_ry},
    {"mouth_r", &FaceParams::mouth_r},       {"mouth_g", &FaceParams::mouth_g},
    {"mouth_b", &FaceParams::mouth_b},       {"jit_tx", &FaceParams::jit_tx},
    {"jit_ty", &FaceParams::jit_ty},         {"jit_scale", &FaceParams::jit_scale},
    {"illum", &FaceParams::illum},
};

}  // namespace

std::string serialize_face_params(const FaceParams& p) {
    std::ostringstream os;
    os << "id = " << p.id << "\n";
    char buf[64];
    for (const auto& f : kFields) {
        std::snprintf(buf, sizeof(buf), "%.17g", p.*(f.ptr));
        os << f.name << " = " << buf << "\n";
    }
    return os.str();
}

FaceParams parse_face_params(const std::string& text) {
    FaceParams p;
    std::map<std::string, bool> seen;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        size_t start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos || line[start] == '#') continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("face params: missing '=' on line " + std::to_string(lineno));
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw DataError("face params: malformed line " + std::to_string(lineno));
        if (seen[key]) throw DataError("face params: duplicate key " + key);
        seen[key] = true;
        try {
            if (key == "id") {
                p.id = std::stoi(val);
                continue;
            }
            bool matched = false;
            for (const auto& f : kFields)
                if (key == f.name) {
                    p.*(f.ptr) = std::stod(val);
                    matched = true;
                    break;
                }
            if (!matched) throw DataError("face params: unknown key " + key);
        } catch (const std::invalid_argument&) {
            throw DataError("face params: bad value for " + key);
        } catch (const std::out_of_range&) {
            throw DataError("face params: bad value for " + key);
        }
    }
    if (!seen["id"]) throw DataError("face params: missing key id");
    for (const auto& f : kFields)
        if (!seen[f.name]) throw DataError("face params: missing key " + std::string(f.name));
    return p;
}

}  // namespace partswap
