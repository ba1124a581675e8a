#pragma once

#include <string>

#include "partswap/image.hpp"
#include "partswap/maskops.hpp"

namespace partswap {

// Flat-shaded parametric face. Geometry is expressed in canvas-relative
// units; part placement is relative to the face center so pose jitter moves
// the whole face rigidly.
struct FaceParams {
    int id = 0;
    double skin_r = 0.6, skin_g = 0.45, skin_b = 0.35;
    double face_cx = 0.5, face_cy = 0.52;
    double face_ax = 0.38, face_ay = 0.39;

    double eye_dx = 0.11, eye_dy = 0.14;  // offsets from face center, dy above
    double eye_rx = 0.045, eye_ry = 0.036;
    double brow_gap = 0.027, brow_h = 0.017, brow_wscale = 1.0;
    double eyes_r = 0.2, eyes_g = 0.3, eyes_b = 0.7;

    double nose_dy = 0.03, nose_hw = 0.034, nose_hh = 0.05;
    double nose_r = 0.8, nose_g = 0.5, nose_b = 0.3;

    double mouth_dy = 0.19, mouth_rx = 0.07, mouth_ry = 0.036;
    double mouth_r = 0.75, mouth_g = 0.2, mouth_b = 0.25;

    double jit_tx = 0.0, jit_ty = 0.0, jit_scale = 1.0, illum = 1.0;
};

struct PerturbRanges {
    double translate = 0.02;  // half-range around 0
    double scale = 0.05;      // half-range around 1
    double illum = 0.1;       // half-range around 1
};

FaceParams sample_identity(uint64_t seed);
FaceParams perturb(const FaceParams& p, uint64_t seed,
                   const PerturbRanges& ranges = PerturbRanges{});

struct RenderResult {
    Image image;
    PartMaskSet masks;
};

RenderResult render(const FaceParams& p, int size);

std::string serialize_face_params(const FaceParams& p);
FaceParams parse_face_params(const std::string& text);

}  // namespace partswap
