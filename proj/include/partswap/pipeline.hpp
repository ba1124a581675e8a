#pragma once

#include <array>
#include <optional>
#include <ostream>
#include <string>

#include "partswap/config.hpp"
#include "partswap/image.hpp"
#include "partswap/maskops.hpp"
#include "partswap/metrics.hpp"

namespace partswap {

// A face on disk: the image plus the mask prefix that resolves to
// <prefix>_eyes.pgm, <prefix>_nose.pgm, <prefix>_mouth.pgm.
struct FaceRef {
    std::string image;
    std::string mask_prefix;
};

struct FaceSample {
    Image image;
    PartMaskSet masks;
};

// Loads and validates one face; mask overlap or extent mismatch is an
// ingestion error.
FaceSample load_face(const FaceRef& ref);

// Parses the <image>:<mask_prefix> form used by CLI flags and eval manifests.
FaceRef parse_face_ref(const std::string& field, const std::string& where = "face reference");

// Corpus layout written by cmd_gen_data: id_<n>/view_<k>.ppm plus the three
// part masks and view_<k>.txt holding the FaceParams manifest.
struct CorpusIndex {
    std::string root;
    int identities = 0;
    int views = 0;
    int size = 0;

    FaceRef view(int id, int view) const;
    std::string manifest_path(int id, int view) const;
};

CorpusIndex open_corpus(const std::string& dir);

// The swap request shared by cmd_swap and cmd_invert_fix: a target face and
// up to three part sources (slot order: eyes, nose, mouth).
struct SwapRequest {
    FaceRef target;
    std::array<std::optional<FaceRef>, 3> part;
};

void cmd_gen_data(const RunConfig& rc, const std::string& out_dir);

void cmd_train(const RunConfig& rc, const std::string& data_dir, const std::string& out_ckpt,
               const std::string& resume = "", std::ostream* echo = nullptr);

Image cmd_swap(const RunConfig& rc, const std::string& ckpt, const SwapRequest& req,
               const std::string& out_path);

// Full evaluation protocol over held-out triples (or a manifest of them):
// a reconstruction pass, a mouth-only swap, and a three-part swap per triple.
struct EvalResult {
    MetricReport report;      // three-part swap: FID, FPSim per part, unswapped-region MSE
    double recon_mse = 0.0;   // reconstruction pass, full-image MSE vs target
    double order_mouth = 0.0; // fraction with FPSim-M(out, src) > FPSim-M(out, tgt)
    double order_all3 = 0.0;  // fraction where the ordering holds for all three parts at once
};

EvalResult cmd_eval(const RunConfig& rc, const std::string& ckpt, const std::string& data_dir,
                    const std::string& manifest_path, const std::string& out_report,
                    std::ostream* echo = nullptr);

void cmd_ablate(const RunConfig& rc, const std::string& data_dir, const std::string& out_report,
                std::ostream* echo = nullptr);

Image cmd_invert_fix(const RunConfig& rc, const std::string& ckpt, const SwapRequest& req,
                     const std::string& skin_mask_path, const std::string& out_path);

}  // namespace partswap
