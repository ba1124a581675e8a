#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "doctest.h"
#include "partswap/diffusion.hpp"
#include "partswap/image.hpp"
#include "partswap/model.hpp"
#include "partswap/param_store.hpp"
#include "partswap/pipeline.hpp"
#include "partswap/synthface.hpp"

using namespace partswap;
namespace fs = std::filesystem;

namespace {

std::string tmpdir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("partswap_pipe_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::map<std::string, std::string> tree_bytes(const std::string& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[fs::relative(e.path(), root).string()] = slurp(e.path().string());
    return out;
}

RunConfig tiny_config() {
    RunConfig rc;
    rc.load_string(R"(
        encoder.dim = 16
        encoder.blocks = 2
        encoder.taps = 1,2
        unet.base = 8
        unet.mults = 1,2
        unet.attn_levels = 1
        unet.time_dim = 8
        diffusion.T = 50
        ddim.steps = 5
        train.steps = 6
        train.batch = 2
        train.lr = 1e-3
        train.log_every = 2
        train.ckpt_every = 3
        train.seed = 7
        data.identities = 4
        data.views = 2
        data.size = 32
        data.holdout = 2
        eval.triples = 2
        eval.seed = 3
    )");
    return rc;
}

// one shared tiny corpus per process, generated lazily
const std::string& tiny_corpus() {
    static std::string dir = [] {
        std::string d = tmpdir("corpus");
        cmd_gen_data(tiny_config(), d);
        return d;
    }();
    return dir;
}

std::map<std::string, std::string> parse_report(const std::string& path) {
    std::map<std::string, std::string> rows;
    std::istringstream in(slurp(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string metric, part, value;
        ls >> metric >> part >> value;
        rows[metric + "/" + part] = value;
    }
    return rows;
}

}  // namespace

TEST_CASE("gen-data writes a complete, reproducible corpus") {
    const std::string dir = tiny_corpus();
    const RunConfig rc = tiny_config();

    auto files = tree_bytes(dir);
    // per view: image, three masks, manifest
    CHECK(files.size() == 4 * 2 * 5);
    for (int id = 0; id < 4; ++id)
        for (int v = 0; v < 2; ++v) {
            std::string base = "id_" + std::to_string(id) + "/view_" + std::to_string(v);
            CHECK(files.count(base + ".ppm"));
            CHECK(files.count(base + "_eyes.pgm"));
            CHECK(files.count(base + "_nose.pgm"));
            CHECK(files.count(base + "_mouth.pgm"));
            CHECK(files.count(base + ".txt"));
        }

    const std::string again = tmpdir("corpus_again");
    cmd_gen_data(rc, again);
    CHECK(tree_bytes(again) == files);

    RunConfig other = rc;
    other.set("data.seed", "99");
    const std::string reseeded = tmpdir("corpus_reseeded");
    cmd_gen_data(other, reseeded);
    CHECK(tree_bytes(reseeded) != files);
}

TEST_CASE("corpus manifests round-trip through the face params parser") {
    const CorpusIndex c = open_corpus(tiny_corpus());
    CHECK(c.identities == 4);
    CHECK(c.views == 2);
    CHECK(c.size == 32);

    for (int id = 0; id < c.identities; ++id)
        for (int v = 0; v < c.views; ++v) {
            const std::string text = slurp(c.manifest_path(id, v));
            FaceParams p = parse_face_params(text);
            CHECK(p.id == id);
            CHECK(serialize_face_params(p) == text);
            // the manifest really describes the stored image
            RenderResult r = render(p, c.size);
            CHECK(image_mse(quantize8(r.image), load_ppm(c.view(id, v).image)) == 0.0);
        }

    // view 0 is the canonical render, later views are perturbed
    FaceParams v0 = parse_face_params(slurp(c.manifest_path(0, 0)));
    FaceParams v1 = parse_face_params(slurp(c.manifest_path(0, 1)));
    CHECK(v0.jit_tx == 0.0);
    CHECK(v0.jit_scale == 1.0);
    CHECK(v1.mouth_r == v0.mouth_r);  // identity fields shared
    CHECK(image_mse(load_ppm(c.view(0, 0).image), load_ppm(c.view(0, 1).image)) > 0.0);
}

TEST_CASE("open_corpus and load_face reject broken inputs") {
    CHECK_THROWS_AS(open_corpus("/nonexistent/corpus"), DataError);
    const std::string empty = tmpdir("empty");
    CHECK_THROWS_AS(open_corpus(empty), DataError);

    // overlapping masks are an ingestion error
    const std::string bad = tmpdir("bad_masks");
    RenderResult r = render(sample_identity(1), 32);
    save_ppm(r.image, bad + "/face.ppm");
    Mask overlap = r.masks.eyes;
    save_pgm(overlap, bad + "/face_eyes.pgm");
    save_pgm(overlap, bad + "/face_nose.pgm");
    save_pgm(r.masks.mouth, bad + "/face_mouth.pgm");
    CHECK_THROWS_AS(load_face(FaceRef{bad + "/face.ppm", bad + "/face"}), OverlapError);

    // extent mismatch between image and masks
    const std::string off = tmpdir("bad_extent");
    RenderResult small = render(sample_identity(1), 32);
    RenderResult big = render(sample_identity(1), 64);
    save_ppm(big.image, off + "/face.ppm");
    save_pgm(small.masks.eyes, off + "/face_eyes.pgm");
    save_pgm(small.masks.nose, off + "/face_nose.pgm");
    save_pgm(small.masks.mouth, off + "/face_mouth.pgm");
    CHECK_THROWS_AS(load_face(FaceRef{off + "/face.ppm", off + "/face"}), DataError);
}

TEST_CASE("parse_face_ref splits on the last colon") {
    FaceRef r = parse_face_ref("a/b.ppm:a/b");
    CHECK(r.image == "a/b.ppm");
    CHECK(r.mask_prefix == "a/b");
    CHECK_THROWS_AS(parse_face_ref("no_colon"), DataError);
    CHECK_THROWS_AS(parse_face_ref(":prefix"), DataError);
    CHECK_THROWS_AS(parse_face_ref("img:"), DataError);
}

TEST_CASE("train writes checkpoint and deterministic loss log") {
    const RunConfig rc = tiny_config();
    const std::string runa = tmpdir("train_a");
    cmd_train(rc, tiny_corpus(), runa + "/model.ckpt");
    CHECK(fs::exists(runa + "/model.ckpt"));

    const std::string log = slurp(runa + "/model.ckpt.log");
    std::istringstream in(log);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 5);  // header + steps 1, 2, 4, 6
    CHECK(lines[0] == "# step\tloss");
    CHECK(lines[1].substr(0, 2) == "1\t");
    CHECK(lines[4].substr(0, 2) == "6\t");

    ParamStore<float> ps(0);
    load_checkpoint(runa + "/model.ckpt", ps);
    CHECK(ps.step() == 6);
    CHECK(ps.count() > 0);

    const std::string runb = tmpdir("train_b");
    cmd_train(rc, tiny_corpus(), runb + "/model.ckpt");
    CHECK(slurp(runb + "/model.ckpt.log") == log);
    CHECK(slurp(runb + "/model.ckpt") == slurp(runa + "/model.ckpt"));
}

TEST_CASE("resumed training continues the step counter and the data stream") {
    RunConfig head = tiny_config();
    head.set("train.steps", "3");
    const std::string dir = tmpdir("train_resume");
    cmd_train(head, tiny_corpus(), dir + "/model.ckpt");
    {
        ParamStore<float> ps(0);
        load_checkpoint(dir + "/model.ckpt", ps);
        CHECK(ps.step() == 3);
    }

    RunConfig full = tiny_config();
    fs::copy_file(dir + "/model.ckpt", dir + "/resumed.ckpt");
    fs::copy_file(dir + "/model.ckpt.log", dir + "/resumed.ckpt.log");
    cmd_train(full, tiny_corpus(), dir + "/resumed.ckpt", dir + "/model.ckpt");
    ParamStore<float> ps(0);
    load_checkpoint(dir + "/resumed.ckpt", ps);
    CHECK(ps.step() == 6);

    // the first post-resume forward sees bit-identical parameters, so its
    // logged loss matches the straight run's
    const std::string straight = tmpdir("train_straight");
    cmd_train(full, tiny_corpus(), straight + "/model.ckpt");
    auto grep_step = [](const std::string& log, const std::string& step) {
        std::istringstream in(log);
        std::string line;
        while (std::getline(in, line))
            if (line.substr(0, step.size() + 1) == step + "\t") return line;
        return std::string();
    };
    std::string resumed_log = slurp(dir + "/resumed.ckpt.log");
    std::string straight_log = slurp(straight + "/model.ckpt.log");
    CHECK(grep_step(resumed_log, "4") == grep_step(straight_log, "4"));
    CHECK(grep_step(resumed_log, "4") != "");
}

TEST_CASE("resume onto a different architecture fails loudly") {
    RunConfig rc = tiny_config();
    const std::string dir = tmpdir("train_strict");
    cmd_train(rc, tiny_corpus(), dir + "/model.ckpt");

    RunConfig wider = tiny_config();
    wider.set("encoder.dim", "24");
    wider.set("train.steps", "8");  // past the checkpoint so training actually runs
    CHECK_THROWS_AS(cmd_train(wider, tiny_corpus(), dir + "/other.ckpt", dir + "/model.ckpt"),
                    ContractError);  // same name, conflicting shape

    RunConfig deeper = tiny_config();
    deeper.set("unet.mults", "1,2,2");
    deeper.set("train.steps", "8");
    CHECK_THROWS_AS(cmd_train(deeper, tiny_corpus(), dir + "/other.ckpt", dir + "/model.ckpt"),
                    DataError);  // parameters missing from the checkpoint
}

TEST_CASE("swap runs end to end, deterministically") {
    const RunConfig rc = tiny_config();
    const std::string dir = tmpdir("swap");
    cmd_train(rc, tiny_corpus(), dir + "/model.ckpt");

    const CorpusIndex c = open_corpus(tiny_corpus());
    SwapRequest req;
    req.target = c.view(2, 0);  // held out
    req.part[2] = c.view(3, 1);

    Image out = cmd_swap(rc, dir + "/model.ckpt", req, dir + "/out.ppm");
    CHECK(out.h == 32);
    CHECK(fs::exists(dir + "/out.ppm"));
    CHECK(fs::exists(dir + "/out_grid.ppm"));
    Image grid = load_ppm(dir + "/out_grid.ppm");
    CHECK(grid.h == 2 * 32 + 2);

    cmd_swap(rc, dir + "/model.ckpt", req, dir + "/out2.ppm");
    CHECK(slurp(dir + "/out2.ppm") == slurp(dir + "/out.ppm"));

    RunConfig reseeded = rc;
    reseeded.set("ddim.seed", "11");
    cmd_swap(reseeded, dir + "/model.ckpt", req, dir + "/out3.ppm");
    CHECK(slurp(dir + "/out3.ppm") != slurp(dir + "/out.ppm"));

    // reconstruction mode accepts an empty request
    SwapRequest recon;
    recon.target = c.view(2, 0);
    Image plain = cmd_swap(rc, dir + "/model.ckpt", recon, dir + "/recon.ppm");
    CHECK(plain.w == 32);

    CHECK_THROWS_AS(cmd_swap(rc, dir + "/missing.ckpt", req, dir + "/x.ppm"), DataError);
}

TEST_CASE("eval scores triples and reproduces its report byte for byte") {
    const RunConfig rc = tiny_config();
    const std::string dir = tmpdir("eval");
    cmd_train(rc, tiny_corpus(), dir + "/model.ckpt");

    EvalResult r = cmd_eval(rc, dir + "/model.ckpt", tiny_corpus(), "", dir + "/report.tsv");
    CHECK(r.report.samples == 2);
    CHECK(std::isfinite(r.report.fid));
    CHECK(r.report.fid >= 0.0);
    for (double v : {r.report.fpsim_eyes, r.report.fpsim_nose, r.report.fpsim_mouth}) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    CHECK(r.report.mse >= 0.0);
    CHECK(fs::exists(dir + "/report.tsv.manifest"));

    auto rows = parse_report(dir + "/report.tsv");
    CHECK(rows.count("fid/all"));
    CHECK(rows.count("fpsim/eyes"));
    CHECK(rows.count("fpsim/nose"));
    CHECK(rows.count("fpsim/mouth"));
    CHECK(rows.count("mse/remain"));
    CHECK(rows.at("samples/all") == "2");

    cmd_eval(rc, dir + "/model.ckpt", tiny_corpus(), "", dir + "/report2.tsv");
    CHECK(slurp(dir + "/report2.tsv") == slurp(dir + "/report.tsv"));

    // the emitted manifest reproduces the same numbers through the manifest path
    EvalResult m = cmd_eval(rc, dir + "/model.ckpt", "", dir + "/report.tsv.manifest",
                            dir + "/report3.tsv");
    CHECK(m.report.fid == r.report.fid);
    CHECK(slurp(dir + "/report3.tsv") == slurp(dir + "/report.tsv"));

    CHECK_THROWS_AS(cmd_eval(rc, dir + "/model.ckpt", "", dir + "/nope.manifest",
                             dir + "/r.tsv"),
                    DataError);
}

TEST_CASE("self-evaluation gives perfect part similarity and zero error") {
    const CorpusIndex c = open_corpus(tiny_corpus());
    FaceSample f = load_face(c.view(0, 0));
    for (PartSlot slot : kSwappableSlots) {
        const Mask& m = f.masks.slot(slot);
        CHECK(fpsim(f.image, m, f.image, m) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(masked_mse(f.image, f.image) == 0.0);
    CHECK(masked_mse(f.image, f.image, &f.masks.remain) == 0.0);
}

TEST_CASE("invert-fix with threshold 0 replays the plain swap exactly") {
    const RunConfig rc = tiny_config();
    const std::string dir = tmpdir("fix");
    cmd_train(rc, tiny_corpus(), dir + "/model.ckpt");

    const CorpusIndex c = open_corpus(tiny_corpus());
    SwapRequest req;
    req.target = c.view(2, 0);
    req.part[2] = c.view(3, 0);

    FaceSample tgt = load_face(req.target);
    save_pgm(tgt.masks.remain, dir + "/skin.pgm");

    Image plain = cmd_swap(rc, dir + "/model.ckpt", req, dir + "/plain.ppm");
    cmd_invert_fix(rc, dir + "/model.ckpt", req, dir + "/skin.pgm", dir + "/fix0.ppm");
    CHECK(slurp(dir + "/fix0.ppm") == slurp(dir + "/plain.ppm"));

    // pinning every step under a full mask reconstructs the target: the
    // replayed trajectory is the target's own inversion
    Mask full(32, 32);
    std::fill(full.v.begin(), full.v.end(), uint8_t(1));
    save_pgm(full, dir + "/full.pgm");
    RunConfig pinned = rc;
    pinned.set("fix.threshold", rc.gets("ddim.steps"));
    Image fixed = cmd_invert_fix(pinned, dir + "/model.ckpt", req, dir + "/full.pgm",
                                 dir + "/fix_full.ppm");
    const double fixed_err = image_mse(fixed, tgt.image);
    CHECK(fixed_err < 0.02);
    CHECK(fixed_err < image_mse(plain, tgt.image));

    // threshold outside [0, steps] is rejected
    RunConfig bad = rc;
    bad.set("fix.threshold", "99");
    CHECK_THROWS_AS(cmd_invert_fix(bad, dir + "/model.ckpt", req, dir + "/full.pgm",
                                   dir + "/nope.ppm"),
                    ContractError);

    // determinism
    cmd_invert_fix(pinned, dir + "/model.ckpt", req, dir + "/full.pgm", dir + "/fix_full2.ppm");
    CHECK(slurp(dir + "/fix_full2.ppm") == slurp(dir + "/fix_full.ppm"));
}
