#include "partswap/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <vector>

#include "partswap/diffusion.hpp"
#include "partswap/model.hpp"
#include "partswap/param_store.hpp"
#include "partswap/synthface.hpp"

namespace fs = std::filesystem;

namespace partswap {
namespace {

std::string id_dir(const std::string& root, int id) {
    return root + "/id_" + std::to_string(id);
}

std::string view_base(const std::string& root, int id, int view) {
    return id_dir(root, id) + "/view_" + std::to_string(view);
}

void ensure_parent_dir(const std::string& path) {
    fs::path p = fs::path(path).parent_path();
    if (!p.empty()) fs::create_directories(p);
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
    ensure_parent_dir(path);
    std::ofstream os(path, mode);
    if (!os) throw DataError("cannot open " + path + " for writing");
    return os;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

// Model plus everything needed to run it. Loading a checkpoint switches the
// store to strict mode so an architecture mismatch fails instead of silently
// initializing the missing parameters.
struct Engine {
    ModelConfig mc;
    NoiseSchedule sched;
    DDIMConfig ddim;
    ParamStore<float> ps;
    SwapModel<float> model;

    Engine(const RunConfig& rc, const std::string& ckpt)
        : mc(model_config_from(rc)),
          sched(make_schedule(int(rc.geti("diffusion.T")), rc.getd("diffusion.beta_start"),
                              rc.getd("diffusion.beta_end"))),
          ddim{int(rc.geti("ddim.steps")), uint64_t(rc.geti("ddim.seed"))},
          ps(uint64_t(rc.geti("train.seed"))),
          model(ps, mc) {
        ddim_timesteps(sched.T, ddim.steps);  // validate the step count up front
        if (!ckpt.empty()) {
            load_checkpoint(ckpt, ps);
            ps.set_strict(true);
        }
    }
};

// One conditioned generation: decompose the target, transplant the requested
// parts, sample. Null source entries leave the slot with the target's own
// features (reconstruction when all three are null).
Image swap_once(const Engine& e, const FaceSample& tgt,
                const std::array<const FaceSample*, 3>& srcs, uint64_t seed,
                std::vector<Tensor<float>>* traj = nullptr,
                DenoiseFn<float>* fn_out = nullptr) {
    NoGradGuard ng;
    PartFeatures<float> feats = e.model.decompose(tgt.image, tgt.masks);
    SwapSpec<float> spec;
    for (size_t i = 0; i < 3; ++i)
        if (srcs[i])
            spec.set(PartSlot(i), e.model.swap_source(srcs[i]->image, srcs[i]->masks, PartSlot(i)));
    std::vector<Tensor<float>> cond = e.model.conditioning(transplant(feats, spec));
    auto [x_m, keep] = e.model.masked_context(tgt.image, tgt.masks);
    DenoiseFn<float> fn = e.model.denoiser(x_m, keep, cond);
    DDIMConfig cfg = e.ddim;
    cfg.seed = seed;
    Tensor<float> z = ddim_sample(fn, x_m.shape(), cfg, e.sched, traj);
    if (fn_out) *fn_out = fn;
    return e.mc.latent.to_image(z);
}

void blit(Image& dst, const Image& src, int y0, int x0) {
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < src.h; ++y)
            for (int x = 0; x < src.w; ++x) dst.at(c, y0 + y, x0 + x) = src.at(c, y, x);
}

Image grid2x2(const Image& a, const Image& b, const Image& c, const Image& d) {
    const int h = a.h, w = a.w, pad = 2;
    Image g(2 * h + pad, 2 * w + pad);
    std::fill(g.rgb.begin(), g.rgb.end(), 1.0f);
    blit(g, a, 0, 0);
    blit(g, b, 0, w + pad);
    blit(g, c, h + pad, 0);
    blit(g, d, h + pad, w + pad);
    return g;
}

// Amplified absolute difference, for the comparison grid only.
Image diff_image(const Image& a, const Image& b) {
    Image d(a.h, a.w);
    for (size_t i = 0; i < d.rgb.size(); ++i) {
        float v = 4.0f * std::fabs(a.rgb[i] - b.rgb[i]);
        d.rgb[i] = v > 1.0f ? 1.0f : v;
    }
    return d;
}

std::string grid_path(const std::string& out_path) {
    fs::path p(out_path);
    fs::path stem = p.parent_path() / p.stem();
    std::string ext = p.extension().string();
    if (ext.empty()) ext = ".ppm";
    return stem.string() + "_grid" + ext;
}

// mask_prefix + "_<part>.pgm" for the three swappable slots
Mask load_part_mask(const std::string& prefix, PartSlot slot) {
    return load_pgm(prefix + "_" + slot_name(slot) + ".pgm");
}

// Keyed face cache so eval triples never reload the same view.
struct FaceCache {
    std::map<std::string, FaceSample> by_key;

    const FaceSample& get(const FaceRef& ref) {
        const std::string key = ref.image + "|" + ref.mask_prefix;
        auto it = by_key.find(key);
        if (it == by_key.end()) it = by_key.emplace(key, load_face(ref)).first;
        return it->second;
    }
};

struct EvalTriple {
    FaceRef target;
    std::array<FaceRef, 3> src;
};

std::vector<EvalTriple> parse_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open eval manifest " + path);
    std::vector<EvalTriple> triples;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::vector<std::string> fields;
        std::string f;
        while (ls >> f) fields.push_back(f);
        if (fields.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        if (fields.size() != 4)
            throw DataError(where + ": expected 4 fields (target eyes nose mouth), got " +
                            std::to_string(fields.size()));
        EvalTriple t;
        t.target = parse_face_ref(fields[0], where);
        for (size_t i = 0; i < 3; ++i) t.src[i] = parse_face_ref(fields[i + 1], where);
        triples.push_back(std::move(t));
    }
    if (triples.empty()) throw DataError("eval manifest " + path + " lists no triples");
    return triples;
}

std::vector<EvalTriple> draw_triples(const CorpusIndex& corpus, int holdout, int count,
                                     uint64_t seed) {
    if (holdout < 2 || holdout > corpus.identities)
        throw ConfigError("eval needs at least 2 held-out identities, data.holdout=" +
                          std::to_string(holdout) + " of " + std::to_string(corpus.identities));
    if (count < 1) throw ConfigError("eval.triples must be positive");
    const int hold0 = corpus.identities - holdout;
    Rng rng(hash_combine(seed, "triples"));
    std::vector<EvalTriple> triples;
    triples.reserve(size_t(count));
    for (int i = 0; i < count; ++i) {
        EvalTriple t;
        const int tid = hold0 + rng.uniform_int(0, holdout - 1);
        t.target = corpus.view(tid, rng.uniform_int(0, corpus.views - 1));
        for (size_t p = 0; p < 3; ++p) {
            int sid = tid;
            while (sid == tid) sid = hold0 + rng.uniform_int(0, holdout - 1);
            t.src[p] = corpus.view(sid, rng.uniform_int(0, corpus.views - 1));
        }
        triples.push_back(std::move(t));
    }
    return triples;
}

void write_manifest(const std::string& path, const std::vector<EvalTriple>& triples) {
    std::ofstream os = open_out(path);
    os << "# target\teyes\tnose\tmouth, each <image>:<mask_prefix>\n";
    for (const EvalTriple& t : triples) {
        os << t.target.image << ":" << t.target.mask_prefix;
        for (size_t p = 0; p < 3; ++p) os << "\t" << t.src[p].image << ":" << t.src[p].mask_prefix;
        os << "\n";
    }
    if (!os) throw DataError("write failed for " + path);
}

}  // namespace

FaceRef parse_face_ref(const std::string& field, const std::string& where) {
    size_t colon = field.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= field.size())
        throw DataError(where + ": expected <image>:<mask_prefix>, got '" + field + "'");
    return FaceRef{field.substr(0, colon), field.substr(colon + 1)};
}

FaceSample load_face(const FaceRef& ref) {
    FaceSample s;
    s.image = load_ppm(ref.image);
    Mask eyes = load_part_mask(ref.mask_prefix, PartSlot::Eyes);
    Mask nose = load_part_mask(ref.mask_prefix, PartSlot::Nose);
    Mask mouth = load_part_mask(ref.mask_prefix, PartSlot::Mouth);
    for (const Mask* m : {&eyes, &nose, &mouth})
        if (m->h != s.image.h || m->w != s.image.w)
            throw DataError("mask extents do not match image " + ref.image);
    s.masks = PartMaskSet::from_parts(eyes, nose, mouth);
    return s;
}

FaceRef CorpusIndex::view(int id, int v) const {
    std::string base = view_base(root, id, v);
    return FaceRef{base + ".ppm", base};
}

std::string CorpusIndex::manifest_path(int id, int v) const {
    return view_base(root, id, v) + ".txt";
}

CorpusIndex open_corpus(const std::string& dir) {
    if (!fs::exists(dir)) throw DataError("corpus directory " + dir + " does not exist");
    CorpusIndex c;
    c.root = dir;
    while (fs::exists(id_dir(dir, c.identities))) ++c.identities;
    if (c.identities == 0) throw DataError("no corpus at " + dir + " (missing id_0)");
    while (fs::exists(view_base(dir, 0, c.views) + ".ppm")) ++c.views;
    if (c.views == 0) throw DataError("corpus at " + dir + " has no views (missing id_0/view_0.ppm)");
    Image first = load_ppm(c.view(0, 0).image);
    c.size = first.h;
    return c;
}

void cmd_gen_data(const RunConfig& rc, const std::string& out_dir) {
    const uint64_t seed = uint64_t(rc.geti("data.seed"));
    const int identities = int(rc.geti("data.identities"));
    const int views = int(rc.geti("data.views"));
    const int size = int(rc.geti("data.size"));
    if (identities < 1 || views < 1) throw ConfigError("data.identities and data.views must be positive");

    for (int id = 0; id < identities; ++id) {
        fs::create_directories(id_dir(out_dir, id));
        const uint64_t id_seed = hash_combine(seed, uint64_t(id));
        FaceParams base = sample_identity(id_seed);
        base.id = id;
        for (int v = 0; v < views; ++v) {
            FaceParams p = v == 0 ? base : perturb(base, hash_combine(id_seed, uint64_t(v)));
            RenderResult r = render(p, size);
            const std::string vb = view_base(out_dir, id, v);
            save_ppm(r.image, vb + ".ppm");
            for (PartSlot slot : kSwappableSlots)
                save_pgm(r.masks.slot(slot), vb + "_" + slot_name(slot) + ".pgm");
            std::ofstream mf = open_out(vb + ".txt");
            mf << serialize_face_params(p);
            if (!mf) throw DataError("write failed for " + vb + ".txt");
        }
    }
}

void cmd_train(const RunConfig& rc, const std::string& data_dir, const std::string& out_ckpt,
               const std::string& resume, std::ostream* echo) {
    set_threads(int(rc.geti("threads")));
    const CorpusIndex corpus = open_corpus(data_dir);
    const int holdout = int(rc.geti("data.holdout"));
    const int train_ids = corpus.identities - holdout;
    if (train_ids < 1)
        throw ConfigError("data.holdout leaves no training identities (" +
                          std::to_string(corpus.identities) + " total)");

    const int64_t total_steps = rc.geti("train.steps");
    const int batch = int(rc.geti("train.batch"));
    if (total_steps < 1 || batch < 1) throw ConfigError("train.steps and train.batch must be positive");
    const double lr = rc.getd("train.lr");
    const double wd = rc.getd("train.weight_decay");
    const double b1 = rc.getd("train.beta1");
    const double b2 = rc.getd("train.beta2");
    const int64_t log_every = rc.geti("train.log_every");
    const int64_t ckpt_every = rc.geti("train.ckpt_every");
    const uint64_t seed = uint64_t(rc.geti("train.seed"));

    Engine e(rc, resume);
    ensure_parent_dir(out_ckpt);
    std::ofstream log = open_out(out_ckpt + ".log",
                                 resume.empty() ? std::ios::out : std::ios::app);
    if (resume.empty()) log << "# step\tloss\n";

    FaceCache cache;
    while (e.ps.step() < total_steps) {
        const int64_t step = e.ps.step();
        Rng rng(hash_combine(hash_combine(seed, "step"), uint64_t(step)));
        std::vector<TrainItem> items;
        items.reserve(size_t(batch));
        for (int b = 0; b < batch; ++b) {
            const int tid = rng.uniform_int(0, train_ids - 1);
            TrainItem item;
            const FaceSample& tgt = cache.get(corpus.view(tid, rng.uniform_int(0, corpus.views - 1)));
            item.target = tgt.image;
            item.masks = tgt.masks;
            for (size_t p = 0; p < 3; ++p) {
                const FaceSample& ref =
                    cache.get(corpus.view(tid, rng.uniform_int(0, corpus.views - 1)));
                item.ref[p] = ref.image;
                item.ref_masks[p] = ref.masks;
            }
            items.push_back(std::move(item));
        }

        Tensor<float> loss = training_step(e.model, items, e.sched, rng);
        const double lv = double(loss.values()[0]);
        if (!std::isfinite(lv))
            throw NumericError("training loss diverged at step " + std::to_string(step + 1));
        e.ps.zero_grad();
        backward(loss);
        e.ps.adamw_step(lr, wd, b1, b2);

        const int64_t now = e.ps.step();
        if (now == 1 || now % log_every == 0 || now == total_steps) {
            std::string line = std::to_string(now) + "\t" + fmt(lv) + "\n";
            log << line;
            if (echo) *echo << line << std::flush;
        }
        if (ckpt_every > 0 && now % ckpt_every == 0 && now != total_steps)
            save_checkpoint(out_ckpt, e.ps);
    }
    save_checkpoint(out_ckpt, e.ps);
    if (!log) throw DataError("write failed for " + out_ckpt + ".log");
}

Image cmd_swap(const RunConfig& rc, const std::string& ckpt, const SwapRequest& req,
               const std::string& out_path) {
    set_threads(int(rc.geti("threads")));
    Engine e(rc, ckpt);
    FaceSample tgt = load_face(req.target);
    std::array<std::optional<FaceSample>, 3> loaded;
    std::array<const FaceSample*, 3> srcs{nullptr, nullptr, nullptr};
    for (size_t i = 0; i < 3; ++i)
        if (req.part[i]) {
            loaded[i] = load_face(*req.part[i]);
            srcs[i] = &*loaded[i];
        }

    Image out = swap_once(e, tgt, srcs, e.ddim.seed);
    ensure_parent_dir(out_path);
    save_ppm(out, out_path);
    Image masked = apply_mask(tgt.image, tgt.masks.remain);
    save_ppm(grid2x2(tgt.image, out, masked, diff_image(out, tgt.image)), grid_path(out_path));
    return out;
}

EvalResult cmd_eval(const RunConfig& rc, const std::string& ckpt, const std::string& data_dir,
                    const std::string& manifest_path, const std::string& out_report,
                    std::ostream* echo) {
    set_threads(int(rc.geti("threads")));
    Engine e(rc, ckpt);
    const uint64_t eval_seed = uint64_t(rc.geti("eval.seed"));

    std::vector<EvalTriple> triples;
    if (!manifest_path.empty()) {
        triples = parse_manifest(manifest_path);
    } else {
        const CorpusIndex corpus = open_corpus(data_dir);
        triples = draw_triples(corpus, int(rc.geti("data.holdout")), int(rc.geti("eval.triples")),
                               eval_seed);
        write_manifest(out_report + ".manifest", triples);
    }

    FaceCache cache;
    const int n = int(triples.size());
    EvalResult r;
    std::array<double, 3> fp_src_sum{0, 0, 0}, fp_tgt_sum{0, 0, 0};
    double mse_sum = 0, recon_sum = 0;
    int order_mouth = 0, order_all3 = 0;
    std::vector<std::vector<double>> gen_emb, ref_emb;

    for (int i = 0; i < n; ++i) {
        const EvalTriple& t = triples[size_t(i)];
        const FaceSample& tgt = cache.get(t.target);
        std::array<const FaceSample*, 3> full{nullptr, nullptr, nullptr};
        for (size_t p = 0; p < 3; ++p) full[p] = &cache.get(t.src[p]);
        const uint64_t s0 = hash_combine(e.ddim.seed, uint64_t(i) * 4);

        Image recon = swap_once(e, tgt, {nullptr, nullptr, nullptr}, s0);
        recon_sum += masked_mse(recon, tgt.image);

        Image mouth = swap_once(e, tgt, {nullptr, nullptr, full[2]}, s0 + 1);
        {
            const Mask& gm = tgt.masks.mouth;
            double vs_src = fpsim(mouth, gm, full[2]->image, full[2]->masks.mouth);
            double vs_tgt = fpsim(mouth, gm, tgt.image, tgt.masks.mouth);
            if (vs_src > vs_tgt) ++order_mouth;
        }

        Image out = swap_once(e, tgt, full, s0 + 2);
        bool all3 = true;
        for (size_t p = 0; p < 3; ++p) {
            const Mask& gm = tgt.masks.slot(PartSlot(p));
            double vs_src = fpsim(out, gm, full[p]->image, full[p]->masks.slot(PartSlot(p)));
            double vs_tgt = fpsim(out, gm, tgt.image, tgt.masks.slot(PartSlot(p)));
            fp_src_sum[p] += vs_src;
            fp_tgt_sum[p] += vs_tgt;
            if (!(vs_src > vs_tgt)) all3 = false;
        }
        if (all3) ++order_all3;
        mse_sum += masked_mse(out, tgt.image, &tgt.masks.remain);

        Mask whole(tgt.image.h, tgt.image.w);
        std::fill(whole.v.begin(), whole.v.end(), uint8_t(1));
        gen_emb.push_back(part_embed(out, whole));
        ref_emb.push_back(part_embed(tgt.image, whole));

        if (echo && ((i + 1) % 10 == 0 || i + 1 == n))
            *echo << "eval " << (i + 1) << "/" << n << "\n" << std::flush;
    }

    r.report.fid = fid(gen_emb, ref_emb);
    r.report.fpsim_eyes = fp_src_sum[0] / n;
    r.report.fpsim_nose = fp_src_sum[1] / n;
    r.report.fpsim_mouth = fp_src_sum[2] / n;
    r.report.mse = mse_sum / n;
    r.report.samples = n;
    r.recon_mse = recon_sum / n;
    r.order_mouth = double(order_mouth) / n;
    r.order_all3 = double(order_all3) / n;

    std::ofstream os = open_out(out_report);
    os << "# swap evaluation: " << n << " triples, " << e.ddim.steps << " sampler steps\n";
    os << "metric\tpart\tvalue\n";
    os << "fid\tall\t" << fmt(r.report.fid) << "\n";
    os << "fpsim\teyes\t" << fmt(r.report.fpsim_eyes) << "\n";
    os << "fpsim\tnose\t" << fmt(r.report.fpsim_nose) << "\n";
    os << "fpsim\tmouth\t" << fmt(r.report.fpsim_mouth) << "\n";
    os << "mse\tremain\t" << fmt(r.report.mse) << "\n";
    os << "recon_mse\tall\t" << fmt(r.recon_mse) << "\n";
    os << "order_mouth\tmouth\t" << fmt(r.order_mouth) << "\n";
    os << "order_all3\tall\t" << fmt(r.order_all3) << "\n";
    os << "fpsim_vs_target\teyes\t" << fmt(fp_tgt_sum[0] / n) << "\n";
    os << "fpsim_vs_target\tnose\t" << fmt(fp_tgt_sum[1] / n) << "\n";
    os << "fpsim_vs_target\tmouth\t" << fmt(fp_tgt_sum[2] / n) << "\n";
    os << "samples\tall\t" << n << "\n";
    if (!os) throw DataError("write failed for " + out_report);
    return r;
}

void cmd_ablate(const RunConfig& rc, const std::string& data_dir, const std::string& out_report,
                std::ostream* echo) {
    set_threads(int(rc.geti("threads")));
    if (!fs::exists(id_dir(data_dir, 0))) {
        RunConfig gen = rc;
        gen.set("data.identities", rc.gets("ablate.identities"));
        gen.set("data.views", rc.gets("ablate.views"));
        gen.set("data.size", rc.gets("ablate.size"));
        if (echo) *echo << "generating ablation corpus at " << data_dir << "\n" << std::flush;
        cmd_gen_data(gen, data_dir);
    }

    const std::string work = out_report + ".work";
    fs::create_directories(work);

    struct Row {
        std::string mode;
        MetricReport m;
    };
    std::vector<Row> rows;
    for (InjectionMode mode : kAllInjectionModes) {
        const std::string name = injection_mode_name(mode);
        RunConfig arm = rc;
        arm.set("inject.mode", name);
        arm.set("train.steps", rc.gets("ablate.steps"));
        arm.set("eval.triples", rc.gets("ablate.triples"));
        arm.set("data.holdout", rc.gets("ablate.holdout"));
        const std::string ckpt = work + "/" + name + ".ckpt";
        if (echo) *echo << "ablate arm " << name << ": training\n" << std::flush;
        cmd_train(arm, data_dir, ckpt);
        if (echo) *echo << "ablate arm " << name << ": evaluating\n" << std::flush;
        EvalResult r = cmd_eval(arm, ckpt, data_dir, "", work + "/" + name + ".report");
        rows.push_back(Row{name, r.report});
        if (echo)
            *echo << "ablate arm " << name << ": fid " << fmt(r.report.fid) << " fpsim "
                  << fmt(r.report.fpsim_eyes) << "/" << fmt(r.report.fpsim_nose) << "/"
                  << fmt(r.report.fpsim_mouth) << " mse " << fmt(r.report.mse) << "\n"
                  << std::flush;
    }

    std::ofstream os = open_out(out_report);
    os << "# injection mode ablation: " << rows.size() << " arms, " << rc.gets("ablate.steps")
       << " steps and " << rc.gets("ablate.triples") << " triples each\n";
    os << "mode\tfid\tfpsim_eyes\tfpsim_nose\tfpsim_mouth\tmse\n";
    double fp_add = 0, fp_ca = 0;
    for (const Row& row : rows) {
        os << row.mode << "\t" << fmt(row.m.fid) << "\t" << fmt(row.m.fpsim_eyes) << "\t"
           << fmt(row.m.fpsim_nose) << "\t" << fmt(row.m.fpsim_mouth) << "\t" << fmt(row.m.mse)
           << "\n";
        double mean_fp = (row.m.fpsim_eyes + row.m.fpsim_nose + row.m.fpsim_mouth) / 3.0;
        if (row.mode == "add_in_ca") fp_add = mean_fp;
        if (row.mode == "cross_attn") fp_ca = mean_fp;
    }
    os << "# directional check (recorded, non-gating): mean fpsim add_in_ca " << fmt(fp_add)
       << (fp_add > fp_ca ? " > " : " <= ") << "cross_attn " << fmt(fp_ca) << "\n";
    if (!os) throw DataError("write failed for " + out_report);
}

Image cmd_invert_fix(const RunConfig& rc, const std::string& ckpt, const SwapRequest& req,
                     const std::string& skin_mask_path, const std::string& out_path) {
    set_threads(int(rc.geti("threads")));
    Engine e(rc, ckpt);
    const int threshold = int(rc.geti("fix.threshold"));
    FaceSample tgt = load_face(req.target);
    std::array<std::optional<FaceSample>, 3> loaded;
    std::array<const FaceSample*, 3> srcs{nullptr, nullptr, nullptr};
    for (size_t i = 0; i < 3; ++i)
        if (req.part[i]) {
            loaded[i] = load_face(*req.part[i]);
            srcs[i] = &*loaded[i];
        }

    std::vector<Tensor<float>> traj;
    DenoiseFn<float> fn;
    swap_once(e, tgt, srcs, e.ddim.seed, &traj, &fn);

    Mask skin = load_pgm(skin_mask_path);
    const int lh = tgt.image.h / e.mc.latent.factor, lw = tgt.image.w / e.mc.latent.factor;
    if (skin.h == tgt.image.h && skin.w == tgt.image.w)
        skin = downsample_mask(skin, lh, lw);
    else if (skin.h != lh || skin.w != lw)
        throw DimensionError("skin mask must match the image or its latent grid");

    DDIMConfig cfg = e.ddim;
    NoGradGuard ng;
    Image fixed = skin_latent_replace(fn, tgt.image, traj, skin, threshold, cfg, e.sched,
                                      e.mc.latent);
    ensure_parent_dir(out_path);
    save_ppm(fixed, out_path);
    return fixed;
}

}  // namespace partswap
