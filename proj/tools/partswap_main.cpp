#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "partswap/common.hpp"
#include "partswap/config.hpp"
#include "partswap/pipeline.hpp"

using namespace partswap;

namespace {

// exit codes: 0 success, 2 config/usage, 3 data, 4 numeric/internal
int run(int argc, char** argv) {
    CLI::App app{"facial part swapping on procedural faces"};
    app.require_subcommand(1);

    std::string config_path, seed, steps, lambda, threshold;
    std::string out, data, ckpt, resume, manifest, target, skin;
    std::string eyes, nose, mouth;
    std::vector<std::string> sets;

    auto common = [&](CLI::App* s, const char* seed_doc) {
        s->add_option("--config", config_path, "config file of key = value lines");
        s->add_option("--set", sets, "inline config override, key=value (repeatable)");
        s->add_option("--seed", seed, seed_doc);
    };
    auto sampling = [&](CLI::App* s) {
        s->add_option("--steps", steps, "sampler steps (ddim.steps)");
        s->add_option("--lambda", lambda, "condition injection strength (inject.lambda)");
    };
    auto parts = [&](CLI::App* s) {
        s->add_option("--eyes", eyes, "eyes source, <image>:<mask_prefix>");
        s->add_option("--nose", nose, "nose source, <image>:<mask_prefix>");
        s->add_option("--mouth", mouth, "mouth source, <image>:<mask_prefix>");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "render the procedural face corpus");
    common(gen, "corpus generation seed (data.seed)");
    gen->add_option("--out", out, "corpus directory")->required();

    CLI::App* train = app.add_subcommand("train", "train encoder, fusion, and denoiser jointly");
    common(train, "training seed (train.seed)");
    train->add_option("--data", data, "corpus directory")->required();
    train->add_option("--out", out, "checkpoint path; the loss log goes to <out>.log")->required();
    train->add_option("--resume", resume, "checkpoint to continue from");

    CLI::App* swap = app.add_subcommand("swap", "swap facial parts onto a target face");
    common(swap, "sampling seed (ddim.seed)");
    sampling(swap);
    parts(swap);
    swap->add_option("--ckpt", ckpt, "trained checkpoint")->required();
    swap->add_option("--target", target, "target face, <image>:<mask_prefix>")->required();
    swap->add_option("--out", out, "output image (PPM); a _grid variant is written too")
        ->required();

    CLI::App* eval = app.add_subcommand("eval", "score swaps over held-out triples");
    common(eval, "triple-drawing seed (eval.seed)");
    sampling(eval);
    eval->add_option("--ckpt", ckpt, "trained checkpoint")->required();
    eval->add_option("--data", data, "corpus directory to draw triples from");
    eval->add_option("--manifest", manifest, "explicit triple manifest (overrides --data)");
    eval->add_option("--out", out, "metric report path")->required();

    CLI::App* ablate = app.add_subcommand("ablate", "train and score every injection mode");
    common(ablate, "master seed (train.seed, eval.seed, data.seed)");
    ablate->add_option("--data", data, "ablation corpus directory (generated if missing)")
        ->required();
    ablate->add_option("--out", out, "ablation report path")->required();

    CLI::App* fix = app.add_subcommand("invert-fix", "rerun a swap with the skin latents pinned");
    common(fix, "sampling seed of the run to fix (ddim.seed)");
    sampling(fix);
    parts(fix);
    fix->add_option("--ckpt", ckpt, "trained checkpoint")->required();
    fix->add_option("--target", target, "target face, <image>:<mask_prefix>")->required();
    fix->add_option("--skin", skin, "skin mask (PGM), image or latent extents")->required();
    fix->add_option("--threshold", threshold, "steps with the skin region pinned (fix.threshold)");
    fix->add_option("--out", out, "output image (PPM)")->required();

    CLI::App* dump = app.add_subcommand("dump-config", "print the full key set with defaults");
    common(dump, "(unused)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);  // prints the message or the requested help text
        return code == 0 ? 0 : 2;
    }

    RunConfig rc;
    if (!config_path.empty()) rc.load_file(config_path);
    for (const std::string& kv : sets) rc.load_string(kv);
    if (!steps.empty()) rc.set("ddim.steps", steps);
    if (!lambda.empty()) rc.set("inject.lambda", lambda);
    if (!threshold.empty()) rc.set("fix.threshold", threshold);
    if (!seed.empty()) {
        if (gen->parsed()) rc.set("data.seed", seed);
        if (train->parsed()) rc.set("train.seed", seed);
        if (swap->parsed() || fix->parsed()) rc.set("ddim.seed", seed);
        if (eval->parsed()) rc.set("eval.seed", seed);
        if (ablate->parsed()) {
            rc.set("train.seed", seed);
            rc.set("eval.seed", seed);
            rc.set("data.seed", seed);
        }
    }

    auto request = [&]() {
        SwapRequest req;
        req.target = parse_face_ref(target, "--target");
        const std::array<std::pair<const char*, std::string*>, 3> flags{
            std::pair{"--eyes", &eyes}, {"--nose", &nose}, {"--mouth", &mouth}};
        for (size_t i = 0; i < 3; ++i)
            if (!flags[i].second->empty())
                req.part[i] = parse_face_ref(*flags[i].second, flags[i].first);
        return req;
    };

    if (gen->parsed()) {
        cmd_gen_data(rc, out);
        std::cout << "wrote corpus to " << out << "\n";
    } else if (train->parsed()) {
        cmd_train(rc, data, out, resume, &std::cout);
        std::cout << "wrote checkpoint to " << out << "\n";
    } else if (swap->parsed()) {
        cmd_swap(rc, ckpt, request(), out);
        std::cout << "wrote " << out << "\n";
    } else if (eval->parsed()) {
        if (data.empty() && manifest.empty())
            throw ConfigError("eval needs --data or --manifest");
        EvalResult r = cmd_eval(rc, ckpt, data, manifest, out, &std::cout);
        std::cout << "wrote report to " << out << " (fid " << r.report.fid << ", mse "
                  << r.report.mse << ")\n";
    } else if (ablate->parsed()) {
        cmd_ablate(rc, data, out, &std::cout);
        std::cout << "wrote report to " << out << "\n";
    } else if (fix->parsed()) {
        const int64_t th = rc.geti("fix.threshold");
        if (th < 0 || th > rc.geti("ddim.steps"))
            throw ConfigError("fix.threshold must lie in [0, ddim.steps]");
        cmd_invert_fix(rc, ckpt, request(), skin, out);
        std::cout << "wrote " << out << "\n";
    } else if (dump->parsed()) {
        std::cout << rc.dump();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const ContractError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
