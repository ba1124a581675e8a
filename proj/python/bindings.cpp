#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "partswap/config.hpp"
#include "partswap/image.hpp"
#include "partswap/latentcodec.hpp"
#include "partswap/maskops.hpp"
#include "partswap/metrics.hpp"
#include "partswap/pipeline.hpp"
#include "partswap/synthface.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace partswap;

namespace {

using FArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

Image image_from_array(const FArray& a) {
    py::buffer_info buf = a.request();
    if (buf.ndim != 3 || buf.shape[2] != 3)
        throw DimensionError("image array must have shape [h, w, 3]");
    Image img(int(buf.shape[0]), int(buf.shape[1]));
    const float* p = static_cast<const float*>(buf.ptr);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = p[(size_t(y) * img.w + x) * 3 + c];
    return img;
}

py::array_t<float> array_from_image(const Image& img) {
    py::array_t<float> a({img.h, img.w, 3});
    auto r = a.mutable_unchecked<3>();
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) r(y, x, c) = img.at(c, y, x);
    return a;
}

Mask mask_from_array(const U8Array& a) {
    py::buffer_info buf = a.request();
    if (buf.ndim != 2) throw DimensionError("mask array must have shape [h, w]");
    Mask m(int(buf.shape[0]), int(buf.shape[1]));
    const uint8_t* p = static_cast<const uint8_t*>(buf.ptr);
    for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = p[i] ? 1 : 0;
    return m;
}

py::array_t<uint8_t> array_from_mask(const Mask& m) {
    py::array_t<uint8_t> a({m.h, m.w});
    std::memcpy(a.mutable_data(), m.v.data(), m.v.size());
    return a;
}

py::array_t<float> array_from_tensor(const Tensor<float>& t) {
    std::vector<py::ssize_t> dims(t.shape().begin(), t.shape().end());
    py::array_t<float> a(dims);
    std::memcpy(a.mutable_data(), t.values().data(), sizeof(float) * size_t(t.size()));
    return a;
}

Tensor<float> tensor_from_array(const FArray& a) {
    py::buffer_info buf = a.request();
    Shape s(buf.shape.begin(), buf.shape.end());
    const float* p = static_cast<const float*>(buf.ptr);
    return Tensor<float>::from(s, std::vector<float>(p, p + buf.size));
}

std::vector<std::vector<double>> rows_from_array(const DArray& a, const char* name) {
    py::buffer_info buf = a.request();
    if (buf.ndim != 2) throw DimensionError(std::string(name) + " must have shape [n, dim]");
    std::vector<std::vector<double>> rows(size_t(buf.shape[0]));
    const double* p = static_cast<const double*>(buf.ptr);
    for (py::ssize_t i = 0; i < buf.shape[0]; ++i)
        rows[size_t(i)].assign(p + i * buf.shape[1], p + (i + 1) * buf.shape[1]);
    return rows;
}

RunConfig config_from(const py::object& obj) {
    RunConfig rc;
    if (obj.is_none()) return rc;
    if (py::isinstance<py::str>(obj)) {
        rc.load_string(obj.cast<std::string>());
        return rc;
    }
    if (py::isinstance<py::dict>(obj)) {
        for (auto item : obj.cast<py::dict>()) {
            std::string value;
            if (py::isinstance<py::bool_>(item.second))
                value = item.second.cast<bool>() ? "true" : "false";
            else
                value = py::str(item.second).cast<std::string>();
            rc.set(py::str(item.first).cast<std::string>(), value);
        }
        return rc;
    }
    throw ConfigError("config must be None, a dict of key/value pairs, or config text");
}

std::optional<FaceRef> opt_face_ref(const py::object& o, const char* where) {
    if (o.is_none()) return std::nullopt;
    return parse_face_ref(o.cast<std::string>(), where);
}

}  // namespace

PYBIND11_MODULE(_partswap, m) {
    m.doc() =
        "Facial part swapping on procedural faces: mask-guided feature fusion, "
        "a diffusion denoiser with additive feature injection, deterministic "
        "sampling and inversion, and the evaluation metrics. Images are float32 "
        "[h, w, 3] arrays in [0, 1]; masks are uint8 [h, w] arrays (nonzero = "
        "inside). Face references are 'image.ppm:mask_prefix' strings, as on "
        "the command line.";
    m.attr("__version__") = "0.1.0";

    static py::exception<Error> exc_error(m, "PartswapError", PyExc_RuntimeError);
    static py::exception<ConfigError> exc_config(m, "ConfigError", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {
            PyErr_SetString(exc_config.ptr(), e.what());
        } catch (const Error& e) {
            PyErr_SetString(exc_error.ptr(), e.what());
        }
    });

    m.def(
        "default_config",
        []() {
            RunConfig rc;
            std::istringstream is(rc.dump());
            py::dict d;
            std::string line;
            while (std::getline(is, line)) {
                size_t hash = line.find('#');
                if (hash != std::string::npos) line.resize(hash);
                size_t eq = line.find('=');
                if (eq == std::string::npos) continue;
                auto trim = [](const std::string& s) {
                    size_t b = s.find_first_not_of(" \t");
                    if (b == std::string::npos) return std::string();
                    size_t e = s.find_last_not_of(" \t");
                    return s.substr(b, e - b + 1);
                };
                d[py::str(trim(line.substr(0, eq)))] = trim(line.substr(eq + 1));
            }
            return d;
        },
        "Every config key with its default value, as a dict of strings.");

    m.def(
        "gen_data",
        [](const std::string& out, const py::object& config) {
            RunConfig rc = config_from(config);
            py::gil_scoped_release rel;
            cmd_gen_data(rc, out);
        },
        "out"_a, "config"_a = py::none(),
        "Generate a face corpus under `out` (same layout as the gen-data subcommand).");

    m.def(
        "train",
        [](const std::string& data, const std::string& out, const py::object& config,
           const std::string& resume, bool echo) {
            RunConfig rc = config_from(config);
            py::gil_scoped_release rel;
            cmd_train(rc, data, out, resume, echo ? &std::cout : nullptr);
        },
        "data"_a, "out"_a, "config"_a = py::none(), "resume"_a = "", "echo"_a = false,
        "Train the swap model on a corpus, writing a checkpoint and a loss log.");

    m.def(
        "swap",
        [](const std::string& ckpt, const std::string& target, const std::string& out,
           const py::object& eyes, const py::object& nose, const py::object& mouth,
           const py::object& config) {
            RunConfig rc = config_from(config);
            SwapRequest req;
            req.target = parse_face_ref(target, "target");
            req.part[0] = opt_face_ref(eyes, "eyes");
            req.part[1] = opt_face_ref(nose, "nose");
            req.part[2] = opt_face_ref(mouth, "mouth");
            Image result;
            {
                py::gil_scoped_release rel;
                result = cmd_swap(rc, ckpt, req, out);
            }
            return array_from_image(result);
        },
        "ckpt"_a, "target"_a, "out"_a, "eyes"_a = py::none(), "nose"_a = py::none(),
        "mouth"_a = py::none(), "config"_a = py::none(),
        "Swap the given parts onto the target face; writes `out` plus a comparison "
        "grid and returns the output image.");

    m.def(
        "evaluate",
        [](const std::string& ckpt, const std::string& out, const std::string& data,
           const std::string& manifest, const py::object& config, bool echo) {
            if (data.empty() && manifest.empty())
                throw ConfigError("evaluate: provide a corpus via data= or a triple manifest");
            RunConfig rc = config_from(config);
            EvalResult r;
            {
                py::gil_scoped_release rel;
                r = cmd_eval(rc, ckpt, data, manifest, out, echo ? &std::cout : nullptr);
            }
            py::dict d;
            d["fid"] = r.report.fid;
            d["fpsim_eyes"] = r.report.fpsim_eyes;
            d["fpsim_nose"] = r.report.fpsim_nose;
            d["fpsim_mouth"] = r.report.fpsim_mouth;
            d["mse"] = r.report.mse;
            d["recon_mse"] = r.recon_mse;
            d["order_mouth"] = r.order_mouth;
            d["order_all3"] = r.order_all3;
            d["samples"] = r.report.samples;
            return d;
        },
        "ckpt"_a, "out"_a, "data"_a = "", "manifest"_a = "", "config"_a = py::none(),
        "echo"_a = false,
        "Score swap quality over held-out triples; writes a TSV report and returns "
        "the metrics as a dict.");

    m.def(
        "ablate",
        [](const std::string& data, const std::string& out, const py::object& config, bool echo) {
            RunConfig rc = config_from(config);
            py::gil_scoped_release rel;
            cmd_ablate(rc, data, out, echo ? &std::cout : nullptr);
        },
        "data"_a, "out"_a, "config"_a = py::none(), "echo"_a = false,
        "Train and evaluate every injection mode, writing a comparison table.");

    m.def(
        "invert_fix",
        [](const std::string& ckpt, const std::string& target, const std::string& skin,
           const std::string& out, const py::object& eyes, const py::object& nose,
           const py::object& mouth, const py::object& threshold, const py::object& config) {
            RunConfig rc = config_from(config);
            if (!threshold.is_none())
                rc.set("fix.threshold", std::to_string(threshold.cast<int64_t>()));
            int64_t thr = rc.geti("fix.threshold");
            if (thr < 0 || thr > rc.geti("ddim.steps"))
                throw ConfigError("fix.threshold must be between 0 and ddim.steps");
            SwapRequest req;
            req.target = parse_face_ref(target, "target");
            req.part[0] = opt_face_ref(eyes, "eyes");
            req.part[1] = opt_face_ref(nose, "nose");
            req.part[2] = opt_face_ref(mouth, "mouth");
            Image result;
            {
                py::gil_scoped_release rel;
                result = cmd_invert_fix(rc, ckpt, req, skin, out);
            }
            return array_from_image(result);
        },
        "ckpt"_a, "target"_a, "skin"_a, "out"_a, "eyes"_a = py::none(), "nose"_a = py::none(),
        "mouth"_a = py::none(), "threshold"_a = py::none(), "config"_a = py::none(),
        "Swap with the skin-latent-replace fix: the masked region is pinned to the "
        "target's inverted latents for the first `threshold` sampler steps.");

    m.def(
        "render_face",
        [](uint64_t seed, int size, uint64_t jitter_seed) {
            FaceParams p = sample_identity(seed);
            if (jitter_seed != 0) p = perturb(p, jitter_seed);
            RenderResult r = render(p, size);
            py::dict d;
            d["image"] = array_from_image(r.image);
            d["eyes"] = array_from_mask(r.masks.eyes);
            d["nose"] = array_from_mask(r.masks.nose);
            d["mouth"] = array_from_mask(r.masks.mouth);
            d["remain"] = array_from_mask(r.masks.remain);
            d["params"] = serialize_face_params(p);
            return d;
        },
        "seed"_a, "size"_a = 64, "jitter_seed"_a = uint64_t(0),
        "Render one procedural face: image, exact part masks, and its parameter text.");

    m.def(
        "encode_latent",
        [](const FArray& img, int factor) {
            return array_from_tensor(encode_latent(image_from_array(img), factor));
        },
        "image"_a, "factor"_a = 4,
        "Space-to-depth encode an [h, w, 3] image to [3*f*f, h/f, w/f] latents.");

    m.def(
        "decode_latent",
        [](const FArray& z, int factor) {
            return array_from_image(decode_latent(tensor_from_array(z), factor));
        },
        "latent"_a, "factor"_a = 4, "Exact inverse of encode_latent.");

    m.def(
        "part_embed",
        [](const FArray& img, const U8Array& mask) {
            std::vector<double> e = part_embed(image_from_array(img), mask_from_array(mask));
            py::array_t<double> a(std::vector<py::ssize_t>{py::ssize_t(e.size())});
            std::memcpy(a.mutable_data(), e.data(), sizeof(double) * e.size());
            return a;
        },
        "image"_a, "mask"_a,
        "Unit-norm embedding of the masked part (bbox crop, 16x16 resize, "
        "mean-subtract, L2-normalize).");

    m.def(
        "fpsim",
        [](const FArray& gen, const U8Array& gen_mask, const FArray& ref, const U8Array& ref_mask) {
            return fpsim(image_from_array(gen), mask_from_array(gen_mask), image_from_array(ref),
                         mask_from_array(ref_mask));
        },
        "gen"_a, "gen_mask"_a, "ref"_a, "ref_mask"_a,
        "Cosine similarity of the two part embeddings.");

    m.def(
        "fid",
        [](const DArray& a, const DArray& b) {
            return fid(rows_from_array(a, "fid: a"), rows_from_array(b, "fid: b"));
        },
        "a"_a, "b"_a, "Frechet distance between the Gaussian fits of two [n, dim] feature sets.");

    m.def(
        "masked_mse",
        [](const FArray& a, const FArray& b, const py::object& mask) {
            Image ia = image_from_array(a), ib = image_from_array(b);
            if (mask.is_none()) return masked_mse(ia, ib);
            Mask m = mask_from_array(mask.cast<U8Array>());
            return masked_mse(ia, ib, &m);
        },
        "a"_a, "b"_a, "mask"_a = py::none(),
        "Mean squared difference over the whole image or just the masked pixels.");

    m.def(
        "read_image", [](const std::string& path) { return array_from_image(load_ppm(path)); },
        "path"_a, "Load a PPM image as a float32 [h, w, 3] array.");
    m.def(
        "write_image",
        [](const std::string& path, const FArray& img) { save_ppm(image_from_array(img), path); },
        "path"_a, "image"_a, "Save a float32 [h, w, 3] array as an 8-bit PPM.");
    m.def(
        "read_mask", [](const std::string& path) { return array_from_mask(load_pgm(path)); },
        "path"_a, "Load a PGM mask as a uint8 [h, w] array of 0/1.");
    m.def(
        "write_mask",
        [](const std::string& path, const U8Array& mask) { save_pgm(mask_from_array(mask), path); },
        "path"_a, "mask"_a, "Save a uint8 [h, w] mask as a PGM.");
}
