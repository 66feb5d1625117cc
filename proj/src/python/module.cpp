#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "imlx/dataset.hpp"
#include "imlx/ensemble.hpp"
#include "imlx/explain.hpp"
#include "imlx/metrics.hpp"
#include "imlx/pipeline.hpp"
#include "imlx/preprocess.hpp"
#include "imlx/runconfig.hpp"
#include "imlx/taxonomy.hpp"
#include "imlx/trainer.hpp"

namespace py = pybind11;
using namespace imlx;

namespace {

Image image_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw std::invalid_argument("expected a 2-d float array");
    Image img(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
    std::copy(arr.data(), arr.data() + arr.size(), img.pixels.begin());
    return img;
}

py::array_t<float> image_to_array(const Image& img) {
    py::array_t<float> arr({img.height, img.width});
    std::copy(img.pixels.begin(), img.pixels.end(), arr.mutable_data());
    return arr;
}

Mask mask_from_array(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw std::invalid_argument("expected a 2-d uint8 array");
    Mask mask(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
    for (py::ssize_t i = 0; i < arr.size(); ++i) mask.cells[i] = arr.data()[i] ? 1 : 0;
    return mask;
}

py::array_t<std::uint8_t> mask_to_array(const Mask& mask) {
    py::array_t<std::uint8_t> arr({mask.height, mask.width});
    std::copy(mask.cells.begin(), mask.cells.end(), arr.mutable_data());
    return arr;
}

std::vector<ensemble::PredictionMatrix> members_from_array(
    const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 3) throw std::invalid_argument("expected members x samples x labels");
    const int M = static_cast<int>(arr.shape(0));
    const int N = static_cast<int>(arr.shape(1));
    const int L = static_cast<int>(arr.shape(2));
    std::vector<ensemble::PredictionMatrix> members(M);
    for (int m = 0; m < M; ++m) {
        members[m].system = "member_" + std::to_string(m);
        for (int n = 0; n < N; ++n) members[m].sample_ids.push_back(std::to_string(n));
        for (int c = 0; c < L; ++c) members[m].labels.push_back("label_" + std::to_string(c));
        members[m].values.assign(arr.data() + static_cast<std::size_t>(m) * N * L,
                                 arr.data() + static_cast<std::size_t>(m + 1) * N * L);
    }
    return members;
}

py::dict output_to_dict(const ensemble::EnsembleOutput& out) {
    const int N = static_cast<int>(out.sample_ids.size());
    const int L = static_cast<int>(out.labels.size());
    py::array_t<float> scores({N, L});
    std::copy(out.scores.begin(), out.scores.end(), scores.mutable_data());
    py::array_t<int> agreement({N, L});
    std::copy(out.agreement.begin(), out.agreement.end(), agreement.mutable_data());
    py::dict d;
    d["method"] = out.method;
    d["scores"] = scores;
    d["agreement"] = agreement;
    d["member_count"] = out.member_count;
    return d;
}

} // namespace

PYBIND11_MODULE(_imlx, m) {
    m.doc() = "imbalanced multilabel x-ray pipeline: core operations";

    // metrics
    m.def(
        "auc",
        [](std::vector<float> scores, std::vector<std::uint8_t> truth) {
            const auto r = metrics::auc(scores, truth);
            return py::make_tuple(r.value, r.degenerate);
        },
        py::arg("scores"), py::arg("truth"),
        "Mann-Whitney AUC with tie handling; returns (value, degenerate)");
    m.def("hamming_loss", &metrics::hamming_loss, py::arg("pred"), py::arg("truth"));
    m.def(
        "f1_label",
        [](std::vector<std::uint8_t> pred, std::vector<std::uint8_t> truth, bool positive_only) {
            return metrics::f1_label(pred, truth,
                                     positive_only ? metrics::F1Mode::positive_only
                                                   : metrics::F1Mode::macro_pos_neg);
        },
        py::arg("pred"), py::arg("truth"), py::arg("positive_only") = false,
        "macro mean of positive- and negative-class F1 (or positive class alone)");

    // ensemble rules over a members x samples x labels array
    m.def(
        "ctp",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> members, double thr) {
            return output_to_dict(ensemble::ctp(members_from_array(members), thr));
        },
        py::arg("members"), py::arg("threshold") = 0.5);
    m.def(
        "ptc_lw",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> members, double thr) {
            return output_to_dict(ensemble::ptc_lw(members_from_array(members), thr));
        },
        py::arg("members"), py::arg("threshold") = 0.5);
    m.def(
        "ptc_mode",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> members, double thr) {
            return output_to_dict(ensemble::ptc_mode(members_from_array(members), thr));
        },
        py::arg("members"), py::arg("threshold") = 0.5);

    // preprocessing
    m.def(
        "postprocess_mask",
        [](py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> mask,
           double min_area_fraction) {
            const auto r = preprocess::postprocess_mask(mask_from_array(mask), min_area_fraction);
            return py::make_tuple(mask_to_array(r.mask), r.warning);
        },
        py::arg("mask"), py::arg("min_area_fraction") = 0.05);
    m.def(
        "crop_to_roi",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> image,
           py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> mask,
           double margin) {
            const auto r = preprocess::crop_to_roi(image_from_array(image), mask_from_array(mask),
                                                   margin);
            return py::make_tuple(image_to_array(r.image),
                                  py::make_tuple(r.box.r0, r.box.c0, r.box.r1, r.box.c1),
                                  r.warning);
        },
        py::arg("image"), py::arg("mask"), py::arg("margin") = 0.02);
    m.def(
        "resize",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> image, int side) {
            return image_to_array(preprocess::resize(image_from_array(image), side));
        },
        py::arg("image"), py::arg("side"));

    // taxonomy
    m.def(
        "view_labels",
        [](const std::string& taxonomy_text, const std::string& kind) {
            const auto tree = taxonomy::parse_term_tree(taxonomy_text);
            const auto view = taxonomy::build_view(tree, kind == "general"
                                                             ? taxonomy::ViewKind::general
                                                             : taxonomy::ViewKind::specific);
            return view.labels;
        },
        py::arg("taxonomy_text"), py::arg("kind") = "specific");
    m.def(
        "project",
        [](const std::string& taxonomy_text, const std::string& kind,
           const std::set<std::string>& labels) {
            const auto tree = taxonomy::parse_term_tree(taxonomy_text);
            const auto view = taxonomy::build_view(tree, kind == "general"
                                                             ? taxonomy::ViewKind::general
                                                             : taxonomy::ViewKind::specific);
            return taxonomy::project(labels, view);
        },
        py::arg("taxonomy_text"), py::arg("kind"), py::arg("labels"));

    // corpora and the full pipeline
    m.def(
        "synth_generate",
        [](const std::string& out_dir, int count, int side, int patients, std::uint64_t seed) {
            dataset::SynthConfig cfg;
            cfg.count = count;
            cfg.image_side = side;
            cfg.patient_count = patients;
            cfg.seed = seed;
            const auto result = dataset::synth_generate(cfg, out_dir);
            return result.manifest_path.string();
        },
        py::arg("out_dir"), py::arg("count") = 100, py::arg("side") = 128, py::arg("patients") = 0,
        py::arg("seed") = 0);
    m.def(
        "run_pipeline",
        [](const std::map<std::string, std::string>& config, int threads) {
            auto cfg = runconfig::RunConfig::from_map(config);
            if (!cfg.seed_set) throw std::invalid_argument("config requires a 'seed' entry");
            pipeline::run_pipeline(cfg, threads);
            pipeline::write_run_record(cfg, cfg.out, "pipeline");
        },
        py::arg("config"), py::arg("threads") = 1);

    // trained models
    m.def(
        "predict",
        [](const std::string& checkpoint_path,
           py::array_t<float, py::array::c_style | py::array::forcecast> images) {
            if (images.ndim() != 3) throw std::invalid_argument("expected samples x side x side");
            const auto ckpt = trainer::load_checkpoint(checkpoint_path);
            std::vector<Image> imgs;
            const int N = static_cast<int>(images.shape(0));
            const int H = static_cast<int>(images.shape(1));
            const int W = static_cast<int>(images.shape(2));
            for (int n = 0; n < N; ++n) {
                Image img(H, W);
                std::copy(images.data() + static_cast<std::size_t>(n) * H * W,
                          images.data() + static_cast<std::size_t>(n + 1) * H * W,
                          img.pixels.begin());
                imgs.push_back(std::move(img));
            }
            const auto probs = trainer::predict(ckpt, imgs);
            const int L = ckpt.params.label_count;
            py::array_t<float> out({N, L});
            std::copy(probs.begin(), probs.end(), out.mutable_data());
            return out;
        },
        py::arg("checkpoint_path"), py::arg("images"));
    m.def(
        "grad_cam",
        [](const std::string& checkpoint_path,
           py::array_t<float, py::array::c_style | py::array::forcecast> image, int label_index) {
            const auto ckpt = trainer::load_checkpoint(checkpoint_path);
            const auto heat = explain::grad_cam(ckpt.params, image_from_array(image), label_index);
            return image_to_array(heat.grid);
        },
        py::arg("checkpoint_path"), py::arg("image"), py::arg("label_index"));

    m.attr("__version__") = "0.1.0";
}
