#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tcformer/harness.hpp"
#include "tcformer/io.hpp"
#include "tcformer/run_config.hpp"

namespace py = pybind11;
using namespace tcformer;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<Index> shape;
    for (py::ssize_t d = 0; d < a.ndim(); ++d) shape.push_back(a.shape(d));
    Tensor t(shape);
    std::copy(a.data(), a.data() + a.size(), t.data());
    return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> a(shape);
    std::copy(t.data(), t.data() + t.numel(), a.mutable_data());
    return a;
}

Tensor image_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
                    int* h, int* w) {
    if (image.ndim() != 3 || image.shape(2) != 3) {
        throw InvalidInputError("image must be an (h, w, 3) array");
    }
    *h = static_cast<int>(image.shape(0));
    *w = static_cast<int>(image.shape(1));
    Tensor t({static_cast<Index>(*h) * *w, 3});
    std::copy(image.data(), image.data() + image.size(), t.data());
    return t;
}

ModelConfig make_config(const std::string& preset, const std::string& head,
                        const std::string& ctm, int out_channels) {
    ModelConfig cfg = ModelConfig::preset_config(preset);
    cfg.head = parse_head(head);
    cfg.ctm_mode = parse_ctm_mode(ctm);
    if (cfg.head != HeadKind::classification) cfg.mta.out_channels = out_channels;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "token clustering transformer core";

    py::register_exception<InvalidInputError>(m, "InvalidInputError", PyExc_ValueError);
    py::register_exception<MissingArtifactError>(m, "MissingArtifactError",
                                                 PyExc_FileNotFoundError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def(
        "cluster",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& features,
           int m_clusters, int k) {
            const auto result = dpc::cluster(tensor_from_array(features), m_clusters, k);
            py::dict d;
            d["density"] = result.density;
            d["indicator"] = result.indicator;
            d["score"] = result.score;
            d["centers"] = result.centers;
            d["assignment"] = result.assignment;
            return d;
        },
        py::arg("features"), py::arg("clusters"), py::arg("k") = 5,
        "k-nearest-neighbor density peaks clustering of feature vectors");

    m.def(
        "generate_dataset",
        [](uint64_t seed, int count, int resolution) {
            py::list out;
            for (const auto& s : generate_dataset(seed, count, resolution)) {
                py::dict d;
                d["image"] = array_from_tensor(s.image.reshaped({s.h, s.w, 3}));
                d["target"] = array_from_tensor(
                    s.target.reshaped({s.base_h, s.base_w, SyntheticSample::kSlots}));
                py::list kps;
                for (const auto& kp : s.keypoints) {
                    kps.append(py::make_tuple(kp.x, kp.y, kp.slot));
                }
                d["keypoints"] = kps;
                out.append(d);
            }
            return out;
        },
        py::arg("seed"), py::arg("count"), py::arg("resolution") = 64,
        "deterministic synthetic keypoint dataset");

    m.def("grad_check", [](const std::string& module, uint64_t seed) {
        return grad_check_module(module, seed).max_rel_error;
    }, py::arg("module"), py::arg("seed") = 0);

    py::class_<TCFormer>(m, "Model")
        .def(py::init([](const std::string& preset, const std::string& head,
                         const std::string& ctm, int out_channels, uint64_t seed) {
                 TCFormer model(make_config(preset, head, ctm, out_channels));
                 model.init(seed);
                 return model;
             }),
             py::arg("preset") = "mini", py::arg("head") = "mta", py::arg("ctm") = "dpcknn",
             py::arg("out_channels") = 9, py::arg("seed") = 0)
        .def_property_readonly("param_count", &TCFormer::param_count)
        .def(
            "forward",
            [](const TCFormer& model,
               const py::array_t<double, py::array::c_style | py::array::forcecast>& image) {
                int h = 0, w = 0;
                const Tensor img = image_tensor(image, &h, &w);
                ad::Graph g;
                const auto fwd = model.forward(g, img, h, w);
                py::dict d;
                if (model.config().head == HeadKind::classification) {
                    d["logits"] = array_from_tensor(fwd.head_out.val());
                } else {
                    d["heatmaps"] = array_from_tensor(fwd.head_out.val().reshaped(
                        {fwd.head_h, fwd.head_w, fwd.head_out.val().cols()}));
                }
                py::list counts, regions;
                for (const auto& tokens : fwd.stage_tokens) {
                    counts.append(tokens.layout.count);
                    py::array_t<int32_t> r({tokens.layout.base_h, tokens.layout.base_w});
                    std::copy(tokens.layout.region_map.begin(), tokens.layout.region_map.end(),
                              r.mutable_data());
                    regions.append(r);
                }
                d["token_counts"] = counts;
                d["region_maps"] = regions;
                return d;
            },
            py::arg("image"), "run the model on an (h, w, 3) image")
        .def("save", [](const TCFormer& model, const std::string& path) {
            io::save_model(path, model);
        })
        .def_static("load", [](const std::string& path) { return io::load_model(path); })
        .def_static(
            "flop_count",
            [](const std::string& preset, const std::string& head, const std::string& ctm,
               int resolution) {
                return TCFormer::flop_count(make_config(preset, head, ctm, 9), resolution,
                                            resolution);
            },
            py::arg("preset"), py::arg("head") = "cls", py::arg("ctm") = "dpcknn",
            py::arg("resolution") = 224);

    m.def(
        "train_synthetic",
        [](TCFormer& model, uint64_t seed, int count, int resolution, int steps, int batch_size,
           double lr, double weight_decay) {
            const auto data = generate_dataset(seed, count, resolution);
            TrainConfig cfg;
            cfg.steps = steps;
            cfg.batch_size = batch_size;
            cfg.lr = lr;
            cfg.weight_decay = weight_decay;
            cfg.seed = seed;
            return train(model, data, cfg).losses;
        },
        py::arg("model"), py::arg("seed") = 0, py::arg("count") = 64,
        py::arg("resolution") = 64, py::arg("steps") = 100, py::arg("batch_size") = 4,
        py::arg("lr") = 2e-3, py::arg("weight_decay") = 1e-2,
        "train on the synthetic keypoint task, returning the loss curve");

    m.def(
        "evaluate_pck",
        [](const TCFormer& model, uint64_t seed, int count, int resolution, double threshold) {
            return evaluate_pck(model, generate_dataset(seed, count, resolution), threshold);
        },
        py::arg("model"), py::arg("seed") = 1, py::arg("count") = 32, py::arg("resolution") = 64,
        py::arg("threshold") = 0.1);
}
