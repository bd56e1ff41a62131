#include "semd/pipeline.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <vector>

namespace py = pybind11;
using namespace semd;

namespace {

PointCloud cloud_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2 || a.shape(1) != 3)
        throw DimensionError("point array must have shape [N, 3]");
    PointCloud pc;
    pc.points.reserve(static_cast<std::size_t>(a.shape(0)));
    const double* p = a.data();
    for (py::ssize_t i = 0; i < a.shape(0); ++i)
        pc.points.emplace_back(p[3 * i], p[3 * i + 1], p[3 * i + 2]);
    return pc;
}

py::array_t<double> cloud_to_array(const PointCloud& pc) {
    py::array_t<double> out({static_cast<py::ssize_t>(pc.size()), py::ssize_t{3}});
    double* p = out.mutable_data();
    for (std::size_t i = 0; i < pc.size(); ++i) {
        p[3 * i] = pc.points[i].x();
        p[3 * i + 1] = pc.points[i].y();
        p[3 * i + 2] = pc.points[i].z();
    }
    return out;
}

Tensor image_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3 || a.shape(0) != 3 || a.shape(1) != a.shape(2))
        throw DimensionError("image must have shape [3, S, S]");
    std::vector<double> buf(a.data(), a.data() + a.size());
    return make_image_tensor(buf, a.shape(1));
}

GeneratorConfig config_by_name(const std::string& scale, int n_decoders) {
    if (scale == "64") return GeneratorConfig::table_64(n_decoders);
    if (scale == "128") return GeneratorConfig::table_128(n_decoders);
    if (scale == "test") return GeneratorConfig::test_scale(n_decoders);
    throw ConfigError("unknown scale '" + scale + "' (expected '64', '128', or 'test')");
}

py::list records_to_list(const std::vector<LossRecord>& log) {
    py::list out;
    for (const auto& r : log) out.append(py::make_tuple(r.iter, r.total, r.mask, r.depth));
    return out;
}

TrainConfig make_train_config(int n_decoders, std::int64_t pretrain_iters,
                              std::int64_t finetune_iters, double pretrain_lr, double finetune_lr,
                              double lambda, int k, std::int64_t batch, std::uint64_t seed) {
    TrainConfig tc;
    tc.n_decoders = n_decoders;
    tc.pretrain_iters = pretrain_iters;
    tc.finetune_iters = finetune_iters;
    if (pretrain_lr > 0) tc.pretrain_lr = pretrain_lr;
    if (finetune_lr > 0) tc.finetune_lr = finetune_lr;
    tc.lambda = lambda;
    tc.supervision_view_count = k;
    tc.batch_size = batch;
    tc.seed = seed;
    return tc;
}

} // namespace

PYBIND11_MODULE(_semd, m) {
    m.doc() = "Single-image point cloud reconstruction: one encoder, N viewpoint decoders, "
              "differentiable pseudo-rendering.";

    py::register_exception<Error>(m, "SemdError");

    py::class_<SEMDNetwork>(m, "Network")
        .def_static(
            "create",
            [](const std::string& scale, int n_decoders, std::uint64_t seed) {
                return init_network(config_by_name(scale, n_decoders), seed);
            },
            py::arg("scale") = "test", py::arg("n_decoders") = 8, py::arg("seed") = 0)
        .def_static("load", &load_network, py::arg("path"))
        .def("save", [](const SEMDNetwork& net, const std::string& path) { save_network(path, net); },
             py::arg("path"))
        .def_property_readonly("n_decoders", [](const SEMDNetwork& n) { return n.config.n_decoders; })
        .def_property_readonly("input_size", [](const SEMDNetwork& n) { return n.config.input_size; })
        .def_property_readonly("output_size", [](const SEMDNetwork& n) { return n.config.output_size; })
        .def_property_readonly("latent_dim", [](const SEMDNetwork& n) { return n.config.latent_dim; })
        .def("parameter_count", [](SEMDNetwork& n) {
            std::int64_t total = 0;
            for (auto& p : n.parameters()) total += p.numel();
            return total;
        })
        .def(
            "infer",
            [](SEMDNetwork& net, const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
               double threshold) {
                PointCloud pc = infer(net, image_from_array(image), threshold);
                py::array_t<double> conf(static_cast<py::ssize_t>(pc.confidence.size()));
                std::memcpy(conf.mutable_data(), pc.confidence.data(),
                            pc.confidence.size() * sizeof(double));
                return py::make_tuple(cloud_to_array(pc), conf);
            },
            py::arg("image"), py::arg("threshold") = kDefaultMaskThreshold);

    m.def(
        "pretrain",
        [](SEMDNetwork& net, const std::string& dataset, std::int64_t iters, double lr,
           std::int64_t batch, std::uint64_t seed) {
            auto data = read_dataset(dataset);
            auto tc = make_train_config(net.config.n_decoders, iters, 0, lr, -1, 1.0, 5, batch, seed);
            return records_to_list(pretrain(net, data, tc));
        },
        py::arg("net"), py::arg("dataset"), py::arg("iters"), py::arg("lr") = -1.0,
        py::arg("batch") = 4, py::arg("seed") = 0);

    m.def(
        "finetune",
        [](SEMDNetwork& net, const std::string& dataset, std::int64_t iters, double lr,
           double lambda, int k, std::int64_t batch, std::uint64_t seed) {
            auto data = read_dataset(dataset);
            auto tc = make_train_config(net.config.n_decoders, 0, iters, -1, lr, lambda, k, batch, seed);
            return records_to_list(finetune(net, data, tc));
        },
        py::arg("net"), py::arg("dataset"), py::arg("iters"), py::arg("lr") = -1.0,
        py::arg("lambda") = 1.0, py::arg("k") = 5, py::arg("batch") = 4, py::arg("seed") = 0);

    m.def(
        "evaluate",
        [](SEMDNetwork& net, const std::string& dataset, std::int64_t n_points, std::uint64_t seed) {
            auto data = read_dataset(dataset);
            EvalResult res = evaluate(net, data, n_points, seed);
            py::list rows;
            for (const auto& [id, r] : res.rows) {
                py::dict d;
                d["id"] = id;
                d["euclid_pred_to_gt"] = r.euclid_pred_to_gt;
                d["euclid_gt_to_pred"] = r.euclid_gt_to_pred;
                d["chamfer"] = r.chamfer;
                d["emd"] = r.emd;
                d["pred_points"] = r.pred_points;
                d["gt_points"] = r.gt_points;
                rows.append(d);
            }
            py::dict out;
            out["rows"] = rows;
            out["failures"] = res.failures;
            out["mean_euclid_pred_to_gt"] = res.mean.euclid_pred_to_gt;
            out["mean_euclid_gt_to_pred"] = res.mean.euclid_gt_to_pred;
            out["mean_chamfer"] = res.mean.chamfer;
            out["mean_emd"] = res.mean.emd;
            return out;
        },
        py::arg("net"), py::arg("dataset"), py::arg("n_points") = 1024, py::arg("seed") = 0);

    m.def(
        "generate_shape",
        [](const std::string& kind, std::uint64_t seed, std::int64_t surface_count) {
            return cloud_to_array(
                generate_shape(shape_kind_from_name(kind), seed, surface_count).surface_samples);
        },
        py::arg("kind"), py::arg("seed") = 0, py::arg("surface_count") = 2000);

    m.def(
        "euclid",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
            return euclid_distance(cloud_from_array(a), cloud_from_array(b));
        },
        py::arg("source"), py::arg("target"));
    m.def(
        "chamfer",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
            return chamfer_distance(cloud_from_array(a), cloud_from_array(b));
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "emd",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b, bool exact,
           int iterations) {
            PointCloud ca = cloud_from_array(a), cb = cloud_from_array(b);
            return exact ? emd_exact(ca, cb) : emd_approx(ca, cb, iterations);
        },
        py::arg("a"), py::arg("b"), py::arg("exact") = true, py::arg("iterations") = 6);
    m.def(
        "resample",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a, std::int64_t n,
           std::uint64_t seed) { return cloud_to_array(resample(cloud_from_array(a), n, seed)); },
        py::arg("cloud"), py::arg("n"), py::arg("seed") = 0);

    m.def("write_ply",
          [](const std::string& path,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
              write_ply(path, cloud_from_array(a));
          },
          py::arg("path"), py::arg("points"));
    m.def("read_ply", [](const std::string& path) { return cloud_to_array(read_ply(path)); },
          py::arg("path"));

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<std::string> full;
            full.emplace_back("semd");
            full.insert(full.end(), args.begin(), args.end());
            std::vector<char*> argv;
            argv.reserve(full.size());
            for (auto& s : full) argv.push_back(s.data());
            return cli(static_cast<int>(argv.size()), argv.data());
        },
        py::arg("args"), "Run a CLI subcommand in-process; returns the exit code.");
}
