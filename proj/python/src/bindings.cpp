#include "lva/align.hpp"
#include "lva/bench.hpp"
#include "lva/errors.hpp"
#include "lva/lva.hpp"
#include "lva/report.hpp"
#include "lva/train.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace lva;

namespace {

// Reports cross the boundary as JSON text and are decoded by json.loads, so Python
// sees exactly the fields the CLI writes.
py::object as_dict(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

PairedDataset dataset(Matrix x, Matrix y, const char* name) {
    PairedDataset d{std::move(x), std::move(y), name};
    d.validate();
    return d;
}

Activation activation_from_name(const std::string& name, double slope) {
    if (name == "identity") return Activation::identity();
    if (name == "relu") return Activation::relu();
    if (name == "tanh") return Activation::tanh();
    if (name == "leaky_relu") return Activation::leaky_relu(slope);
    throw ArgumentError("unknown activation '" + name + "'");
}

Alignment make_alignment(const PairedDataset& s, const PairedDataset& t, const std::string& mode, double label_weight,
                         double reg, int iters) {
    const JointMetric metric{label_weight};
    if (mode == "nn") return align_nearest(s, t, metric);
    if (mode == "sinkhorn") return align_sinkhorn(s, t, reg, iters, 1e-9, metric);
    throw ArgumentError("align must be 'nn' or 'sinkhorn'");
}

ResidueVariant variant_from_name(const std::string& v) {
    if (v == "latent") return ResidueVariant::LatentJacobian;
    if (v == "input") return ResidueVariant::InputJacobian;
    throw ArgumentError("variant must be 'latent' or 'input'");
}

py::dict delta_dict(const LayerDelta& d) {
    py::dict out;
    out["d_weight"] = d.d_weight;
    out["d_bias"] = d.d_bias;
    out["layer"] = d.target_layer;
    return out;
}

}  // namespace

PYBIND11_MODULE(_lva, m) {
    m.doc() = "Closed-form last-layer adaptation of pretrained networks";

    auto base = py::reinterpret_steal<py::object>(PyErr_NewException("lva._lva.LvaError", PyExc_RuntimeError, nullptr));
    m.attr("LvaError") = base;
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());
    py::register_exception<ParseError>(m, "ParseError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<UnsupportedModelError>(m, "UnsupportedModelError", base.ptr());
    py::register_exception<TrainingError>(m, "TrainingError", base.ptr());

    py::class_<Mlp>(m, "Mlp")
        .def_static("from_json", &deserialize, py::arg("text"))
        .def_static("load", &load_mlp, py::arg("path"))
        .def("to_json", [](const Mlp& n) { return serialize(n); })
        .def("save", [](const Mlp& n, const std::string& path) { save_mlp(n, path); }, py::arg("path"))
        .def_property_readonly("num_layers", &Mlp::num_layers)
        .def_property_readonly("input_dim", &Mlp::input_dim)
        .def_property_readonly("output_dim", &Mlp::output_dim)
        .def("weight", [](const Mlp& n, std::size_t i) { return n.layer(i).weight; }, py::arg("layer"))
        .def("bias", [](const Mlp& n, std::size_t i) { return n.layer(i).bias; }, py::arg("layer"))
        .def("activation", [](const Mlp& n, std::size_t i) { return to_string(n.layer(i).activation.kind); }, py::arg("layer"))
        .def("__call__", [](const Mlp& n, const Matrix& x) { return forward_batch(n, x); }, py::arg("x"))
        .def("latent", [](const Mlp& n, const Matrix& x, std::size_t k) { return latent_batch(n, x, k); }, py::arg("x"),
             py::arg("k"))
        .def("jacobian", [](const Mlp& n, const Vector& x, std::size_t k1, std::size_t k2) { return jacobian(n, x, k1, k2); },
             py::arg("x"), py::arg("k1"), py::arg("k2"))
        .def("__eq__", [](const Mlp& a, const Mlp& b) { return a == b; });

    m.def(
        "make_mlp",
        [](std::vector<Eigen::Index> dims, const std::string& hidden, const std::string& output, std::uint64_t seed,
           double slope) {
            return make_mlp(dims, activation_from_name(hidden, slope), activation_from_name(output, slope), seed);
        },
        py::arg("dims"), py::arg("hidden") = "relu", py::arg("output") = "identity", py::arg("seed") = 0,
        py::arg("slope") = 0.01);

    m.def(
        "least_squares",
        [](const Matrix& design, const Matrix& targets, double ridge) {
            const LstsqSolution s = linalg::least_squares(design, targets, ridge);
            return py::make_tuple(s.coefficients, as_dict(to_json(s)));
        },
        py::arg("design"), py::arg("targets"), py::arg("ridge") = 0.0,
        "Returns (coefficients, diagnostics).");

    m.def("spectral_norm", [](const Matrix& a) { return linalg::spectral_norm(a); }, py::arg("a"));

    m.def(
        "mse_loss", [](const Mlp& n, const Matrix& x, const Matrix& y) { return mse_loss(n, dataset(x, y, "data")); },
        py::arg("net"), py::arg("x"), py::arg("y"));

    m.def(
        "pretrain",
        [](const Mlp& net, const Matrix& x, const Matrix& y, int epochs, double lr, int batch, std::uint64_t seed) {
            TrainConfig cfg;
            cfg.epochs = epochs;
            cfg.learning_rate = lr;
            cfg.batch_size = batch;
            cfg.seed = seed;
            auto [trained, rep] = pretrain(net, dataset(x, y, "data"), cfg);
            py::dict report;
            report["loss_history"] = rep.loss_history;
            report["final_loss"] = rep.final_loss;
            report["epsilon_trained"] = rep.epsilon_trained;
            return py::make_tuple(std::move(trained), report);
        },
        py::arg("net"), py::arg("x"), py::arg("y"), py::arg("epochs") = 100, py::arg("lr") = 1e-3, py::arg("batch") = 64,
        py::arg("seed") = 0);

    m.def(
        "align",
        [](const Matrix& sx, const Matrix& sy, const Matrix& tx, const Matrix& ty, const std::string& mode,
           double label_weight, double reg, int iters) {
            const Alignment a = make_alignment(dataset(sx, sy, "source"), dataset(tx, ty, "target"), mode, label_weight,
                                               reg, iters);
            py::dict out;
            out["source_index"] = a.source_index;
            out["epsilon_data"] = a.epsilon_data;
            out["pair_distances"] = a.pair_distances;
            out["converged"] = a.converged;
            return out;
        },
        py::arg("source_x"), py::arg("source_y"), py::arg("target_x"), py::arg("target_y"), py::arg("mode") = "nn",
        py::arg("label_weight") = 1.0, py::arg("reg") = 0.05, py::arg("iters") = 200);

    m.def(
        "lva_one_layer",
        [](const Mlp& net, const Matrix& sx, const Matrix& sy, const Matrix& tx, const Matrix& ty, const std::string& align,
           const std::string& variant, double ridge, bool bias_column, double label_weight) {
            const PairedDataset s = dataset(sx, sy, "source"), t = dataset(tx, ty, "target");
            LvaOptions opt;
            opt.ridge = ridge;
            opt.bias_column = bias_column;
            opt.variant = variant_from_name(variant);
            LvaResult r = lva_one_layer(net, make_alignment(s, t, align, label_weight, 0.05, 200), s, t, opt);
            py::dict info = delta_dict(r.delta);
            info["q"] = r.residue.q;
            info["solve"] = as_dict(to_json(r.solve));
            return py::make_tuple(std::move(r.adapted), info);
        },
        py::arg("net"), py::arg("source_x"), py::arg("source_y"), py::arg("target_x"), py::arg("target_y"),
        py::arg("align") = "nn", py::arg("variant") = "latent", py::arg("ridge") = 0.0, py::arg("bias_column") = true,
        py::arg("label_weight") = 1.0, "Returns (adapted net, info dict with d_weight, d_bias, q, solve).");

    m.def(
        "lva_two_layer",
        [](const Mlp& net, const Matrix& sx, const Matrix& sy, const Matrix& tx, const Matrix& ty, int sweeps,
           const std::string& align, double ridge, double penultimate_ridge) {
            const PairedDataset s = dataset(sx, sy, "source"), t = dataset(tx, ty, "target");
            LvaOptions opt;
            opt.ridge = ridge;
            opt.penultimate_ridge = penultimate_ridge;
            LvaTwoLayerResult r = lva_two_layer(net, make_alignment(s, t, align, 1.0, 0.05, 200), s, t, sweeps, opt);
            py::dict info;
            info["objective_history"] = r.objective_history;
            info["accepted_scale"] = r.accepted_scale;
            info["one_layer_loss"] = r.one_layer_loss;
            info["target_loss"] = r.target_loss;
            py::list deltas;
            for (const auto& d : r.deltas) deltas.append(delta_dict(d));
            info["deltas"] = deltas;
            return py::make_tuple(std::move(r.adapted), info);
        },
        py::arg("net"), py::arg("source_x"), py::arg("source_y"), py::arg("target_x"), py::arg("target_y"),
        py::arg("sweeps") = 3, py::arg("align") = "nn", py::arg("ridge") = 0.0, py::arg("penultimate_ridge") = 1e-3);

    m.def(
        "verify_transfer_bound",
        [](const Mlp& f, const Mlp& g, std::size_t r, const Matrix& sx, const Matrix& sy, const Matrix& tx,
           const Matrix& ty, const std::string& align) {
            const PairedDataset s = dataset(sx, sy, "source"), t = dataset(tx, ty, "target");
            return as_dict(to_json(verify_transfer_bound(f, g, r, make_alignment(s, t, align, 1.0, 0.05, 200), s, t)));
        },
        py::arg("pretrained"), py::arg("adapted"), py::arg("r"), py::arg("source_x"), py::arg("source_y"),
        py::arg("target_x"), py::arg("target_y"), py::arg("align") = "nn");

    m.def(
        "verify_generalization_bound",
        [](const Mlp& g, const Matrix& ax, const Matrix& ay, const Matrix& tx, const Matrix& ty) {
            return as_dict(to_json(verify_generalization_bound(g, dataset(ax, ay, "adapt"), dataset(tx, ty, "test"))));
        },
        py::arg("adapted"), py::arg("adapt_x"), py::arg("adapt_y"), py::arg("test_x"), py::arg("test_y"));

    m.def(
        "gen_signal",
        [](int n, std::uint64_t seed, const std::string& domain) {
            if (domain != "source" && domain != "target") throw ArgumentError("domain must be 'source' or 'target'");
            const PairedDataset d =
                bench::gen_signal({n, seed, domain == "source" ? bench::Domain::Source : bench::Domain::Target});
            return py::make_tuple(d.inputs, d.labels);
        },
        py::arg("n") = 2000, py::arg("seed") = 0, py::arg("domain") = "source");

    m.def(
        "gen_blur_pairs",
        [](int image_size, int num_images, double sigma_source, double sigma_target, std::uint64_t seed) {
            const auto [s, t] = bench::gen_blur_pairs({image_size, num_images, sigma_source, sigma_target, seed});
            return py::make_tuple(py::make_tuple(s.inputs, s.labels), py::make_tuple(t.inputs, t.labels));
        },
        py::arg("image_size") = 16, py::arg("num_images") = 64, py::arg("sigma_source") = 1.0,
        py::arg("sigma_target") = 1.6, py::arg("seed") = 0);
}
