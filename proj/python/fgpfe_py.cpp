#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "fgpfe/checks.hpp"
#include "fgpfe/error.hpp"
#include "fgpfe/optim.hpp"
#include "fgpfe/pipeline.hpp"
#include "fgpfe/runconfig.hpp"
#include "fgpfe/train.hpp"

namespace py = pybind11;
using namespace fgpfe;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Point> points_from(const FloatArray& a) {
    if (a.ndim() != 2 || a.shape(1) != 5) throw ShapeError("points must have shape [N, 5] (x, y, z, r, dt)");
    std::vector<Point> pts(static_cast<std::size_t>(a.shape(0)));
    if (!pts.empty()) std::memcpy(pts.data(), a.data(), pts.size() * sizeof(Point));
    return pts;
}

FloatArray points_to(const std::vector<Point>& pts) {
    FloatArray a({static_cast<py::ssize_t>(pts.size()), py::ssize_t{5}});
    if (!pts.empty()) std::memcpy(a.mutable_data(), pts.data(), pts.size() * sizeof(Point));
    return a;
}

std::vector<Box3D> boxes_from(const DoubleArray& a) {
    if (a.size() == 0) return {};
    if (a.ndim() != 2 || a.shape(1) != 7) throw ShapeError("boxes must have shape [B, 7] (cx, cy, cz, l, w, h, yaw)");
    std::vector<Box3D> out(static_cast<std::size_t>(a.shape(0)));
    auto r = a.unchecked<2>();
    for (py::ssize_t i = 0; i < a.shape(0); ++i) {
        auto& b = out[static_cast<std::size_t>(i)];
        b.cx = r(i, 0);
        b.cy = r(i, 1);
        b.cz = r(i, 2);
        b.l = r(i, 3);
        b.w = r(i, 4);
        b.h = r(i, 5);
        b.yaw = r(i, 6);
    }
    return out;
}

DoubleArray boxes_to(const std::vector<Box3D>& boxes) {
    DoubleArray a({static_cast<py::ssize_t>(boxes.size()), py::ssize_t{7}});
    auto w = a.mutable_unchecked<2>();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto& b = boxes[i];
        const double v[7] = {b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw};
        for (int k = 0; k < 7; ++k) w(static_cast<py::ssize_t>(i), k) = v[k];
    }
    return a;
}

DoubleArray tensor_to(const nd::Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    DoubleArray a(shape);
    if (t.size()) std::memcpy(a.mutable_data(), t.data().data(), t.size() * sizeof(double));
    return a;
}

py::array_t<std::int32_t> cells_to(const std::vector<CellCoord>& cells) {
    py::array_t<std::int32_t> a({static_cast<py::ssize_t>(cells.size()), py::ssize_t{2}});
    auto w = a.mutable_unchecked<2>();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        w(static_cast<py::ssize_t>(i), 0) = cells[i].ix;
        w(static_cast<py::ssize_t>(i), 1) = cells[i].iy;
    }
    return a;
}

std::vector<CellCoord> cells_from(const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.size() == 0) return {};
    if (a.ndim() != 2 || a.shape(1) != 2) throw ShapeError("cells must have shape [N, 2] (ix, iy)");
    std::vector<CellCoord> out(static_cast<std::size_t>(a.shape(0)));
    auto r = a.unchecked<2>();
    for (py::ssize_t i = 0; i < a.shape(0); ++i) out[static_cast<std::size_t>(i)] = {r(i, 0), r(i, 1)};
    return out;
}

RunConfig config_from(const std::string& text) { return text.empty() ? RunConfig{} : parse_config(text); }

struct Model {
    RunConfig cfg;
    FgPfeModel model;

    explicit Model(const std::string& config, std::uint64_t seed)
        : cfg(config_from(config)), model(FgPfeModel::init(cfg.enc, cfg.apa, cfg.stv, seed)) {}

    py::dict encode(const FloatArray& points, bool dense) const {
        const auto pts = points_from(points);
        StageTimes t;
        EncodeOutput out;
        {
            py::gil_scoped_release release;
            out = encode_scene(pts, cfg.grid, model, &t);
        }
        py::dict d;
        d["cells"] = cells_to(out.cells);
        d["features"] = tensor_to(out.pillar_features);
        if (dense) d["bev"] = tensor_to(out.bev);
        d["seconds"] = t.total();
        return d;
    }

    std::vector<std::string> parameter_names() const {
        std::vector<std::string> names;
        for (const auto& p : model.parameters()) names.push_back(p.name());
        return names;
    }

    void save(const std::string& path) const {
        const auto ps = model.parameters();
        nd::save_checkpoint(path, ps);
    }

    void load(const std::string& path) {
        auto ps = model.parameters();
        nd::assign_checkpoint(ps, nd::load_checkpoint(path));
    }

    py::dict train(const FloatArray& points, const DoubleArray& boxes) {
        Scene s;
        s.points = points_from(points);
        s.boxes = boxes_from(boxes);
        TrainResult r;
        {
            py::gil_scoped_release release;
            r = train_toy(s, cfg, model);
        }
        py::dict d;
        d["loss_curve"] = r.loss_curve;
        d["initial_loss"] = r.initial_loss;
        d["final_loss"] = r.final_loss;
        d["auc"] = r.auc;
        d["n_pillars"] = r.n_pillars;
        d["n_positive"] = r.n_positive;
        d["seconds"] = r.seconds;
        return d;
    }
};

}  // namespace

PYBIND11_MODULE(_fgpfe, m) {
    m.doc() = "Fine-grained pillar feature encoding for LiDAR point clouds";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

    m.def("default_config", [] { return to_text(RunConfig{}); }, "Full default configuration as JSON text.");
    m.def("normalize_config", [](const std::string& text) { return to_text(parse_config(text)); }, py::arg("text"),
          "Validates a JSON configuration and returns it with every key filled in.");

    m.def(
        "gen_scene",
        [](std::uint64_t seed, std::size_t n_boxes, std::size_t points_per_box, std::size_t background, std::size_t sweeps) {
            const Scene s = gen_scene({seed, n_boxes, points_per_box, background, sweeps});
            return py::make_tuple(points_to(s.points), boxes_to(s.boxes));
        },
        py::arg("seed") = 1, py::arg("n_boxes") = 5, py::arg("points_per_box") = 200, py::arg("background_points") = 2000,
        py::arg("sweeps") = 3, "Synthetic scene; returns (points [N, 5] float32, boxes [B, 7]).");

    m.def(
        "load_points",
        [](const std::string& path) {
            const auto r = load_points(path, format_for_path(path));
            return py::make_tuple(points_to(r.scene.points), r.dropped);
        },
        py::arg("path"), "Reads bin5 or csv points; returns (points, dropped_count).");
    m.def(
        "save_points",
        [](const FloatArray& points, const std::string& path) {
            Scene s;
            s.points = points_from(points);
            save_points(s, path, format_for_path(path));
        },
        py::arg("points"), py::arg("path"));

    m.def(
        "quantize",
        [](const FloatArray& points, const std::string& config) {
            const RunConfig cfg = config_from(config);
            const auto idx = quantize(points_from(points), cfg.grid, cfg.stv);
            py::array_t<std::int32_t> a({static_cast<py::ssize_t>(idx.size()), py::ssize_t{7}});
            auto w = a.mutable_unchecked<2>();
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const auto& s = idx[i];
                const std::int32_t v[7] = {s.ix, s.iy, s.sx, s.sy, s.v, s.t, s.in_range ? 1 : 0};
                for (int k = 0; k < 7; ++k) w(static_cast<py::ssize_t>(i), k) = v[k];
            }
            return a;
        },
        py::arg("points"), py::arg("config") = "",
        "Per-point (ix, iy, sx, sy, v, t, in_range) grid indices.");

    m.def(
        "make_labels",
        [](const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& cells, const DoubleArray& boxes,
           const std::string& config) {
            const RunConfig cfg = config_from(config);
            const auto labels = make_labels(cells_from(cells), cfg.grid, boxes_from(boxes));
            return py::array_t<std::uint8_t>(static_cast<py::ssize_t>(labels.size()), labels.data());
        },
        py::arg("cells"), py::arg("boxes"), py::arg("config") = "");

    m.def(
        "check_grad",
        [](const std::string& config, std::uint64_t seed) {
            const RunConfig cfg = config_from(config);
            nd::GradCheckOptions o;
            o.seed = seed;
            py::list out;
            for (const auto& r : run_gradient_suite(cfg, o, seed)) {
                py::dict d;
                d["name"] = r.name;
                d["passed"] = r.passed;
                d["max_rel_error"] = r.max_rel_error;
                d["checked"] = r.checked;
                d["skipped"] = r.skipped;
                out.append(d);
            }
            return out;
        },
        py::arg("config") = "", py::arg("seed") = 1,
        "Finite-difference check of every layer and encoder graph.");

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&, std::uint64_t>(), py::arg("config") = "", py::arg("seed") = 1)
        .def_property_readonly("config", [](const Model& s) { return to_text(s.cfg); })
        .def("encode", &Model::encode, py::arg("points"), py::arg("dense") = true,
             "Encodes points [N, 5]; returns cells, features and (when dense) the BEV map.")
        .def("parameter_names", &Model::parameter_names)
        .def("save", &Model::save, py::arg("path"))
        .def("load", &Model::load, py::arg("path"))
        .def("train", &Model::train, py::arg("points"), py::arg("boxes"),
             "SGD on the objectness loss over one scene, using the config's training section.");
}
