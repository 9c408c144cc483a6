// Python bindings: geometry, heatmap readout, synthetic data, trained-model
// inference and the gradient-check suite. Arrays cross as float64 numpy
// arrays (frames as float32).

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "efe/experiments.hpp"
#include "efe/gradcheck.hpp"
#include "efe/heatmap.hpp"

namespace py = pybind11;
using namespace efe;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
    py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

// Frames and labels of a dataset as numpy arrays.
py::dict dataset_arrays(const Dataset& d) {
    const auto n = static_cast<py::ssize_t>(d.size());
    py::array_t<float> frames({n, static_cast<py::ssize_t>(d.channels), static_cast<py::ssize_t>(d.height),
                               static_cast<py::ssize_t>(d.width)});
    py::array_t<double> g({n, py::ssize_t{2}}), o({n, py::ssize_t{3}}), r({n, py::ssize_t{3}});
    py::array_t<double> pog_px({n, py::ssize_t{2}}), pog_mm({n, py::ssize_t{2}}), z(n);
    float* f = frames.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto& s = d.samples[i];
        f = std::copy(s.frame.pixels.begin(), s.frame.pixels.end(), f);
        const auto& l = s.label;
        for (int k = 0; k < 2; ++k) {
            g.mutable_at(i, k) = l.g[k];
            pog_px.mutable_at(i, k) = l.pog_px[k];
            pog_mm.mutable_at(i, k) = l.pog_mm[k];
        }
        for (int k = 0; k < 3; ++k) {
            o.mutable_at(i, k) = l.o[k];
            r.mutable_at(i, k) = l.r[k];
        }
        z.mutable_at(i) = l.z;
    }
    py::dict out;
    out["frames"] = frames;
    out["g"] = g;
    out["z"] = z;
    out["o"] = o;
    out["r"] = r;
    out["pog_px"] = pog_px;
    out["pog_mm"] = pog_mm;
    out["camera"] = d.camera;
    out["screen"] = d.screen;
    return out;
}

py::dict outputs_dict(const ModelOutputs& out) {
    py::dict d;
    auto put = [&](const char* key, const Tensor& t) {
        if (!t.empty()) d[key] = to_array(t);
    };
    put("heatmap", out.h);
    put("depth_map", out.d);
    put("g", out.g);
    put("z", out.z);
    put("o", out.o);
    put("r", out.r);
    put("pog_px", out.pog.px);
    put("pog_mm", out.pog.mm);
    d["valid"] = py::array_t<std::uint8_t>(static_cast<py::ssize_t>(out.pog.valid.size()), out.pog.valid.data());
    return d;
}

}  // namespace

PYBIND11_MODULE(efe, m) {
    m.doc() = "Frame-to-gaze estimation on synthetic desk scenes";

    py::class_<CameraModel>(m, "CameraModel")
        .def(py::init<>())
        .def_readwrite("id", &CameraModel::id)
        .def_readwrite("fx", &CameraModel::fx)
        .def_readwrite("fy", &CameraModel::fy)
        .def_readwrite("cx", &CameraModel::cx)
        .def_readwrite("cy", &CameraModel::cy)
        .def_readwrite("width", &CameraModel::width)
        .def_readwrite("height", &CameraModel::height)
        .def_readwrite("extrinsics", &CameraModel::extrinsics)
        .def("K", &CameraModel::K)
        .def("validate", &CameraModel::validate)
        .def("__repr__", [](const CameraModel& c) { return "<CameraModel " + c.id + ">"; });

    py::class_<ScreenPlane>(m, "ScreenPlane")
        .def(py::init<>())
        .def_readwrite("width_mm", &ScreenPlane::width_mm)
        .def_readwrite("height_mm", &ScreenPlane::height_mm)
        .def_readwrite("width_px", &ScreenPlane::width_px)
        .def_readwrite("height_px", &ScreenPlane::height_px)
        .def_property_readonly("diagonal_px", &ScreenPlane::diagonal_px);

    m.def("default_camera", &default_camera);
    m.def("rig_cameras", &rig_cameras, py::arg("intrinsics") = default_camera(), py::arg("screen") = ScreenPlane{});

    m.def("project", py::overload_cast<const Eigen::Vector3d&, const CameraModel&>(&project), py::arg("point"),
          py::arg("camera"));
    m.def("unproject", py::overload_cast<const Eigen::Vector2d&, double, const CameraModel&>(&unproject),
          py::arg("g"), py::arg("z"), py::arg("camera"));
    m.def("camera_to_screen", &camera_to_screen);
    m.def("screen_to_camera", &screen_to_camera);
    m.def("pog_mm_to_px", &pog_mm_to_px);
    m.def("pog_px_to_mm", &pog_px_to_mm);

    m.def(
        "spherical_to_vector",
        [](double pitch, double yaw) { return spherical_to_vector(SphericalDir{pitch, yaw}); }, py::arg("pitch"),
        py::arg("yaw"));
    m.def(
        "vector_to_spherical",
        [](const Eigen::Vector3d& v) {
            const SphericalDir s = vector_to_spherical(v);
            return py::make_tuple(s.pitch, s.yaw);
        },
        py::arg("v"));
    m.def("angular_error", py::overload_cast<const Eigen::Vector3d&, const Eigen::Vector3d&>(&angular_error),
          "Angle in radians between two non-zero vectors");
    m.def("ray_plane_lambda", &ray_plane_lambda);
    m.def(
        "intersect_screen",
        [](const Eigen::Vector3d& o, const Eigen::Vector3d& r, const CameraModel& cam, const ScreenPlane& screen) {
            const PointOfGaze p = intersect_screen(GazeRay{o, r}, cam, screen);
            py::dict d;
            d["mm"] = p.mm;
            d["px"] = p.px;
            d["lambda"] = p.lambda;
            return d;
        },
        py::arg("origin"), py::arg("direction"), py::arg("camera"), py::arg("screen") = ScreenPlane{});

    m.def(
        "make_gt_heatmap",
        [](const Eigen::Vector2d& g, double sigma, std::size_t h, std::size_t w) {
            return to_array(make_gt_heatmap(g, sigma, h, w));
        },
        py::arg("g"), py::arg("sigma"), py::arg("height"), py::arg("width"));
    m.def(
        "spatial_softmax", [](const Array& logits) { return to_array(spatial_softmax(to_tensor(logits))); },
        py::arg("logits"));
    m.def(
        "soft_argmax", [](const Array& prob) { return to_array(soft_argmax(to_tensor(prob))); }, py::arg("prob"));
    m.def(
        "depth_readout",
        [](const Array& prob, const Array& depth) {
            return to_array(depth_readout(to_tensor(prob), to_tensor(depth)));
        },
        py::arg("prob"), py::arg("depth"));

    m.def(
        "generate_dataset",
        [](std::size_t n, std::uint64_t seed, const std::string& camera_id) {
            RunConfig cfg;
            cfg.data.n = n;
            cfg.seed = seed;
            cfg.camera_id = camera_id;
            return dataset_arrays(generate_for(cfg));
        },
        py::arg("n"), py::arg("seed") = 0, py::arg("camera_id") = "W_C");
    m.def(
        "read_dataset", [](const std::filesystem::path& p) { return dataset_arrays(read_dataset(p)); },
        py::arg("path"));

    py::class_<GazeModel>(m, "GazeModel")
        .def(py::init([](const std::string& variant, std::uint64_t seed) {
                 return GazeModel(parse_variant(variant), ModelConfig{}, seed);
             }),
             py::arg("variant") = "efe", py::arg("seed") = 0)
        .def_static(
            "load_run", [](const std::filesystem::path& dir) { return load_run(dir); }, py::arg("run_dir"))
        .def_property_readonly("variant", [](const GazeModel& g) { return std::string(variant_name(g.variant())); })
        .def_property_readonly("parameter_count", [](const GazeModel& g) { return g.params().trainable_count(); })
        .def(
            "predict",
            [](const GazeModel& g, const Array& frames, const CameraModel& cam, const ScreenPlane& screen) {
                return outputs_dict(g.infer(to_tensor(frames), cam, screen));
            },
            py::arg("frames"), py::arg("camera"), py::arg("screen") = ScreenPlane{},
            "frames: N x C x H x W in [0, 1]");

    m.def("gradcheck_ops", []() {
        py::list out;
        for (const auto& r : gradcheck_ops()) out.append(py::make_tuple(r.name, r.max_rel_error, r.passed));
        return out;
    });
}
