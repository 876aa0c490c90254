#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <memory>
#include <optional>

#include "kama/harness.hpp"
#include "kama/io.hpp"
#include "kama/refine.hpp"
#include "kama/synthetic.hpp"

namespace py = pybind11;
using namespace kama;

namespace {

using Matrix = Eigen::MatrixXd;

std::vector<Vec3> to_points(const Matrix& m, const char* what) {
  if (m.cols() != 3) {
    throw SizeMismatch(std::string(what) + ": expected an (n, 3) array");
  }
  std::vector<Vec3> out(m.rows());
  for (int i = 0; i < m.rows(); ++i) out[i] = m.row(i).transpose();
  return out;
}

Matrix from_points(const std::vector<Vec3>& pts) {
  Matrix m(pts.size(), 3);
  for (size_t i = 0; i < pts.size(); ++i) m.row(i) = pts[i].transpose();
  return m;
}

Pose to_pose(const Matrix& theta, const SkinnedModel& model) {
  if (theta.rows() != model.joint_count() || theta.cols() != 3) {
    throw SizeMismatch("theta: expected a (joint_count, 3) axis-angle array");
  }
  Pose pose;
  pose.local.reserve(theta.rows());
  for (int j = 0; j < theta.rows(); ++j) {
    pose.local.push_back(Rotation::from_axis_angle(theta.row(j).transpose()));
  }
  return pose;
}

struct PyFit {
  Matrix theta;
  Eigen::VectorXd beta;
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();
  std::vector<std::string> sources;

  static PyFit from_state(const FitState& st) {
    PyFit out;
    out.theta.resize(st.pose.size(), 3);
    for (int j = 0; j < st.pose.size(); ++j) {
      out.theta.row(j) = st.pose.local[j].axis_angle().transpose();
    }
    out.beta = st.shape.beta;
    out.scale = st.scale;
    out.translation = st.translation;
    for (JointSource s : st.per_joint_source) out.sources.push_back(to_string(s));
    return out;
  }

  FitState to_state(const SkinnedModel& model) const {
    FitState st;
    st.pose = to_pose(theta, model);
    if (beta.size() != kShapeDims) {
      throw SizeMismatch("beta must have 10 entries");
    }
    st.shape.beta = beta;
    st.scale = scale;
    st.translation = translation;
    if (sources.empty()) {
      st.per_joint_source.assign(model.joint_count(), JointSource::zeroed);
    } else {
      for (const std::string& s : sources) {
        st.per_joint_source.push_back(joint_source_from_string(s));
      }
    }
    return st;
  }
};

KeypointSet make_keypoint_set(const Matrix& positions,
                              const Eigen::VectorXd& confidence,
                              const std::optional<Matrix>& pixels) {
  KeypointSet x;
  x.positions = to_points(positions, "positions");
  x.confidence.assign(confidence.data(), confidence.data() + confidence.size());
  if (pixels) {
    if (pixels->cols() != 2 || pixels->rows() != positions.rows()) {
      throw SizeMismatch("pixels: expected a (keypoints, 2) array");
    }
    std::vector<Vec2> px(pixels->rows());
    for (int i = 0; i < pixels->rows(); ++i) px[i] = pixels->row(i).transpose();
    x.projected_2d = std::move(px);
  }
  return x;
}

std::optional<CameraIntrinsics> make_camera(
    const std::optional<std::tuple<double, double, double, double>>& cam) {
  if (!cam) return std::nullopt;
  return CameraIntrinsics(std::get<0>(*cam), std::get<1>(*cam),
                          std::get<2>(*cam), std::get<3>(*cam));
}

}  // namespace

PYBIND11_MODULE(_kama, m) {
  m.doc() = "Analytic articulation of a skinned body model from 3D keypoints";

  py::register_exception<Error>(m, "KamaError");

  py::class_<SkinnedModel, std::shared_ptr<SkinnedModel>>(m, "Model")
      .def_property_readonly(
          "joint_names", [](const SkinnedModel& s) { return s.tree.joint_names; })
      .def_property_readonly(
          "keypoint_names",
          [](const SkinnedModel& s) { return s.tree.keypoint_names; })
      .def_property_readonly("parents",
                             [](const SkinnedModel& s) { return s.tree.parent; })
      .def_property_readonly(
          "keypoint_joint",
          [](const SkinnedModel& s) { return s.tree.keypoint_joint; })
      .def_property_readonly(
          "keypoint_parent",
          [](const SkinnedModel& s) { return s.tree.keypoint_parent; })
      .def_property_readonly(
          "eval_subset", [](const SkinnedModel& s) { return s.eval_subset; })
      .def_property_readonly("vertex_count", &SkinnedModel::vertex_count)
      .def_property_readonly("joint_count", &SkinnedModel::joint_count)
      .def_property_readonly("keypoint_count", &SkinnedModel::keypoint_count)
      .def_property_readonly(
          "rest_joints",
          [](const SkinnedModel& s) { return from_points(s.tree.rest_joints); })
      .def_property_readonly(
          "rest_keypoints",
          [](const SkinnedModel& s) { return from_points(s.rest_keypoints); })
      .def_property_readonly("faces", [](const SkinnedModel& s) {
        Eigen::MatrixXi f(s.faces.size(), 3);
        for (size_t i = 0; i < s.faces.size(); ++i) {
          f(i, 0) = s.faces[i][0];
          f(i, 1) = s.faces[i][1];
          f(i, 2) = s.faces[i][2];
        }
        return f;
      });

  py::class_<PyFit>(m, "Fit")
      .def(py::init<>())
      .def_readwrite("theta", &PyFit::theta)
      .def_readwrite("beta", &PyFit::beta)
      .def_readwrite("scale", &PyFit::scale)
      .def_readwrite("translation", &PyFit::translation)
      .def_readwrite("sources", &PyFit::sources);

  m.def(
      "make_default_model",
      [](int vertex_budget) {
        return std::make_shared<SkinnedModel>(make_default_model(vertex_budget));
      },
      py::arg("vertex_budget") = 4000,
      "Build the default 24-joint, 26-keypoint synthetic humanoid");

  m.def("load_model", [](const std::string& path) {
    return std::make_shared<SkinnedModel>(load_model(path));
  });
  m.def("save_model", [](const SkinnedModel& model, const std::string& path) {
    save_model(model, path);
  });

  m.def(
      "kama",
      [](const SkinnedModel& model, const Matrix& positions,
         const Eigen::VectorXd& confidence, bool include_parent,
         bool pair_selection) {
        ArticulateConfig cfg;
        cfg.include_parent_in_neighborhood = include_parent;
        cfg.pair_selection = pair_selection;
        const KeypointSet x =
            make_keypoint_set(positions, confidence, std::nullopt);
        return PyFit::from_state(articulate(model, x, cfg));
      },
      py::arg("model"), py::arg("positions"), py::arg("confidence"),
      py::arg("include_parent") = false, py::arg("pair_selection") = false,
      "Analytic articulation from (K, 3) keypoint positions");

  m.def(
      "refine",
      [](const SkinnedModel& model, const PyFit& init, const Matrix& positions,
         const Eigen::VectorXd& confidence, const std::optional<Matrix>& pixels,
         const std::optional<std::tuple<double, double, double, double>>& camera,
         int iterations, double w1, double w2, double w3, double step_size,
         const std::optional<std::string>& gmm_prior) {
        const KeypointSet x = make_keypoint_set(positions, confidence, pixels);
        RefineConfig cfg;
        cfg.omega1 = w1;
        cfg.omega2 = w2;
        cfg.omega3 = w3;
        cfg.iterations = iterations;
        cfg.step_size = step_size;
        PosePrior prior = PosePrior::quadratic_to_rest();
        if (gmm_prior) prior = load_gmm_prior(*gmm_prior);
        const RefineResult r = refine(init.to_state(model), model, x,
                                      make_camera(camera), cfg, prior);
        return py::make_tuple(PyFit::from_state(r.state), r.loss_trace,
                              r.best_loss, r.aborted, r.diagnostic);
      },
      py::arg("model"), py::arg("init"), py::arg("positions"),
      py::arg("confidence"), py::arg("pixels") = std::nullopt,
      py::arg("camera") = std::nullopt, py::arg("iterations") = 100,
      py::arg("w1") = 500.0, py::arg("w2") = 4.78, py::arg("w3") = 5.0,
      py::arg("step_size") = 0.01, py::arg("gmm_prior") = std::nullopt,
      "First-order refinement; returns (fit, loss_trace, best_loss, aborted, "
      "diagnostic)");

  m.def(
      "fit_keypoints",
      [](const SkinnedModel& model, const PyFit& fit) {
        const FitState st = fit.to_state(model);
        std::vector<Vec3> kp = pose_keypoints(model, st.pose, st.shape);
        for (Vec3& p : kp) p = st.scale * p + st.translation;
        return from_points(kp);
      },
      "Posed keypoints of a fit, camera space");

  m.def(
      "skin_vertices",
      [](const SkinnedModel& model, const PyFit& fit) {
        const FitState st = fit.to_state(model);
        std::vector<Vec3> v = skin(model, st.pose, st.shape);
        for (Vec3& p : v) p = st.scale * p + st.translation;
        return from_points(v);
      },
      "Posed mesh vertices of a fit, camera space");

  m.def(
      "forward_kinematics",
      [](const SkinnedModel& model, const Matrix& theta) {
        const FkResult fk =
            forward_kinematics(model.tree, to_pose(theta, model));
        return from_points(fk.position);
      },
      "Posed joint positions from (J, 3) axis-angle locals");

  m.def(
      "synth",
      [](const SkinnedModel& model, int num_frames, unsigned seed,
         double pose_range, double sigma_3d, double sigma_2d,
         double twist_range, const std::map<std::string, double>& joint_ranges,
         const std::map<std::string, Vec3>& joint_bias) {
        SynthSpec spec;
        spec.num_frames = num_frames;
        spec.seed = seed;
        spec.pose_range = pose_range;
        spec.sigma_3d = sigma_3d;
        spec.sigma_2d = sigma_2d;
        spec.twist_range = twist_range;
        spec.joint_ranges = joint_ranges;
        spec.joint_bias = joint_bias;
        const SynthData data = synth_generate(model, spec);
        py::list frames;
        for (size_t i = 0; i < data.frames.size(); ++i) {
          const FrameRecord& f = data.frames[i];
          py::dict d;
          d["frame_id"] = f.frame_id;
          Matrix pos(f.keypoints.size(), 3);
          Eigen::VectorXd conf(f.keypoints.size());
          Matrix px(f.keypoints.size(), 2);
          for (size_t k = 0; k < f.keypoints.size(); ++k) {
            pos.row(k) = f.keypoints[k].position.transpose();
            conf[k] = f.keypoints[k].confidence;
            px.row(k) = f.keypoints[k].pixel.value_or(Vec2::Zero()).transpose();
          }
          d["positions"] = pos;
          d["confidence"] = conf;
          d["pixels"] = px;
          d["camera"] = std::make_tuple(f.camera->fx, f.camera->fy,
                                        f.camera->cx, f.camera->cy);
          d["ground_truth"] = PyFit::from_state(data.ground_truth[i].state);
          frames.append(d);
        }
        return frames;
      },
      py::arg("model"), py::arg("num_frames") = 10, py::arg("seed") = 0,
      py::arg("pose_range") = 0.5, py::arg("sigma_3d") = 0.0,
      py::arg("sigma_2d") = 0.0, py::arg("twist_range") = 0.0,
      py::arg("joint_ranges") = std::map<std::string, double>{},
      py::arg("joint_bias") = std::map<std::string, Vec3>{},
      "Generate synthetic frames with ground truth");

  m.def("metric_mpve", [](const Matrix& a, const Matrix& b) {
    return metric_mpve(to_points(a, "pred"), to_points(b, "gt"));
  });
  m.def("metric_mpjpe", [](const Matrix& a, const Matrix& b) {
    return metric_mpjpe(to_points(a, "pred"), to_points(b, "gt"));
  });
  m.def("metric_pa_mpjpe", [](const Matrix& a, const Matrix& b) {
    return metric_pa_mpjpe(to_points(a, "pred"), to_points(b, "gt"));
  });

  m.def("write_obj", [](const std::string& path, const Matrix& verts,
                        const Eigen::MatrixXi& faces) {
    std::vector<std::array<int, 3>> f(faces.rows());
    for (int i = 0; i < faces.rows(); ++i) {
      f[i] = {faces(i, 0), faces(i, 1), faces(i, 2)};
    }
    write_obj(to_points(verts, "vertices"), f, path);
  });

  m.def("write_fit", [](const SkinnedModel& model,
                        const std::vector<PyFit>& fits, const std::string& path) {
    std::vector<FitRecord> records;
    for (size_t i = 0; i < fits.size(); ++i) {
      records.push_back({static_cast<int>(i), fits[i].to_state(model)});
    }
    write_fit(records, path);
  });
  m.def("load_fit", [](const std::string& path) {
    std::vector<PyFit> out;
    for (const FitRecord& rec : load_fit(path)) {
      out.push_back(PyFit::from_state(rec.state));
    }
    return out;
  });

  m.attr("__version__") = "0.1.0";
}
