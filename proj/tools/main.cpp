#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "kama/harness.hpp"
#include "kama/io.hpp"
#include "kama/synthetic.hpp"

#include <json.hpp>

namespace {

constexpr const char* kVersion = "0.1.0";

int classify(const std::exception& e) {
  if (dynamic_cast<const kama::ParseError*>(&e) ||
      dynamic_cast<const kama::PriorLoadError*>(&e) ||
      dynamic_cast<const kama::InvalidSpec*>(&e)) {
    return kama::kExitParse;
  }
  if (dynamic_cast<const kama::IoError*>(&e)) return kama::kExitIo;
  if (dynamic_cast<const kama::Error*>(&e)) return kama::kExitNumeric;
  return kama::kExitNumeric;
}

kama::SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw kama::IoError("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw kama::ParseError(path + ": " + e.what());
  }
  kama::SynthSpec spec;
  try {
    spec.num_frames = j.value("num_frames", spec.num_frames);
    spec.seed = j.value("seed", spec.seed);
    spec.pose_range = j.value("pose_range", spec.pose_range);
    spec.twist_range = j.value("twist_range", spec.twist_range);
    spec.sigma_3d = j.value("sigma_3d", spec.sigma_3d);
    spec.sigma_2d = j.value("sigma_2d", spec.sigma_2d);
    spec.scale_min = j.value("scale_min", spec.scale_min);
    spec.scale_max = j.value("scale_max", spec.scale_max);
    if (j.contains("joint_ranges")) {
      for (const auto& [name, range] : j.at("joint_ranges").items()) {
        spec.joint_ranges[name] = range.get<double>();
      }
    }
    if (j.contains("joint_bias")) {
      for (const auto& [name, aa] : j.at("joint_bias").items()) {
        spec.joint_bias[name] = kama::Vec3(aa.at(0), aa.at(1), aa.at(2));
      }
    }
    if (j.contains("translation_center")) {
      const auto& c = j.at("translation_center");
      spec.translation_center = kama::Vec3(c.at(0), c.at(1), c.at(2));
    }
    if (j.contains("translation_extent")) {
      const auto& c = j.at("translation_extent");
      spec.translation_extent = kama::Vec3(c.at(0), c.at(1), c.at(2));
    }
    if (j.contains("camera")) {
      const auto& c = j.at("camera");
      spec.camera = kama::CameraIntrinsics(c.at("fx"), c.at("fy"), c.at("cx"),
                                           c.at("cy"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw kama::ParseError(path + ": " + e.what());
  }
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Articulates a skinned body model from sparse 3D keypoints"};
  app.set_version_flag("--version", kVersion);

  // Fit mode (no subcommand).
  std::string model_path, input_path, out_dir;
  bool do_refine = false, write_objs = false;
  std::optional<std::string> gt_path, prior_path;
  unsigned seed = 0;
  kama::RefineConfig refine_config;
  std::string mode = "auto";
  app.add_option("--model", model_path, "Model file (JSON)");
  app.add_option("--input", input_path, "Keypoint frames file (JSON)");
  app.add_option("--out", out_dir, "Output directory");
  app.add_flag("--refine", do_refine, "Run first-order refinement after KAMA");
  app.add_option("--mode", mode, "kama | kama+refine | refine-only")
      ->check(CLI::IsMember({"auto", "kama", "kama+refine", "refine-only"}));
  app.add_option("--iters", refine_config.iterations, "Refinement iterations");
  app.add_option("--w1", refine_config.omega1, "3D term weight");
  app.add_option("--w2", refine_config.omega2, "Shape prior weight");
  app.add_option("--w3", refine_config.omega3, "Pose prior weight");
  app.add_option("--step", refine_config.step_size, "Adam step size");
  app.add_option("--seed", seed, "Random seed recorded in the summary");
  app.add_flag("--obj", write_objs, "Write a Wavefront OBJ per frame");
  app.add_option_function<std::string>(
      "--gt", [&](const std::string& v) { gt_path = v; },
      "Ground-truth fit file: adds PA-MPJPE to the summary");
  app.add_option_function<std::string>(
      "--prior", [&](const std::string& v) { prior_path = v; },
      "Gaussian-mixture pose prior file");

  // model subcommand: write the default synthetic model.
  CLI::App* model_cmd = app.add_subcommand("model", "Write the synthetic body model");
  std::string model_out;
  int vertex_budget = 4000;
  model_cmd->add_option("--out", model_out, "Output model path")->required();
  model_cmd->add_option("--vertices", vertex_budget, "Vertex budget");

  // synth subcommand.
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate synthetic frames");
  std::string synth_model, synth_spec_path, synth_out;
  std::optional<unsigned> synth_seed;
  synth_cmd->add_option("--model", synth_model, "Model file")->required();
  synth_cmd->add_option("--spec", synth_spec_path, "Synthesis spec (JSON)")->required();
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option_function<unsigned>(
      "--seed", [&](unsigned v) { synth_seed = v; }, "Override the seed from the synthesis file");

  // eval subcommand.
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate fits against ground truth");
  std::string eval_model, eval_fits, eval_gt, eval_out;
  eval_cmd->add_option("--model", eval_model, "Model file")->required();
  eval_cmd->add_option("--fits", eval_fits, "Predicted fit file")->required();
  eval_cmd->add_option("--gt", eval_gt, "Ground-truth fit file")->required();
  eval_cmd->add_option("--out", eval_out, "Report path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (model_cmd->parsed()) {
      const kama::SkinnedModel model = kama::make_default_model(vertex_budget);
      kama::save_model(model, model_out);
      std::cout << "wrote " << model_out << " (" << model.vertex_count()
                << " vertices, " << model.joint_count() << " joints, "
                << model.keypoint_count() << " keypoints)\n";
      return kama::kExitOk;
    }
    if (synth_cmd->parsed()) {
      const kama::SkinnedModel model = kama::load_model(synth_model);
      kama::SynthSpec spec = load_synth_spec(synth_spec_path);
      if (synth_seed) spec.seed = *synth_seed;
      const kama::SynthData data = kama::synth_generate(model, spec);
      std::filesystem::create_directories(synth_out);
      namespace fs = std::filesystem;
      kama::save_frames(data.frames, (fs::path(synth_out) / "frames.json").string());
      kama::write_fit(data.ground_truth, (fs::path(synth_out) / "gt.json").string());
      std::cout << "wrote " << data.frames.size() << " frames to " << synth_out
                << "\n";
      return kama::kExitOk;
    }
    if (eval_cmd->parsed()) {
      const kama::SkinnedModel model = kama::load_model(eval_model);
      const auto fits = kama::load_fit(eval_fits);
      const auto gt = kama::load_fit(eval_gt);
      const kama::EvalReport report = kama::evaluate_fits(model, fits, gt);
      kama::save_eval_report(report, eval_out);
      std::cout << "pa_mpjpe_mm " << report.pa_mpjpe_mm << " mpjpe_mm "
                << report.mpjpe_mm << " mpve_mm " << report.mpve_mm << "\n";
      return kama::kExitOk;
    }

    // Fit mode.
    if (model_path.empty() || input_path.empty() || out_dir.empty()) {
      std::cerr << "error: --model, --input and --out are required "
                   "(see --help)\n";
      return kama::kExitConfig;
    }
    kama::RunConfig config;
    config.model_path = model_path;
    config.input_path = input_path;
    config.output_dir = out_dir;
    config.refine = refine_config;
    config.seed = seed;
    config.write_objs = write_objs;
    config.gt_path = gt_path;
    config.gmm_prior_path = prior_path;
    if (mode == "auto") {
      config.mode = do_refine ? kama::RunMode::kama_refine : kama::RunMode::kama;
    } else if (mode == "kama") {
      config.mode = kama::RunMode::kama;
    } else if (mode == "kama+refine") {
      config.mode = kama::RunMode::kama_refine;
    } else {
      config.mode = kama::RunMode::refine_only;
    }
    return kama::run(config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify(e);
  }
}
