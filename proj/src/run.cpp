#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "kama/harness.hpp"
#include "kama/io.hpp"

namespace kama {

using nlohmann::json;

namespace {

int pool_size(size_t frames) {
  size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("KAMA_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap > 0) n = std::min(n, static_cast<size_t>(cap));
  }
  return static_cast<int>(std::min(n, std::max<size_t>(1, frames)));
}

struct FrameResult {
  FitRecord fit;
  double kama_ms = 0.0;
  double refine_ms = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> loss_trace;
  bool refined = false;
  bool aborted = false;
  std::string diagnostic;
};

FitState mean_pose_init(const SkinnedModel& model, const KeypointSet& x) {
  const KeypointRotations est =
      estimate_global_rotations(x, model.rest_keypoints, model.tree);
  FitState init;
  init.pose = Pose::rest(model.joint_count());
  int root_kp = -1;
  for (int k = 0; k < model.keypoint_count(); ++k) {
    if (model.tree.keypoint_parent[k] == -1) root_kp = k;
  }
  init.pose.local[model.tree.root] = est.global[root_kp];
  init.per_joint_source.assign(model.joint_count(), JointSource::zeroed);
  const ScaleTranslation st = fit_global_scale_translation(model, init.pose, x);
  init.scale = std::max(1e-4, st.scale);
  init.translation = st.translation;
  return init;
}

}  // namespace

int run(const RunConfig& config) {
  namespace fs = std::filesystem;
  try {
    if (!fs::exists(config.model_path)) {
      std::cerr << "error: model file not found: " << config.model_path << "\n";
      return kExitConfig;
    }
    if (!fs::exists(config.input_path)) {
      std::cerr << "error: input file not found: " << config.input_path << "\n";
      return kExitConfig;
    }
    std::error_code ec;
    fs::create_directories(config.output_dir, ec);
    if (ec) {
      std::cerr << "error: cannot create output dir: " << config.output_dir
                << "\n";
      return kExitIo;
    }

    const SkinnedModel model = load_model(config.model_path);
    const std::vector<FrameRecord> frames =
        load_frames(config.input_path, model.tree.keypoint_names);
    PosePrior prior = PosePrior::quadratic_to_rest();
    if (config.gmm_prior_path) prior = load_gmm_prior(*config.gmm_prior_path);

    std::vector<FrameResult> results(frames.size());
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::string failure;
    std::mutex failure_mutex;

    const auto worker = [&]() {
      while (true) {
        const size_t i = next.fetch_add(1);
        if (i >= frames.size() || failed.load()) break;
        try {
          const FrameRecord& frame = frames[i];
          const KeypointSet x = to_keypoint_set(frame);
          FrameResult& r = results[i];
          r.fit.frame_id = frame.frame_id;

          const auto t0 = std::chrono::steady_clock::now();
          FitState state;
          if (config.mode == RunMode::refine_only) {
            state = mean_pose_init(model, x);
          } else {
            state = articulate(model, x);
          }
          r.kama_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();

          if (config.mode != RunMode::kama) {
            const auto t1 = std::chrono::steady_clock::now();
            r.initial_loss =
                total_loss(state, model, x, frame.camera, config.refine, prior);
            const RefineResult rr =
                refine(state, model, x, frame.camera, config.refine, prior);
            r.refine_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t1)
                              .count();
            state = rr.state;
            r.final_loss = rr.best_loss;
            r.loss_trace = rr.loss_trace;
            r.refined = true;
            r.aborted = rr.aborted;
            r.diagnostic = rr.diagnostic;
          }
          r.fit.state = std::move(state);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          failed.store(true);
          if (failure.empty()) failure = e.what();
        }
      }
    };

    const int threads = pool_size(frames.size());
    std::vector<std::thread> pool;
    for (int tix = 0; tix < threads; ++tix) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (failed.load()) throw NonFinite(failure);

    std::vector<FitRecord> fits;
    fits.reserve(results.size());
    for (const FrameResult& r : results) fits.push_back(r.fit);
    const std::string fit_path =
        (fs::path(config.output_dir) / "fits.json").string();
    write_fit(fits, fit_path);

    if (config.write_objs) {
      for (const FrameResult& r : results) {
        std::vector<Vec3> verts = skin(model, r.fit.state.pose, r.fit.state.shape);
        for (Vec3& v : verts) {
          v = r.fit.state.scale * v + r.fit.state.translation;
        }
        char name[64];
        std::snprintf(name, sizeof(name), "frame_%06d.obj", r.fit.frame_id);
        write_obj(verts, model.faces, (fs::path(config.output_dir) / name).string());
      }
    }

    // Optional ground truth turns on PA-MPJPE reporting.
    std::map<int, const FitState*> gt_by_id;
    std::vector<FitRecord> gt;
    if (config.gt_path) {
      gt = load_fit(*config.gt_path);
      for (const FitRecord& rec : gt) gt_by_id[rec.frame_id] = &rec.state;
    }

    json summary;
    summary["mode"] = config.mode == RunMode::kama ? "kama"
                      : config.mode == RunMode::kama_refine ? "kama+refine"
                                                            : "refine-only";
    summary["seed"] = config.seed;
    summary["threads"] = threads;
    json jframes = json::array();
    double mean_kama = 0.0, mean_refine = 0.0, mean_pa = 0.0;
    int pa_count = 0;
    for (const FrameResult& r : results) {
      json jf = {{"frame_id", r.fit.frame_id}, {"kama_ms", r.kama_ms}};
      if (r.refined) {
        jf["refine_ms"] = r.refine_ms;
        jf["initial_loss"] = r.initial_loss;
        jf["final_loss"] = r.final_loss;
        jf["loss_trace"] = r.loss_trace;
        if (r.aborted) jf["diagnostic"] = r.diagnostic;
      }
      if (config.gt_path) {
        const auto it = gt_by_id.find(r.fit.frame_id);
        if (it != gt_by_id.end()) {
          std::vector<Vec3> pk =
              pose_keypoints(model, r.fit.state.pose, r.fit.state.shape);
          for (Vec3& p : pk) p = r.fit.state.scale * p + r.fit.state.translation;
          std::vector<Vec3> gk =
              pose_keypoints(model, it->second->pose, it->second->shape);
          for (Vec3& p : gk) p = it->second->scale * p + it->second->translation;
          const double pa = metric_pa_mpjpe(pk, gk);
          jf["pa_mpjpe_mm"] = pa;
          mean_pa += pa;
          ++pa_count;
        }
      }
      mean_kama += r.kama_ms;
      mean_refine += r.refine_ms;
      jframes.push_back(std::move(jf));
    }
    summary["frames"] = std::move(jframes);
    if (!results.empty()) {
      summary["mean_kama_ms"] = mean_kama / results.size();
      if (config.mode != RunMode::kama) {
        summary["mean_refine_ms"] = mean_refine / results.size();
      }
    }
    if (pa_count > 0) summary["mean_pa_mpjpe_mm"] = mean_pa / pa_count;
    std::ofstream out(fs::path(config.output_dir) / "summary.json");
    if (!out) throw IoError("cannot write summary.json");
    out << summary.dump(2) << "\n";

    return kExitOk;
  } catch (const UnknownKeypointName& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const PriorLoadError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}

}  // namespace kama
