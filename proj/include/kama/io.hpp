#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kama/articulate.hpp"
#include "kama/model.hpp"
#include "kama/refine.hpp"

namespace kama {

/// One frame of keypoint observations as stored on disk. Entries are kept in
/// model keypoint order after loading.
struct FrameRecord {
  struct Entry {
    std::string name;
    Vec3 position = Vec3::Zero();   // meters, camera space
    double confidence = 1.0;
    std::optional<Vec2> pixel;      // (u, v)
  };
  int frame_id = 0;
  std::vector<Entry> keypoints;
  std::optional<CameraIntrinsics> camera;
};

/// Fit-file row: one frame's articulation result.
struct FitRecord {
  int frame_id = 0;
  FitState state;
};

SkinnedModel load_model(const std::string& path);
void save_model(const SkinnedModel& model, const std::string& path);

/// Parses and invariant-checks frame records, reordering each frame's entries
/// into model keypoint order and sorting frames by id. Throws ParseError with
/// frame/field context, UnknownKeypointName for unresolvable names.
std::vector<FrameRecord> load_frames(const std::string& path,
                                     const std::vector<std::string>& keypoint_names);
void save_frames(const std::vector<FrameRecord>& frames, const std::string& path);

KeypointSet to_keypoint_set(const FrameRecord& frame);

/// Wavefront OBJ: `v x y z` lines then 1-indexed `f a b c` lines.
void write_obj(const std::vector<Vec3>& vertices,
               const std::vector<std::array<int, 3>>& faces,
               const std::string& path);

void write_fit(const std::vector<FitRecord>& states, const std::string& path);
std::vector<FitRecord> load_fit(const std::string& path);

PosePrior load_gmm_prior(const std::string& path);

enum class RunMode { kama, kama_refine, refine_only };

/// CLI run configuration: paths, mode, refinement overrides, seed.
struct RunConfig {
  std::string model_path;
  std::string input_path;
  std::string output_dir;
  RunMode mode = RunMode::kama;
  RefineConfig refine;
  std::optional<std::string> gmm_prior_path;
  std::optional<std::string> gt_path;  // enables PA-MPJPE in the summary
  unsigned seed = 0;
  bool write_objs = false;
};

// Exit codes distinguishing failure classes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitParse = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitIo = 5;

/// Full per-frame pipeline: articulate (and refine when enabled), write the
/// fit file, optional OBJ per frame and a run summary with losses and
/// timings. Deterministic given config and seed; frames are processed in a
/// work pool capped by the KAMA_THREADS environment variable. Returns an
/// exit status instead of throwing.
int run(const RunConfig& config);

}  // namespace kama
