#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pointseg {
namespace pipeline {

// A required input artifact for a stage is absent. CLI exit code 2.
class MissingArtifactError : public std::runtime_error {
 public:
  explicit MissingArtifactError(const std::string& what) : std::runtime_error(what) {}
};

// A configured metric gate was not met. CLI exit code 3.
class GateFailure : public std::runtime_error {
 public:
  explicit GateFailure(const std::string& what) : std::runtime_error(what) {}
};

// Flat key=value run configuration. Unknown keys are rejected (all offenders
// listed); unspecified keys keep the defaults below.
struct PipelineConfig {
  // data
  std::string data_dir;  // default: <run_dir>/data
  int n_train = 200;
  int n_val = 50;
  int image_size = 64;
  int num_classes = 3;
  int points_per_class = 1;
  uint64_t seed = 7;

  // pcam training
  double alpha = 0.1;
  std::string pcam_mode = "points";  // image_only | points | all_points
  int pcam_epochs = 30;
  int pcam_batch = 8;
  double pcam_lr_backbone = 0.01;
  double pcam_lr_head = 0.1;
  double pcam_momentum = 0.9;
  double pcam_weight_decay = 1e-4;
  bool pcam_detach_cam_max = false;

  // affinity mining / refinement
  double theta_fg = 0.3;
  double theta_bg = 0.05;
  double theta_seg = 0.3;
  double theta_ignore_lo = -1.0;  // ignore band disabled when < 0
  double radius = 5.0;
  double beta = 12.0;
  int walk_iters = 16;
  double bg_gamma = 1.0;
  int boundary_epochs = 10;
  double boundary_lr = 0.05;
  double boundary_momentum = 0.9;
  double boundary_weight_decay = 1e-4;
  int boundary_hidden = 32;
  int boundary_pairs_per_image = 4096;

  // segmentation retraining
  std::string seg_label_source = "pseudo";  // pseudo | ground_truth
  double seg_lr = 0.01;
  double seg_weight_decay = 4e-5;
  double seg_momentum = 0.9;
  int seg_epochs = 20;
  int seg_crop = 64;
  bool seg_flip = true;
  int seg_batch = 8;

  // evaluation
  double gate_min_val_miou = -1.0;  // disabled when < 0

  static PipelineConfig from_file(const std::string& path);
  static PipelineConfig from_string(const std::string& text);
  std::string to_string() const;  // full resolved key=value echo
  void validate() const;
};

enum class Stage {
  kGenData,
  kTrainPcam,
  kDumpCams,
  kMineAffinity,
  kRefine,
  kPseudoLabels,
  kTrainSeg,
  kEvaluate,
  kAll,
};

Stage stage_from_string(const std::string& name);
std::string to_string(Stage stage);

struct StageOptions {
  std::string run_dir;
  std::optional<uint64_t> seed_override;
  std::string cam_out;         // overrides the activation dump directory
  bool dump_affinity = false;  // extra mined-region / pair-stat dumps
};

// Executes one stage (or the whole chain) against the run directory,
// writing artifacts plus a manifest-<stage>.json with the resolved config,
// input/output content hashes and wall time. Throws MissingArtifactError
// when a prerequisite artifact is absent and GateFailure when a configured
// metric gate fails.
void run_stage(Stage stage, const PipelineConfig& config, const StageOptions& options);

// FNV-1a 64 content hash, 16 hex chars; used by manifests and rerun checks.
std::string hash_file(const std::string& path);

}  // namespace pipeline
}  // namespace pointseg
