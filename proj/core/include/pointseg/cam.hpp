#pragma once

#include <string>
#include <vector>

#include "pointseg/corpus.hpp"
#include "pointseg/nets.hpp"
#include "pointseg/tensor.hpp"

namespace pointseg {
namespace cam {

// Per-class nonnegative activation maps for one image, values in [0,1].
// Each class map peaks at 1 unless its pre-normalization map was entirely
// nonpositive (then it is all zeros).
struct ActivationStack {
  Tensor maps;  // C x h x w
  bool at_image_resolution = false;

  int classes() const { return maps.dim(0); }
  int height() const { return maps.dim(1); }
  int width() const { return maps.dim(2); }
};

constexpr double kCamEps = 1e-5;

// ---------------------------------------------------------------------------
// Loss and map primitives (plain values; the training loop uses the
// differentiable twins on the tape, which share the same forward code).

// Multilabel soft margin over C logits; stable for |logit| up to 1e4.
double loss_image(const Tensor& logits, const std::vector<uint8_t>& labels);

// Per-class activation maps from features and head weights: clamp negatives,
// divide by the per-class spatial max (guarded by eps).
ActivationStack compute_cam(const Tensor& features, const nn::ClassifierHead& head,
                            double eps = kCamEps);

ActivationStack upsample_bilinear(const ActivationStack& stack, int out_h, int out_w);

// Mean squared error at all supervised points for one class; points of other
// classes act as 0-targets. Empty point set contributes 0 (logged).
double loss_point_class(const ActivationStack& upsampled,
                        const std::vector<corpus::PointAnnotation>& points, int class_id);

// Mean of the classwise point losses over the classes present in the image.
// No present classes contributes 0 (logged).
double loss_point(const ActivationStack& upsampled,
                  const std::vector<corpus::PointAnnotation>& points,
                  const std::vector<uint8_t>& labels);

double loss_total(double image_loss, double point_loss, double alpha);

// ---------------------------------------------------------------------------
// Training

enum class Supervision { kImageOnly, kPoints, kAllPoints };

Supervision supervision_from_string(const std::string& s);
std::string to_string(Supervision mode);

struct PcamTrainConfig {
  double alpha = 0.1;
  double lr_backbone = 0.01;
  double lr_head = 0.1;       // classification layer trains 10x faster
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 30;
  int batch_size = 8;
  uint64_t seed = 0;
  Supervision mode = Supervision::kPoints;
  bool detach_cam_max = false;  // stop-gradient through the Eq. normalization max
  double cam_eps = kCamEps;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss_image = 0.0;
  double mean_loss_point = 0.0;
  double mean_loss_total = 0.0;
};

struct PcamModel {
  nn::Backbone backbone;
  nn::ClassifierHead head;
  int num_classes = 0;
};

PcamModel make_pcam_model(const nn::BackboneConfig& cfg, int num_classes, uint64_t seed);

// Point-supervised CAM training: per step, forward -> pooled logits + CAM ->
// upsample -> image loss + alpha * point loss -> SGD. The upsampling sits on
// the differentiation path. With alpha=0 (or image-only mode) the map branch
// is skipped entirely, so runs are bitwise identical to plain CAM training.
std::vector<EpochStats> train_pcam(PcamModel& model,
                                   const std::vector<corpus::ImageSample>& dataset,
                                   const PcamTrainConfig& config);

// Image-resolution maps masked to the image's classes: the known label set
// when use_known_labels, else classes with sigmoid(logit) >= 0.5.
ActivationStack infer_pcam(const PcamModel& model, const corpus::ImageSample& sample,
                           bool use_known_labels, double eps = kCamEps,
                           Tensor* logits_out = nullptr);

// Feature-resolution variant feeding affinity mining and the random walk.
ActivationStack infer_pcam_map_res(const PcamModel& model, const corpus::ImageSample& sample,
                                   bool use_known_labels, double eps = kCamEps,
                                   Tensor* logits_out = nullptr);

// ---------------------------------------------------------------------------
// Checkpoint / dump plumbing

void save_pcam_model(const std::string& path, PcamModel& model, const std::string& metadata);
PcamModel load_pcam_model(const std::string& path, const nn::BackboneConfig& cfg,
                          int num_classes);

// Activation dump: one archive per image with entries map/<class> (image
// resolution), mapres/<class> (feature resolution) and logits.
void save_cam_dump(const std::string& path, const corpus::ClassCatalog& catalog,
                   const ActivationStack& image_res, const ActivationStack& map_res,
                   const Tensor& logits, const std::string& image_id);
struct CamDump {
  ActivationStack image_res;
  ActivationStack map_res;
  Tensor logits;
  std::string metadata;
};
CamDump load_cam_dump(const std::string& path, const corpus::ClassCatalog& catalog);

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history);

}  // namespace cam
}  // namespace pointseg
