#pragma once

#include <map>
#include <string>
#include <vector>

#include "pointseg/autodiff.hpp"
#include "pointseg/tensor.hpp"

namespace pointseg {
namespace nn {

// Small convolutional backbone: one 3x3 conv + ReLU per stage, stride 2 in
// the first two stages only, so feature maps live at 1/4 input resolution.
struct BackboneConfig {
  std::vector<int> stage_channels{16, 32, 64, 64};
  int in_channels = 3;
  int kernel = 3;

  int feature_dim() const { return stage_channels.back(); }
  int downsample_factor() const { return 4; }
};

struct ConvParam {
  Tensor w;  // Cout x Cin x k x k
  Tensor b;  // Cout (empty when bias-free)
  int stride = 1;
  int pad = 1;

  bool has_bias() const { return b.numel() > 0 && b.rank() == 1; }
};

ConvParam init_conv(int in_ch, int out_ch, int kernel, int stride, bool bias, class Rng& rng);

struct Backbone {
  BackboneConfig cfg;
  std::vector<ConvParam> stages;
};

Backbone make_backbone(const BackboneConfig& cfg, uint64_t seed);

// Bias-free linear classifier over pooled features; row c is the weight
// vector for class c+1.
struct ClassifierHead {
  Tensor weight;  // C x D
};

ClassifierHead make_head(int num_classes, int feature_dim, uint64_t seed);

// Encoder-decoder for segmentation: backbone encoder, then two
// upsample+conv blocks back to input resolution and a 1x1 conv producing
// C+1 channels (channel 0 is background).
struct SegNet {
  Backbone encoder;
  ConvParam dec1;   // D -> D/2 after 2x upsample
  ConvParam dec2;   // D/2 -> D/4 after 2x upsample
  ConvParam proj;   // 1x1, D/4 -> C+1
  int num_classes = 0;
};

SegNet make_segnet(const BackboneConfig& cfg, int num_classes, uint64_t seed);

// Two-conv head on (frozen) backbone features producing a boundary logit
// map at feature resolution.
struct BoundaryHead {
  ConvParam c1;  // D -> hidden, 3x3
  ConvParam c2;  // hidden -> 1, 1x1
};

BoundaryHead make_boundary_head(int feature_dim, int hidden, uint64_t seed);

// ---------------------------------------------------------------------------
// Parameter plumbing

struct NamedParam {
  std::string name;
  Tensor* value = nullptr;
  double lr_scale = 1.0;  // per-group learning-rate multiplier
};

std::vector<NamedParam> collect_params(Backbone& net, const std::string& prefix = "backbone");
std::vector<NamedParam> collect_params(ClassifierHead& head, const std::string& prefix = "head");
std::vector<NamedParam> collect_params(SegNet& net);
std::vector<NamedParam> collect_params(BoundaryHead& head, const std::string& prefix = "boundary");

// ---------------------------------------------------------------------------
// Forward graph builders. `Uploaded` pins the parameter leaves for one tape.

struct Uploaded {
  std::vector<Var> leaves;  // aligned with the NamedParam list used to upload
};

Uploaded upload(Tape& tape, const std::vector<NamedParam>& params, bool requires_grad);

// Features for one image (3 x H x W) -> D x H/4 x W/4. `vars` must come from
// upload() over collect_params of the same backbone.
Var forward_features(Tape& tape, const Backbone& net, const Uploaded& vars, Var image);

// Pooled logits: head applied to the spatial mean of the features.
Var classify_gap(Tape& tape, Var features, Var head_weight);

// Segmentation logits at image resolution ((C+1) x H x W).
Var forward_seg_logits(Tape& tape, const SegNet& net, const Uploaded& vars, Var image);

// Boundary logit map (h x w) from features.
Var forward_boundary_logits(Tape& tape, const BoundaryHead& head, const Uploaded& vars,
                            Var features);

// Eval-mode conveniences (no gradients, fresh internal tape).
Tensor eval_features(const Backbone& net, const Tensor& image);
Tensor eval_logits(const Backbone& net, const ClassifierHead& head, const Tensor& image);
Tensor eval_seg_logits(const SegNet& net, const Tensor& image);
Tensor eval_boundary_map(const Backbone& net, const BoundaryHead& head, const Tensor& image);

// ---------------------------------------------------------------------------
// Optimizer: SGD with momentum, optional Nesterov, coupled weight decay.

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool nesterov = false;
};

class Sgd {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {}

  // grads aligned with params; lr multiplied by each param's lr_scale.
  void step(const std::vector<NamedParam>& params, const std::vector<Tensor>& grads);

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  std::map<std::string, Tensor> velocity_;
};

// Runs backward on the loss and applies one SGD step to the uploaded
// parameters. Throws TrainingError on a non-finite loss, tagging `context`.
void gradient_step(Tape& tape, Var loss, const std::vector<NamedParam>& params,
                   const Uploaded& vars, Sgd& opt, const std::string& context);

// ---------------------------------------------------------------------------
// Checkpoints: named arrays + a metadata string, via the archive format.

void save_params(const std::string& path, const std::vector<NamedParam>& params,
                 const std::string& metadata);
// Shapes must match the current parameter layout.
void load_params(const std::string& path, const std::vector<NamedParam>& params);
std::string checkpoint_metadata(const std::string& path);

}  // namespace nn
}  // namespace pointseg
