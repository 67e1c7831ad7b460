#include "pointseg/nets.hpp"

#include <cmath>

#include "pointseg/archive.hpp"
#include "pointseg/common.hpp"
#include "pointseg/rng.hpp"

namespace pointseg {
namespace nn {

ConvParam init_conv(int in_ch, int out_ch, int kernel, int stride, bool bias, Rng& rng) {
  ConvParam p;
  p.w = Tensor({out_ch, in_ch, kernel, kernel});
  p.stride = stride;
  p.pad = kernel / 2;
  const double std_dev = std::sqrt(2.0 / (in_ch * kernel * kernel));
  for (auto& v : p.w.vec()) v = rng.next_normal() * std_dev;
  if (bias) p.b = Tensor({out_ch}, 0.0);
  return p;
}

Backbone make_backbone(const BackboneConfig& cfg, uint64_t seed) {
  Backbone net;
  net.cfg = cfg;
  Rng rng(Rng::derive_seed(seed, "backbone"));
  int in_ch = cfg.in_channels;
  for (size_t i = 0; i < cfg.stage_channels.size(); ++i) {
    const int stride = i < 2 ? 2 : 1;
    net.stages.push_back(init_conv(in_ch, cfg.stage_channels[i], cfg.kernel, stride, true, rng));
    in_ch = cfg.stage_channels[i];
  }
  return net;
}

ClassifierHead make_head(int num_classes, int feature_dim, uint64_t seed) {
  ClassifierHead head;
  head.weight = Tensor({num_classes, feature_dim});
  Rng rng(Rng::derive_seed(seed, "head"));
  for (auto& v : head.weight.vec()) v = rng.next_normal() * 0.01;
  return head;
}

SegNet make_segnet(const BackboneConfig& cfg, int num_classes, uint64_t seed) {
  SegNet net;
  net.encoder = make_backbone(cfg, Rng::derive_seed(seed, "seg_encoder"));
  const int d = cfg.feature_dim();
  Rng rng(Rng::derive_seed(seed, "seg_decoder"));
  net.dec1 = init_conv(d, d / 2, 3, 1, true, rng);
  net.dec2 = init_conv(d / 2, d / 4, 3, 1, true, rng);
  net.proj = init_conv(d / 4, num_classes + 1, 1, 1, true, rng);
  net.num_classes = num_classes;
  return net;
}

BoundaryHead make_boundary_head(int feature_dim, int hidden, uint64_t seed) {
  BoundaryHead head;
  Rng rng(Rng::derive_seed(seed, "boundary"));
  head.c1 = init_conv(feature_dim, hidden, 3, 1, true, rng);
  head.c2 = init_conv(hidden, 1, 1, 1, true, rng);
  // start with boundaries near sigmoid(-2) so path affinities begin high
  head.c2.b[0] = -2.0;
  return head;
}

// ---------------------------------------------------------------------------

namespace {
void add_conv(std::vector<NamedParam>& out, ConvParam& p, const std::string& name,
              double lr_scale) {
  out.push_back({name + ".w", &p.w, lr_scale});
  if (p.has_bias()) out.push_back({name + ".b", &p.b, lr_scale});
}
}  // namespace

std::vector<NamedParam> collect_params(Backbone& net, const std::string& prefix) {
  std::vector<NamedParam> out;
  for (size_t i = 0; i < net.stages.size(); ++i) {
    add_conv(out, net.stages[i], prefix + ".stage" + std::to_string(i), 1.0);
  }
  return out;
}

std::vector<NamedParam> collect_params(ClassifierHead& head, const std::string& prefix) {
  return {{prefix + ".W", &head.weight, 1.0}};
}

std::vector<NamedParam> collect_params(SegNet& net) {
  std::vector<NamedParam> out = collect_params(net.encoder, "encoder");
  add_conv(out, net.dec1, "dec1", 1.0);
  add_conv(out, net.dec2, "dec2", 1.0);
  add_conv(out, net.proj, "proj", 1.0);
  return out;
}

std::vector<NamedParam> collect_params(BoundaryHead& head, const std::string& prefix) {
  std::vector<NamedParam> out;
  add_conv(out, head.c1, prefix + ".c1", 1.0);
  add_conv(out, head.c2, prefix + ".c2", 1.0);
  return out;
}

// ---------------------------------------------------------------------------

Uploaded upload(Tape& tape, const std::vector<NamedParam>& params, bool requires_grad) {
  Uploaded u;
  u.leaves.reserve(params.size());
  for (const auto& p : params) u.leaves.push_back(tape.leaf(*p.value, requires_grad));
  return u;
}

namespace {

// Leaf lookup by position: builders assume vars were uploaded from the
// matching collect_params() order.
struct LeafCursor {
  const Uploaded& vars;
  size_t next = 0;

  Var take() { return vars.leaves.at(next++); }
};

Var conv_block(Tape& tape, const ConvParam& p, LeafCursor& cur, Var x, bool relu_after) {
  const Var w = cur.take();
  const Var b = p.has_bias() ? cur.take() : Var{};
  Var y = tape.conv2d(x, w, b, p.stride, p.pad);
  return relu_after ? tape.relu(y) : y;
}

}  // namespace

Var forward_features(Tape& tape, const Backbone& net, const Uploaded& vars, Var image) {
  const Tensor& img = tape.value(image);
  if (img.rank() != 3 || img.dim(0) != net.cfg.in_channels) {
    throw ShapeError("forward_features: image must be " + std::to_string(net.cfg.in_channels) +
                     "xHxW, got " + img.shape_str());
  }
  const int f = net.cfg.downsample_factor();
  if (img.dim(1) % f != 0 || img.dim(2) % f != 0) {
    throw ShapeError("forward_features: image dims " + img.shape_str() +
                     " not divisible by downsample factor " + std::to_string(f));
  }
  LeafCursor cur{vars};
  Var x = image;
  for (const auto& stage : net.stages) x = conv_block(tape, stage, cur, x, true);
  return x;
}

Var classify_gap(Tape& tape, Var features, Var head_weight) {
  return tape.matvec(head_weight, tape.gap(features));
}

Var forward_seg_logits(Tape& tape, const SegNet& net, const Uploaded& vars, Var image) {
  LeafCursor cur{vars};
  Var x = image;
  for (const auto& stage : net.encoder.stages) x = conv_block(tape, stage, cur, x, true);
  const Tensor& f = tape.value(x);
  int h = f.dim(1), w = f.dim(2);
  x = tape.bilinear_upsample(x, 2 * h, 2 * w);
  x = conv_block(tape, net.dec1, cur, x, true);
  x = tape.bilinear_upsample(x, 4 * h, 4 * w);
  x = conv_block(tape, net.dec2, cur, x, true);
  return conv_block(tape, net.proj, cur, x, false);
}

Var forward_boundary_logits(Tape& tape, const BoundaryHead& head, const Uploaded& vars,
                            Var features) {
  LeafCursor cur{vars};
  Var x = conv_block(tape, head.c1, cur, features, true);
  x = conv_block(tape, head.c2, cur, x, false);
  const Tensor& v = tape.value(x);
  if (v.dim(0) != 1) throw ShapeError("boundary head must emit one channel");
  return tape.reshape(x, {v.dim(1), v.dim(2)});
}

Tensor eval_features(const Backbone& net, const Tensor& image) {
  Tape tape;
  Backbone& mut = const_cast<Backbone&>(net);
  const auto params = collect_params(mut);
  const Uploaded vars = upload(tape, params, false);
  const Var out = forward_features(tape, net, vars, tape.leaf(image));
  return tape.value(out);
}

Tensor eval_logits(const Backbone& net, const ClassifierHead& head, const Tensor& image) {
  Tape tape;
  Backbone& mut = const_cast<Backbone&>(net);
  const Uploaded vars = upload(tape, collect_params(mut), false);
  const Var f = forward_features(tape, net, vars, tape.leaf(image));
  const Var logits = classify_gap(tape, f, tape.leaf(head.weight));
  return tape.value(logits);
}

Tensor eval_seg_logits(const SegNet& net, const Tensor& image) {
  Tape tape;
  SegNet& mut = const_cast<SegNet&>(net);
  const Uploaded vars = upload(tape, collect_params(mut), false);
  const Var out = forward_seg_logits(tape, net, vars, tape.leaf(image));
  return tape.value(out);
}

Tensor eval_boundary_map(const Backbone& net, const BoundaryHead& head, const Tensor& image) {
  Tape tape;
  Backbone& bb = const_cast<Backbone&>(net);
  BoundaryHead& bh = const_cast<BoundaryHead&>(head);
  const Uploaded bvars = upload(tape, collect_params(bb), false);
  const Var f = forward_features(tape, net, bvars, tape.leaf(image));
  const Uploaded hvars = upload(tape, collect_params(bh), false);
  const Var logit = forward_boundary_logits(tape, head, hvars, f);
  const Tensor& l = tape.value(logit);
  Tensor b({l.dim(0), l.dim(1)});
  for (int64_t i = 0; i < b.numel(); ++i) b[i] = sigmoid(l[i]);
  return b;
}

// ---------------------------------------------------------------------------

void Sgd::step(const std::vector<NamedParam>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw ShapeError("Sgd::step: params/grads length mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = *params[i].value;
    const Tensor& g = grads[i];
    if (!theta.same_shape(g)) {
      throw ShapeError("Sgd::step: grad shape mismatch for " + params[i].name);
    }
    auto it = velocity_.find(params[i].name);
    if (it == velocity_.end()) {
      it = velocity_.emplace(params[i].name, Tensor(theta.shape())).first;
    }
    Tensor& vel = it->second;
    const double lr = cfg_.lr * params[i].lr_scale;
    for (int64_t j = 0; j < theta.numel(); ++j) {
      const double grad = g[j] + cfg_.weight_decay * theta[j];
      vel[j] = cfg_.momentum * vel[j] + grad;
      theta[j] -= lr * (cfg_.nesterov ? grad + cfg_.momentum * vel[j] : vel[j]);
    }
  }
}

void gradient_step(Tape& tape, Var loss, const std::vector<NamedParam>& params,
                   const Uploaded& vars, Sgd& opt, const std::string& context) {
  const double loss_value = tape.value(loss).value();
  if (!std::isfinite(loss_value)) {
    throw TrainingError("non-finite loss (" + std::to_string(loss_value) + ") at " + context);
  }
  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor g = tape.grad(vars.leaves[i]);
    if (!g.all_finite()) {
      throw TrainingError("non-finite gradient for " + params[i].name + " at " + context);
    }
    grads.push_back(std::move(g));
  }
  opt.step(params, grads);
}

// ---------------------------------------------------------------------------

void save_params(const std::string& path, const std::vector<NamedParam>& params,
                 const std::string& metadata) {
  Archive ar;
  ar.metadata = metadata;
  for (const auto& p : params) ar.entries.emplace_back(p.name, *p.value);
  save_archive(path, ar);
}

void load_params(const std::string& path, const std::vector<NamedParam>& params) {
  const Archive ar = load_archive(path);
  for (const auto& p : params) {
    const Tensor& t = ar.require(p.name);
    if (!t.same_shape(*p.value)) {
      throw DataError(path + ": checkpoint entry " + p.name + " has shape " + t.shape_str() +
                      ", expected " + p.value->shape_str());
    }
    *p.value = t;
  }
}

std::string checkpoint_metadata(const std::string& path) { return load_archive(path).metadata; }

}  // namespace nn
}  // namespace pointseg
