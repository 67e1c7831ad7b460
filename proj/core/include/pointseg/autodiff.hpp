#pragma once

#include <functional>
#include <vector>

#include "pointseg/corpus.hpp"
#include "pointseg/tensor.hpp"

namespace pointseg {
namespace nn {

// Handle into a Tape. Valid only for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// A pixel-pair training example for the boundary head: the Bresenham pixels
// strictly between the endpoints (linear indices into the h*w map) and the
// mined affinity label.
struct PathPair {
  std::vector<int> path;
  bool positive = false;
};

// Reverse-mode tape. A fresh tape is built per training step; parameters are
// uploaded as leaves, the loss is assembled from the ops below, backward()
// fills leaf gradients. All ops validate shapes and throw ShapeError.
class Tape {
 public:
  Var leaf(const Tensor& value, bool requires_grad = false);
  Var leaf_scalar(double value);

  // --- structural ops -----------------------------------------------------
  // x: Cin x H x W, w: Cout x Cin x k x k, optional bias Cout.
  Var conv2d(Var x, Var w, Var b, int stride, int pad);
  Var relu(Var x);
  Var reshape(Var x, std::vector<int> shape);  // same numel
  Var add(Var a, Var b);       // same shape
  Var mul(Var a, Var b);       // elementwise
  Var scale(Var a, double k);
  Var sum(Var x);              // -> scalar
  Var gap(Var x);              // D x h x w -> D (spatial mean)
  Var matvec(Var w, Var v);    // (C x D) * (D) -> C
  Var class_maps(Var w, Var f);  // (C x D) x (D x h x w) -> C x h x w

  // Per-class: clamp negatives, then divide by max(per-class max, eps).
  // detach_max treats the denominator as a constant during backprop.
  Var cam_normalize(Var raw, double eps, bool detach_max);

  // align_corners=false bilinear resize of C x h x w to C x H x W.
  Var bilinear_upsample(Var x, int out_h, int out_w);

  // --- losses (scalar outputs) ---------------------------------------------
  // Multilabel soft margin over C logits against binary labels.
  Var multilabel_soft_margin(Var logits, const std::vector<uint8_t>& labels);

  // Mean squared error at the supervised points for one class: targets are 1
  // where the point's class matches class_id, else 0. points must be
  // nonempty and inside the map.
  Var point_mse_class(Var upsampled, const std::vector<corpus::PointAnnotation>& points,
                      int class_id);

  // Softmax cross entropy over K channels with 255 excluded; mean over
  // counted pixels, 0 if every pixel is ignored.
  Var softmax_xent_ignore(Var logits, const corpus::SegmentationMask& labels);

  // Class-balanced binary log-loss of path-product affinities against mined
  // pair labels, on a boundary logit map (h x w). Negative pairs with an
  // empty path have a constant (infinite) loss and no gradient; they are
  // skipped and do not enter the balance counts.
  Var boundary_pair_loss(Var boundary_logits, const std::vector<PathPair>& pairs);

  void backward(Var loss);

  const Tensor& value(Var v) const;
  // Gradient accumulated by the last backward(); zero tensor if the node was
  // not reached.
  Tensor grad(Var v) const;

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily during backward
    bool needs_grad = false;
    std::function<void(Tape&, int self)> back;
  };

  int push(Tensor val, bool needs_grad, std::function<void(Tape&, int)> back);
  Tensor& grad_buf(int id);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
};

// Numerically stable helpers shared with the plain-value loss functions.
double softplus(double x);
double sigmoid(double x);

// Value-path twins of the tape ops; the tape forwards call these, so the
// plain functions and the differentiated path cannot drift apart.
Tensor bilinear_resize_value(const Tensor& x, int out_h, int out_w);
Tensor cam_normalize_value(const Tensor& raw, double eps);

}  // namespace nn
}  // namespace pointseg
