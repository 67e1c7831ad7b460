#pragma once

#include <cstdint>
#include <vector>

#include "pointseg/cam.hpp"
#include "pointseg/corpus.hpp"
#include "pointseg/nets.hpp"
#include "pointseg/tensor.hpp"

namespace pointseg {
namespace affinity {

// A mined pixel-pair label at map resolution; i and j are linear indices
// (y * w + x) with i < j, within Euclidean distance `radius` of each other.
struct AffinityPair {
  int i = 0;
  int j = 0;
  bool positive = false;

  bool operator==(const AffinityPair&) const = default;
};

// Reliable-region labels from thresholded activation maps: per pixel the
// argmax class where max activation >= theta_fg (ties to the lowest class
// index), background where it is < theta_bg, ignore in between.
corpus::SegmentationMask mine_reliable_regions(const cam::ActivationStack& stack,
                                               double theta_fg, double theta_bg);

// All unordered non-ignore pairs within the radius: positive when labels
// match, negative otherwise. Deterministic scan order.
std::vector<AffinityPair> mine_affinity_pairs(const corpus::SegmentationMask& regions,
                                              double radius);

// Bresenham pixels strictly between two cells of a w-wide grid, as linear
// indices. The walk direction is canonicalized so both endpoint orders yield
// the same pixel set.
std::vector<int> line_between(int i, int j, int width);

// ---------------------------------------------------------------------------
// Sparse matrices over map pixels

// Minimal CSR matrix; rows are padded in index order. Deterministic
// sequential multiply.
struct SparseMatrix {
  int n = 0;
  std::vector<int> row_ptr;  // n+1
  std::vector<int> col;
  std::vector<double> val;

  std::vector<double> multiply(const std::vector<double>& v) const;
  double at(int r, int c) const;  // 0 when not stored
  Tensor dense() const;           // for small-case oracles
};

// Pairwise affinities from a boundary map (h x w, values in [0,1]):
// A_ij = product of (1 - b) over the line pixels strictly between i and j
// for dist <= radius, A_ii = 1. Symmetric by construction.
SparseMatrix synthesize_affinity(const Tensor& boundary, double radius);

// Row-stochastic random-walk transition matrix T = D^-1 A^(elementwise beta).
struct TransitionMatrix {
  SparseMatrix matrix;
  double beta = 1.0;
};

TransitionMatrix build_transition_matrix(const SparseMatrix& a, double beta);

// ---------------------------------------------------------------------------
// Refinement

// t sparse multiplications per class map, then per-class max renormalization
// (eps-guarded). Class maps that are identically zero stay zero.
cam::ActivationStack random_walk_refine(const cam::ActivationStack& stack,
                                        const TransitionMatrix& transition, int iterations,
                                        double eps = cam::kCamEps);

// Background competitor for the walk: (1 - max_c M_c)^gamma.
Tensor background_map(const cam::ActivationStack& stack, double gamma = 1.0);

struct RefineResult {
  cam::ActivationStack stack;
  Tensor background;  // walked and renormalized alongside the class maps
};

RefineResult random_walk_refine_with_background(const cam::ActivationStack& stack,
                                                const TransitionMatrix& transition,
                                                int iterations, double gamma = 1.0,
                                                double eps = cam::kCamEps);

// Pseudo segmentation labels from image-resolution maps: argmax class where
// the max activation clears theta_seg, else background; ties to the lowest
// class index. When a background map is supplied it competes in the argmax.
// An optional band [theta_ignore_lo, theta_seg) maps to the ignore label
// (disabled when negative).
corpus::SegmentationMask generate_pseudo_labels(const cam::ActivationStack& stack,
                                                double theta_seg,
                                                const Tensor* background = nullptr,
                                                double theta_ignore_lo = -1.0);

// ---------------------------------------------------------------------------
// Boundary-map training

struct BoundaryTrainConfig {
  int epochs = 10;
  int pairs_per_image = 4096;  // per-step subsample cap
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int hidden = 32;
  uint64_t seed = 0;
};

// Trains a small conv head on frozen backbone features to predict per-pixel
// boundary scores, supervised by the mined pairs through path-product
// affinities (class-balanced log loss). Throws TrainingError when the pair
// sets are all-positive or all-negative.
nn::BoundaryHead train_boundary_net(const nn::Backbone& frozen_backbone,
                                    const std::vector<corpus::ImageSample>& images,
                                    const std::vector<std::vector<AffinityPair>>& pair_sets,
                                    int map_width, const BoundaryTrainConfig& config);

// sigma(head logits) over frozen features, h x w in [0,1].
Tensor predict_boundary_map(const nn::Backbone& backbone, const nn::BoundaryHead& head,
                            const corpus::ImageSample& sample);

}  // namespace affinity
}  // namespace pointseg
