#include "pointseg/affinity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pointseg/common.hpp"
#include "pointseg/rng.hpp"

namespace pointseg {
namespace affinity {

using corpus::SegmentationMask;

corpus::SegmentationMask mine_reliable_regions(const cam::ActivationStack& stack,
                                               double theta_fg, double theta_bg) {
  if (!(0.0 <= theta_bg && theta_bg <= theta_fg && theta_fg <= 1.0)) {
    throw ConfigError("mine_reliable_regions: need 0 <= theta_bg <= theta_fg <= 1");
  }
  const int C = stack.classes(), h = stack.height(), w = stack.width();
  SegmentationMask regions(h, w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double best = stack.maps.at(0, y, x);
      int best_c = 1;
      for (int c = 1; c < C; ++c) {
        const double v = stack.maps.at(c, y, x);
        if (v > best) {  // ties keep the lowest class index
          best = v;
          best_c = c + 1;
        }
      }
      if (best >= theta_fg) {
        regions.at(y, x) = static_cast<uint8_t>(best_c);
      } else if (best < theta_bg) {
        regions.at(y, x) = 0;
      } else {
        regions.at(y, x) = corpus::kIgnoreLabel;
      }
    }
  }
  return regions;
}

namespace {

// Half-plane neighborhood offsets within Euclidean radius: (dy > 0) or
// (dy == 0, dx > 0), so each unordered pair is visited once and the second
// endpoint has the larger linear index.
std::vector<std::pair<int, int>> half_offsets(double radius) {
  if (radius < 1.0) throw ConfigError("affinity radius must be >= 1");
  const int r = static_cast<int>(radius);
  std::vector<std::pair<int, int>> out;
  for (int dy = 0; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dy == 0 && dx <= 0) continue;
      if (dy * dy + dx * dx <= radius * radius) out.emplace_back(dy, dx);
    }
  }
  return out;
}

}  // namespace

std::vector<AffinityPair> mine_affinity_pairs(const SegmentationMask& regions, double radius) {
  const auto offsets = half_offsets(radius);
  const int h = regions.height, w = regions.width;
  std::vector<AffinityPair> pairs;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const uint8_t li = regions.at(y, x);
      if (li == corpus::kIgnoreLabel) continue;
      for (const auto& [dy, dx] : offsets) {
        const int ny = y + dy, nx = x + dx;
        if (ny >= h || nx < 0 || nx >= w) continue;
        const uint8_t lj = regions.at(ny, nx);
        if (lj == corpus::kIgnoreLabel) continue;
        pairs.push_back({y * w + x, ny * w + nx, li == lj});
      }
    }
  }
  return pairs;
}

std::vector<int> line_between(int i, int j, int width) {
  if (i == j) return {};
  if (i > j) std::swap(i, j);  // canonical direction: same set for both orders
  int x0 = i % width, y0 = i / width;
  const int x1 = j % width, y1 = j / width;
  const int dx = std::abs(x1 - x0), dy = std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx - dy;
  std::vector<int> path;
  for (;;) {
    const int e2 = 2 * err;
    if (e2 > -dy) {
      err -= dy;
      x0 += sx;
    }
    if (e2 < dx) {
      err += dx;
      y0 += sy;
    }
    if (x0 == x1 && y0 == y1) break;
    path.push_back(y0 * width + x0);
  }
  return path;
}

// ---------------------------------------------------------------------------

std::vector<double> SparseMatrix::multiply(const std::vector<double>& v) const {
  if (static_cast<int>(v.size()) != n) throw ShapeError("SparseMatrix::multiply: size mismatch");
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  for (int r = 0; r < n; ++r) {
    double s = 0.0;
    for (int k = row_ptr[static_cast<size_t>(r)]; k < row_ptr[static_cast<size_t>(r) + 1]; ++k) {
      s += val[static_cast<size_t>(k)] * v[static_cast<size_t>(col[static_cast<size_t>(k)])];
    }
    out[static_cast<size_t>(r)] = s;
  }
  return out;
}

double SparseMatrix::at(int r, int c) const {
  for (int k = row_ptr[static_cast<size_t>(r)]; k < row_ptr[static_cast<size_t>(r) + 1]; ++k) {
    if (col[static_cast<size_t>(k)] == c) return val[static_cast<size_t>(k)];
  }
  return 0.0;
}

Tensor SparseMatrix::dense() const {
  Tensor out({n, n});
  for (int r = 0; r < n; ++r) {
    for (int k = row_ptr[static_cast<size_t>(r)]; k < row_ptr[static_cast<size_t>(r) + 1]; ++k) {
      out.at(r, col[static_cast<size_t>(k)]) = val[static_cast<size_t>(k)];
    }
  }
  return out;
}

SparseMatrix synthesize_affinity(const Tensor& boundary, double radius) {
  if (boundary.rank() != 2) throw ShapeError("synthesize_affinity: boundary must be hxw");
  for (double b : boundary.vec()) {
    if (b < 0.0 || b > 1.0) throw ConfigError("synthesize_affinity: boundary scores outside [0,1]");
  }
  const int h = boundary.dim(0), w = boundary.dim(1);
  const int n = h * w;
  const auto offsets = half_offsets(radius);

  // collect per-row entries; neighbors plus the unit diagonal
  std::vector<std::vector<std::pair<int, double>>> rows(static_cast<size_t>(n));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      rows[static_cast<size_t>(i)].emplace_back(i, 1.0);
      for (const auto& [dy, dx] : offsets) {
        const int ny = y + dy, nx = x + dx;
        if (ny >= h || nx < 0 || nx >= w) continue;
        const int j = ny * w + nx;
        double a = 1.0;
        for (int p : line_between(i, j, w)) a *= 1.0 - boundary[p];
        rows[static_cast<size_t>(i)].emplace_back(j, a);
        rows[static_cast<size_t>(j)].emplace_back(i, a);
      }
    }
  }

  SparseMatrix m;
  m.n = n;
  m.row_ptr.assign(static_cast<size_t>(n) + 1, 0);
  size_t nnz = 0;
  for (const auto& r : rows) nnz += r.size();
  m.col.reserve(nnz);
  m.val.reserve(nnz);
  for (int r = 0; r < n; ++r) {
    auto& entries = rows[static_cast<size_t>(r)];
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [c, v] : entries) {
      m.col.push_back(c);
      m.val.push_back(v);
    }
    m.row_ptr[static_cast<size_t>(r) + 1] = static_cast<int>(m.col.size());
  }
  return m;
}

TransitionMatrix build_transition_matrix(const SparseMatrix& a, double beta) {
  if (beta < 1.0) throw ConfigError("build_transition_matrix: beta must be >= 1");
  TransitionMatrix t;
  t.beta = beta;
  t.matrix = a;
  for (int r = 0; r < a.n; ++r) {
    double row_sum = 0.0;
    for (int k = a.row_ptr[static_cast<size_t>(r)]; k < a.row_ptr[static_cast<size_t>(r) + 1];
         ++k) {
      const double powered = std::pow(a.val[static_cast<size_t>(k)], beta);
      t.matrix.val[static_cast<size_t>(k)] = powered;
      row_sum += powered;
    }
    for (int k = a.row_ptr[static_cast<size_t>(r)]; k < a.row_ptr[static_cast<size_t>(r) + 1];
         ++k) {
      t.matrix.val[static_cast<size_t>(k)] /= row_sum;  // diagonal 1 keeps row_sum >= 1
    }
  }
  return t;
}

// ---------------------------------------------------------------------------

namespace {

void walk_inplace(std::vector<double>& v, const SparseMatrix& t, int iterations) {
  for (int it = 0; it < iterations; ++it) v = t.multiply(v);
}

void renormalize_max(double* data, int n, double eps) {
  double m = 0.0;
  for (int i = 0; i < n; ++i) m = std::max(m, data[i]);
  const double dn = std::max(m, eps);
  for (int i = 0; i < n; ++i) data[i] /= dn;
}

}  // namespace

cam::ActivationStack random_walk_refine(const cam::ActivationStack& stack,
                                        const TransitionMatrix& transition, int iterations,
                                        double eps) {
  if (iterations < 0) throw ConfigError("random_walk_refine: iterations must be >= 0");
  const int C = stack.classes(), n = stack.height() * stack.width();
  if (transition.matrix.n != n) {
    throw ShapeError("random_walk_refine: transition size " + std::to_string(transition.matrix.n) +
                     " != map pixels " + std::to_string(n));
  }
  cam::ActivationStack out{Tensor(stack.maps.shape()), stack.at_image_resolution};
  for (int c = 0; c < C; ++c) {
    std::vector<double> v(stack.maps.data() + static_cast<size_t>(c) * n,
                          stack.maps.data() + static_cast<size_t>(c + 1) * n);
    walk_inplace(v, transition.matrix, iterations);
    std::copy(v.begin(), v.end(), out.maps.data() + static_cast<size_t>(c) * n);
    renormalize_max(out.maps.data() + static_cast<size_t>(c) * n, n, eps);
  }
  return out;
}

Tensor background_map(const cam::ActivationStack& stack, double gamma) {
  const int C = stack.classes(), h = stack.height(), w = stack.width();
  Tensor bg({h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double m = 0.0;
      for (int c = 0; c < C; ++c) m = std::max(m, stack.maps.at(c, y, x));
      bg.at(y, x) = std::pow(1.0 - m, gamma);
    }
  }
  return bg;
}

RefineResult random_walk_refine_with_background(const cam::ActivationStack& stack,
                                                const TransitionMatrix& transition,
                                                int iterations, double gamma, double eps) {
  RefineResult result;
  result.stack = random_walk_refine(stack, transition, iterations, eps);
  Tensor bg = background_map(stack, gamma);
  const int n = stack.height() * stack.width();
  std::vector<double> v(bg.data(), bg.data() + n);
  walk_inplace(v, transition.matrix, iterations);
  std::copy(v.begin(), v.end(), bg.data());
  renormalize_max(bg.data(), n, eps);
  result.background = std::move(bg);
  return result;
}

corpus::SegmentationMask generate_pseudo_labels(const cam::ActivationStack& stack,
                                                double theta_seg, const Tensor* background,
                                                double theta_ignore_lo) {
  if (theta_seg < 0.0 || theta_seg > 1.0) {
    throw ConfigError("generate_pseudo_labels: theta_seg must be in [0,1]");
  }
  const int C = stack.classes(), h = stack.height(), w = stack.width();
  if (background && (background->dim(0) != h || background->dim(1) != w)) {
    throw ShapeError("generate_pseudo_labels: background map size mismatch");
  }
  SegmentationMask mask(h, w, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double best = stack.maps.at(0, y, x);
      int best_c = 1;
      for (int c = 1; c < C; ++c) {
        const double v = stack.maps.at(c, y, x);
        if (v > best) {
          best = v;
          best_c = c + 1;
        }
      }
      if (background && background->at(y, x) > best) {
        mask.at(y, x) = 0;
      } else if (best >= theta_seg) {
        mask.at(y, x) = static_cast<uint8_t>(best_c);
      } else if (theta_ignore_lo >= 0.0 && best >= theta_ignore_lo) {
        mask.at(y, x) = corpus::kIgnoreLabel;
      } else {
        mask.at(y, x) = 0;
      }
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------

nn::BoundaryHead train_boundary_net(const nn::Backbone& frozen_backbone,
                                    const std::vector<corpus::ImageSample>& images,
                                    const std::vector<std::vector<AffinityPair>>& pair_sets,
                                    int map_width, const BoundaryTrainConfig& config) {
  if (images.size() != pair_sets.size()) {
    throw ShapeError("train_boundary_net: images/pair_sets length mismatch");
  }
  int64_t total_pos = 0, total_neg = 0;
  for (const auto& ps : pair_sets) {
    for (const auto& p : ps) (p.positive ? total_pos : total_neg) += 1;
  }
  if (total_pos == 0 || total_neg == 0) {
    throw TrainingError("train_boundary_net: unlearnable pair balance (" +
                        std::to_string(total_pos) + " positive, " + std::to_string(total_neg) +
                        " negative)");
  }

  // frozen features; the head alone trains
  std::vector<Tensor> features;
  features.reserve(images.size());
  for (const auto& img : images) {
    features.push_back(nn::eval_features(frozen_backbone, img.pixels));
  }

  // paths are fixed per pair; precompute
  std::vector<std::vector<nn::PathPair>> path_pairs(pair_sets.size());
  for (size_t i = 0; i < pair_sets.size(); ++i) {
    path_pairs[i].reserve(pair_sets[i].size());
    for (const auto& p : pair_sets[i]) {
      path_pairs[i].push_back({line_between(p.i, p.j, map_width), p.positive});
    }
  }

  nn::BoundaryHead head = nn::make_boundary_head(frozen_backbone.cfg.feature_dim(), config.hidden,
                                                 Rng::derive_seed(config.seed, "bhead"));
  auto params = nn::collect_params(head);
  nn::Sgd opt({config.lr, config.momentum, config.weight_decay, false});
  Rng rng(Rng::derive_seed(config.seed, "boundary_shuffle"));

  std::vector<size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0u);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t oi : order) {
      auto& pairs = path_pairs[oi];
      if (pairs.empty()) continue;
      std::vector<nn::PathPair> step_pairs;
      if (static_cast<int>(pairs.size()) > config.pairs_per_image) {
        // deterministic partial shuffle, then take the cap
        for (int k = 0; k < config.pairs_per_image; ++k) {
          const int j =
              static_cast<int>(rng.next_int(k, static_cast<int64_t>(pairs.size()) - 1));
          std::swap(pairs[static_cast<size_t>(k)], pairs[static_cast<size_t>(j)]);
        }
        step_pairs.assign(pairs.begin(), pairs.begin() + config.pairs_per_image);
      } else {
        step_pairs = pairs;
      }
      nn::Tape tape;
      const nn::Uploaded vars = nn::upload(tape, params, true);
      const nn::Var feats = tape.leaf(features[oi]);
      const nn::Var logits = nn::forward_boundary_logits(tape, head, vars, feats);
      const nn::Var loss = tape.boundary_pair_loss(logits, step_pairs);
      nn::gradient_step(tape, loss, params, vars, opt,
                        "boundary epoch " + std::to_string(epoch) + " image " +
                            images[oi].image_id);
    }
  }
  return head;
}

Tensor predict_boundary_map(const nn::Backbone& backbone, const nn::BoundaryHead& head,
                            const corpus::ImageSample& sample) {
  return nn::eval_boundary_map(backbone, head, sample.pixels);
}

}  // namespace affinity
}  // namespace pointseg
