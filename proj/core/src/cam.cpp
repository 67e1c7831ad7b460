#include "pointseg/cam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pointseg/archive.hpp"
#include "pointseg/common.hpp"
#include "pointseg/rng.hpp"

namespace pointseg {
namespace cam {

using corpus::ImageSample;
using corpus::PointAnnotation;

double loss_image(const Tensor& logits, const std::vector<uint8_t>& labels) {
  if (logits.rank() != 1 || static_cast<size_t>(logits.dim(0)) != labels.size()) {
    throw ShapeError("loss_image: logits/labels length mismatch");
  }
  const int C = logits.dim(0);
  double loss = 0.0;
  for (int c = 0; c < C; ++c) {
    loss += labels[static_cast<size_t>(c)] ? nn::softplus(-logits[c]) : nn::softplus(logits[c]);
  }
  return loss / C;
}

ActivationStack compute_cam(const Tensor& features, const nn::ClassifierHead& head, double eps) {
  if (features.rank() != 3 || features.dim(0) != head.weight.dim(1)) {
    throw ShapeError("compute_cam: features " + features.shape_str() + " vs head " +
                     head.weight.shape_str());
  }
  const int C = head.weight.dim(0), D = head.weight.dim(1);
  const int h = features.dim(1), w = features.dim(2);
  Tensor raw({C, h, w});
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int d = 0; d < D; ++d) s += head.weight.at(c, d) * features.at(d, y, x);
        raw.at(c, y, x) = s;
      }
    }
  }
  return {nn::cam_normalize_value(raw, eps), false};
}

ActivationStack upsample_bilinear(const ActivationStack& stack, int out_h, int out_w) {
  return {nn::bilinear_resize_value(stack.maps, out_h, out_w), true};
}

double loss_point_class(const ActivationStack& upsampled,
                        const std::vector<PointAnnotation>& points, int class_id) {
  if (points.empty()) {
    log_warn("loss_point_class: no supervised points, contributing 0");
    return 0.0;
  }
  const Tensor& u = upsampled.maps;
  if (class_id < 1 || class_id > u.dim(0)) throw ShapeError("loss_point_class: class out of range");
  double loss = 0.0;
  for (const auto& p : points) {
    const double target = (p.class_id == class_id) ? 1.0 : 0.0;
    const double diff = u.at(class_id - 1, p.y, p.x) - target;
    loss += diff * diff;
  }
  return loss / static_cast<double>(points.size());
}

double loss_point(const ActivationStack& upsampled, const std::vector<PointAnnotation>& points,
                  const std::vector<uint8_t>& labels) {
  std::vector<int> present;
  for (size_t c = 0; c < labels.size(); ++c) {
    if (labels[c]) present.push_back(static_cast<int>(c) + 1);
  }
  if (present.empty()) {
    log_warn("loss_point: image has no foreground classes, contributing 0");
    return 0.0;
  }
  double loss = 0.0;
  for (int c : present) loss += loss_point_class(upsampled, points, c);
  return loss / static_cast<double>(present.size());
}

double loss_total(double image_loss, double point_loss, double alpha) {
  if (alpha < 0.0) throw ConfigError("loss_total: alpha must be >= 0");
  return image_loss + alpha * point_loss;
}

// ---------------------------------------------------------------------------

Supervision supervision_from_string(const std::string& s) {
  if (s == "image_only") return Supervision::kImageOnly;
  if (s == "points") return Supervision::kPoints;
  if (s == "all_points") return Supervision::kAllPoints;
  throw ConfigError("unknown supervision mode '" + s +
                    "' (expected image_only|points|all_points)");
}

std::string to_string(Supervision mode) {
  switch (mode) {
    case Supervision::kImageOnly: return "image_only";
    case Supervision::kPoints: return "points";
    case Supervision::kAllPoints: return "all_points";
  }
  return "?";
}

PcamModel make_pcam_model(const nn::BackboneConfig& cfg, int num_classes, uint64_t seed) {
  PcamModel m;
  m.backbone = nn::make_backbone(cfg, seed);
  m.head = nn::make_head(num_classes, cfg.feature_dim(), seed);
  m.num_classes = num_classes;
  return m;
}

namespace {

std::vector<nn::NamedParam> pcam_params(PcamModel& model, double head_lr_scale) {
  auto params = nn::collect_params(model.backbone);
  auto head = nn::collect_params(model.head);
  for (auto& p : head) p.lr_scale = head_lr_scale;
  params.insert(params.end(), head.begin(), head.end());
  return params;
}

}  // namespace

std::vector<EpochStats> train_pcam(PcamModel& model, const std::vector<ImageSample>& dataset,
                                   const PcamTrainConfig& config) {
  if (dataset.empty()) throw TrainingError("train_pcam: empty dataset");
  if (config.mode == Supervision::kAllPoints) {
    for (const auto& s : dataset) {
      if (!s.gt_mask) {
        throw TrainingError("train_pcam: all_points mode needs gt_mask (image " + s.image_id +
                            ")");
      }
    }
  }

  const double head_scale = config.lr_head / config.lr_backbone;
  auto params = pcam_params(model, head_scale);
  const size_t head_index = params.size() - 1;  // head.W appended last
  nn::Sgd opt({config.lr_backbone, config.momentum, config.weight_decay, false});

  // all_points targets are fixed per image; precompute
  std::vector<std::vector<PointAnnotation>> point_sets(dataset.size());
  for (size_t i = 0; i < dataset.size(); ++i) {
    point_sets[i] = (config.mode == Supervision::kAllPoints)
                        ? corpus::all_foreground_points(*dataset[i].gt_mask)
                        : dataset[i].points;
  }

  const bool use_point_loss = config.mode != Supervision::kImageOnly && config.alpha > 0.0;
  Rng shuffle_rng(Rng::derive_seed(config.seed, "pcam_shuffle"));
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0u);

  std::vector<EpochStats> history;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double sum_li = 0.0, sum_lp = 0.0, sum_total = 0.0;
    int steps = 0;

    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const size_t end = std::min(order.size(), start + config.batch_size);
      nn::Tape tape;
      const nn::Uploaded vars = nn::upload(tape, params, true);
      const nn::Var head_leaf = vars.leaves[head_index];

      nn::Var batch_loss{};
      double batch_li = 0.0, batch_lp = 0.0;
      std::string batch_ids;
      for (size_t bi = start; bi < end; ++bi) {
        const ImageSample& sample = dataset[order[bi]];
        batch_ids += (batch_ids.empty() ? "" : ",") + sample.image_id;
        const nn::Var img = tape.leaf(sample.pixels);
        const nn::Var feats = nn::forward_features(tape, model.backbone, vars, img);
        const nn::Var logits = nn::classify_gap(tape, feats, head_leaf);
        const nn::Var li = tape.multilabel_soft_margin(logits, sample.image_labels);
        batch_li += tape.value(li).value();

        nn::Var contrib = li;
        if (use_point_loss) {
          std::vector<int> present;
          for (size_t c = 0; c < sample.image_labels.size(); ++c) {
            if (sample.image_labels[c]) present.push_back(static_cast<int>(c) + 1);
          }
          const auto& pts = point_sets[order[bi]];
          if (!present.empty() && !pts.empty()) {
            const nn::Var raw = tape.class_maps(head_leaf, feats);
            const nn::Var maps = tape.cam_normalize(raw, config.cam_eps, config.detach_cam_max);
            const nn::Var up =
                tape.bilinear_upsample(maps, sample.height(), sample.width());
            nn::Var lp{};
            for (int c : present) {
              const nn::Var lc = tape.point_mse_class(up, pts, c);
              lp = lp.valid() ? tape.add(lp, lc) : lc;
            }
            lp = tape.scale(lp, 1.0 / static_cast<double>(present.size()));
            batch_lp += tape.value(lp).value();
            contrib = tape.add(li, tape.scale(lp, config.alpha));
          } else {
            log_warn("train_pcam: image " + sample.image_id +
                     " has no points/foreground, using image loss only");
          }
        }
        batch_loss = batch_loss.valid() ? tape.add(batch_loss, contrib) : contrib;
      }

      const double inv = 1.0 / static_cast<double>(end - start);
      const nn::Var loss = tape.scale(batch_loss, inv);
      nn::gradient_step(tape, loss, params, vars, opt,
                        "epoch " + std::to_string(epoch) + " batch [" + batch_ids + "]");
      sum_li += batch_li * inv;
      sum_lp += batch_lp * inv;
      sum_total += tape.value(loss).value();
      ++steps;
    }

    history.push_back({epoch, sum_li / steps, sum_lp / steps, sum_total / steps});
  }
  return history;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<uint8_t> active_classes(const PcamModel& model, const ImageSample& sample,
                                    const Tensor& logits, bool use_known_labels) {
  std::vector<uint8_t> active(static_cast<size_t>(model.num_classes), 0);
  if (use_known_labels) {
    for (size_t c = 0; c < sample.image_labels.size(); ++c) active[c] = sample.image_labels[c];
  } else {
    for (int c = 0; c < model.num_classes; ++c) active[c] = nn::sigmoid(logits[c]) >= 0.5;
  }
  return active;
}

void mask_stack(ActivationStack& stack, const std::vector<uint8_t>& active) {
  const int n = stack.height() * stack.width();
  for (int c = 0; c < stack.classes(); ++c) {
    if (active[static_cast<size_t>(c)]) continue;
    double* m = stack.maps.data() + static_cast<size_t>(c) * n;
    std::fill(m, m + n, 0.0);
  }
}

}  // namespace

ActivationStack infer_pcam_map_res(const PcamModel& model, const ImageSample& sample,
                                   bool use_known_labels, double eps, Tensor* logits_out) {
  const Tensor feats = nn::eval_features(model.backbone, sample.pixels);
  Tensor logits({model.num_classes});
  {
    const int D = feats.dim(0), n = feats.dim(1) * feats.dim(2);
    std::vector<double> pooled(static_cast<size_t>(D), 0.0);
    for (int d = 0; d < D; ++d) {
      const double* row = feats.data() + static_cast<size_t>(d) * n;
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += row[i];
      pooled[static_cast<size_t>(d)] = s / n;
    }
    for (int c = 0; c < model.num_classes; ++c) {
      double s = 0.0;
      for (int d = 0; d < D; ++d) s += model.head.weight.at(c, d) * pooled[static_cast<size_t>(d)];
      logits[c] = s;
    }
  }
  ActivationStack stack = compute_cam(feats, model.head, eps);
  mask_stack(stack, active_classes(model, sample, logits, use_known_labels));
  if (logits_out) *logits_out = logits;
  return stack;
}

ActivationStack infer_pcam(const PcamModel& model, const ImageSample& sample,
                           bool use_known_labels, double eps, Tensor* logits_out) {
  ActivationStack map_res = infer_pcam_map_res(model, sample, use_known_labels, eps, logits_out);
  return upsample_bilinear(map_res, sample.height(), sample.width());
}

// ---------------------------------------------------------------------------

void save_pcam_model(const std::string& path, PcamModel& model, const std::string& metadata) {
  nn::save_params(path, pcam_params(model, 1.0), metadata);
}

PcamModel load_pcam_model(const std::string& path, const nn::BackboneConfig& cfg,
                          int num_classes) {
  PcamModel model = make_pcam_model(cfg, num_classes, 0);
  nn::load_params(path, pcam_params(model, 1.0));
  return model;
}

void save_cam_dump(const std::string& path, const corpus::ClassCatalog& catalog,
                   const ActivationStack& image_res, const ActivationStack& map_res,
                   const Tensor& logits, const std::string& image_id) {
  Archive ar;
  std::ostringstream meta;
  meta << "{\"image_id\":\"" << image_id << "\",\"classes\":" << catalog.count() << "}";
  ar.metadata = meta.str();
  const int C = catalog.count();
  auto slice = [](const Tensor& maps, int c) {
    Tensor t({maps.dim(1), maps.dim(2)});
    const int n = maps.dim(1) * maps.dim(2);
    std::copy(maps.data() + static_cast<size_t>(c) * n,
              maps.data() + static_cast<size_t>(c + 1) * n, t.data());
    return t;
  };
  for (int c = 0; c < C; ++c) {
    ar.entries.emplace_back("map/" + catalog.names[static_cast<size_t>(c)],
                            slice(image_res.maps, c));
  }
  for (int c = 0; c < C; ++c) {
    ar.entries.emplace_back("mapres/" + catalog.names[static_cast<size_t>(c)],
                            slice(map_res.maps, c));
  }
  ar.entries.emplace_back("logits", logits);
  save_archive(path, ar);
}

CamDump load_cam_dump(const std::string& path, const corpus::ClassCatalog& catalog) {
  const Archive ar = load_archive(path);
  CamDump dump;
  dump.metadata = ar.metadata;
  const int C = catalog.count();
  auto gather = [&](const std::string& prefix) {
    const Tensor& first = ar.require(prefix + "/" + catalog.names[0]);
    Tensor maps({C, first.dim(0), first.dim(1)});
    const int n = first.dim(0) * first.dim(1);
    for (int c = 0; c < C; ++c) {
      const Tensor& m = ar.require(prefix + "/" + catalog.names[static_cast<size_t>(c)]);
      if (m.dim(0) != first.dim(0) || m.dim(1) != first.dim(1)) {
        throw DataError(path + ": inconsistent map sizes");
      }
      std::copy(m.data(), m.data() + n, maps.data() + static_cast<size_t>(c) * n);
    }
    return maps;
  };
  dump.image_res = {gather("map"), true};
  dump.map_res = {gather("mapres"), false};
  dump.logits = ar.require("logits");
  return dump;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for write: " + path);
  os << "epoch,mean_loss_image,mean_loss_point,mean_loss_total\n";
  os.precision(10);
  for (const auto& e : history) {
    os << e.epoch << "," << e.mean_loss_image << "," << e.mean_loss_point << ","
       << e.mean_loss_total << "\n";
  }
}

}  // namespace cam
}  // namespace pointseg
