#include "pointseg/seg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pointseg/common.hpp"
#include "pointseg/rng.hpp"

namespace pointseg {
namespace seg {

using corpus::ImageSample;
using corpus::SegmentationMask;

namespace {

struct Crop {
  Tensor pixels;
  SegmentationMask mask;
};

Crop make_crop(const ImageSample& sample, const SegmentationMask& mask, int crop, bool flip,
               Rng& rng) {
  const int H = sample.height(), W = sample.width();
  const int ch = std::min(crop, H), cw = std::min(crop, W);
  const int oy = (H > ch) ? static_cast<int>(rng.next_int(0, H - ch)) : 0;
  const int ox = (W > cw) ? static_cast<int>(rng.next_int(0, W - cw)) : 0;
  const bool do_flip = flip && rng.next_double() < 0.5;

  Crop out{Tensor({3, ch, cw}), SegmentationMask(ch, cw)};
  for (int y = 0; y < ch; ++y) {
    for (int x = 0; x < cw; ++x) {
      const int sx = ox + (do_flip ? cw - 1 - x : x);
      for (int c = 0; c < 3; ++c) out.pixels.at(c, y, x) = sample.pixels.at(c, oy + y, sx);
      out.mask.at(y, x) = mask.at(oy + y, sx);
    }
  }
  return out;
}

}  // namespace

std::vector<double> train_segmentation(nn::SegNet& net, const std::vector<ImageSample>& images,
                                       const std::vector<SegmentationMask>& masks,
                                       const SegTrainConfig& config) {
  if (images.empty()) throw TrainingError("train_segmentation: empty dataset");
  if (images.size() != masks.size()) {
    throw TrainingError("train_segmentation: images/masks length mismatch");
  }
  const int stride = net.encoder.cfg.downsample_factor();
  if (config.crop % stride != 0) {
    throw ConfigError("train_segmentation: crop must be divisible by " + std::to_string(stride));
  }
  for (size_t i = 0; i < images.size(); ++i) {
    if (masks[i].height != images[i].height() || masks[i].width != images[i].width()) {
      throw DataError("train_segmentation: mask size mismatch for image " + images[i].image_id);
    }
  }

  auto params = nn::collect_params(net);
  nn::Sgd opt({config.lr, config.momentum, config.weight_decay, /*nesterov=*/true});
  Rng rng(Rng::derive_seed(config.seed, "seg_shuffle"));

  std::vector<size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0u);
  std::vector<double> epoch_losses;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // cosine decay over epochs
    opt.set_lr(config.lr * 0.5 * (1.0 + std::cos(M_PI * epoch / std::max(1, config.epochs))));
    rng.shuffle(order);
    double loss_sum = 0.0;
    int steps = 0;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const size_t end = std::min(order.size(), start + config.batch_size);
      nn::Tape tape;
      const nn::Uploaded vars = nn::upload(tape, params, true);
      nn::Var batch_loss{};
      std::string ids;
      for (size_t bi = start; bi < end; ++bi) {
        const size_t idx = order[bi];
        ids += (ids.empty() ? "" : ",") + images[idx].image_id;
        Crop crop = make_crop(images[idx], masks[idx], config.crop, config.flip, rng);
        const nn::Var img = tape.leaf(crop.pixels);
        const nn::Var logits = nn::forward_seg_logits(tape, net, vars, img);
        const nn::Var li = tape.softmax_xent_ignore(logits, crop.mask);
        batch_loss = batch_loss.valid() ? tape.add(batch_loss, li) : li;
      }
      const nn::Var loss = tape.scale(batch_loss, 1.0 / static_cast<double>(end - start));
      nn::gradient_step(tape, loss, params, vars, opt,
                        "seg epoch " + std::to_string(epoch) + " batch [" + ids + "]");
      loss_sum += tape.value(loss).value();
      ++steps;
    }
    epoch_losses.push_back(loss_sum / steps);
  }
  return epoch_losses;
}

SegmentationMask infer_segmentation(const nn::SegNet& net, const Tensor& pixels) {
  const Tensor logits = nn::eval_seg_logits(net, pixels);
  const int K = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
  SegmentationMask mask(H, W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      int best_k = 0;
      double best = logits.at(0, y, x);
      for (int k = 1; k < K; ++k) {
        const double v = logits.at(k, y, x);
        if (v > best) {
          best = v;
          best_k = k;
        }
      }
      mask.at(y, x) = static_cast<uint8_t>(best_k);
    }
  }
  return mask;
}

}  // namespace seg
}  // namespace pointseg
