#pragma once

#include <vector>

#include "pointseg/corpus.hpp"
#include "pointseg/nets.hpp"

namespace pointseg {
namespace seg {

struct SegTrainConfig {
  double lr = 0.01;  // cosine-decayed; desk-scale default
  double weight_decay = 4e-5;
  double momentum = 0.9;  // Nesterov
  int epochs = 20;
  int crop = 64;  // random crop edge; must be divisible by the map stride
  bool flip = true;
  int batch_size = 8;
  uint64_t seed = 0;
};

// Trains the encoder-decoder on per-pixel cross entropy over C+1 channels
// (background is channel 0); pixels labeled 255 are excluded from the loss.
// masks[i] supervises images[i] and may be pseudo or ground truth labels.
// Returns the mean training loss per epoch.
std::vector<double> train_segmentation(nn::SegNet& net,
                                       const std::vector<corpus::ImageSample>& images,
                                       const std::vector<corpus::SegmentationMask>& masks,
                                       const SegTrainConfig& config);

// Single-pass argmax inference; outputs values in {0..C}.
corpus::SegmentationMask infer_segmentation(const nn::SegNet& net, const Tensor& pixels);

}  // namespace seg
}  // namespace pointseg
