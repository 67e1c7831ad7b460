#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pointseg/image_io.hpp"
#include "pointseg/tensor.hpp"

namespace pointseg {
namespace corpus {

constexpr uint8_t kIgnoreLabel = 255;

// Ordered foreground class names. Background is mask value 0 and is not a
// member; class indices used in annotations are 1-based into this list.
struct ClassCatalog {
  std::vector<std::string> names;

  int count() const { return static_cast<int>(names.size()); }
  static ClassCatalog make_default(int num_classes);
  void validate() const;  // unique, nonempty names
};

struct PointAnnotation {
  int x = 0;  // column
  int y = 0;  // row
  int class_id = 0;  // in [1, C]

  bool operator==(const PointAnnotation&) const = default;
};

// Per-pixel labels: 0 background, 255 ignore, 1..C classes.
struct SegmentationMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> labels;

  SegmentationMask() = default;
  SegmentationMask(int h, int w, uint8_t fill = 0)
      : height(h), width(w), labels(static_cast<size_t>(h) * w, fill) {}

  uint8_t at(int y, int x) const { return labels[static_cast<size_t>(y) * width + x]; }
  uint8_t& at(int y, int x) { return labels[static_cast<size_t>(y) * width + x]; }

  bool operator==(const SegmentationMask&) const = default;
};

struct ImageSample {
  std::string image_id;
  Tensor pixels;  // 3 x H x W, values in [0, 1]
  std::vector<uint8_t> image_labels;  // length C, each 0/1
  std::vector<PointAnnotation> points;
  std::optional<SegmentationMask> gt_mask;

  int height() const { return pixels.dim(1); }
  int width() const { return pixels.dim(2); }
};

struct SynthSpec {
  int n_images = 200;
  int height = 64;
  int width = 64;
  int num_classes = 3;
  uint64_t seed = 0;
};

// Deterministic textured-shapes corpus. Every image holds 1-3 shapes of
// distinct classes on a noisy background; class identity is carried by a
// small class-specific textured patch inside an otherwise class-neutral
// shape fill, so image-level training localizes only part of each object.
// gt_mask is always populated and never contains the ignore value.
std::vector<ImageSample> generate_synthetic_dataset(const SynthSpec& spec);

// For each class present in the mask, min(per_class, available) points drawn
// uniformly without replacement from that class's pixels. All-background
// masks yield an empty list.
std::vector<PointAnnotation> sample_points_from_mask(const SegmentationMask& mask,
                                                     int per_class, uint64_t seed);

// Every foreground pixel as a point (full point supervision).
std::vector<PointAnnotation> all_foreground_points(const SegmentationMask& mask);

// Throws DataError on any violated sample invariant.
void validate_sample(const ImageSample& sample, int num_classes);

// ---------------------------------------------------------------------------
// On-disk formats

// Assembles a sample from an image file, an optional mask file and an
// optional points CSV (rows for other image_ids are skipped). image_labels
// come from the mask when present, else from the union of point classes.
ImageSample load_voc_sample(const std::string& image_path, const std::string& mask_path,
                            const std::string& points_path, int num_classes);

// 8-bit RGB <-> planar [0,1] doubles (3 x H x W).
Tensor planes_from_u8(const ImageU8& img);
ImageU8 u8_from_planes(const Tensor& planes);

// points CSV: header "image_id,x,y,class_id", one row per point.
std::map<std::string, std::vector<PointAnnotation>> read_points_csv(const std::string& path);
void write_points_csv(const std::string& path,
                      const std::map<std::string, std::vector<PointAnnotation>>& points);

// Split manifests: newline-separated image ids.
std::vector<std::string> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<std::string>& ids);

ClassCatalog read_catalog(const std::string& path);
void write_catalog(const std::string& path, const ClassCatalog& catalog);

// Dataset directory layout used by the pipeline:
//   <dir>/catalog.txt, images/<id>.png, masks/<id>.png, points.csv,
//   <split>.txt
void save_dataset(const std::string& dir, const std::vector<ImageSample>& train,
                  const std::vector<ImageSample>& val, const ClassCatalog& catalog);
std::vector<ImageSample> load_split(const std::string& dir, const std::string& split,
                                    int num_classes);

SegmentationMask read_mask(const std::string& path);
void write_mask(const std::string& path, const SegmentationMask& mask);

}  // namespace corpus
}  // namespace pointseg
