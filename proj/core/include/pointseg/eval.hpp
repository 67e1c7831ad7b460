#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pointseg/corpus.hpp"

namespace pointseg {
namespace eval {

// Dataset-level IoU accumulation (VOC convention): intersections and unions
// are summed across all images before dividing. Index 0 is background,
// 1..C the catalog classes. Ground-truth ignore pixels are excluded from
// every count; `ignored` tallies how many such pixels each predicted class
// received.
struct IoUReport {
  int num_classes = 0;  // C, excluding background
  std::vector<int64_t> intersection;  // size C+1
  std::vector<int64_t> union_count;   // size C+1
  std::vector<int64_t> ignored;       // size C+1

  // IoU per class; classes with an empty union are skipped by mean_iou().
  double iou(int cls) const {
    return union_count[static_cast<size_t>(cls)] == 0
               ? 0.0
               : static_cast<double>(intersection[static_cast<size_t>(cls)]) /
                     static_cast<double>(union_count[static_cast<size_t>(cls)]);
  }
  bool has_class(int cls) const { return union_count[static_cast<size_t>(cls)] != 0; }
  double mean_iou() const;
};

IoUReport compute_iou(const std::vector<corpus::SegmentationMask>& predictions,
                      const std::vector<corpus::SegmentationMask>& ground_truth,
                      int num_classes);

enum class ReportFormat { kCsv, kMarkdown };

// One row per named run: background, per-class IoU in catalog order, mean.
// Classes absent from every run and dropped from the mean render as blanks.
std::string emit_report(const std::vector<std::pair<std::string, IoUReport>>& rows,
                        const corpus::ClassCatalog& catalog, ReportFormat format);

// Inverse of the CSV emitter, for round-trip checks and threshold gates.
// Values are NaN where the report had blanks.
std::vector<std::pair<std::string, std::vector<double>>> parse_report_csv(
    const std::string& text);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace eval
}  // namespace pointseg
