#include "pointseg/eval.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "pointseg/common.hpp"

namespace pointseg {
namespace eval {

using corpus::SegmentationMask;

double IoUReport::mean_iou() const {
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c <= num_classes; ++c) {
    if (!has_class(c)) continue;
    sum += iou(c);
    ++counted;
  }
  return counted == 0 ? 0.0 : sum / counted;
}

IoUReport compute_iou(const std::vector<SegmentationMask>& predictions,
                      const std::vector<SegmentationMask>& ground_truth, int num_classes) {
  if (predictions.size() != ground_truth.size()) {
    throw DataError("compute_iou: prediction/ground-truth count mismatch (" +
                    std::to_string(predictions.size()) + " vs " +
                    std::to_string(ground_truth.size()) + ")");
  }
  IoUReport report;
  report.num_classes = num_classes;
  report.intersection.assign(static_cast<size_t>(num_classes) + 1, 0);
  report.union_count.assign(static_cast<size_t>(num_classes) + 1, 0);
  report.ignored.assign(static_cast<size_t>(num_classes) + 1, 0);

  for (size_t i = 0; i < predictions.size(); ++i) {
    const SegmentationMask& pred = predictions[i];
    const SegmentationMask& gt = ground_truth[i];
    if (pred.height != gt.height || pred.width != gt.width) {
      throw DataError("compute_iou: size mismatch at pair " + std::to_string(i) + " (" +
                      std::to_string(pred.width) + "x" + std::to_string(pred.height) + " vs " +
                      std::to_string(gt.width) + "x" + std::to_string(gt.height) + ")");
    }
    for (size_t px = 0; px < gt.labels.size(); ++px) {
      const uint8_t g = gt.labels[px];
      const uint8_t p = pred.labels[px];
      if (g == corpus::kIgnoreLabel) {
        if (p <= num_classes) report.ignored[p] += 1;
        continue;
      }
      if (g > num_classes) {
        throw DataError("compute_iou: ground-truth value " + std::to_string(g) + " out of range");
      }
      // a predicted ignore counts as "no prediction": union of the gt class only
      if (p == g) {
        report.intersection[g] += 1;
        report.union_count[g] += 1;
      } else {
        report.union_count[g] += 1;
        if (p <= num_classes) report.union_count[p] += 1;
      }
    }
  }
  return report;
}

namespace {

std::string format_iou(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

std::string emit_report(const std::vector<std::pair<std::string, IoUReport>>& rows,
                        const corpus::ClassCatalog& catalog, ReportFormat format) {
  if (rows.empty()) throw ConfigError("emit_report: no rows");
  const int C = catalog.count();
  for (const auto& [name, report] : rows) {
    if (report.num_classes != C) {
      throw DataError("emit_report: row '" + name + "' has " +
                      std::to_string(report.num_classes) + " classes, catalog has " +
                      std::to_string(C));
    }
  }

  std::ostringstream os;
  if (format == ReportFormat::kCsv) {
    os << "run,background";
    for (const auto& n : catalog.names) os << "," << n;
    os << ",miou\n";
    for (const auto& [name, report] : rows) {
      os << name;
      for (int c = 0; c <= C; ++c) {
        os << ",";
        if (report.has_class(c)) os << format_iou(report.iou(c));
      }
      os << "," << format_iou(report.mean_iou()) << "\n";
    }
  } else {
    os << "| run | background |";
    for (const auto& n : catalog.names) os << " " << n << " |";
    os << " mIoU |\n|---|---|";
    for (int c = 0; c < C; ++c) os << "---|";
    os << "---|\n";
    for (const auto& [name, report] : rows) {
      os << "| " << name << " |";
      for (int c = 0; c <= C; ++c) {
        if (report.has_class(c)) {
          os << " " << format_iou(report.iou(c)) << " |";
        } else {
          os << " - |";
        }
      }
      os << " " << format_iou(report.mean_iou()) << " |\n";
    }
  }
  return os.str();
}

std::vector<std::pair<std::string, std::vector<double>>> parse_report_csv(
    const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw DataError("parse_report_csv: empty input");
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string col;
    std::getline(ss, col, ',');
    std::pair<std::string, std::vector<double>> row{col, {}};
    while (std::getline(ss, col, ',')) {
      row.second.push_back(col.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : std::stod(col));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for write: " + path);
  os << text;
}

}  // namespace eval
}  // namespace pointseg
