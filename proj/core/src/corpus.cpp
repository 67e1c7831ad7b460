#include "pointseg/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pointseg/common.hpp"
#include "pointseg/rng.hpp"

namespace fs = std::filesystem;

namespace pointseg {
namespace corpus {

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Strong hue palette for the class-identifying patches; repeats are avoided
// for C <= 8.
struct Rgb {
  double r, g, b;
};
constexpr Rgb kClassHues[8] = {
    {0.85, 0.20, 0.20}, {0.20, 0.75, 0.25}, {0.25, 0.35, 0.90}, {0.85, 0.75, 0.15},
    {0.75, 0.25, 0.80}, {0.15, 0.75, 0.75}, {0.90, 0.55, 0.15}, {0.55, 0.30, 0.10},
};

enum class ShapeKind { Square = 0, Circle = 1, Triangle = 2 };

struct ShapeSpec {
  ShapeKind kind;
  int class_id;
  double cx, cy;   // center
  double radius;   // half extent
  double ex, ey;   // emblem center
  double eradius;  // emblem radius
  double checker_phase;
};

bool inside_shape(const ShapeSpec& s, int x, int y) {
  const double dx = x - s.cx;
  const double dy = y - s.cy;
  switch (s.kind) {
    case ShapeKind::Square:
      return std::fabs(dx) <= s.radius && std::fabs(dy) <= s.radius;
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= s.radius * s.radius;
    case ShapeKind::Triangle: {
      // upward equilateral-ish triangle inscribed in the radius
      const double top = s.cy - s.radius;
      const double bottom = s.cy + s.radius * 0.8;
      if (y < top || y > bottom) return false;
      const double t = (y - top) / (bottom - top);  // 0 at apex
      return std::fabs(dx) <= t * s.radius;
    }
  }
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// ClassCatalog

ClassCatalog ClassCatalog::make_default(int num_classes) {
  ClassCatalog c;
  for (int i = 1; i <= num_classes; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "class%02d", i);
    c.names.emplace_back(buf);
  }
  return c;
}

void ClassCatalog::validate() const {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw ConfigError("catalog: empty class name");
    if (!seen.insert(n).second) throw ConfigError("catalog: duplicate class name '" + n + "'");
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpus

std::vector<ImageSample> generate_synthetic_dataset(const SynthSpec& spec) {
  if (spec.height < 32 || spec.width < 32) {
    throw ConfigError("synthetic dataset needs H,W >= 32 (got " + std::to_string(spec.height) +
                      "x" + std::to_string(spec.width) + ")");
  }
  if (spec.num_classes < 2 || spec.num_classes > 8) {
    throw ConfigError("synthetic dataset needs C in [2,8] (got " +
                      std::to_string(spec.num_classes) + ")");
  }
  if (spec.n_images < 0) throw ConfigError("synthetic dataset needs n_images >= 0");

  const int H = spec.height, W = spec.width, C = spec.num_classes;
  Rng rng(Rng::derive_seed(spec.seed, "synth"));
  std::vector<ImageSample> out;
  out.reserve(static_cast<size_t>(spec.n_images));

  for (int idx = 0; idx < spec.n_images; ++idx) {
    ImageSample sample;
    {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "synth_%05d", idx);
      sample.image_id = buf;
    }
    sample.pixels = Tensor({3, H, W});
    SegmentationMask mask(H, W, 0);

    // background: tinted gray + directional gradient + noise
    const double bg = rng.next_uniform(0.35, 0.55);
    double tint[3] = {rng.next_uniform(-0.03, 0.03), rng.next_uniform(-0.03, 0.03),
                      rng.next_uniform(-0.03, 0.03)};
    const double gtheta = rng.next_uniform(0.0, 2.0 * M_PI);
    const double gamp = rng.next_uniform(0.0, 0.08);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const double grad =
            gamp * ((x * std::cos(gtheta) + y * std::sin(gtheta)) / std::max(H, W));
        const double noise = rng.next_normal() * 0.04;
        for (int ch = 0; ch < 3; ++ch) {
          sample.pixels.at(ch, y, x) = clamp01(bg + tint[ch] + grad + noise);
        }
      }
    }

    // 1-3 shapes with distinct classes
    const int k = static_cast<int>(rng.next_int(1, std::min(3, C)));
    std::vector<int> class_pool(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) class_pool[static_cast<size_t>(c)] = c + 1;
    rng.shuffle(class_pool);

    std::vector<ShapeSpec> shapes;
    const double rmin = 0.14 * std::min(H, W), rmax = 0.26 * std::min(H, W);
    for (int s = 0; s < k; ++s) {
      ShapeSpec sh;
      sh.kind = static_cast<ShapeKind>(rng.next_int(0, 2));
      sh.class_id = class_pool[static_cast<size_t>(s)];
      sh.radius = rng.next_uniform(rmin, rmax);
      // keep shapes mostly apart so the class patch stays visible
      for (int attempt = 0; attempt < 30; ++attempt) {
        sh.cx = rng.next_uniform(sh.radius + 1, W - 1 - sh.radius);
        sh.cy = rng.next_uniform(sh.radius + 1, H - 1 - sh.radius);
        bool ok = true;
        for (const auto& other : shapes) {
          const double d = std::hypot(sh.cx - other.cx, sh.cy - other.cy);
          if (d < 0.8 * (sh.radius + other.radius)) ok = false;
        }
        if (ok) break;
      }
      sh.eradius = std::min(7.0, std::max(3.0, 0.40 * sh.radius));
      const double slack = std::max(0.0, 0.45 * sh.radius - 0.5 * sh.eradius);
      const double etheta = rng.next_uniform(0.0, 2.0 * M_PI);
      const double edist = rng.next_uniform(0.0, slack);
      sh.ex = sh.cx + edist * std::cos(etheta);
      sh.ey = sh.cy + edist * std::sin(etheta) + (sh.kind == ShapeKind::Triangle ? 0.2 * sh.radius : 0.0);
      sh.checker_phase = rng.next_uniform(0.0, 4.0);
      shapes.push_back(sh);
    }

    // paint: class-neutral checkered fill, then the class patch (oriented
    // color stripes) on top
    for (const auto& sh : shapes) {
      const double fill_base = rng.next_uniform(0.55, 0.65);
      const int x0 = std::max(0, static_cast<int>(sh.cx - sh.radius - 1));
      const int x1 = std::min(W - 1, static_cast<int>(sh.cx + sh.radius + 1));
      const int y0 = std::max(0, static_cast<int>(sh.cy - sh.radius - 1));
      const int y1 = std::min(H - 1, static_cast<int>(sh.cy + sh.radius + 1));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          if (!inside_shape(sh, x, y)) continue;
          mask.at(y, x) = static_cast<uint8_t>(sh.class_id);
          const double checker =
              0.10 * (((static_cast<int>(x + sh.checker_phase) / 3 +
                        static_cast<int>(y + sh.checker_phase) / 3) % 2 == 0)
                          ? 1.0
                          : -1.0);
          const double noise = rng.next_normal() * 0.03;
          for (int ch = 0; ch < 3; ++ch) {
            sample.pixels.at(ch, y, x) = clamp01(fill_base + checker + noise);
          }
        }
      }
      // class patch
      const Rgb hue = kClassHues[(sh.class_id - 1) % 8];
      const double theta = M_PI * (sh.class_id - 1) / spec.num_classes;
      const double lambda = 3.0 + (sh.class_id % 2);  // stripe period, px
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double dx = x - sh.ex, dy = y - sh.ey;
          if (dx * dx + dy * dy > sh.eradius * sh.eradius) continue;
          if (!inside_shape(sh, x, y)) continue;
          const double phase = (dx * std::cos(theta) + dy * std::sin(theta)) * 2.0 * M_PI / lambda;
          const double stripe = 0.5 + 0.5 * std::sin(phase);
          const double noise = rng.next_normal() * 0.02;
          sample.pixels.at(0, y, x) = clamp01(0.25 + 0.65 * stripe * hue.r + noise);
          sample.pixels.at(1, y, x) = clamp01(0.25 + 0.65 * stripe * hue.g + noise);
          sample.pixels.at(2, y, x) = clamp01(0.25 + 0.65 * stripe * hue.b + noise);
        }
      }
    }

    // quantize to the 8-bit grid so file round-trips are exact
    for (auto& v : sample.pixels.vec()) v = std::round(clamp01(v) * 255.0) / 255.0;

    // labels from the final mask (later shapes may occlude earlier ones)
    sample.image_labels.assign(static_cast<size_t>(C), 0);
    for (uint8_t lab : mask.labels) {
      if (lab >= 1 && lab != kIgnoreLabel) sample.image_labels[static_cast<size_t>(lab - 1)] = 1;
    }
    sample.gt_mask = std::move(mask);
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<PointAnnotation> sample_points_from_mask(const SegmentationMask& mask, int per_class,
                                                     uint64_t seed) {
  if (per_class < 1) throw ConfigError("sample_points_from_mask: per_class must be >= 1");
  std::map<int, std::vector<std::pair<int, int>>> by_class;  // class -> (y,x) scan order
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const uint8_t lab = mask.at(y, x);
      if (lab >= 1 && lab != kIgnoreLabel) by_class[lab].emplace_back(y, x);
    }
  }
  std::vector<PointAnnotation> points;
  if (by_class.empty()) {
    log_warn("sample_points_from_mask: mask has no foreground, returning no points");
    return points;
  }
  Rng rng(Rng::derive_seed(seed, "points"));
  for (auto& [class_id, coords] : by_class) {
    const int n = static_cast<int>(coords.size());
    const int take = std::min(per_class, n);
    for (int i = 0; i < take; ++i) {  // partial Fisher-Yates
      const int j = static_cast<int>(rng.next_int(i, n - 1));
      std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
      points.push_back({coords[static_cast<size_t>(i)].second,
                        coords[static_cast<size_t>(i)].first, class_id});
    }
  }
  return points;
}

std::vector<PointAnnotation> all_foreground_points(const SegmentationMask& mask) {
  std::vector<PointAnnotation> points;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const uint8_t lab = mask.at(y, x);
      if (lab >= 1 && lab != kIgnoreLabel) points.push_back({x, y, lab});
    }
  }
  return points;
}

void validate_sample(const ImageSample& sample, int num_classes) {
  const std::string& id = sample.image_id;
  if (sample.pixels.rank() != 3 || sample.pixels.dim(0) != 3) {
    throw DataError(id + ": pixels must be 3xHxW");
  }
  const int H = sample.height(), W = sample.width();
  if (static_cast<int>(sample.image_labels.size()) != num_classes) {
    throw DataError(id + ": image_labels length != C");
  }
  for (const auto& p : sample.points) {
    if (p.class_id < 1 || p.class_id > num_classes) {
      throw DataError(id + ": point class " + std::to_string(p.class_id) + " out of [1," +
                      std::to_string(num_classes) + "]");
    }
    if (p.x < 0 || p.x >= W || p.y < 0 || p.y >= H) {
      throw DataError(id + ": point (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                      ") outside " + std::to_string(W) + "x" + std::to_string(H));
    }
    if (!sample.image_labels[static_cast<size_t>(p.class_id - 1)]) {
      throw DataError(id + ": point class " + std::to_string(p.class_id) +
                      " missing from image_labels");
    }
  }
  if (sample.gt_mask) {
    if (sample.gt_mask->height != H || sample.gt_mask->width != W) {
      throw DataError(id + ": gt_mask size mismatch");
    }
    for (uint8_t lab : sample.gt_mask->labels) {
      if (lab != kIgnoreLabel && lab > num_classes) {
        throw DataError(id + ": mask value " + std::to_string(lab) + " out of range");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Pixel conversions

Tensor planes_from_u8(const ImageU8& img) {
  if (img.channels != 3) throw DataError("planes_from_u8 expects RGB");
  Tensor t({3, img.height, img.width});
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int ch = 0; ch < 3; ++ch) t.at(ch, y, x) = img.at(y, x, ch) / 255.0;
    }
  }
  return t;
}

ImageU8 u8_from_planes(const Tensor& planes) {
  ImageU8 img;
  img.channels = 3;
  img.height = planes.dim(1);
  img.width = planes.dim(2);
  img.data.resize(static_cast<size_t>(img.height) * img.width * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        const double v = std::min(1.0, std::max(0.0, planes.at(ch, y, x)));
        img.at(y, x, ch) = static_cast<uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Files

std::map<std::string, std::vector<PointAnnotation>> read_points_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open points CSV: " + path);
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty points CSV: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "image_id,x,y,class_id") {
    throw DataError("bad points CSV header in " + path + ": '" + line + "'");
  }
  std::map<std::string, std::vector<PointAnnotation>> out;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() != 4) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected 4 columns");
    }
    PointAnnotation p;
    try {
      p.x = std::stoi(cols[1]);
      p.y = std::stoi(cols[2]);
      p.class_id = std::stoi(cols[3]);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": non-integer field");
    }
    if (p.class_id < 1) {
      throw DataError(path + ":" + std::to_string(line_no) + ": class_id must be >= 1");
    }
    out[cols[0]].push_back(p);
  }
  return out;
}

void write_points_csv(const std::string& path,
                      const std::map<std::string, std::vector<PointAnnotation>>& points) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for write: " + path);
  os << "image_id,x,y,class_id\n";
  for (const auto& [id, pts] : points) {
    for (const auto& p : pts) {
      os << id << "," << p.x << "," << p.y << "," << p.class_id << "\n";
    }
  }
}

std::vector<std::string> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest: " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

void write_manifest(const std::string& path, const std::vector<std::string>& ids) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for write: " + path);
  for (const auto& id : ids) os << id << "\n";
}

ClassCatalog read_catalog(const std::string& path) {
  ClassCatalog c;
  c.names = read_manifest(path);
  c.validate();
  return c;
}

void write_catalog(const std::string& path, const ClassCatalog& catalog) {
  write_manifest(path, catalog.names);
}

SegmentationMask read_mask(const std::string& path) {
  const ImageU8 img = read_mask_file(path);
  SegmentationMask mask(img.height, img.width);
  std::copy(img.data.begin(), img.data.end(), mask.labels.begin());
  return mask;
}

void write_mask(const std::string& path, const SegmentationMask& mask) {
  ImageU8 img;
  img.height = mask.height;
  img.width = mask.width;
  img.channels = 1;
  img.data.assign(mask.labels.begin(), mask.labels.end());
  write_mask_file(path, img);
}

ImageSample load_voc_sample(const std::string& image_path, const std::string& mask_path,
                            const std::string& points_path, int num_classes) {
  ImageSample sample;
  sample.image_id = fs::path(image_path).stem().string();
  sample.pixels = planes_from_u8(read_image_file(image_path));
  sample.image_labels.assign(static_cast<size_t>(num_classes), 0);

  if (!mask_path.empty()) {
    SegmentationMask mask = read_mask(mask_path);
    if (mask.height != sample.height() || mask.width != sample.width()) {
      throw DataError(mask_path + ": mask size " + std::to_string(mask.width) + "x" +
                      std::to_string(mask.height) + " does not match image");
    }
    for (uint8_t lab : mask.labels) {
      if (lab != kIgnoreLabel && lab > num_classes) {
        throw DataError(mask_path + ": mask value " + std::to_string(lab) +
                        " out of range for C=" + std::to_string(num_classes));
      }
      if (lab >= 1 && lab != kIgnoreLabel) sample.image_labels[static_cast<size_t>(lab - 1)] = 1;
    }
    sample.gt_mask = std::move(mask);
  }

  if (!points_path.empty()) {
    auto by_image = read_points_csv(points_path);
    auto it = by_image.find(sample.image_id);
    if (it != by_image.end()) sample.points = it->second;
    for (const auto& p : sample.points) {
      if (p.class_id > num_classes) {
        throw DataError(points_path + ": class_id " + std::to_string(p.class_id) +
                        " out of range for C=" + std::to_string(num_classes) + " (image " +
                        sample.image_id + ")");
      }
      if (p.x < 0 || p.x >= sample.width() || p.y < 0 || p.y >= sample.height()) {
        throw DataError(points_path + ": point (" + std::to_string(p.x) + "," +
                        std::to_string(p.y) + ") outside image " + sample.image_id);
      }
    }
    if (!sample.gt_mask) {
      for (const auto& p : sample.points) {
        sample.image_labels[static_cast<size_t>(p.class_id - 1)] = 1;
      }
    }
  }
  validate_sample(sample, num_classes);
  return sample;
}

void save_dataset(const std::string& dir, const std::vector<ImageSample>& train,
                  const std::vector<ImageSample>& val, const ClassCatalog& catalog) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  write_catalog((fs::path(dir) / "catalog.txt").string(), catalog);

  std::map<std::string, std::vector<PointAnnotation>> points;
  auto dump = [&](const std::vector<ImageSample>& samples, const std::string& split) {
    std::vector<std::string> ids;
    for (const auto& s : samples) {
      ids.push_back(s.image_id);
      write_image_file((fs::path(dir) / "images" / (s.image_id + ".png")).string(),
                       u8_from_planes(s.pixels));
      if (s.gt_mask) {
        write_mask((fs::path(dir) / "masks" / (s.image_id + ".png")).string(), *s.gt_mask);
      }
      if (!s.points.empty()) points[s.image_id] = s.points;
    }
    write_manifest((fs::path(dir) / (split + ".txt")).string(), ids);
  };
  dump(train, "train");
  dump(val, "val");
  write_points_csv((fs::path(dir) / "points.csv").string(), points);
}

std::vector<ImageSample> load_split(const std::string& dir, const std::string& split,
                                    int num_classes) {
  const fs::path root(dir);
  const auto ids = read_manifest((root / (split + ".txt")).string());
  const std::string points_csv = (root / "points.csv").string();
  const bool have_points = fs::exists(points_csv);
  std::map<std::string, std::vector<PointAnnotation>> by_image;
  if (have_points) by_image = read_points_csv(points_csv);

  std::vector<ImageSample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const std::string image_path = (root / "images" / (id + ".png")).string();
    std::string mask_path = (root / "masks" / (id + ".png")).string();
    if (!fs::exists(mask_path)) mask_path.clear();
    ImageSample s = load_voc_sample(image_path, mask_path, "", num_classes);
    auto it = by_image.find(id);
    if (it != by_image.end()) {
      s.points = it->second;
      if (!s.gt_mask) {
        for (const auto& p : s.points) {
          s.image_labels[static_cast<size_t>(p.class_id - 1)] = 1;
        }
      }
    }
    validate_sample(s, num_classes);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace corpus
}  // namespace pointseg
