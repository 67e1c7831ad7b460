#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pointseg/tensor.hpp"

namespace pointseg {

// Single-file archive of named double arrays plus a free-form metadata
// string. Used for network checkpoints and per-image activation-map dumps.
//
// Layout (little endian):
//   magic   "PSARCH1\n"            8 bytes
//   u32     entry count
//   u64     metadata length, then metadata bytes (UTF-8, typically JSON)
//   per entry:
//     u32   name length, name bytes
//     u32   rank, then rank * i32 dims
//     raw   numel * f64 payload
struct Archive {
  std::string metadata;
  std::vector<std::pair<std::string, Tensor>> entries;

  const Tensor* find(const std::string& name) const;
  const Tensor& require(const std::string& name) const;  // throws DataError
};

void save_archive(const std::string& path, const Archive& ar);
Archive load_archive(const std::string& path);

}  // namespace pointseg
