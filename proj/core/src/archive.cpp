#include "pointseg/archive.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "pointseg/common.hpp"

namespace pointseg {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'A', 'R', 'C', 'H', '1', '\n'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("archive truncated: " + path);
  return v;
}

}  // namespace

const Tensor* Archive::find(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& Archive::require(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw DataError("archive entry missing: " + name);
  return *t;
}

void save_archive(const std::string& path, const Archive& ar) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for write: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(os, static_cast<uint32_t>(ar.entries.size()));
  write_pod<uint64_t>(os, ar.metadata.size());
  os.write(ar.metadata.data(), static_cast<std::streamsize>(ar.metadata.size()));
  for (const auto& [name, t] : ar.entries) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) write_pod<int32_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw DataError("write failed: " + path);
}

Archive load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a pointseg archive: " + path);
  }
  Archive ar;
  const uint32_t count = read_pod<uint32_t>(is, path);
  const uint64_t meta_len = read_pod<uint64_t>(is, path);
  ar.metadata.resize(meta_len);
  is.read(ar.metadata.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw DataError("archive truncated: " + path);
  ar.entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = read_pod<uint32_t>(is, path);
    if (rank > 8) throw DataError("archive entry rank out of range: " + path);
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = read_pod<int32_t>(is, path);
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!is) throw DataError("archive truncated: " + path);
    ar.entries.emplace_back(std::move(name), std::move(t));
  }
  return ar;
}

}  // namespace pointseg
