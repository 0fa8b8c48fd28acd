#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mcg/params.hpp"

namespace mcg {

// Layout (little-endian):
//   "2DMCG\0" | version u32 | count u64
//   per parameter: name_len u32 | name bytes | rank u32 | extents u64[rank] | f32[numel]

inline constexpr std::array<char, 6> kCheckpointMagic{'2', 'D', 'M', 'C', 'G', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class U>
U get(std::istream& is, const std::string& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated checkpoint " + path);
  return v;
}

}  // namespace detail

/// Named float32 tensor as stored on disk.
struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

template <class T>
void save_checkpoint(const ParamSet<T>& ps, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint64_t>(os, ps.size());
  for (const auto& [name, var] : ps.entries()) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Tensor<T>& v = var.value();
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(v.rank()));
    for (auto e : v.shape()) detail::put<std::uint64_t>(os, e);
    for (std::size_t k = 0; k < v.size(); ++k) detail::put<float>(os, static_cast<float>(v[k]));
  }
  if (!os) throw IoError("write failed for " + path);
}

inline std::vector<CheckpointRecord> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  std::array<char, 6> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) throw IoError(path + " is not a checkpoint");
  const auto version = detail::get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get<std::uint64_t>(is, path);
  std::vector<CheckpointRecord> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name.resize(detail::get<std::uint32_t>(is, path));
    if (!is.read(r.name.data(), static_cast<std::streamsize>(r.name.size()))) throw IoError("truncated checkpoint " + path);
    const auto rank = detail::get<std::uint32_t>(is, path);
    if (rank > 8) throw IoError("corrupt checkpoint " + path + ": rank " + std::to_string(rank));
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(detail::get<std::uint64_t>(is, path));
    r.values.resize(shape_numel(r.shape));
    if (!is.read(reinterpret_cast<char*>(r.values.data()), static_cast<std::streamsize>(r.values.size() * sizeof(float)))) {
      throw IoError("truncated checkpoint " + path);
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Restores parameters in place. The checkpoint must describe exactly the
/// same parameter list (names, order and shapes); otherwise ConfigError.
template <class T>
void load_checkpoint(ParamSet<T>& ps, const std::string& path) {
  const auto records = read_checkpoint(path);
  auto& entries = ps.entries();
  if (records.size() != entries.size()) {
    throw ConfigError("checkpoint has " + std::to_string(records.size()) + " parameters, model expects " +
                      std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto& [name, var] = entries[i];
    if (r.name != name || r.shape != var.shape()) {
      throw ConfigError("checkpoint parameter " + r.name + shape_str(r.shape) + " does not match model parameter " + name +
                        shape_str(var.shape()));
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    Tensor<T>& v = entries[i].second.mutable_value();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<T>(records[i].values[k]);
  }
}

}  // namespace mcg
