#pragma once

// Flat name -> array archive ("GEBDW1"). Used for model weights,
// checkpoints and offline feature files. Layout:
//   magic "GEBDW1\n", u32 entry count, then per entry:
//   u32 name_len, name bytes, u8 dtype (0 f32, 1 f64, 2 raw bytes),
//   u32 rank, u64 dims[rank], u64 payload bytes, payload.

#include <cstdio>
#include <map>
#include <string>

#include "gebd/tensor.hpp"

namespace gebd::nn {

struct ArchiveEntry {
  uint8_t dtype = 1;
  std::vector<int64_t> shape;
  std::vector<double> values;  // numeric payload, widened
  std::string bytes;           // raw payload for dtype 2
};

using Archive = std::map<std::string, ArchiveEntry>;

void save_archive(const std::string& path, const Archive& archive);
Archive load_archive(const std::string& path);

template <class T>
ArchiveEntry to_entry(const Tensor<T>& t) {
  ArchiveEntry e;
  e.dtype = sizeof(T) == 4 ? 0 : 1;
  e.shape = t.shape;
  e.values.assign(t.v.begin(), t.v.end());
  return e;
}

template <class T>
void entry_to_tensor(const ArchiveEntry& e, const std::string& name, Tensor<T>& out) {
  if (e.dtype == 2) throw ValidationError("archive entry '" + name + "': expected numeric data");
  if (e.shape != out.shape) {
    std::string want, got;
    for (auto d : out.shape) want += std::to_string(d) + " ";
    for (auto d : e.shape) got += std::to_string(d) + " ";
    throw ValidationError("archive entry '" + name + "': shape [" + got + "] does not match expected [" + want + "]");
  }
  out.v.assign(e.values.begin(), e.values.end());
}

}  // namespace gebd::nn
