#include "gebd/weights_io.hpp"

#include <cstring>
#include <fstream>

namespace gebd::nn {

namespace {
constexpr char kMagic[] = "GEBDW1\n";

template <class V>
void write_raw(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_raw(std::istream& is, const char* what) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw ValidationError(std::string("archive: truncated while reading ") + what);
  return v;
}
}  // namespace

void save_archive(const std::string& path, const Archive& archive) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw PipelineError("archive: cannot open for writing: " + path);
  os.write(kMagic, sizeof(kMagic) - 1);
  write_raw(os, static_cast<uint32_t>(archive.size()));
  for (const auto& [name, e] : archive) {
    write_raw(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_raw(os, e.dtype);
    if (e.dtype == 2) {
      write_raw(os, static_cast<uint32_t>(0));
      write_raw(os, static_cast<uint64_t>(e.bytes.size()));
      os.write(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size()));
      continue;
    }
    write_raw(os, static_cast<uint32_t>(e.shape.size()));
    for (int64_t d : e.shape) write_raw(os, static_cast<uint64_t>(d));
    if (e.dtype == 0) {
      write_raw(os, static_cast<uint64_t>(e.values.size() * 4));
      for (double v : e.values) {
        const float f = static_cast<float>(v);
        write_raw(os, f);
      }
    } else {
      write_raw(os, static_cast<uint64_t>(e.values.size() * 8));
      for (double v : e.values) write_raw(os, v);
    }
  }
  if (!os) throw PipelineError("archive: write failed: " + path);
}

Archive load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("archive: cannot open: " + path);
  char magic[sizeof(kMagic) - 1];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw ValidationError("archive: bad magic in " + path);
  const auto count = read_raw<uint32_t>(is, "entry count");
  Archive archive;
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_raw<uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw ValidationError("archive: truncated name in " + path);
    ArchiveEntry e;
    e.dtype = read_raw<uint8_t>(is, "dtype");
    const auto rank = read_raw<uint32_t>(is, "rank");
    for (uint32_t r = 0; r < rank; ++r)
      e.shape.push_back(static_cast<int64_t>(read_raw<uint64_t>(is, "dim")));
    const auto nbytes = read_raw<uint64_t>(is, "payload size");
    if (e.dtype == 2) {
      e.bytes.resize(nbytes);
      is.read(e.bytes.data(), static_cast<std::streamsize>(nbytes));
    } else if (e.dtype == 0) {
      e.values.resize(nbytes / 4);
      for (auto& v : e.values) v = static_cast<double>(read_raw<float>(is, "f32 value"));
    } else if (e.dtype == 1) {
      e.values.resize(nbytes / 8);
      for (auto& v : e.values) v = read_raw<double>(is, "f64 value");
    } else {
      throw ValidationError("archive: unknown dtype in entry '" + name + "'");
    }
    if (!is) throw ValidationError("archive: truncated payload in entry '" + name + "'");
    archive.emplace(std::move(name), std::move(e));
  }
  return archive;
}

}  // namespace gebd::nn
