#include "gebd/ingest.hpp"

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gebd/weights_io.hpp"

namespace gebd {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open file: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw PipelineError("cannot write file: " + path);
  os << content;
  if (!os) throw PipelineError("write failed: " + path);
}

std::vector<BoundaryAnnotation> parse_annotations(const std::string& path,
                                                  std::vector<std::string>* warnings) {
  try {
    return annotations_from_json(read_text_file(path), warnings);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::vector<int> sample_frame_indices(int source_frames, int t) {
  if (source_frames < 1) throw ValidationError("sample_frames: empty source");
  if (t < 1) throw ValidationError("sample_frames: t >= 1 required");
  std::vector<int> idx(static_cast<size_t>(t));
  for (int i = 0; i < t; ++i) {
    const double x = (i + 0.5) * static_cast<double>(source_frames) / t - 0.5;
    idx[static_cast<size_t>(i)] = std::clamp(static_cast<int>(std::lround(x)), 0, source_frames - 1);
  }
  return idx;
}

FrameSequence sample_frames(const FrameSequence& source, int t) {
  source.validate();
  const auto idx = sample_frame_indices(source.t, t);
  FrameSequence out;
  out.video_id = source.video_id;
  out.t = t;
  out.h = source.h;
  out.w = source.w;
  out.duration_s = source.duration_s;
  out.fps = t / source.duration_s;
  out.frames.resize(static_cast<size_t>(t) * source.frame_stride());
  for (int i = 0; i < t; ++i)
    std::copy(source.frame(idx[static_cast<size_t>(i)]),
              source.frame(idx[static_cast<size_t>(i)]) + source.frame_stride(),
              out.frame(i));
  return out;
}

namespace {
constexpr char kFramesMagic[] = "GEBDF1\n";

template <class V>
void wr(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <class V>
V rd(std::istream& is, const char* what) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw ValidationError(std::string("frames archive: truncated at ") + what);
  return v;
}
}  // namespace

void save_frames(const std::string& path, const FrameStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw PipelineError("cannot write frames archive: " + path);
  os.write(kFramesMagic, sizeof(kFramesMagic) - 1);
  wr(os, static_cast<uint32_t>(store.video_id.size()));
  os.write(store.video_id.data(), static_cast<std::streamsize>(store.video_id.size()));
  wr(os, static_cast<uint32_t>(store.t));
  wr(os, static_cast<uint32_t>(store.h));
  wr(os, static_cast<uint32_t>(store.w));
  wr(os, store.fps);
  wr(os, store.duration_s);
  os.write(reinterpret_cast<const char*>(store.data.data()),
           static_cast<std::streamsize>(store.data.size()));
  if (!os) throw PipelineError("frames archive write failed: " + path);
}

FrameStore load_frames(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open frames archive: " + path);
  char magic[sizeof(kFramesMagic) - 1];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kFramesMagic, sizeof(magic)) != 0)
    throw ValidationError("frames archive: bad magic in " + path);
  FrameStore s;
  const auto idlen = rd<uint32_t>(is, "id length");
  s.video_id.resize(idlen);
  is.read(s.video_id.data(), idlen);
  s.t = static_cast<int>(rd<uint32_t>(is, "t"));
  s.h = static_cast<int>(rd<uint32_t>(is, "h"));
  s.w = static_cast<int>(rd<uint32_t>(is, "w"));
  s.fps = rd<double>(is, "fps");
  s.duration_s = rd<double>(is, "duration");
  const int64_t n = static_cast<int64_t>(s.t) * s.h * s.w * 3;
  s.data.resize(static_cast<size_t>(n));
  is.read(reinterpret_cast<char*>(s.data.data()), n);
  if (!is) throw ValidationError("frames archive: truncated pixel data in " + path);
  return s;
}

FeatureTrack load_offline_features(const std::string& path) {
  auto archive = nn::load_archive(path);
  const auto it = archive.find("features");
  if (it == archive.end())
    throw ValidationError("offline features " + path + ": missing 'features' entry");
  const auto& e = it->second;
  if (e.shape.size() != 2)
    throw ValidationError("offline features " + path + ": rank " +
                          std::to_string(e.shape.size()) + " array, expected rank 2 (T x C)");
  FeatureTrack f;
  f.t = static_cast<int>(e.shape[0]);
  f.c = static_cast<int>(e.shape[1]);
  f.level_tag = FeatureLevel::LStar;
  f.values = e.values;
  for (int i = 0; i < f.t; ++i)
    for (int c = 0; c < f.c; ++c)
      if (!std::isfinite(f.values[static_cast<size_t>(i) * f.c + c]))
        throw ValidationError("offline features " + path + ": non-finite value at row " +
                              std::to_string(i));
  f.validate();
  return f;
}

void save_offline_features(const std::string& path, const FeatureTrack& track) {
  track.validate();
  nn::Archive archive;
  nn::ArchiveEntry e;
  e.dtype = 1;
  e.shape = {track.t, track.c};
  e.values = track.values;
  archive["features"] = e;
  nn::save_archive(path, archive);
}

void write_dataset(const std::string& dir, const std::vector<GeneratedVideo>& videos,
                   const SyntheticSpec& spec, uint32_t seed) {
  fs::create_directories(fs::path(dir) / "frames");
  json manifest;
  manifest["seed"] = seed;
  manifest["spec"] = {{"t", spec.t},
                      {"height", spec.height},
                      {"width", spec.width},
                      {"n_shot_boundaries", spec.n_shot_boundaries},
                      {"n_event_boundaries", spec.n_event_boundaries},
                      {"min_gap_frames", spec.min_gap_frames},
                      {"edge_margin", spec.edge_margin},
                      {"fps", spec.fps},
                      {"noise_level", spec.noise_level}};
  json vids = json::array();
  std::vector<BoundaryAnnotation> anns;
  for (const auto& gv : videos) {
    const std::string fname = "frames/" + gv.video.video_id + ".gfr";
    save_frames((fs::path(dir) / fname).string(), FrameStore::from(gv.video));
    int n_shot = 0, n_event = 0;
    for (auto ty : gv.annotation.annotators[0].types)
      (ty == BoundaryType::Shot ? n_shot : n_event) += 1;
    json jv;
    jv["video_id"] = gv.video.video_id;
    jv["split"] = gv.split;
    jv["frames_file"] = fname;
    jv["t"] = gv.video.t;
    jv["fps"] = gv.video.fps;
    jv["duration_s"] = gv.video.duration_s;
    jv["n_shot"] = n_shot;
    jv["n_event"] = n_event;
    vids.push_back(jv);
    anns.push_back(gv.annotation);
  }
  manifest["videos"] = vids;
  write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2));
  write_text_file((fs::path(dir) / "annotations.json").string(), annotations_to_json(anns));
}

DatasetOnDisk load_dataset(const std::string& dir) {
  json manifest;
  try {
    manifest = json::parse(read_text_file((fs::path(dir) / "manifest.json").string()));
  } catch (const std::exception& e) {
    throw ValidationError(std::string("dataset manifest: ") + e.what());
  }
  DatasetOnDisk out;
  auto anns = parse_annotations((fs::path(dir) / "annotations.json").string());
  for (const auto& jv : manifest["videos"]) {
    const std::string id = jv["video_id"].get<std::string>();
    auto store = std::make_shared<FrameStore>(
        load_frames((fs::path(dir) / jv["frames_file"].get<std::string>()).string()));
    const BoundaryAnnotation* ann = nullptr;
    for (const auto& a : anns)
      if (a.video_id == id) ann = &a;
    if (!ann) throw ValidationError("dataset: no annotation for video " + id);
    out.videos.push_back(std::move(store));
    out.annotations.push_back(*ann);
    out.splits.push_back(jv["split"].get<std::string>());
  }
  return out;
}

std::string RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["config"] = config_kv;
  j["seed"] = seed;
  j["inputs"] = inputs;
  j["out_dir"] = out_dir;
  j["tool_version"] = tool_version;
  j["started_utc"] = started_utc;
  j["finished_utc"] = finished_utc;
  return j.dump(2);
}

template <class T>
DiagnoseBundle diagnose(Model<T>& model, const FrameSequence& video) {
  video.validate();
  if (model.cfg.offline_features())
    throw ValidationError("diagnose: requires a pixel-domain model");
  // X^I = the backbone track feeding the encoder; X^D = its temporal
  // difference. Norms and cosine maps of both mirror the encoder-input
  // diagnostics.
  nn::Tensor<T> track;
  if (model.image_mode()) {
    std::vector<int> all(static_cast<size_t>(video.t));
    for (int i = 0; i < video.t; ++i) all[static_cast<size_t>(i)] = i;
    auto x = frames_to_batch<T>(video, all);
    auto pooled = model.bb2d->forward(x, model.cfg.truncation_level, model.cfg.multi_level,
                                      nullptr, false);
    track = model.concat ? model.concat->forward(pooled, nullptr) : pooled[0];
  } else {
    std::vector<int> all(static_cast<size_t>(video.t));
    for (int i = 0; i < video.t; ++i) all[static_cast<size_t>(i)] = i;
    auto clip = frames_to_clip<T>(video, all);
    auto tracks = model.bb3d->forward(clip, model.cfg.truncation_level, model.cfg.multi_level,
                                      nullptr, false);
    track = model.concat ? model.concat->forward(tracks, nullptr) : tracks[0];
  }
  nn::ensure_finite(track, "diagnose: backbone track");
  auto diff = temporal_difference_fwd(track);

  DiagnoseBundle b;
  const int64_t t = track.dim(0), c = track.dim(1);
  for (int64_t i = 0; i < t; ++i) {
    double ni = 0, nd = 0;
    for (int64_t ch = 0; ch < c; ++ch) {
      ni += static_cast<double>(track[i * c + ch]) * track[i * c + ch];
      nd += static_cast<double>(diff[i * c + ch]) * diff[i * c + ch];
    }
    b.norm_identity.push_back(std::sqrt(ni));
    b.norm_difference.push_back(std::sqrt(nd));
  }
  auto mi = cosine_map_fwd(track, static_cast<CosineMapCtx<T>*>(nullptr));
  auto md = cosine_map_fwd(diff, static_cast<CosineMapCtx<T>*>(nullptr));
  b.map_identity.k = static_cast<int>(t);
  b.map_identity.values.assign(mi.v.begin(), mi.v.end());
  b.map_difference.k = static_cast<int>(t);
  b.map_difference.values.assign(md.v.begin(), md.v.end());
  return b;
}

template DiagnoseBundle diagnose<float>(Model<float>&, const FrameSequence&);
template DiagnoseBundle diagnose<double>(Model<double>&, const FrameSequence&);

std::string norms_to_csv(const DiagnoseBundle& b) {
  std::ostringstream os;
  os << "frame,norm_identity,norm_difference\n";
  for (size_t i = 0; i < b.norm_identity.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%zu,%.6g,%.6g\n", i, b.norm_identity[i], b.norm_difference[i]);
    os << buf;
  }
  return os.str();
}

std::string map_to_csv(const SimilarityMap& m) {
  std::ostringstream os;
  for (int i = 0; i < m.k; ++i) {
    for (int j = 0; j < m.k; ++j) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6g", m.at(i, j));
      os << (j ? "," : "") << buf;
    }
    os << "\n";
  }
  return os.str();
}

std::string map_to_pgm(const SimilarityMap& m, int scale) {
  std::ostringstream os;
  os << "P5\n" << m.k * scale << " " << m.k * scale << "\n255\n";
  for (int i = 0; i < m.k * scale; ++i)
    for (int j = 0; j < m.k * scale; ++j) {
      const double v = m.at(i / scale, j / scale);
      os.put(static_cast<char>(static_cast<int>(std::clamp((v + 1.0) * 127.5, 0.0, 255.0))));
    }
  return os.str();
}

}  // namespace gebd
