#pragma once

// Ingestion: annotation files, frame sampling, frame archives, datasets on
// disk, offline feature archives, run manifests and the diagnose bundle.

#include "gebd/datagen.hpp"
#include "gebd/pipeline.hpp"

namespace gebd {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Annotation JSON from disk; duplicate video ids and schema violations are
// rejected with the offending path/field.
std::vector<BoundaryAnnotation> parse_annotations(const std::string& path,
                                                  std::vector<std::string>* warnings = nullptr);

// Uniform resampling to T frames: source index round((i + 0.5) * S / T - 0.5)
// for output i; shorter sources replicate nearest indices.
std::vector<int> sample_frame_indices(int source_frames, int t);
FrameSequence sample_frames(const FrameSequence& source, int t);

// Frame archives ("GEBDF1"): uint8 frames + timing.
void save_frames(const std::string& path, const FrameStore& store);
FrameStore load_frames(const std::string& path);

// Offline feature archive: weights-archive container with a `features`
// entry of shape T x C.
FeatureTrack load_offline_features(const std::string& path);
void save_offline_features(const std::string& path, const FeatureTrack& track);

// Dataset directory layout:
//   <dir>/manifest.json, <dir>/annotations.json, <dir>/frames/<video_id>.gfr
struct DatasetOnDisk {
  std::vector<std::shared_ptr<FrameStore>> videos;
  std::vector<BoundaryAnnotation> annotations;  // aligned with videos
  std::vector<std::string> splits;              // "train" | "val"
};

void write_dataset(const std::string& dir, const std::vector<GeneratedVideo>& videos,
                   const SyntheticSpec& spec, uint32_t seed);
DatasetOnDisk load_dataset(const std::string& dir);

// Every CLI run writes exactly one of these next to its outputs.
struct RunManifest {
  std::string command;
  std::string config_kv;
  uint32_t seed = 0;
  std::vector<std::string> inputs;
  std::string out_dir;
  std::string tool_version;
  std::string started_utc, finished_utc;
  std::string to_json() const;
};

// Diagnostic bundle mirroring the norm/similarity analysis of the encoder
// inputs: per-frame L2 norms of the backbone track X^I and its temporal
// difference X^D, and both cosine similarity maps.
struct DiagnoseBundle {
  std::vector<double> norm_identity, norm_difference;
  SimilarityMap map_identity, map_difference;
};

template <class T>
DiagnoseBundle diagnose(Model<T>& model, const FrameSequence& video);

std::string norms_to_csv(const DiagnoseBundle& b);
std::string map_to_csv(const SimilarityMap& m);  // row-major, 6 significant digits
// Grayscale PGM heat map of a similarity map (values -1..1 mapped to 0..255).
std::string map_to_pgm(const SimilarityMap& m, int scale = 8);

}  // namespace gebd
