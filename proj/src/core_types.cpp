#include "gebd/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace gebd {

using nlohmann::json;

void FrameSequence::validate() const {
  if (t < 1) throw ValidationError("FrameSequence: T >= 1 required");
  if (h < 1 || w < 1) throw ValidationError("FrameSequence: empty frames");
  if (fps <= 0) throw ValidationError("FrameSequence: fps must be > 0");
  if (duration_s <= 0) throw ValidationError("FrameSequence: duration_s must be > 0");
  if (static_cast<int64_t>(frames.size()) != static_cast<int64_t>(t) * h * w * 3)
    throw ValidationError("FrameSequence: frame buffer size mismatch");
}

double frame_index_to_seconds(int index, int t, double duration_s) {
  return (index + 0.5) * duration_s / t;
}

int seconds_to_frame_index(double s, int t, double duration_s) {
  int idx = static_cast<int>(std::lround(s * t / duration_s - 0.5));
  return std::clamp(idx, 0, t - 1);
}

FrameStore FrameStore::from(const FrameSequence& v) {
  v.validate();
  FrameStore s;
  s.video_id = v.video_id;
  s.t = v.t;
  s.h = v.h;
  s.w = v.w;
  s.fps = v.fps;
  s.duration_s = v.duration_s;
  s.data.resize(v.frames.size());
  for (size_t i = 0; i < v.frames.size(); ++i) {
    const float x = std::clamp(v.frames[i], 0.0f, 1.0f);
    s.data[i] = static_cast<uint8_t>(std::lround(x * 255.0f));
  }
  return s;
}

FrameSequence FrameStore::decode() const {
  FrameSequence v;
  v.video_id = video_id;
  v.t = t;
  v.h = h;
  v.w = w;
  v.fps = fps;
  v.duration_s = duration_s;
  v.frames.resize(data.size());
  for (size_t i = 0; i < data.size(); ++i) v.frames[i] = static_cast<float>(data[i]) / 255.0f;
  return v;
}

void FrameStore::frame_chw(int index, float* dst) const {
  const int64_t hw = static_cast<int64_t>(h) * w;
  const uint8_t* src = data.data() + static_cast<int64_t>(index) * hw * 3;
  for (int64_t p = 0; p < hw; ++p)
    for (int ch = 0; ch < 3; ++ch)
      dst[ch * hw + p] = static_cast<float>(src[p * 3 + ch]) / 255.0f;
}

std::string to_string(FeatureLevel lv) {
  switch (lv) {
    case FeatureLevel::L1: return "L1";
    case FeatureLevel::L2: return "L2";
    case FeatureLevel::L3: return "L3";
    case FeatureLevel::L4: return "L4";
    case FeatureLevel::LStar: return "L*";
  }
  return "?";
}

void FeatureTrack::validate() const {
  if (t < 1 || c < 1) throw ValidationError("FeatureTrack: empty");
  if (static_cast<int64_t>(values.size()) != static_cast<int64_t>(t) * c)
    throw ValidationError("FeatureTrack: buffer size mismatch");
  for (double v : values)
    if (!std::isfinite(v)) throw ValidationError("FeatureTrack: non-finite entry");
}

void ScoreTrack::validate() const {
  if (scores.empty()) throw ValidationError("ScoreTrack: empty");
  if (timestamps_s.size() != scores.size())
    throw ValidationError("ScoreTrack: timestamps/scores length mismatch");
  for (double s : scores)
    if (!(s >= 0.0 && s <= 1.0)) throw ValidationError("ScoreTrack: score outside [0,1]");
  for (size_t i = 1; i < timestamps_s.size(); ++i)
    if (!(timestamps_s[i] > timestamps_s[i - 1]))
      throw ValidationError("ScoreTrack: timestamps not strictly increasing");
}

std::string to_string(BoundaryType bt) {
  switch (bt) {
    case BoundaryType::Shot: return "shot";
    case BoundaryType::Event: return "event";
    case BoundaryType::Unknown: return "unknown";
  }
  return "unknown";
}

BoundaryType boundary_type_from_string(const std::string& s) {
  if (s == "shot") return BoundaryType::Shot;
  if (s == "event") return BoundaryType::Event;
  return BoundaryType::Unknown;
}

void BoundaryAnnotation::validate() const {
  if (annotators.empty())
    throw ValidationError("annotation " + video_id + ": at least one annotator required");
  if (denominator_s <= 0)
    throw ValidationError("annotation " + video_id + ": denominator_s must be > 0");
  for (const auto& a : annotators) {
    for (size_t i = 1; i < a.boundaries_s.size(); ++i)
      if (!(a.boundaries_s[i] > a.boundaries_s[i - 1]))
        throw ValidationError("annotation " + video_id + ": boundaries not strictly ascending");
    if (!a.types.empty() && a.types.size() != a.boundaries_s.size())
      throw ValidationError("annotation " + video_id + ": types length mismatch");
  }
}

void LabelTrack::validate() const {
  bool any_boundary = false;
  bool any_one = false;
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("LabelTrack: value outside [0,1]");
    if (hard && v != 0.0 && v != 1.0)
      throw ValidationError("LabelTrack: hard track must be 0/1");
    if (v > 0.0) any_boundary = true;
    if (v == 1.0) any_one = true;
  }
  if (!hard && any_boundary && !any_one)
    throw ValidationError("LabelTrack: soft track with boundaries must peak at 1");
}

std::string to_string(BackboneMode m) {
  return m == BackboneMode::Image2d ? "image2d" : "video3d";
}
std::string to_string(EncoderKind e) {
  return e == EncoderKind::Conv1d ? "conv1d" : "diff_mixer";
}
std::string to_string(FusionKind f) {
  switch (f) {
    case FusionKind::None: return "none";
    case FusionKind::Concat: return "concat";
    case FusionKind::CrossAttention: return "cross_attention";
  }
  return "none";
}
std::string to_string(DecoderKind d) {
  switch (d) {
    case DecoderKind::None: return "none";
    case DecoderKind::FcnRes10: return "fcn_res10";
    case DecoderKind::FcnRes18: return "fcn_res18";
  }
  return "none";
}

std::vector<std::string> validate_config(const ModelConfig& cfg) {
  std::vector<std::string> errs;
  if (cfg.backbone_id != "residual2d_tiny" && cfg.backbone_id != "residual2d_standard" &&
      cfg.backbone_id != "residual3d_tiny" && cfg.backbone_id != "offline")
    errs.push_back("backbone_id: unknown backbone '" + cfg.backbone_id + "'");
  if (cfg.truncation_level < 1 || cfg.truncation_level > 4)
    errs.push_back("truncation_level: must be in L1..L4");
  if (cfg.multi_level && cfg.truncation_level < 2)
    errs.push_back("multi_level: L* requires truncation_level >= L2");
  if (cfg.backbone_mode == BackboneMode::Video3d && cfg.backbone_id == "residual2d_tiny")
    errs.push_back("backbone_mode: video3d requires a 3d backbone family");
  if (cfg.backbone_mode == BackboneMode::Image2d && cfg.backbone_id == "residual3d_tiny")
    errs.push_back("backbone_mode: image2d requires a 2d backbone family");
  if (cfg.clip_length < 3) errs.push_back("clip_length: must be >= 3");
  if (cfg.clip_length % 2 == 0) errs.push_back("clip_length must be odd");
  if (cfg.encoder_stacks != 1 && cfg.encoder_stacks != 2)
    errs.push_back("encoder_stacks: must be 1 or 2");
  if (cfg.encoder_stacks == 2 && cfg.encoder != EncoderKind::DiffMixer)
    errs.push_back("encoder_stacks: stacking applies to diff_mixer only");
  if (cfg.decoder == DecoderKind::None && cfg.fusion != FusionKind::None)
    errs.push_back("decoder: decoder=none requires fusion=none (nothing to fuse)");
  if (cfg.backbone_widths.size() != 4) {
    errs.push_back("backbone_widths: exactly 4 stage widths required");
  } else {
    for (size_t i = 0; i < 4; ++i)
      if (cfg.backbone_widths[i] < 1) {
        errs.push_back("backbone_widths: widths must be positive");
        break;
      }
    for (size_t i = 1; i < 4; ++i)
      if (cfg.backbone_widths[i] <= cfg.backbone_widths[i - 1]) {
        errs.push_back("backbone_widths: widths must be strictly increasing");
        break;
      }
  }
  if (cfg.encoder_width < 1) errs.push_back("encoder_width: must be positive");
  if (cfg.offline_features() && cfg.offline_width < 1)
    errs.push_back("offline_width: must be positive in offline mode");
  if (cfg.decoder_base_width < 1) errs.push_back("decoder_base_width: must be positive");
  if (cfg.sigma <= 0) errs.push_back("sigma: must be > 0");
  return errs;
}

void ensure_valid(const ModelConfig& cfg) {
  auto errs = validate_config(cfg);
  if (errs.empty()) return;
  std::string msg = "invalid config:";
  for (const auto& e : errs) msg += "\n  - " + e;
  throw ValidationError(msg);
}

namespace {

std::string widths_to_string(const std::vector<int>& w) {
  std::ostringstream os;
  for (size_t i = 0; i < w.size(); ++i) os << (i ? "," : "") << w[i];
  return os.str();
}

std::vector<int> widths_from_string(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

}  // namespace

std::string config_to_kv(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "backbone_id = " << cfg.backbone_id << "\n";
  os << "truncation_level = L" << cfg.truncation_level << "\n";
  os << "multi_level = " << (cfg.multi_level ? "true" : "false") << "\n";
  os << "backbone_mode = " << to_string(cfg.backbone_mode) << "\n";
  os << "encoder = " << to_string(cfg.encoder) << "\n";
  os << "encoder_stacks = " << cfg.encoder_stacks << "\n";
  os << "fusion = " << to_string(cfg.fusion) << "\n";
  os << "decoder = " << to_string(cfg.decoder) << "\n";
  os << "clip_length = " << cfg.clip_length << "\n";
  os << "backbone_widths = " << widths_to_string(cfg.backbone_widths) << "\n";
  os << "encoder_width = " << cfg.encoder_width << "\n";
  os << "decoder_base_width = " << cfg.decoder_base_width << "\n";
  os << "offline_width = " << cfg.offline_width << "\n";
  os << "sigma = " << cfg.sigma << "\n";
  return os.str();
}

ModelConfig config_from_kv(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
      if (blank) continue;
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "backbone_id") cfg.backbone_id = val;
      else if (key == "truncation_level") {
        std::string v = val;
        if (!v.empty() && (v[0] == 'L' || v[0] == 'l')) v = v.substr(1);
        cfg.truncation_level = std::stoi(v);
      } else if (key == "multi_level") cfg.multi_level = (val == "true" || val == "1");
      else if (key == "backbone_mode")
        cfg.backbone_mode = (val == "video3d") ? BackboneMode::Video3d : BackboneMode::Image2d;
      else if (key == "encoder")
        cfg.encoder = (val == "conv1d") ? EncoderKind::Conv1d : EncoderKind::DiffMixer;
      else if (key == "encoder_stacks") cfg.encoder_stacks = std::stoi(val);
      else if (key == "fusion") {
        if (val == "none") cfg.fusion = FusionKind::None;
        else if (val == "concat") cfg.fusion = FusionKind::Concat;
        else if (val == "cross_attention") cfg.fusion = FusionKind::CrossAttention;
        else throw ValidationError("unknown fusion '" + val + "'");
      } else if (key == "decoder") {
        if (val == "none") cfg.decoder = DecoderKind::None;
        else if (val == "fcn_res10") cfg.decoder = DecoderKind::FcnRes10;
        else if (val == "fcn_res18") cfg.decoder = DecoderKind::FcnRes18;
        else throw ValidationError("unknown decoder '" + val + "'");
      } else if (key == "clip_length") cfg.clip_length = std::stoi(val);
      else if (key == "backbone_widths") cfg.backbone_widths = widths_from_string(val);
      else if (key == "encoder_width") cfg.encoder_width = std::stoi(val);
      else if (key == "decoder_base_width") cfg.decoder_base_width = std::stoi(val);
      else if (key == "offline_width") cfg.offline_width = std::stoi(val);
      else if (key == "sigma") cfg.sigma = std::stod(val);
      else throw ValidationError("unknown key '" + key + "'");
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception& e) {
      throw ValidationError("config line " + std::to_string(lineno) + " (" + key + "): " + e.what());
    }
  }
  return cfg;
}

std::string annotations_to_json(const std::vector<BoundaryAnnotation>& anns) {
  json arr = json::array();
  for (const auto& a : anns) {
    json ja;
    ja["video_id"] = a.video_id;
    ja["fps"] = a.fps;
    ja["duration_s"] = a.duration_s;
    ja["denominator_s"] = a.denominator_s;
    json annotators = json::array();
    for (const auto& an : a.annotators) {
      json jn;
      jn["boundaries_s"] = an.boundaries_s;
      if (!an.types.empty()) {
        json types = json::array();
        for (auto t : an.types) types.push_back(to_string(t));
        jn["types"] = types;
      }
      annotators.push_back(jn);
    }
    ja["annotators"] = annotators;
    arr.push_back(ja);
  }
  return arr.dump(2);
}

std::vector<BoundaryAnnotation> annotations_from_json(const std::string& text,
                                                      std::vector<std::string>* warnings) {
  json root;
  try {
    root = json::parse(text);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("annotations: invalid JSON: ") + e.what());
  }
  if (!root.is_array()) throw ValidationError("annotations: top level must be an array");
  std::vector<BoundaryAnnotation> out;
  std::vector<std::string> seen;
  for (const auto& ja : root) {
    BoundaryAnnotation a;
    if (!ja.contains("video_id") || !ja["video_id"].is_string())
      throw ValidationError("annotations: entry missing string field 'video_id'");
    a.video_id = ja["video_id"].get<std::string>();
    auto req_num = [&](const char* field) -> double {
      if (!ja.contains(field) || !ja[field].is_number())
        throw ValidationError("annotation " + a.video_id + ": missing numeric field '" + field + "'");
      return ja[field].get<double>();
    };
    a.fps = req_num("fps");
    a.duration_s = req_num("duration_s");
    if (ja.contains("denominator_s")) {
      a.denominator_s = ja["denominator_s"].get<double>();
    } else {
      a.denominator_s = a.duration_s;
      if (warnings)
        warnings->push_back("annotation " + a.video_id +
                            ": denominator_s missing, defaulting to duration_s");
    }
    if (!ja.contains("annotators") || !ja["annotators"].is_array())
      throw ValidationError("annotation " + a.video_id + ": missing array field 'annotators'");
    for (const auto& jn : ja["annotators"]) {
      AnnotatorBoundaries an;
      if (!jn.contains("boundaries_s") || !jn["boundaries_s"].is_array())
        throw ValidationError("annotation " + a.video_id +
                              ": annotator missing array field 'boundaries_s'");
      for (const auto& v : jn["boundaries_s"]) an.boundaries_s.push_back(v.get<double>());
      if (jn.contains("types"))
        for (const auto& v : jn["types"])
          an.types.push_back(boundary_type_from_string(v.get<std::string>()));
      a.annotators.push_back(std::move(an));
    }
    if (std::find(seen.begin(), seen.end(), a.video_id) != seen.end())
      throw ValidationError("annotations: duplicate video_id '" + a.video_id + "'");
    seen.push_back(a.video_id);
    a.validate();
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace gebd
