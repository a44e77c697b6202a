#include "gebd/pipeline.hpp"

#include <sstream>

#include "gebd/weights_io.hpp"

namespace gebd {

LabelTrack gaussian_smooth(const LabelTrack& labels, double sigma) {
  if (sigma <= 0) throw ValidationError("gaussian_smooth: sigma must be > 0");
  labels.validate();
  if (!labels.hard) throw ValidationError("gaussian_smooth: input must be a hard track");
  std::vector<int> boundaries;
  for (size_t i = 0; i < labels.values.size(); ++i)
    if (labels.values[i] == 1.0) boundaries.push_back(static_cast<int>(i));
  LabelTrack out;
  out.hard = false;
  out.values.assign(labels.values.size(), 0.0);
  for (size_t t = 0; t < out.values.size(); ++t) {
    double best = 0.0;
    for (int b : boundaries) {
      const double d = static_cast<double>(t) - b;
      best = std::max(best, std::exp(-d * d / (2.0 * sigma * sigma)));
    }
    out.values[t] = best;
  }
  return out;
}

std::vector<double> soft_targets_for(const BoundaryAnnotation& ann, int t, double sigma,
                                     std::vector<int>* positive_frames) {
  ann.validate();
  LabelTrack hard;
  hard.hard = true;
  hard.values.assign(static_cast<size_t>(t), 0.0);
  // Union of all annotators' boundary frames before smoothing.
  for (const auto& an : ann.annotators)
    for (double b : an.boundaries_s)
      hard.values[static_cast<size_t>(seconds_to_frame_index(b, t, ann.duration_s))] = 1.0;
  auto soft = gaussian_smooth(hard, sigma);
  if (positive_frames) {
    positive_frames->clear();
    for (int i = 0; i < t; ++i)
      if (soft.values[static_cast<size_t>(i)] >= 0.6) positive_frames->push_back(i);
  }
  return soft.values;
}

std::string TrainSchedule::to_kv() const {
  std::ostringstream os;
  os << "epochs = " << epochs << "\n";
  os << "base_lr = " << base_lr << "\n";
  os << "lr_drop_epochs = ";
  for (size_t i = 0; i < lr_drop_epochs.size(); ++i) os << (i ? "," : "") << lr_drop_epochs[i];
  os << "\n";
  os << "lr_drop_factor = " << lr_drop_factor << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "seed = " << seed << "\n";
  os << "clips_per_epoch = " << clips_per_epoch << "\n";
  os << "pos_fraction = " << pos_fraction << "\n";
  return os.str();
}

TrainSchedule TrainSchedule::from_kv(const std::string& text) {
  TrainSchedule s;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string x) {
      const auto b = x.find_first_not_of(" \t\r");
      const auto e = x.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : x.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "epochs") s.epochs = std::stoi(val);
    else if (key == "base_lr") s.base_lr = std::stod(val);
    else if (key == "lr_drop_epochs") {
      s.lr_drop_epochs.clear();
      std::stringstream ss(val);
      std::string tok;
      while (std::getline(ss, tok, ',')) if (!tok.empty()) s.lr_drop_epochs.push_back(std::stoi(tok));
    } else if (key == "lr_drop_factor") s.lr_drop_factor = std::stod(val);
    else if (key == "batch_size") s.batch_size = std::stoi(val);
    else if (key == "seed") s.seed = static_cast<uint32_t>(std::stoul(val));
    else if (key == "clips_per_epoch") s.clips_per_epoch = std::stoi(val);
    else if (key == "pos_fraction") s.pos_fraction = std::stod(val);
  }
  return s;
}

template <class T>
void save_checkpoint(const std::string& path, Model<T>& model, const TrainSchedule& schedule,
                     uint32_t seed) {
  nn::Archive archive;
  nn::ParamList<T> params;
  model.collect(params);
  for (const auto& p : params) archive[p.name] = nn::to_entry(*p.w);
  std::vector<std::pair<std::string, nn::Tensor<T>*>> buffers;
  model.collect_buffers(buffers);
  for (const auto& [name, tensor] : buffers) archive[name] = nn::to_entry(*tensor);
  nn::ArchiveEntry cfg;
  cfg.dtype = 2;
  cfg.bytes = config_to_kv(model.cfg);
  archive["__config__"] = cfg;
  nn::ArchiveEntry sched;
  sched.dtype = 2;
  sched.bytes = schedule.to_kv();
  archive["__schedule__"] = sched;
  nn::ArchiveEntry se;
  se.dtype = 2;
  se.bytes = std::to_string(seed);
  archive["__seed__"] = se;
  nn::save_archive(path, archive);
}

template <class T>
Model<T> load_checkpoint(const std::string& path, TrainSchedule* schedule, uint32_t* seed) {
  auto archive = nn::load_archive(path);
  const auto cfg_it = archive.find("__config__");
  if (cfg_it == archive.end())
    throw ValidationError("checkpoint " + path + ": missing __config__ entry");
  ModelConfig cfg = config_from_kv(cfg_it->second.bytes);
  uint32_t init_seed = 0;
  if (auto it = archive.find("__seed__"); it != archive.end())
    init_seed = static_cast<uint32_t>(std::stoul(it->second.bytes));
  if (seed) *seed = init_seed;
  if (schedule) {
    if (auto it = archive.find("__schedule__"); it != archive.end())
      *schedule = TrainSchedule::from_kv(it->second.bytes);
  }
  Model<T> model = build_model<T>(cfg, init_seed);
  nn::ParamList<T> params;
  model.collect(params);
  for (const auto& p : params) {
    const auto it = archive.find(p.name);
    if (it == archive.end())
      throw ValidationError("checkpoint " + path + ": missing parameter '" + p.name + "'");
    nn::entry_to_tensor(it->second, p.name, *p.w);
  }
  std::vector<std::pair<std::string, nn::Tensor<T>*>> buffers;
  model.collect_buffers(buffers);
  for (const auto& [name, tensor] : buffers) {
    const auto it = archive.find(name);
    if (it == archive.end())
      throw ValidationError("checkpoint " + path + ": missing buffer '" + name + "'");
    nn::entry_to_tensor(it->second, name, *tensor);
  }
  return model;
}

template void save_checkpoint<float>(const std::string&, Model<float>&, const TrainSchedule&, uint32_t);
template void save_checkpoint<double>(const std::string&, Model<double>&, const TrainSchedule&, uint32_t);
template Model<float> load_checkpoint<float>(const std::string&, TrainSchedule*, uint32_t*);
template Model<double> load_checkpoint<double>(const std::string&, TrainSchedule*, uint32_t*);

}  // namespace gebd
