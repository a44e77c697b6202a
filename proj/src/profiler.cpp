#include "gebd/profiler.hpp"

#include <chrono>
#include <sstream>

#include <json.hpp>

namespace gebd {

using nlohmann::json;

namespace {

int64_t sum_macs(const std::vector<LayerProfile>& layers) {
  int64_t total = 0;
  for (const auto& l : layers) total += l.macs;
  return total;
}
int64_t sum_params(const std::vector<LayerProfile>& layers) {
  int64_t total = 0;
  for (const auto& l : layers) total += l.params;
  return total;
}

std::string human(int64_t macs) {
  char buf[64];
  if (macs >= 1000000000)
    std::snprintf(buf, sizeof(buf), "%.2fG", static_cast<double>(macs) / 1e9);
  else if (macs >= 1000000)
    std::snprintf(buf, sizeof(buf), "%.2fM", static_cast<double>(macs) / 1e6);
  else if (macs >= 1000)
    std::snprintf(buf, sizeof(buf), "%.2fK", static_cast<double>(macs) / 1e3);
  else
    std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(macs));
  return buf;
}

}  // namespace

template <class T>
ProfileReport count_macs(const Model<T>& model, int input_h, int input_w) {
  ProfileReport r;
  const int k = model.cfg.clip_length;
  r.clip_length = k;
  r.input_h = input_h;
  r.input_w = input_w;

  if (model.bb2d) {
    auto layers = model.bb2d->profile(input_h, input_w, model.cfg.truncation_level);
    r.backbone_macs_per_frame = sum_macs(layers);
    r.backbone.macs = r.backbone_macs_per_frame * k;
    r.backbone.params = sum_params(layers);
  } else if (model.bb3d) {
    auto layers = model.bb3d->profile(k, input_h, input_w, model.cfg.truncation_level);
    r.backbone.macs = sum_macs(layers);
    r.backbone.params = sum_params(layers);
  }
  if (model.concat) {
    r.backbone.macs += model.concat->macs(k);
    r.backbone.params += model.concat->param_count();
  }

  const int enc_w = model.cfg.encoder_width;
  if (model.enc_conv) {
    r.encoder.macs = model.enc_conv->macs(k);
    r.encoder.params = model.enc_conv->param_count();
  } else {
    for (const auto& m : model.mixers) {
      r.encoder.macs += m.macs(k);
      r.encoder.params += m.param_count();
    }
  }

  if (model.decoder) {
    // Similarity map: k*k dot products of C'-vectors plus row normalization.
    r.simmap.macs = static_cast<int64_t>(k) * k * enc_w + static_cast<int64_t>(k) * enc_w;
    auto layers = model.decoder->profile(k);
    r.decoder.macs = sum_macs(layers);
    r.decoder.params = sum_params(layers);
  }

  if (model.local) {
    r.fusion.macs += model.local->macs();
    r.fusion.params += model.local->param_count();
  }
  if (model.cross) {
    r.fusion.macs += model.cross->macs();
    r.fusion.params += model.cross->param_count();
  }

  r.head.macs = model.classifier.macs();
  r.head.params = model.classifier.param_count();

  r.total_macs_per_clip = r.backbone.macs + r.encoder.macs + r.simmap.macs + r.decoder.macs +
                          r.fusion.macs + r.head.macs;
  r.total_params = r.backbone.params + r.encoder.params + r.simmap.params + r.decoder.params +
                   r.fusion.params + r.head.params;
  return r;
}

std::string ProfileReport::to_json() const {
  json j;
  j["clip_length"] = clip_length;
  j["input"] = {input_h, input_w};
  j["mac_convention"] = "1 MAC = 1 FLOP; BN/ReLU/pool = 0";
  auto comp = [](const ComponentCost& c) {
    json jc;
    jc["macs_per_clip"] = c.macs;
    jc["params"] = c.params;
    return jc;
  };
  j["backbone"] = comp(backbone);
  j["backbone"]["macs_per_frame"] = backbone_macs_per_frame;
  j["encoder"] = comp(encoder);
  j["simmap"] = comp(simmap);
  j["decoder"] = comp(decoder);
  j["fusion"] = comp(fusion);
  j["head"] = comp(head);
  j["total_macs_per_clip"] = total_macs_per_clip;
  j["total_params"] = total_params;
  return j.dump(2);
}

std::string ProfileReport::to_table() const {
  std::ostringstream os;
  os << "component   MACs/clip   params\n";
  auto row = [&](const char* name, const ComponentCost& c) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-10s %10s %8s\n", name, human(c.macs).c_str(),
                  human(c.params).c_str());
    os << buf;
  };
  row("backbone", backbone);
  row("encoder", encoder);
  row("simmap", simmap);
  row("decoder", decoder);
  row("fusion", fusion);
  row("head", head);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-10s %10s %8s\n", "total", human(total_macs_per_clip).c_str(),
                human(total_params).c_str());
  os << buf;
  if (backbone_macs_per_frame > 0)
    os << "backbone/frame: " << human(backbone_macs_per_frame) << "\n";
  return os.str();
}

template <class T>
ThroughputReport measure_throughput(Model<T>& model, int batch_size, int input_h, int input_w,
                                    int warmup_iters, int timed_iters, uint32_t seed) {
  if (batch_size < 1) throw ValidationError("measure_throughput: batch_size >= 1");
  const int k = model.cfg.clip_length;
  std::mt19937 rng(seed);
  ThroughputReport rep;
  rep.batch_size = batch_size;
  rep.warmup_iters = warmup_iters;
  rep.timed_iters = timed_iters;
  rep.precision = sizeof(T) == 4 ? "float32" : "float64";

  nn::Tensor<T> batch_img, clip3d;
  try {
    if (model.image_mode() && !model.cfg.offline_features()) {
      batch_img = nn::Tensor<T>({static_cast<int64_t>(batch_size) * k, 3, input_h, input_w});
      nn::fill_uniform(batch_img, rng, 0.0, 1.0);
    } else if (!model.image_mode()) {
      clip3d = nn::Tensor<T>({3, k, input_h, input_w});
      nn::fill_uniform(clip3d, rng, 0.0, 1.0);
    } else {
      batch_img = nn::Tensor<T>({static_cast<int64_t>(batch_size) * k,
                                 static_cast<int64_t>(model.encoder_in_width)});
      nn::fill_uniform(batch_img, rng, 0.0, 1.0);
    }
  } catch (const std::bad_alloc&) {
    throw PipelineError("measure_throughput: batch does not fit in memory, reduce batch_size");
  }

  auto run_once = [&]() {
    if (model.image_mode() && !model.cfg.offline_features()) {
      auto pooled = model.bb2d->forward(batch_img, model.cfg.truncation_level,
                                        model.cfg.multi_level, nullptr, false);
      const int levels = static_cast<int>(pooled.size());
      for (int b = 0; b < batch_size; ++b) {
        std::vector<nn::Tensor<T>> per_level;
        for (int l = 0; l < levels; ++l) {
          const int64_t c = pooled[static_cast<size_t>(l)].dim(1);
          nn::Tensor<T> tr({k, c});
          std::copy(pooled[static_cast<size_t>(l)].data() + static_cast<int64_t>(b) * k * c,
                    pooled[static_cast<size_t>(l)].data() + static_cast<int64_t>(b + 1) * k * c,
                    tr.data());
          per_level.push_back(std::move(tr));
        }
        nn::Tensor<T> track = model.concat ? model.concat->forward(per_level, nullptr)
                                           : std::move(per_level[0]);
        (void)model.forward_track(track, nullptr, false);
      }
    } else if (!model.image_mode()) {
      for (int b = 0; b < batch_size; ++b) {
        auto tracks = model.bb3d->forward(clip3d, model.cfg.truncation_level,
                                          model.cfg.multi_level, nullptr, false);
        nn::Tensor<T> track =
            model.concat ? model.concat->forward(tracks, nullptr) : std::move(tracks[0]);
        (void)model.forward_track(track, nullptr, false);
      }
    } else {
      for (int b = 0; b < batch_size; ++b) {
        nn::Tensor<T> track({k, static_cast<int64_t>(model.encoder_in_width)});
        std::copy(batch_img.data() + static_cast<int64_t>(b) * k * model.encoder_in_width,
                  batch_img.data() + static_cast<int64_t>(b + 1) * k * model.encoder_in_width,
                  track.data());
        (void)model.forward_track(track, nullptr, false);
      }
    }
  };

  for (int i = 0; i < warmup_iters; ++i) run_once();
  for (int i = 0; i < timed_iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run_once();
    const auto t1 = std::chrono::steady_clock::now();
    const double sec = std::chrono::duration<double>(t1 - t0).count();
    rep.per_iter_fps.push_back(static_cast<double>(batch_size) * k / std::max(1e-9, sec));
  }
  std::vector<double> sorted = rep.per_iter_fps;
  std::sort(sorted.begin(), sorted.end());
  rep.fps = sorted.empty() ? 0.0 : sorted[sorted.size() / 2];
  return rep;
}

template ProfileReport count_macs<float>(const Model<float>&, int, int);
template ProfileReport count_macs<double>(const Model<double>&, int, int);
template ThroughputReport measure_throughput<float>(Model<float>&, int, int, int, int, int, uint32_t);
template ThroughputReport measure_throughput<double>(Model<double>&, int, int, int, int, int, uint32_t);

}  // namespace gebd
