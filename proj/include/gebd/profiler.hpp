#pragma once

// Efficiency accounting: analytic multiply-accumulate counts attributed to
// the five model components, and wall-clock throughput. "FLOPs" follows the
// convention of counting one multiply-accumulate as one FLOP; BN, ReLU and
// pooling count as zero.

#include <string>

#include "gebd/pipeline.hpp"

namespace gebd {

struct ComponentCost {
  int64_t macs = 0;    // per clip unless stated otherwise
  int64_t params = 0;
};

struct ProfileReport {
  int clip_length = 0;
  int input_h = 0, input_w = 0;
  ComponentCost backbone, encoder, simmap, decoder, fusion, head;
  int64_t backbone_macs_per_frame = 0;  // image mode only; 0 for 3D/offline
  int64_t total_macs_per_clip = 0;
  int64_t total_params = 0;

  std::string to_json() const;
  std::string to_table() const;
};

template <class T>
ProfileReport count_macs(const Model<T>& model, int input_h, int input_w);

struct ThroughputReport {
  double fps = 0;                // frames per second, median over timed iters
  int batch_size = 0;
  int warmup_iters = 0, timed_iters = 0;
  std::string precision;        // "float32" | "float64"
  std::vector<double> per_iter_fps;
};

template <class T>
ThroughputReport measure_throughput(Model<T>& model, int batch_size, int input_h, int input_w,
                                    int warmup_iters, int timed_iters, uint32_t seed = 7);

}  // namespace gebd
