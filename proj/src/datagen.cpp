#include "gebd/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gebd {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Color {
  double r = 0, g = 0, b = 0;
  Color operator+(const Color& o) const { return {r + o.r, g + o.g, b + o.b}; }
  Color operator-(const Color& o) const { return {r - o.r, g - o.g, b - o.b}; }
  Color operator*(double s) const { return {r * s, g * s, b * s}; }
};

double color_dist(const Color& a, const Color& b) {
  return (std::abs(a.r - b.r) + std::abs(a.g - b.g) + std::abs(a.b - b.b)) / 3.0;
}

struct Palette {
  Color c0, c1;        // gradient endpoints
  double gx = 1, gy = 0;  // gradient direction
  double stripe_freq = 3, stripe_phase = 0, stripe_amp = 0.1;
  double sx = 0, sy = 1;  // stripe direction

  Color at(double u, double v) const {
    const double g = 0.5 * (gx * (2 * u - 1) + gy * (2 * v - 1)) + 0.5;
    Color base = c0 + (c1 - c0) * std::clamp(g, 0.0, 1.0);
    const double s = stripe_amp * std::sin(2 * kPi * stripe_freq * (sx * u + sy * v) + stripe_phase);
    return base + Color{s, -s, s};
  }
  Color mean() const { return (c0 + c1) * 0.5; }
};

Color random_color(std::mt19937& rng, double lo = 0.1, double hi = 0.9) {
  std::uniform_real_distribution<double> d(lo, hi);
  return {d(rng), d(rng), d(rng)};
}

Palette random_palette(std::mt19937& rng) {
  Palette p;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  do {
    p.c0 = random_color(rng);
    p.c1 = random_color(rng);
  } while (color_dist(p.c0, p.c1) < 0.35);  // strong gradient = strong position cue
  const double ga = unit(rng) * 2 * kPi;
  p.gx = std::cos(ga);
  p.gy = std::sin(ga);
  const double sa = unit(rng) * 2 * kPi;
  p.sx = std::cos(sa);
  p.sy = std::sin(sa);
  p.stripe_freq = 2.0 + 4.0 * unit(rng);
  p.stripe_phase = unit(rng) * 2 * kPi;
  p.stripe_amp = 0.06 + 0.08 * unit(rng);
  return p;
}

struct Vec2 {
  double x = 0, y = 0;
};

// Sorted boundary frames with pairwise gaps >= min_gap, away from the ends.
std::vector<int> sample_boundary_frames(const SyntheticSpec& spec, std::mt19937& rng) {
  const int n = spec.n_shot_boundaries + spec.n_event_boundaries;
  if (n == 0) return {};
  const int lo = spec.edge_margin;
  const int hi = spec.t - 1 - spec.edge_margin;
  const int slack = hi - lo - (n - 1) * spec.min_gap_frames;
  if (slack < 0) throw ValidationError("synthetic: infeasible boundary spacing");
  std::uniform_int_distribution<int> d(0, slack);
  std::vector<int> offs(static_cast<size_t>(n));
  for (auto& o : offs) o = d(rng);
  std::sort(offs.begin(), offs.end());
  std::vector<int> frames(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) frames[static_cast<size_t>(i)] = lo + offs[static_cast<size_t>(i)] + i * spec.min_gap_frames;
  return frames;
}

bool segment_in_bounds(Vec2 pos, Vec2 vel, int steps, double rmin, double xmax, double ymax) {
  for (int i = 0; i < steps; ++i) {
    pos.x += vel.x;
    pos.y += vel.y;
    if (pos.x < rmin || pos.x > xmax || pos.y < rmin || pos.y > ymax) return false;
  }
  return true;
}

Vec2 pick_velocity(std::mt19937& rng, const SyntheticSpec& spec, Vec2 pos, int steps,
                   const Vec2* prev, double kick) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double rmin = spec.sprite_radius + 1.5;
  const double xmax = spec.width - spec.sprite_radius - 2.5;
  const double ymax = spec.height - spec.sprite_radius - 2.5;
  const double prev_speed = prev ? std::hypot(prev->x, prev->y) : 0.0;
  // Rejection over shrinking speed scales; the sprite must keep moving so
  // the per-frame pixel difference floor stays at motion level.
  for (double shrink : {1.0, 0.85, 0.7, 0.55}) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double ang = unit(rng) * 2 * kPi;
      double speed = (spec.speed_min + (spec.speed_max - spec.speed_min) * unit(rng)) * shrink;
      speed = std::max(speed, spec.speed_min * 0.5);
      Vec2 v{speed * std::cos(ang), speed * std::sin(ang)};
      if (prev) {
        // Event boundary: require >= 90 degrees direction change or >= 2x
        // speed ratio against the previous segment.
        const double dot = (v.x * prev->x + v.y * prev->y) / std::max(1e-9, speed * prev_speed);
        const double ratio = speed / std::max(1e-9, prev_speed);
        if (!(dot <= 0.0 || ratio >= 2.0 || ratio <= 0.5)) continue;
        // The transition step covers kick * the new velocity.
        Vec2 p2{pos.x + v.x * (kick - 1.0), pos.y + v.y * (kick - 1.0)};
        if (!segment_in_bounds(pos, {v.x * kick, v.y * kick}, 1, rmin, xmax, ymax)) continue;
        if (!segment_in_bounds({p2.x + v.x, p2.y + v.y}, v, steps - 1, rmin, xmax, ymax)) continue;
        return v;
      }
      if (segment_in_bounds(pos, v, steps, rmin, xmax, ymax)) return v;
    }
  }
  // Head for the middle at minimum speed; keeps motion alive and in bounds
  // for any segment reachable after the rejection cascade.
  const double cx = (rmin + xmax) / 2, cy = (rmin + ymax) / 2;
  const double n = std::max(1e-9, std::hypot(cx - pos.x, cy - pos.y));
  return {spec.speed_min * 0.5 * (cx - pos.x) / n, spec.speed_min * 0.5 * (cy - pos.y) / n};
}

}  // namespace

uint64_t fnv1a_hash(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

GeneratedVideo generate_video(const SyntheticSpec& spec, const std::string& video_id) {
  spec.validate();
  std::mt19937 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Boundary layout and types.
  auto frames = sample_boundary_frames(spec, rng);
  std::vector<BoundaryType> types(frames.size());
  for (size_t i = 0; i < types.size(); ++i)
    types[i] = i < static_cast<size_t>(spec.n_shot_boundaries) ? BoundaryType::Shot
                                                               : BoundaryType::Event;
  std::shuffle(types.begin(), types.end(), rng);

  std::vector<int> shot_frames, event_frames;
  for (size_t i = 0; i < frames.size(); ++i)
    (types[i] == BoundaryType::Shot ? shot_frames : event_frames).push_back(frames[i]);

  // Palettes per shot segment; consecutive palettes must differ visibly.
  std::vector<Palette> palettes;
  palettes.push_back(random_palette(rng));
  for (size_t i = 0; i < shot_frames.size(); ++i) {
    Palette next = random_palette(rng);
    int guard = 0;
    while (color_dist(next.mean(), palettes.back().mean()) < 0.22 && guard++ < 64)
      next = random_palette(rng);
    palettes.push_back(next);
  }

  // Sprite color away from every background so motion stays visible.
  Color sprite_base;
  {
    int guard = 0;
    do {
      sprite_base = random_color(rng, 0.15, 0.85);
      ++guard;
    } while (guard < 64 &&
             std::any_of(palettes.begin(), palettes.end(), [&](const Palette& p) {
               return color_dist(sprite_base, p.mean()) < 0.25;
             }));
  }
  const Color mod_x = random_color(rng, -1, 1) * 0.25;
  const Color mod_y = random_color(rng, -1, 1) * 0.25;

  // Trajectory: constant-velocity segments; velocity changes only at event
  // boundaries, with a single amplified transition step planted there.
  std::vector<Vec2> pos(static_cast<size_t>(spec.t));
  {
    std::uniform_real_distribution<double> px(spec.width * 0.3, spec.width * 0.7);
    std::uniform_real_distribution<double> py(spec.height * 0.3, spec.height * 0.7);
    pos[0] = {px(rng), py(rng)};
    size_t next_event = 0;
    const int first_seg_end = event_frames.empty() ? spec.t : event_frames[0];
    Vec2 vel = pick_velocity(rng, spec, pos[0], first_seg_end - 1, nullptr, 1.0);
    for (int i = 1; i < spec.t; ++i) {
      if (next_event < event_frames.size() && i == event_frames[next_event]) {
        const int seg_end =
            next_event + 1 < event_frames.size() ? event_frames[next_event + 1] : spec.t;
        Vec2 nv = pick_velocity(rng, spec, pos[static_cast<size_t>(i - 1)], seg_end - i, &vel,
                                spec.transition_kick);
        pos[static_cast<size_t>(i)] = {pos[static_cast<size_t>(i - 1)].x + nv.x * spec.transition_kick,
                                       pos[static_cast<size_t>(i - 1)].y + nv.y * spec.transition_kick};
        vel = nv;
        ++next_event;
      } else {
        pos[static_cast<size_t>(i)] = {pos[static_cast<size_t>(i - 1)].x + vel.x,
                                       pos[static_cast<size_t>(i - 1)].y + vel.y};
      }
    }
  }

  // Render.
  FrameSequence v;
  v.video_id = video_id;
  v.t = spec.t;
  v.h = spec.height;
  v.w = spec.width;
  v.fps = spec.fps;
  v.duration_s = spec.duration_s();
  v.frames.resize(static_cast<size_t>(spec.t) * spec.height * spec.width * 3);
  std::uniform_real_distribution<double> noise(-spec.noise_level, spec.noise_level);

  size_t next_shot = 0;
  int palette_idx = 0;
  for (int i = 0; i < spec.t; ++i) {
    if (next_shot < shot_frames.size() && i == shot_frames[next_shot]) {
      ++palette_idx;
      ++next_shot;
    }
    const Palette& pal = palettes[static_cast<size_t>(palette_idx)];
    const Vec2 sp = pos[static_cast<size_t>(i)];
    const Color cs = sprite_base + mod_x * (sp.x / spec.width - 0.5) + mod_y * (sp.y / spec.height - 0.5);
    float* f = v.frame(i);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        Color c = pal.at((x + 0.5) / spec.width, (y + 0.5) / spec.height);
        const double dist = std::hypot(x + 0.5 - sp.x, y + 0.5 - sp.y);
        const double alpha = std::clamp(spec.sprite_radius + 0.5 - dist, 0.0, 1.0);
        if (alpha > 0) c = c * (1.0 - alpha) + cs * alpha;
        float* px = f + (static_cast<int64_t>(y) * spec.width + x) * 3;
        px[0] = static_cast<float>(std::clamp(c.r + noise(rng), 0.0, 1.0));
        px[1] = static_cast<float>(std::clamp(c.g + noise(rng), 0.0, 1.0));
        px[2] = static_cast<float>(std::clamp(c.b + noise(rng), 0.0, 1.0));
      }
    }
  }

  GeneratedVideo out;
  out.video = std::move(v);
  out.annotation.video_id = video_id;
  out.annotation.fps = spec.fps;
  out.annotation.duration_s = spec.duration_s();
  out.annotation.denominator_s = spec.duration_s();
  AnnotatorBoundaries ab;
  for (size_t i = 0; i < frames.size(); ++i) {
    ab.boundaries_s.push_back(frame_index_to_seconds(frames[i], spec.t, spec.duration_s()));
    ab.types.push_back(types[i]);
  }
  out.annotation.annotators.push_back(std::move(ab));
  out.annotation.validate();
  out.split = "train";
  return out;
}

std::vector<GeneratedVideo> generate_dataset(int n_videos, const SyntheticSpec& spec_template,
                                             uint32_t seed) {
  if (n_videos < 1) throw ValidationError("generate_dataset: n >= 1 required");
  std::mt19937 seeder(seed ^ 0xda7a5e7u);
  std::vector<GeneratedVideo> out;
  for (int i = 0; i < n_videos; ++i) {
    SyntheticSpec spec = spec_template;
    spec.seed = seeder();
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%05d", i);
    out.push_back(generate_video(spec, id));
  }
  // 80/20 split by hash rank of video_id: lowest fifth goes to validation.
  const int n_val = n_videos / 5;
  std::vector<int> order(static_cast<size_t>(n_videos));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto ha = fnv1a_hash(out[static_cast<size_t>(a)].video.video_id);
    const auto hb = fnv1a_hash(out[static_cast<size_t>(b)].video.video_id);
    if (ha != hb) return ha < hb;
    return a < b;
  });
  for (int r = 0; r < n_videos; ++r)
    out[static_cast<size_t>(order[static_cast<size_t>(r)])].split = r < n_val ? "val" : "train";
  return out;
}

std::vector<double> adjacent_frame_differences(const FrameSequence& video) {
  video.validate();
  std::vector<double> d(static_cast<size_t>(video.t), 0.0);
  const int64_t n = video.frame_stride();
  for (int i = 1; i < video.t; ++i) {
    const float* a = video.frame(i - 1);
    const float* b = video.frame(i);
    double acc = 0;
    for (int64_t p = 0; p < n; ++p) acc += std::abs(static_cast<double>(b[p]) - a[p]);
    d[static_cast<size_t>(i)] = acc / static_cast<double>(n);
  }
  return d;
}

Prediction pixel_difference_baseline(const FrameSequence& video, double factor,
                                     int min_separation) {
  auto d = adjacent_frame_differences(video);
  std::vector<double> tail(d.begin() + 1, d.end());
  std::sort(tail.begin(), tail.end());
  const double median = tail.empty() ? 0.0 : tail[tail.size() / 2];
  const double thr = factor * median;
  std::vector<int> cand;
  for (int i = 1; i < video.t; ++i) {
    if (d[static_cast<size_t>(i)] < thr || d[static_cast<size_t>(i)] <= 0) continue;
    const bool rising = d[static_cast<size_t>(i)] > d[static_cast<size_t>(i - 1)];
    const bool falling = (i == video.t - 1) || d[static_cast<size_t>(i)] >= d[static_cast<size_t>(i + 1)];
    if (rising && falling) cand.push_back(i);
  }
  std::vector<int> order(cand.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double da = d[static_cast<size_t>(cand[static_cast<size_t>(a)])];
    const double db = d[static_cast<size_t>(cand[static_cast<size_t>(b)])];
    if (da != db) return da > db;
    return cand[static_cast<size_t>(a)] < cand[static_cast<size_t>(b)];
  });
  std::vector<int> picked;
  for (int oi : order) {
    const int idx = cand[static_cast<size_t>(oi)];
    bool ok = true;
    for (int p : picked)
      if (std::abs(p - idx) < min_separation) ok = false;
    if (ok) picked.push_back(idx);
  }
  std::sort(picked.begin(), picked.end());
  Prediction out;
  out.video_id = video.video_id;
  for (int idx : picked)
    out.boundaries_s.push_back(frame_index_to_seconds(idx, video.t, video.duration_s));
  return out;
}

}  // namespace gebd
