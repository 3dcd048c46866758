#include "affseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "affseg/errors.hpp"

namespace affseg {

// ---------------------------------------------------------------------------
// Taxonomy
// ---------------------------------------------------------------------------

namespace taxonomy {

const std::array<std::string, kSegClasses>& affordance_names() {
  static const std::array<std::string, kSegClasses> names = {
      "background", "grasp", "cut", "lift", "push", "rotate", "hammer", "squeeze", "paint",
      "type"};
  return names;
}

const std::array<std::string, kActions>& action_names() {
  static const std::array<std::string, kActions> names = {
      "grasping", "cutting", "lifting", "pushing", "rotating", "hammering", "squeezing",
      "painting", "typing"};
  return names;
}

int affordance_index(const std::string& name) {
  const auto& names = affordance_names();
  for (int i = 0; i < kSegClasses; ++i) {
    if (names[static_cast<size_t>(i)] == name) return i;
  }
  return -1;
}

int action_index(const std::string& name) {
  const auto& names = action_names();
  for (int i = 0; i < kActions; ++i) {
    if (names[static_cast<size_t>(i)] == name) return i;
  }
  return -1;
}

const std::vector<PaletteColor>& palette() {
  static const std::vector<PaletteColor> colors = {
      {0, 0, 0},        // background
      {144, 238, 144},  // grasp: light green
      {255, 255, 0},    // cut: yellow
      {0, 128, 0},      // lift: green
      {0, 255, 255},    // push: cyan
      {255, 0, 0},      // rotate: red
      {255, 165, 0},    // hammer: orange
      {255, 0, 255},    // squeeze: magenta
      {0, 0, 255},      // paint: blue
      {128, 0, 128},    // type: purple
  };
  return colors;
}

}  // namespace taxonomy

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

struct Rgb {
  double r, g, b;
};

struct ObjectStyle {
  Rgb color;
  double half_w, half_h;  // at 48-pixel canvas scale
  bool ellipse;
};

const std::map<std::string, ObjectStyle>& object_styles() {
  static const std::map<std::string, ObjectStyle> styles = {
      {"mug", {{0.45, 0.42, 0.40}, 9, 7, true}},
      {"pitcher", {{0.50, 0.47, 0.44}, 8, 10, true}},
      {"bottle", {{0.42, 0.46, 0.50}, 5, 10, true}},
      {"knife", {{0.55, 0.55, 0.58}, 12, 3, false}},
      {"hammer", {{0.40, 0.36, 0.33}, 10, 4, false}},
      {"box", {{0.52, 0.44, 0.36}, 11, 8, false}},
      {"jar", {{0.47, 0.50, 0.43}, 7, 7, true}},
      {"sponge", {{0.58, 0.52, 0.40}, 9, 5, false}},
      {"brush", {{0.44, 0.40, 0.48}, 11, 3, false}},
      {"keyboard", {{0.38, 0.40, 0.42}, 13, 5, false}},
  };
  return styles;
}

// Part colours code the affordance class. The grasp and lift families
// deliberately overlap so appearance alone cannot separate them; the
// hand trajectory can.
Rgb part_base_color(int affordance) {
  switch (affordance) {
    case 1: return {0.30, 0.72, 0.35};  // grasp
    case 2: return {0.85, 0.80, 0.20};  // cut
    case 3: return {0.33, 0.76, 0.30};  // lift
    case 4: return {0.20, 0.80, 0.85};  // push
    case 5: return {0.85, 0.25, 0.20};  // rotate
    case 6: return {0.90, 0.55, 0.15};  // hammer
    case 7: return {0.85, 0.25, 0.80};  // squeeze
    case 8: return {0.25, 0.35, 0.90};  // paint
    case 9: return {0.55, 0.30, 0.80};  // type
    default: throw DataError("unknown affordance index " + std::to_string(affordance));
  }
}

struct Shape {
  double cx, cy, rx, ry;
  bool ellipse;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    if (ellipse) {
      const double nx = dx / rx, ny = dy / ry;
      return nx * nx + ny * ny <= 1.0;
    }
    return std::abs(dx) <= rx && std::abs(dy) <= ry;
  }
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double smoothstep(double s) { return s * s * (3.0 - 2.0 * s); }

// Hand centre at normalised time u in [0,1]: approach the near-point N
// during the first half, then perform the affordance-specific motion
// relative to the part centre P.
struct Trajectory {
  double sx, sy;  // start
  double nx, ny;  // rest point next to the part
  double px, py;  // part centre
  int affordance;
  double scale;

  std::pair<double, double> at(double u) const {
    if (u <= 0.5) {
      const double s = smoothstep(u / 0.5);
      return {sx + (nx - sx) * s, sy + (ny - sy) * s};
    }
    const double v = (u - 0.5) / 0.5;
    switch (affordance) {
      case 1:  // grasp: settle onto the part
        return {nx + (px - nx) * 0.3 * v, ny + (py - ny) * 0.3 * v};
      case 2:  // cut: lateral sawing
        return {nx + 6.0 * scale * std::sin(4.0 * M_PI * v), ny};
      case 3:  // lift: rise after contact
        return {nx, ny - 8.0 * scale * v};
      case 4:  // push: continue through the part
        return {nx + (px - nx) * 1.5 * v, ny + (py - ny) * 1.5 * v};
      case 5: {  // rotate: orbit the part
        const double r = std::hypot(nx - px, ny - py);
        const double phi0 = std::atan2(ny - py, nx - px);
        return {px + r * std::cos(phi0 + M_PI * v), py + r * std::sin(phi0 + M_PI * v)};
      }
      case 6:  // hammer: two strikes
        return {nx, ny - 7.0 * scale * std::abs(std::sin(2.0 * M_PI * v))};
      case 7: {  // squeeze: radial pulsing toward the part
        const double f = 1.0 - 0.45 * (0.5 - 0.5 * std::cos(4.0 * M_PI * v));
        return {px + (nx - px) * f, py + (ny - py) * f};
      }
      case 8:  // paint: sweeping strokes
        return {nx + 7.0 * scale * std::sin(3.0 * M_PI * v), ny + 2.0 * scale * v};
      case 9:  // type: three small taps
        return {nx, ny - 3.0 * scale * std::abs(std::sin(3.0 * M_PI * v))};
      default:
        return {nx, ny};
    }
  }
};

}  // namespace

const std::vector<std::string>& object_kinds() {
  static const std::vector<std::string> kinds = {"mug",    "pitcher", "bottle", "knife",
                                                 "hammer", "box",     "jar",    "sponge",
                                                 "brush",  "keyboard"};
  return kinds;
}

const std::vector<std::string>& compatible_objects(int affordance) {
  static const std::vector<std::vector<std::string>> table = {
      {},                             // background
      {"mug", "pitcher", "bottle"},   // grasp
      {"knife"},                      // cut
      {"mug", "pitcher", "bottle"},   // lift
      {"box"},                        // push
      {"jar"},                        // rotate
      {"hammer"},                     // hammer
      {"bottle", "sponge"},           // squeeze
      {"brush"},                      // paint
      {"keyboard"},                   // type
  };
  if (affordance < 1 || affordance > taxonomy::kAffordanceClasses) {
    throw DataError("unknown affordance index " + std::to_string(affordance));
  }
  return table[static_cast<size_t>(affordance)];
}

SynthSpec random_spec(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> aff(1, taxonomy::kAffordanceClasses);
  SynthSpec spec;
  spec.affordance = aff(rng);
  const auto& objects = compatible_objects(spec.affordance);
  std::uniform_int_distribution<size_t> obj(0, objects.size() - 1);
  spec.object_kind = objects[obj(rng)];
  return spec;
}

InteractionSequence generate_synthetic_sequence(const SynthSpec& spec, uint64_t seed,
                                                const SynthOptions& options) {
  if (spec.affordance < 1 || spec.affordance > taxonomy::kAffordanceClasses) {
    throw DataError("generate: unknown affordance index " + std::to_string(spec.affordance));
  }
  const auto style_it = object_styles().find(spec.object_kind);
  if (style_it == object_styles().end()) {
    throw DataError("generate: unknown object kind '" + spec.object_kind + "'");
  }
  if (options.frames < 2) throw DataError("generate: need at least 2 frames");
  const ObjectStyle& style = style_it->second;

  const int size = options.size;
  const double scale = size / 48.0;
  std::mt19937_64 rng(seed);

  const Rgb bg = {0.55 + uniform(rng, -0.05, 0.05), 0.58 + uniform(rng, -0.05, 0.05),
                  0.62 + uniform(rng, -0.05, 0.05)};
  const double bg_depth = 0.62 + uniform(rng, -0.03, 0.03);
  const Rgb body_color = {style.color.r + uniform(rng, -0.05, 0.05),
                          style.color.g + uniform(rng, -0.05, 0.05),
                          style.color.b + uniform(rng, -0.05, 0.05)};
  const double body_depth = 0.44 + uniform(rng, -0.02, 0.02);
  const Rgb part_base = part_base_color(spec.affordance);
  const Rgb part_color = {part_base.r + uniform(rng, -0.06, 0.06),
                          part_base.g + uniform(rng, -0.06, 0.06),
                          part_base.b + uniform(rng, -0.06, 0.06)};
  const double part_depth = 0.38 + uniform(rng, -0.02, 0.02);
  const Rgb hand_color = {0.80 + uniform(rng, -0.04, 0.04), 0.62 + uniform(rng, -0.04, 0.04),
                          0.50 + uniform(rng, -0.04, 0.04)};
  const double hand_depth = 0.26 + uniform(rng, -0.02, 0.02);

  Shape body;
  body.cx = size * 0.5 + uniform(rng, -3.0, 3.0) * scale;
  body.cy = size * 0.55 + uniform(rng, -3.0, 3.0) * scale;
  body.rx = style.half_w * scale * uniform(rng, 0.85, 1.15);
  body.ry = style.half_h * scale * uniform(rng, 0.85, 1.15);
  body.ellipse = style.ellipse;

  Shape part;
  part.rx = 4.0 * scale * uniform(rng, 0.75, 1.25);
  part.ry = 3.0 * scale * uniform(rng, 0.75, 1.25);
  part.ellipse = uniform(rng, 0.0, 1.0) < 0.5;
  const int side = static_cast<int>(uniform(rng, 0.0, 3.0));  // 0 top, 1 left, 2 right
  if (side == 0) {
    part.cx = body.cx + uniform(rng, -0.5, 0.5) * body.rx * 0.8;
    part.cy = body.cy - body.ry - part.ry + 2.0 * scale;
  } else if (side == 1) {
    part.cx = body.cx - body.rx - part.rx + 2.0 * scale;
    part.cy = body.cy + uniform(rng, -0.5, 0.5) * body.ry * 0.8;
  } else {
    part.cx = body.cx + body.rx + part.rx - 2.0 * scale;
    part.cy = body.cy + uniform(rng, -0.5, 0.5) * body.ry * 0.8;
  }
  part.cx = std::clamp(part.cx, part.rx + 1.0, size - part.rx - 2.0);
  part.cy = std::clamp(part.cy, part.ry + 1.0, size - part.ry - 2.0);

  const double hand_rx = 3.2 * scale * uniform(rng, 0.85, 1.15);
  const double hand_ry = 2.7 * scale * uniform(rng, 0.85, 1.15);

  Trajectory traj;
  traj.px = part.cx;
  traj.py = part.cy;
  traj.affordance = spec.affordance;
  traj.scale = scale;
  const double theta = uniform(rng, 0.0, 2.0 * M_PI);
  const double radius = uniform(rng, 18.0, 22.0) * scale;
  traj.sx = std::clamp(part.cx + radius * std::cos(theta), 2.0, size - 3.0);
  traj.sy = std::clamp(part.cy + radius * std::sin(theta), 2.0, size - 3.0);
  const double stop = std::max(part.rx, part.ry) + std::max(hand_rx, hand_ry) * 0.6;
  const double slen = std::hypot(traj.sx - part.cx, traj.sy - part.cy);
  traj.nx = part.cx + (traj.sx - part.cx) / slen * stop;
  traj.ny = part.cy + (traj.sy - part.cy) / slen * stop;

  // Static per-scene texture: keeps patch matching well-posed without
  // breaking frame-to-frame correspondence.
  std::vector<double> rgb_noise(static_cast<size_t>(size) * size);
  std::vector<double> depth_noise(static_cast<size_t>(size) * size);
  for (auto& v : rgb_noise) v = uniform(rng, -0.03, 0.03);
  for (auto& v : depth_noise) v = uniform(rng, -0.004, 0.004);

  // Base scene (no hand), shared across frames.
  RgbdFrame base(size, size);
  LabelMap mask(size, size, 0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double fx = x + 0.5, fy = y + 0.5;
      Rgb c = bg;
      double d = bg_depth;
      if (body.contains(fx, fy)) {
        c = body_color;
        d = body_depth;
      }
      if (part.contains(fx, fy)) {
        c = part_color;
        d = part_depth;
        mask.at(y, x) = spec.affordance;
      }
      const size_t i = static_cast<size_t>(y) * size + x;
      base.rgb_at(0, y, x) = std::clamp(c.r + rgb_noise[i], 0.0, 1.0);
      base.rgb_at(1, y, x) = std::clamp(c.g + rgb_noise[i], 0.0, 1.0);
      base.rgb_at(2, y, x) = std::clamp(c.b + rgb_noise[i], 0.0, 1.0);
      base.depth_at(y, x) = std::clamp(d + depth_noise[i], 0.01, 1.0);
    }
  }

  InteractionSequence seq;
  seq.object_kind = spec.object_kind;
  seq.action_label = spec.affordance - 1;
  seq.fps = options.fps;
  seq.mask = mask;
  seq.frames.reserve(static_cast<size_t>(options.frames));

  for (int t = 0; t < options.frames; ++t) {
    RgbdFrame frame = base;
    const bool hand_visible = t < options.frames - 1;  // last frame: object at rest
    if (hand_visible) {
      const double u =
          options.frames > 2 ? static_cast<double>(t) / (options.frames - 2) : 0.0;
      auto [hx, hy] = traj.at(std::min(u, 1.0));
      Shape hand{hx, hy, hand_rx, hand_ry, true};
      const int x0 = std::max(0, static_cast<int>(hx - hand_rx - 1));
      const int x1 = std::min(size - 1, static_cast<int>(hx + hand_rx + 1));
      const int y0 = std::max(0, static_cast<int>(hy - hand_ry - 1));
      const int y1 = std::min(size - 1, static_cast<int>(hy + hand_ry + 1));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          if (!hand.contains(x + 0.5, y + 0.5)) continue;
          const size_t i = static_cast<size_t>(y) * size + x;
          frame.rgb_at(0, y, x) = std::clamp(hand_color.r + rgb_noise[i], 0.0, 1.0);
          frame.rgb_at(1, y, x) = std::clamp(hand_color.g + rgb_noise[i], 0.0, 1.0);
          frame.rgb_at(2, y, x) = std::clamp(hand_color.b + rgb_noise[i], 0.0, 1.0);
          frame.depth_at(y, x) = std::clamp(hand_depth + depth_noise[i], 0.01, 1.0);
        }
      }
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Dataset I/O
// ---------------------------------------------------------------------------

namespace {

namespace fs = std::filesystem;

std::string frame_name(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d.png", idx);
  return buf;
}

}  // namespace

void save_sequence(const InteractionSequence& seq, const fs::path& dir, double max_depth_units) {
  if (seq.frames.empty()) throw DataError("save_sequence: empty sequence");
  fs::create_directories(dir / "rgb");
  fs::create_directories(dir / "depth");

  const double max_mm = max_depth_units * 1000.0;
  for (size_t t = 0; t < seq.frames.size(); ++t) {
    const RgbdFrame& f = seq.frames[t];
    ImageU8 rgb(3, f.h, f.w);
    rgb.data = quantize_u8(f.rgb);
    write_png_rgb8(dir / "rgb" / frame_name(static_cast<int>(t)), rgb);

    ImageGray16 depth(f.h, f.w);
    for (size_t i = 0; i < f.depth.size(); ++i) {
      const double mm = std::clamp(f.depth[i], 0.0, 1.0) * max_mm;
      depth.data[i] = static_cast<uint16_t>(std::lround(mm));
    }
    write_png_gray16(dir / "depth" / frame_name(static_cast<int>(t)), depth);
  }

  write_png_indexed(dir / "mask.png", seq.mask, taxonomy::palette());

  nlohmann::json meta = {
      {"action", taxonomy::action_names()[static_cast<size_t>(seq.action_label)]},
      {"object", seq.object_kind},
      {"fps", seq.fps},
  };
  std::ofstream out(dir / "meta.json");
  out << meta.dump(2) << "\n";
}

InteractionSequence load_sequence(const fs::path& dir, double max_depth_units) {
  if (!fs::exists(dir / "meta.json")) {
    throw DataError("sequence " + dir.string() + ": missing meta.json");
  }
  if (!fs::exists(dir / "mask.png")) {
    throw DataError("sequence " + dir.string() + ": missing annotation mask.png");
  }

  nlohmann::json meta;
  {
    std::ifstream in(dir / "meta.json");
    try {
      in >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("sequence " + dir.string() + ": malformed meta.json: " + e.what());
    }
  }

  InteractionSequence seq;
  const std::string action = meta.at("action").get<std::string>();
  const int action_idx = taxonomy::action_index(action);
  if (action_idx < 0) {
    throw DataError("sequence " + dir.string() + ": unknown action '" + action + "'");
  }
  seq.action_label = action_idx;
  seq.object_kind = meta.value("object", std::string("unknown"));
  seq.fps = meta.value("fps", 30);

  // Frames sorted by filename; indices must be strictly increasing.
  std::vector<std::pair<std::string, int>> frames;
  if (fs::exists(dir / "rgb")) {
    for (const auto& entry : fs::directory_iterator(dir / "rgb")) {
      if (entry.path().extension() != ".png") continue;
      const std::string stem = entry.path().stem().string();
      try {
        frames.emplace_back(stem, std::stoi(stem));
      } catch (const std::exception&) {
        throw DataError("sequence " + dir.string() + ": non-numeric frame name '" + stem + "'");
      }
    }
  }
  if (frames.empty()) {
    throw DataError("sequence " + dir.string() + ": no rgb frames");
  }
  std::sort(frames.begin(), frames.end());
  for (size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].second <= frames[i - 1].second) {
      throw DataError("sequence " + dir.string() + ": non-monotonic frame indices: " +
                      std::to_string(frames[i].second) + " after " +
                      std::to_string(frames[i - 1].second));
    }
  }

  const double max_mm = max_depth_units * 1000.0;
  for (const auto& [stem, idx] : frames) {
    const fs::path depth_path = dir / "depth" / (stem + ".png");
    if (!fs::exists(depth_path)) {
      throw DataError("sequence " + dir.string() + ": missing depth frame " + stem + ".png");
    }
    ImageU8 rgb = read_png_rgb8(dir / "rgb" / (stem + ".png"));
    ImageGray16 depth = read_png_gray16(depth_path);

    RgbdFrame frame(depth.h, depth.w);
    if (rgb.h != depth.h || rgb.w != depth.w) {
      // Map RGB to the depth resolution so the streams register.
      for (int c = 0; c < 3; ++c) {
        std::vector<double> plane(static_cast<size_t>(rgb.h) * rgb.w);
        for (size_t i = 0; i < plane.size(); ++i) {
          plane[i] = rgb.data[static_cast<size_t>(c) * rgb.h * rgb.w + i] / 255.0;
        }
        std::vector<double> resized = resize_bilinear(plane, rgb.h, rgb.w, depth.h, depth.w);
        std::copy(resized.begin(), resized.end(),
                  frame.rgb.begin() + static_cast<long>(c) * depth.h * depth.w);
      }
    } else {
      frame.rgb = dequantize_u8(rgb.data);
    }
    for (size_t i = 0; i < depth.data.size(); ++i) {
      frame.depth[i] = std::min(depth.data[i] / max_mm, 1.0);
    }
    seq.frames.push_back(std::move(frame));
  }

  seq.mask = read_png_indexed(dir / "mask.png");
  const int fh = seq.frames.front().h, fw = seq.frames.front().w;
  if (seq.mask.h != fh || seq.mask.w != fw) {
    seq.mask = resize_nearest(seq.mask, fh, fw);
  }
  for (int v : seq.mask.values) {
    if (v < 0 || v >= taxonomy::kSegClasses) {
      throw DataError("sequence " + dir.string() + ": unknown label " + std::to_string(v) +
                      " in mask (have " + std::to_string(taxonomy::kSegClasses) + " classes)");
    }
  }
  return seq;
}

std::vector<fs::path> list_split(const fs::path& root, const std::string& split) {
  const fs::path dir = root / split;
  if (!fs::exists(dir)) {
    throw DataError("dataset split not found: " + dir.string());
  }
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

FlowCache load_flow_cache(const fs::path& dir) {
  FlowCache cache;
  const fs::path flow_dir = dir / "flow";
  if (!fs::exists(flow_dir)) return cache;
  for (const auto& entry : fs::directory_iterator(flow_dir)) {
    if (entry.path().extension() != ".png") continue;
    try {
      cache[std::stoi(entry.path().stem().string())] = read_png_rgb8(entry.path());
    } catch (const std::exception&) {
      continue;  // ignore foreign files
    }
  }
  return cache;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

std::vector<int> subsample_indices(int frame_count, int source_fps, int target_fps) {
  if (frame_count < 1) throw DataError("subsample: empty sequence");
  if (target_fps < 1 || source_fps < 1) {
    throw ConfigError("subsample: fps values must be positive");
  }
  if (target_fps > source_fps) {
    throw ConfigError("subsample: target fps " + std::to_string(target_fps) +
                      " exceeds source fps " + std::to_string(source_fps));
  }
  const int stride = source_fps / target_fps;
  std::vector<int> kept;
  for (int i = 0; i < frame_count; i += stride) kept.push_back(i);
  if (kept.back() != frame_count - 1) kept.push_back(frame_count - 1);  // keep the labelled frame
  return kept;
}

namespace {

TensorPtr flow_image_to_tensor(const ImageU8& img, int target_h, int target_w, int flow_dim) {
  TensorPtr t = Tensor::zeros({3, target_h, target_w});
  const long hw = static_cast<long>(target_h) * target_w;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> plane(static_cast<size_t>(img.h) * img.w);
    for (size_t i = 0; i < plane.size(); ++i) {
      plane[i] = img.data[static_cast<size_t>(c) * img.h * img.w + i] / 255.0;
    }
    if (img.h != target_h || img.w != target_w) {
      plane = resize_bilinear(plane, img.h, img.w, target_h, target_w);
    }
    std::copy(plane.begin(), plane.end(), t->data().begin() + c * hw);
  }
  if (flow_dim == 2) {
    std::fill(t->data().begin() + 2 * hw, t->data().end(), kZeroMotionColor / 255.0);
  }
  return t;
}

}  // namespace

SequenceBatch preprocess(const InteractionSequence& seq, int target_h, int target_w,
                         int source_fps, int target_fps, const PreprocessOptions& options) {
  if (target_h % 8 != 0 || target_w % 8 != 0) {
    throw ConfigError("preprocess: target size " + std::to_string(target_h) + "x" +
                      std::to_string(target_w) + " must be divisible by 8");
  }
  if (seq.frames.empty()) throw DataError("preprocess: empty sequence");
  const std::vector<int> kept = subsample_indices(static_cast<int>(seq.frames.size()),
                                                  source_fps, target_fps);

  SequenceBatch batch;
  batch.action_label = seq.action_label;
  const int channels = options.use_depth ? 4 : 3;
  const long hw = static_cast<long>(target_h) * target_w;
  const CameraIntrinsics intr =
      CameraIntrinsics::defaults_for(seq.frames.front().h, seq.frames.front().w);

  for (size_t k = 0; k < kept.size(); ++k) {
    const RgbdFrame& f = seq.frames[static_cast<size_t>(kept[k])];
    TensorPtr app = Tensor::zeros({channels, target_h, target_w});
    for (int c = 0; c < 3; ++c) {
      std::vector<double> plane(f.rgb.begin() + static_cast<long>(c) * f.h * f.w,
                                f.rgb.begin() + static_cast<long>(c + 1) * f.h * f.w);
      if (f.h != target_h || f.w != target_w) {
        plane = resize_bilinear(plane, f.h, f.w, target_h, target_w);
      }
      std::copy(plane.begin(), plane.end(), app->data().begin() + c * hw);
    }
    if (options.use_depth) {
      std::vector<double> plane = f.depth;
      if (f.h != target_h || f.w != target_w) {
        plane = resize_bilinear(plane, f.h, f.w, target_h, target_w);
      }
      std::copy(plane.begin(), plane.end(), app->data().begin() + 3 * hw);
    }
    batch.appearance.push_back(app);

    if (k == 0) {
      batch.flow.push_back(Tensor::full({3, target_h, target_w}, kZeroMotionColor / 255.0));
    } else {
      ImageU8 colorized;
      const int later = kept[k];
      if (options.flow_cache && options.flow_cache->count(later)) {
        colorized = options.flow_cache->at(later);
      } else {
        FlowField field = estimate_scene_flow(seq.frames[static_cast<size_t>(kept[k - 1])],
                                              seq.frames[static_cast<size_t>(later)], intr,
                                              options.flow_options);
        colorized = colorize_flow(field);
      }
      batch.flow.push_back(flow_image_to_tensor(colorized, target_h, target_w, options.flow_dim));
    }
  }

  batch.mask = (seq.mask.h != target_h || seq.mask.w != target_w)
                   ? resize_nearest(seq.mask, target_h, target_w)
                   : seq.mask;
  return batch;
}

}  // namespace affseg
