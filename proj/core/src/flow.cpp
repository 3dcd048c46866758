#include "affseg/flow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace affseg {

namespace {

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;

  double at_clamped(int y, int x) const {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return v[static_cast<size_t>(y) * w + x];
  }
};

Plane intensity_of(const RgbdFrame& f) {
  Plane p{f.h, f.w, std::vector<double>(static_cast<size_t>(f.h) * f.w)};
  const long hw = static_cast<long>(f.h) * f.w;
  for (long i = 0; i < hw; ++i) {
    p.v[static_cast<size_t>(i)] =
        (f.rgb[static_cast<size_t>(i)] + f.rgb[static_cast<size_t>(hw + i)] +
         f.rgb[static_cast<size_t>(2 * hw + i)]) /
        3.0;
  }
  return p;
}

Plane downsample2(const Plane& src) {
  Plane dst;
  dst.h = (src.h + 1) / 2;
  dst.w = (src.w + 1) / 2;
  dst.v.resize(static_cast<size_t>(dst.h) * dst.w);
  for (int y = 0; y < dst.h; ++y) {
    for (int x = 0; x < dst.w; ++x) {
      const double s = src.at_clamped(2 * y, 2 * x) + src.at_clamped(2 * y, 2 * x + 1) +
                       src.at_clamped(2 * y + 1, 2 * x) + src.at_clamped(2 * y + 1, 2 * x + 1);
      dst.v[static_cast<size_t>(y) * dst.w + x] = s * 0.25;
    }
  }
  return dst;
}

double patch_sad(const Plane& a, const Plane& b, int ay, int ax, int by, int bx, int radius) {
  double acc = 0.0;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      acc += std::abs(a.at_clamped(ay + dy, ax + dx) - b.at_clamped(by + dy, bx + dx));
    }
  }
  return acc;
}

// Fit a parabola through three costs and return the sub-pixel offset of
// its minimum, clamped to [-0.5, 0.5]. Degenerate curvature gives 0.
double subpixel_offset(double c_minus, double c0, double c_plus) {
  const double denom = c_minus - 2.0 * c0 + c_plus;
  if (denom <= 1e-12) return 0.0;
  return std::clamp(0.5 * (c_minus - c_plus) / denom, -0.5, 0.5);
}

struct Displacement {
  int dy, dx;
};

std::vector<Displacement> search_order(int radius) {
  std::vector<Displacement> d;
  d.reserve(static_cast<size_t>(2 * radius + 1) * (2 * radius + 1));
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) d.push_back({dy, dx});
  }
  // Nearest displacements first, so flat regions resolve to zero motion.
  std::stable_sort(d.begin(), d.end(), [](const Displacement& a, const Displacement& b) {
    return a.dy * a.dy + a.dx * a.dx < b.dy * b.dy + b.dx * b.dx;
  });
  return d;
}

// true if depth_next can be sampled bilinearly at (x, y) with all four
// taps valid; writes the interpolated depth to *out.
bool sample_depth(const RgbdFrame& f, double y, double x, double* out) {
  if (y < 0.0 || x < 0.0 || y > f.h - 1 || x > f.w - 1) return false;
  const int y0 = static_cast<int>(y);
  const int x0 = static_cast<int>(x);
  const int y1 = std::min(y0 + 1, f.h - 1);
  const int x1 = std::min(x0 + 1, f.w - 1);
  const double d00 = f.depth_at(y0, x0), d01 = f.depth_at(y0, x1);
  const double d10 = f.depth_at(y1, x0), d11 = f.depth_at(y1, x1);
  if (d00 <= 0.0 || d01 <= 0.0 || d10 <= 0.0 || d11 <= 0.0) return false;
  const double wy = y - y0, wx = x - x0;
  *out = (d00 * (1.0 - wx) + d01 * wx) * (1.0 - wy) + (d10 * (1.0 - wx) + d11 * wx) * wy;
  return true;
}

}  // namespace

CameraIntrinsics CameraIntrinsics::defaults_for(int h, int w) {
  // Kinect-like horizontal field of view scaled to the frame size.
  const double f = 0.85 * std::max(h, w);
  return {f, f, 0.5 * (w - 1), 0.5 * (h - 1)};
}

void CameraIntrinsics::validate() const {
  if (fx <= 0.0 || fy <= 0.0) {
    throw std::invalid_argument("camera intrinsics: focal lengths must be positive");
  }
}

FlowField estimate_scene_flow(const RgbdFrame& prev, const RgbdFrame& next,
                              const CameraIntrinsics& intrinsics, const FlowOptions& options) {
  if (prev.h != next.h || prev.w != next.w) {
    throw std::invalid_argument("estimate_scene_flow: frame extents differ (" +
                                std::to_string(prev.h) + "x" + std::to_string(prev.w) + " vs " +
                                std::to_string(next.h) + "x" + std::to_string(next.w) + ")");
  }
  intrinsics.validate();

  // Intensity pyramids, fines first. Levels stop once the image gets
  // too small to hold a search window.
  std::vector<Plane> pyr_prev{intensity_of(prev)};
  std::vector<Plane> pyr_next{intensity_of(next)};
  for (int l = 1; l < options.pyramid_levels; ++l) {
    const Plane& last = pyr_prev.back();
    if (last.h / 2 < 2 * options.patch_radius + 2 || last.w / 2 < 2 * options.patch_radius + 2) {
      break;
    }
    pyr_prev.push_back(downsample2(pyr_prev.back()));
    pyr_next.push_back(downsample2(pyr_next.back()));
  }

  const std::vector<Displacement> order = search_order(options.search_radius);

  std::vector<double> u, v;  // current level estimates
  for (int level = static_cast<int>(pyr_prev.size()) - 1; level >= 0; --level) {
    const Plane& a = pyr_prev[static_cast<size_t>(level)];
    const Plane& b = pyr_next[static_cast<size_t>(level)];
    std::vector<double> nu(static_cast<size_t>(a.h) * a.w, 0.0);
    std::vector<double> nv(static_cast<size_t>(a.h) * a.w, 0.0);

    const bool coarsest = (level == static_cast<int>(pyr_prev.size()) - 1);
    const Plane* up = nullptr;
    if (!coarsest) up = &pyr_prev[static_cast<size_t>(level) + 1];

    for (int y = 0; y < a.h; ++y) {
      for (int x = 0; x < a.w; ++x) {
        double iu = 0.0, iv = 0.0;
        if (!coarsest) {
          const int cy = std::min(y / 2, up->h - 1);
          const int cx = std::min(x / 2, up->w - 1);
          iu = 2.0 * u[static_cast<size_t>(cy) * up->w + cx];
          iv = 2.0 * v[static_cast<size_t>(cy) * up->w + cx];
        }
        const int ix = static_cast<int>(std::lround(iu));
        const int iy = static_cast<int>(std::lround(iv));
        const int bx = x + ix;
        const int by = y + iy;

        // Ties (flat regions) resolve to the smallest total displacement,
        // so texture-free areas stay at zero motion instead of keeping
        // stale coarse-level estimates.
        double best_cost = 0.0;
        long best_total = 0;
        int best_dy = 0, best_dx = 0;
        bool first = true;
        for (const Displacement& d : order) {
          const double c =
              patch_sad(a, b, y, x, by + d.dy, bx + d.dx, options.patch_radius);
          const long total = static_cast<long>(ix + d.dx) * (ix + d.dx) +
                             static_cast<long>(iy + d.dy) * (iy + d.dy);
          if (first || c < best_cost - 1e-12 ||
              (c < best_cost + 1e-12 && total < best_total)) {
            best_cost = c;
            best_total = total;
            best_dy = d.dy;
            best_dx = d.dx;
            first = false;
          }
        }

        double sub_x = 0.0, sub_y = 0.0;
        // A perfect match needs no refinement; the parabola fit would
        // otherwise drift off the exact minimum.
        if (best_cost > 1e-12 && std::abs(best_dx) < options.search_radius) {
          const double cm =
              patch_sad(a, b, y, x, by + best_dy, bx + best_dx - 1, options.patch_radius);
          const double cp =
              patch_sad(a, b, y, x, by + best_dy, bx + best_dx + 1, options.patch_radius);
          sub_x = subpixel_offset(cm, best_cost, cp);
        }
        if (best_cost > 1e-12 && std::abs(best_dy) < options.search_radius) {
          const double cm =
              patch_sad(a, b, y, x, by + best_dy - 1, bx + best_dx, options.patch_radius);
          const double cp =
              patch_sad(a, b, y, x, by + best_dy + 1, bx + best_dx, options.patch_radius);
          sub_y = subpixel_offset(cm, best_cost, cp);
        }

        nu[static_cast<size_t>(y) * a.w + x] = std::lround(iu) + best_dx + sub_x;
        nv[static_cast<size_t>(y) * a.w + x] = std::lround(iv) + best_dy + sub_y;
      }
    }
    u = std::move(nu);
    v = std::move(nv);
  }

  FlowField field(prev.h, prev.w);
  for (int y = 0; y < prev.h; ++y) {
    for (int x = 0; x < prev.w; ++x) {
      const size_t i = static_cast<size_t>(y) * prev.w + x;
      const double vx = u[i], vy = v[i];
      const double d0 = prev.depth_at(y, x);
      double d1 = 0.0;
      if (d0 <= 0.0 || !sample_depth(next, y + vy, x + vx, &d1)) {
        continue;  // invalid depth in either frame: zero vector
      }
      field.at(0, y, x) = vx;
      field.at(1, y, x) = vy;
      field.at(2, y, x) = d1 - d0;
    }
  }
  return field;
}

ImageU8 colorize_flow(const FlowField& field) {
  ImageU8 img(3, field.h, field.w);
  const long hw = static_cast<long>(field.h) * field.w;
  for (int axis = 0; axis < 3; ++axis) {
    const double* src = field.v.data() + axis * hw;
    uint8_t* dst = img.data.data() + axis * hw;
    double lo = src[0], hi = src[0];
    for (long i = 1; i < hw; ++i) {
      lo = std::min(lo, src[i]);
      hi = std::max(hi, src[i]);
    }
    if (hi > lo) {
      const double scale = 255.0 / (hi - lo);
      for (long i = 0; i < hw; ++i) {
        dst[i] = static_cast<uint8_t>(std::floor((src[i] - lo) * scale + 0.5));
      }
    } else {
      std::fill(dst, dst + hw, kZeroMotionColor);
    }
  }
  return img;
}

}  // namespace affseg
