#pragma once

#include <vector>

#include "affseg/frame.hpp"
#include "affseg/image.hpp"

namespace affseg {

/// Per-pixel 3D motion between two registered RGB-D frames: (vx, vy) in
/// pixels of image motion, vz in depth units per frame step. Zero where
/// depth is invalid in either frame.
struct FlowField {
  int h = 0;
  int w = 0;
  std::vector<double> v;  // 3 * h * w, planar (vx, vy, vz)

  FlowField() = default;
  FlowField(int height, int width)
      : h(height), w(width), v(static_cast<size_t>(3) * height * width, 0.0) {}

  double& at(int axis, int y, int x) { return v[(static_cast<size_t>(axis) * h + y) * w + x]; }
  double at(int axis, int y, int x) const {
    return v[(static_cast<size_t>(axis) * h + y) * w + x];
  }
};

struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;  // focal lengths, pixels
  double cx = 0.0, cy = 0.0;  // principal point, pixels

  static CameraIntrinsics defaults_for(int h, int w);
  void validate() const;
};

struct FlowOptions {
  int pyramid_levels = 3;
  int patch_radius = 3;   // 7x7 patches
  int search_radius = 4;  // per level, pixels
};

/// Coarse-to-fine patch-matching estimate of the 3D motion field between
/// two consecutive frames. (vx, vy) come from SAD matching over an
/// intensity pyramid with quadratic subpixel refinement; vz is the
/// bilinear depth difference along the estimated image motion.
FlowField estimate_scene_flow(const RgbdFrame& prev, const RgbdFrame& next,
                              const CameraIntrinsics& intrinsics,
                              const FlowOptions& options = {});

/// Normalises each axis independently to [0,255] (half-up rounding). An
/// axis with no dynamic range maps uniformly to 128.
ImageU8 colorize_flow(const FlowField& field);

/// The colour a zero-motion field colorizes to, on every channel.
inline constexpr uint8_t kZeroMotionColor = 128;

}  // namespace affseg
