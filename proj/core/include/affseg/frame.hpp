#pragma once

#include <array>
#include <string>
#include <vector>

#include "affseg/image.hpp"
#include "affseg/label_map.hpp"

namespace affseg {

/// One registered colour+depth time step. Values are in [0,1]; depth is
/// normalised by the configured max range and 0 encodes invalid depth.
struct RgbdFrame {
  int h = 0;
  int w = 0;
  std::vector<double> rgb;    // 3 * h * w, planar
  std::vector<double> depth;  // h * w

  RgbdFrame() = default;
  RgbdFrame(int height, int width)
      : h(height), w(width),
        rgb(static_cast<size_t>(3) * height * width, 0.0),
        depth(static_cast<size_t>(height) * width, 0.0) {}

  double& rgb_at(int c, int y, int x) { return rgb[(static_cast<size_t>(c) * h + y) * w + x]; }
  double rgb_at(int c, int y, int x) const {
    return rgb[(static_cast<size_t>(c) * h + y) * w + x];
  }
  double& depth_at(int y, int x) { return depth[static_cast<size_t>(y) * w + x]; }
  double depth_at(int y, int x) const { return depth[static_cast<size_t>(y) * w + x]; }
};

/// An ordered interaction clip: frames, a pixel-wise affordance mask for
/// the last frame only, and the complementary action label.
struct InteractionSequence {
  std::vector<RgbdFrame> frames;
  LabelMap mask;      // labels over [0, seg class count) for the final frame
  int action_label = 0;
  std::string object_kind;
  int fps = 30;
};

/// Stable label encoding: affordance class 0 is background, classes 1..9
/// are the affordances; action k corresponds to affordance k+1.
namespace taxonomy {

inline constexpr int kAffordanceClasses = 9;   // excludes background
inline constexpr int kSegClasses = 10;         // background + affordances
inline constexpr int kActions = 9;

const std::array<std::string, kSegClasses>& affordance_names();  // index 0 = "background"
const std::array<std::string, kActions>& action_names();

/// Index of an affordance name in [0, kSegClasses); -1 if unknown.
int affordance_index(const std::string& name);
/// Index of an action name in [0, kActions); -1 if unknown.
int action_index(const std::string& name);

/// Fixed visualisation palette, one colour per segmentation class.
const std::vector<PaletteColor>& palette();

}  // namespace taxonomy

}  // namespace affseg
