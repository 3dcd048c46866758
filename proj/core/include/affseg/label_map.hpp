#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace affseg {

/// H x W integer class labels, row-major.
struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<int> values;

  LabelMap() = default;
  LabelMap(int height, int width, int fill = 0)
      : h(height), w(width), values(static_cast<size_t>(height) * width, fill) {}

  int& at(int y, int x) { return values[static_cast<size_t>(y) * w + x]; }
  int at(int y, int x) const { return values[static_cast<size_t>(y) * w + x]; }
  long numel() const { return static_cast<long>(h) * w; }

  bool operator==(const LabelMap& o) const {
    return h == o.h && w == o.w && values == o.values;
  }
};

}  // namespace affseg
