#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "affseg/flow.hpp"

using namespace affseg;

namespace {

// Flat background with a textured square; constant depth unless stated.
RgbdFrame textured_square_frame(int size, int sq_x, int sq_y, int sq_side, uint64_t seed,
                                double depth = 0.5) {
  RgbdFrame f(size, size);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) f.rgb_at(c, y, x) = 0.5;
      f.depth_at(y, x) = depth;
    }
  }
  for (int y = 0; y < sq_side; ++y) {
    for (int x = 0; x < sq_side; ++x) {
      const double v = dist(rng);
      const int yy = sq_y + y, xx = sq_x + x;
      if (yy < 0 || yy >= size || xx < 0 || xx >= size) continue;
      for (int c = 0; c < 3; ++c) f.rgb_at(c, yy, xx) = v;
    }
  }
  return f;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("identical frames produce an all-zero field") {
  RgbdFrame f = textured_square_frame(32, 8, 8, 12, 1);
  FlowField field = estimate_scene_flow(f, f, CameraIntrinsics::defaults_for(32, 32));
  for (double v : field.v) CHECK(v == 0.0);
}

TEST_CASE("translated textured square is recovered within half a pixel") {
  const int size = 48, side = 14, x0 = 12, y0 = 16;
  RgbdFrame prev = textured_square_frame(size, x0, y0, side, 5);
  RgbdFrame next = textured_square_frame(size, x0 + 2, y0, side, 5);
  FlowField field =
      estimate_scene_flow(prev, next, CameraIntrinsics::defaults_for(size, size));

  std::vector<double> vx, vy;
  for (int y = y0 + 2; y < y0 + side - 2; ++y) {
    for (int x = x0 + 2; x < x0 + side - 2; ++x) {
      vx.push_back(field.at(0, y, x));
      vy.push_back(field.at(1, y, x));
    }
  }
  CHECK(std::abs(median(vx) - 2.0) < 0.5);
  CHECK(std::abs(median(vy) - 0.0) < 0.5);
}

TEST_CASE("uniform depth change shows up in the vz channel") {
  const int size = 32;
  RgbdFrame prev = textured_square_frame(size, 4, 4, 24, 9, 0.5);
  RgbdFrame next = textured_square_frame(size, 4, 4, 24, 9, 0.4);
  FlowField field =
      estimate_scene_flow(prev, next, CameraIntrinsics::defaults_for(size, size));
  std::vector<double> vz;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) vz.push_back(field.at(2, y, x));
  }
  CHECK(std::abs(median(vz) + 0.1) < 1e-3);
}

TEST_CASE("invalid depth in either frame zeroes the vector") {
  RgbdFrame prev = textured_square_frame(16, 2, 2, 12, 11);
  RgbdFrame next = prev;
  prev.depth_at(3, 3) = 0.0;  // invalid in prev
  next.depth_at(8, 8) = 0.0;  // invalid in next at the (static) match position
  FlowField field = estimate_scene_flow(prev, next, CameraIntrinsics::defaults_for(16, 16));
  for (int a = 0; a < 3; ++a) {
    CHECK(field.at(a, 3, 3) == 0.0);
    CHECK(field.at(a, 8, 8) == 0.0);
  }
}

TEST_CASE("antisymmetry on pure translations") {
  const int size = 48, side = 16, x0 = 10, y0 = 14;
  RgbdFrame a = textured_square_frame(size, x0, y0, side, 21);
  RgbdFrame b = textured_square_frame(size, x0 + 3, y0 + 1, side, 21);
  const CameraIntrinsics intr = CameraIntrinsics::defaults_for(size, size);
  FlowField fwd = estimate_scene_flow(a, b, intr);
  FlowField bwd = estimate_scene_flow(b, a, intr);

  std::vector<double> sum_x, sum_y;
  for (int y = y0 + 3; y < y0 + side - 3; ++y) {
    for (int x = x0 + 3; x < x0 + side - 3; ++x) {
      sum_x.push_back(fwd.at(0, y, x) + bwd.at(0, y + 1, x + 3));
      sum_y.push_back(fwd.at(1, y, x) + bwd.at(1, y + 1, x + 3));
    }
  }
  CHECK(std::abs(median(sum_x)) < 0.5);
  CHECK(std::abs(median(sum_y)) < 0.5);
}

TEST_CASE("frame extent mismatch is rejected") {
  RgbdFrame a(16, 16), b(16, 24);
  CHECK_THROWS_AS(estimate_scene_flow(a, b, CameraIntrinsics::defaults_for(16, 16)),
                  std::invalid_argument);
}

TEST_CASE("intrinsics validation") {
  CameraIntrinsics bad{0.0, 1.0, 0.0, 0.0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK(CameraIntrinsics::defaults_for(48, 64).fx > 0.0);
}

TEST_CASE("colorize_flow: degenerate field maps to mid-gray") {
  FlowField field(4, 4);
  ImageU8 img = colorize_flow(field);
  for (uint8_t v : img.data) CHECK(v == 128);
}

TEST_CASE("colorize_flow: {-1, 0, 1} maps to {0, 128, 255}") {
  FlowField field(1, 3);
  field.at(0, 0, 0) = -1.0;
  field.at(0, 0, 1) = 0.0;
  field.at(0, 0, 2) = 1.0;
  ImageU8 img = colorize_flow(field);
  CHECK(img.at(0, 0, 0) == 0);
  CHECK(img.at(0, 0, 1) == 128);  // 127.5 rounds half-up
  CHECK(img.at(0, 0, 2) == 255);
}

TEST_CASE("colorize_flow: per-axis endpoints hit 0 and 255, range respected") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> dist(-4.0, 4.0);
  FlowField field(6, 7);
  for (double& v : field.v) v = dist(rng);
  ImageU8 img = colorize_flow(field);
  const long hw = 6 * 7;
  for (int axis = 0; axis < 3; ++axis) {
    uint8_t lo = 255, hi = 0;
    for (long i = 0; i < hw; ++i) {
      lo = std::min(lo, img.data[static_cast<size_t>(axis * hw + i)]);
      hi = std::max(hi, img.data[static_cast<size_t>(axis * hw + i)]);
    }
    CHECK(lo == 0);
    CHECK(hi == 255);
  }
}

TEST_CASE("colorize_flow is invariant under positive per-axis affine maps") {
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  FlowField field(5, 5);
  for (double& v : field.v) v = dist(rng);

  FlowField scaled = field;
  const double scale[3] = {2.5, 0.7, 11.0};
  const double shift[3] = {1.0, -3.0, 0.25};
  const long hw = 25;
  for (int axis = 0; axis < 3; ++axis) {
    for (long i = 0; i < hw; ++i) {
      scaled.v[static_cast<size_t>(axis * hw + i)] =
          scale[axis] * field.v[static_cast<size_t>(axis * hw + i)] + shift[axis];
    }
  }
  ImageU8 a = colorize_flow(field);
  ImageU8 b = colorize_flow(scaled);
  for (size_t i = 0; i < a.data.size(); ++i) {
    CHECK(std::abs(static_cast<int>(a.data[i]) - static_cast<int>(b.data[i])) <= 1);
  }
}
