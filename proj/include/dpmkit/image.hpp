#pragma once

#include <vector>

#include "dpmkit/common.hpp"

namespace dpmkit {

// 8-bit-origin RGB image held as doubles in [0,1], row-major, interleaved.
struct Image {
  int h = 0;
  int w = 0;
  std::vector<double> px;  // h*w*3

  Image() = default;
  Image(int height, int width, double fill = 0.0)
      : h(height), w(width), px(size_t(height) * width * 3, fill) {}

  double& at(int y, int x, int c) { return px[(size_t(y) * w + x) * 3 + c]; }
  double at(int y, int x, int c) const { return px[(size_t(y) * w + x) * 3 + c]; }
};

}  // namespace dpmkit
