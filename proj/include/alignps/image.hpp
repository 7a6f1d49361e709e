// 8-bit RGB images and a minimal PNG codec (8-bit RGB, non-interlaced).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alignps/tensor.hpp"

namespace alignps {

struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel

  uint8_t& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  uint8_t at(int y, int x, int c) const {
    return rgb[(static_cast<size_t>(y) * width + x) * 3 + c];
  }

  static ImageU8 filled(int w, int h, uint8_t v = 0) {
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.rgb.assign(static_cast<size_t>(w) * h * 3, v);
    return img;
  }
};

void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

// (3,H,W) tensor in [0,1] from 8-bit RGB, and back (rounding to the u8 grid).
Tensord image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensord& t);

}  // namespace alignps
