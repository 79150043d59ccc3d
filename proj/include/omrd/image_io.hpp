#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace omrd {

// Interleaved 8-bit RGB.
struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3
};

void write_png_rgb(const std::string& path, const ImageU8& img);

// PNG or JPEG, selected by file signature. Anything else is rejected.
ImageU8 read_image_rgb(const std::string& path);

ImageU8 resize_bilinear(const ImageU8& src, int out_h, int out_w);

}  // namespace omrd
