#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pointseg {

// 8-bit interchange buffer, HWC layout. channels is 1 or 3.
struct ImageU8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<uint8_t> data;

  uint8_t at(int y, int x, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t& at(int y, int x, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// RGB image files. PNG by default; .ppm selects binary P6. Reads convert
// grayscale and palette content to RGB.
ImageU8 read_image_file(const std::string& path);
void write_image_file(const std::string& path, const ImageU8& img);

// Label mask files: single channel, values are raw label indices (palette
// PNGs are read without palette expansion). Writes produce an 8-bit palette
// PNG using the standard VOC colormap, or binary P5 for .pgm paths.
ImageU8 read_mask_file(const std::string& path);
void write_mask_file(const std::string& path, const ImageU8& mask);

// The VOC-style colormap used for palette mask output; 256 RGB triples.
std::vector<uint8_t> voc_colormap();

}  // namespace pointseg
