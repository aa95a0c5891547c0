#pragma once

#include <string>
#include <vector>

#include "cycledepth/common.hpp"

namespace cycledepth {

// Planar CHW float image, values nominally in [0,1] for RGB content.
struct ImageF {
  i64 channels = 0;
  i64 height = 0;
  i64 width = 0;
  std::vector<float> data;

  ImageF() = default;
  ImageF(i64 c, i64 h, i64 w) : channels(c), height(h), width(w), data(c * h * w, 0.0f) {}

  float& at(i64 c, i64 y, i64 x) { return data[(c * height + y) * width + x]; }
  float at(i64 c, i64 y, i64 x) const { return data[(c * height + y) * width + x]; }
  i64 numel() const { return channels * height * width; }
};

// Binary PPM (P6), maxval 255, values scaled to [0,1] on load.
void save_ppm(const std::string& path, const ImageF& image);
ImageF load_ppm(const std::string& path);

// Grayscale PFM ("Pf"), little-endian via a negative scale header, rows
// stored bottom-up. Round-trips are bit-exact.
void save_pfm(const std::string& path, const ImageF& image);
ImageF load_pfm(const std::string& path);

// In-memory codecs used by the file functions above (and by byte-level tests).
std::vector<unsigned char> encode_ppm(const ImageF& image);
ImageF decode_ppm(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_pfm(const ImageF& image);
ImageF decode_pfm(const std::vector<unsigned char>& bytes);

}  // namespace cycledepth
