#include "cycledepth/image_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace cycledepth {

namespace {

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed on " + path);
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
}

[[noreturn]] void malformed(const char* what, size_t offset) {
  throw ValueError(std::string(what) + " at byte offset " + std::to_string(offset));
}

// Reads a whitespace-delimited ASCII token starting at `pos`.
std::string next_token(const std::vector<unsigned char>& bytes, size_t& pos) {
  while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
  const size_t start = pos;
  while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
  if (start == pos) malformed("unexpected end of header", pos);
  return std::string(bytes.begin() + start, bytes.begin() + pos);
}

i64 parse_dim(const std::string& tok, size_t offset) {
  try {
    size_t used = 0;
    long long v = std::stoll(tok, &used);
    if (used != tok.size() || v <= 0) malformed("invalid dimension", offset);
    return static_cast<i64>(v);
  } catch (const std::logic_error&) {
    malformed("invalid dimension", offset);
  }
}

float f32_from_le(const unsigned char* p) {
  unsigned char b[4] = {p[0], p[1], p[2], p[3]};
  if constexpr (std::endian::native == std::endian::big) {
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
  }
  float v;
  std::memcpy(&v, b, 4);
  return v;
}

void f32_to_le(float v, unsigned char* p) {
  std::memcpy(p, &v, 4);
  if constexpr (std::endian::native == std::endian::big) {
    std::swap(p[0], p[3]);
    std::swap(p[1], p[2]);
  }
}

}  // namespace

std::vector<unsigned char> encode_ppm(const ImageF& image) {
  if (image.channels != 3) throw ShapeError("ppm: expected 3 channels");
  std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<size_t>(image.numel()));
  for (i64 y = 0; y < image.height; ++y) {
    for (i64 x = 0; x < image.width; ++x) {
      for (i64 c = 0; c < 3; ++c) {
        float v = image.at(c, y, x);
        v = std::min(1.0f, std::max(0.0f, v));
        out.push_back(static_cast<unsigned char>(std::lround(v * 255.0f)));
      }
    }
  }
  return out;
}

ImageF decode_ppm(const std::vector<unsigned char>& bytes) {
  size_t pos = 0;
  size_t at = pos;
  std::string magic = next_token(bytes, pos);
  if (magic != "P6") malformed("not a P6 ppm", at);
  at = pos;
  const i64 w = parse_dim(next_token(bytes, pos), at);
  at = pos;
  const i64 h = parse_dim(next_token(bytes, pos), at);
  at = pos;
  std::string maxval = next_token(bytes, pos);
  if (maxval != "255") malformed("unsupported ppm maxval (expected 255)", at);
  if (pos >= bytes.size()) malformed("missing pixel data", pos);
  ++pos;  // single whitespace byte after the header
  const size_t need = static_cast<size_t>(3 * w * h);
  if (bytes.size() - pos < need) malformed("truncated pixel data", bytes.size());
  ImageF img(3, h, w);
  for (i64 y = 0; y < h; ++y) {
    for (i64 x = 0; x < w; ++x) {
      for (i64 c = 0; c < 3; ++c) {
        img.at(c, y, x) = static_cast<float>(bytes[pos++]) / 255.0f;
      }
    }
  }
  return img;
}

std::vector<unsigned char> encode_pfm(const ImageF& image) {
  if (image.channels != 1) throw ShapeError("pfm: expected 1 channel");
  std::string header =
      "Pf\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n-1.0\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.resize(out.size() + static_cast<size_t>(image.numel()) * 4);
  unsigned char* p = out.data() + header.size();
  // PFM rows run bottom-up.
  for (i64 y = image.height - 1; y >= 0; --y) {
    for (i64 x = 0; x < image.width; ++x) {
      f32_to_le(image.at(0, y, x), p);
      p += 4;
    }
  }
  return out;
}

ImageF decode_pfm(const std::vector<unsigned char>& bytes) {
  size_t pos = 0;
  size_t at = pos;
  std::string magic = next_token(bytes, pos);
  if (magic == "PF") malformed("color pfm not supported", at);
  if (magic != "Pf") malformed("not a pfm", at);
  at = pos;
  const i64 w = parse_dim(next_token(bytes, pos), at);
  at = pos;
  const i64 h = parse_dim(next_token(bytes, pos), at);
  at = pos;
  std::string scale = next_token(bytes, pos);
  double sc = 0;
  try {
    sc = std::stod(scale);
  } catch (const std::logic_error&) {
    malformed("invalid scale", at);
  }
  if (sc >= 0) malformed("big-endian pfm not supported (scale must be negative)", at);
  if (pos >= bytes.size()) malformed("missing pixel data", pos);
  ++pos;  // single whitespace byte after the scale
  const size_t need = static_cast<size_t>(w * h) * 4;
  if (bytes.size() - pos < need) malformed("truncated pixel data", bytes.size());
  ImageF img(1, h, w);
  for (i64 y = h - 1; y >= 0; --y) {
    for (i64 x = 0; x < w; ++x) {
      img.at(0, y, x) = f32_from_le(bytes.data() + pos);
      pos += 4;
    }
  }
  return img;
}

void save_ppm(const std::string& path, const ImageF& image) { write_file(path, encode_ppm(image)); }

ImageF load_ppm(const std::string& path) { return decode_ppm(read_file(path)); }

void save_pfm(const std::string& path, const ImageF& image) { write_file(path, encode_pfm(image)); }

ImageF load_pfm(const std::string& path) { return decode_pfm(read_file(path)); }

}  // namespace cycledepth
