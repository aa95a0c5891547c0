#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cycledepth/optimizer.hpp"

namespace cycledepth {

// Checkpoint = JSON manifest (<path>) + raw blob (<path>.bin).
// The manifest lists parameter names, shapes and byte offsets; the blob holds
// little-endian 32-bit floats: per parameter, value then Adam m then Adam v.
// Round-trips are bit-exact for float parameters.

namespace detail {

inline void append_f32_le(std::vector<unsigned char>& out, float v) {
  static_assert(sizeof(float) == 4);
  unsigned char b[4];
  std::memcpy(b, &v, 4);
  if constexpr (std::endian::native == std::endian::big) {
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
  }
  out.insert(out.end(), b, b + 4);
}

inline float read_f32_le(const unsigned char* p) {
  unsigned char b[4] = {p[0], p[1], p[2], p[3]};
  if constexpr (std::endian::native == std::endian::big) {
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
  }
  float v;
  std::memcpy(&v, b, 4);
  return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path,
                     const std::vector<std::shared_ptr<Parameter<T>>>& params,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest;
  manifest["format"] = "cycledepth-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float32";
  const std::string blob_name = std::filesystem::path(path).filename().string() + ".bin";
  manifest["blob"] = blob_name;
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();

  std::vector<unsigned char> blob;
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& p : params) {
    const Shape& s = p->value.shape();
    nlohmann::json entry;
    entry["name"] = p->name;
    entry["shape"] = {s.n, s.c, s.h, s.w};
    entry["offset"] = blob.size();
    for (T v : p->value.data()) detail::append_f32_le(blob, static_cast<float>(v));
    entry["adam_m_offset"] = blob.size();
    if (p->adam_m.empty()) {
      for (i64 i = 0; i < p->numel(); ++i) detail::append_f32_le(blob, 0.0f);
    } else {
      for (T v : p->adam_m) detail::append_f32_le(blob, static_cast<float>(v));
    }
    entry["adam_v_offset"] = blob.size();
    if (p->adam_v.empty()) {
      for (i64 i = 0; i < p->numel(); ++i) detail::append_f32_le(blob, 0.0f);
    } else {
      for (T v : p->adam_v) detail::append_f32_le(blob, static_cast<float>(v));
    }
    entry["adam_t"] = p->adam_t;
    plist.push_back(entry);
  }
  manifest["params"] = plist;

  const std::string blob_path = (std::filesystem::path(path).parent_path() / blob_name).string();
  {
    std::ofstream f(blob_path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("checkpoint: cannot write " + blob_path);
    f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!f) throw IoError("checkpoint: write failed on " + blob_path);
  }
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("checkpoint: cannot write " + path);
    f << manifest.dump(2) << "\n";
    if (!f) throw IoError("checkpoint: write failed on " + path);
  }
}

inline nlohmann::json load_checkpoint_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw StateError("checkpoint: cannot open " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("checkpoint: malformed manifest " + path + ": " + e.what());
  }
  if (manifest.value("format", "") != "cycledepth-checkpoint") {
    throw IoError("checkpoint: " + path + " is not a checkpoint manifest");
  }
  return manifest;
}

// Loads parameter values and Adam state into an existing parameter set.
// Every parameter must be present in the manifest with a matching shape.
template <typename T>
void load_checkpoint(const std::string& path,
                     const std::vector<std::shared_ptr<Parameter<T>>>& params) {
  nlohmann::json manifest = load_checkpoint_manifest(path);
  const std::string blob_path =
      (std::filesystem::path(path).parent_path() / manifest.at("blob").get<std::string>())
          .string();
  std::ifstream f(blob_path, std::ios::binary);
  if (!f) throw StateError("checkpoint: cannot open blob " + blob_path);
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());

  std::unordered_map<std::string, const nlohmann::json*> index;
  for (const auto& e : manifest.at("params")) index[e.at("name").get<std::string>()] = &e;

  auto read_block = [&](size_t offset, i64 count, std::vector<T>& out) {
    if (offset + static_cast<size_t>(count) * 4 > blob.size()) {
      throw IoError("checkpoint: blob " + blob_path + " truncated");
    }
    out.resize(static_cast<size_t>(count));
    for (i64 i = 0; i < count; ++i) {
      out[static_cast<size_t>(i)] =
          static_cast<T>(detail::read_f32_le(blob.data() + offset + static_cast<size_t>(i) * 4));
    }
  };

  for (const auto& p : params) {
    auto it = index.find(p->name);
    if (it == index.end()) {
      throw StateError("checkpoint: parameter " + p->name + " missing from " + path);
    }
    const nlohmann::json& e = *it->second;
    const auto& sh = e.at("shape");
    Shape s{sh.at(0).get<i64>(), sh.at(1).get<i64>(), sh.at(2).get<i64>(), sh.at(3).get<i64>()};
    if (!(s == p->value.shape())) {
      throw ShapeError("checkpoint: parameter " + p->name + " shape " + s.str() +
                       " does not match " + p->value.shape().str());
    }
    std::vector<T> buf;
    read_block(e.at("offset").get<size_t>(), p->numel(), buf);
    std::copy(buf.begin(), buf.end(), p->value.mutable_data().begin());
    read_block(e.at("adam_m_offset").get<size_t>(), p->numel(), p->adam_m);
    read_block(e.at("adam_v_offset").get<size_t>(), p->numel(), p->adam_v);
    p->adam_t = e.at("adam_t").get<i64>();
  }
}

}  // namespace cycledepth
