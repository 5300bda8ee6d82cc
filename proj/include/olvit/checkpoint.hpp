#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "olvit/error.hpp"
#include "olvit/optim.hpp"
#include "olvit/params.hpp"

namespace olvit {

// Checkpoint directory layout:
//   manifest.json  format, step, metadata, and one entry per tensor (name, shape, dtype, offset, bytes)
//   tensors.bin    little-endian IEEE-754 values back to back
// Tensor names: "param/<name>", "adam_m/<name>", "adam_v/<name>".
inline constexpr const char* kCheckpointFormat = "olvit-checkpoint-v1";

template <class T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

namespace detail {

template <class T>
void append_le(std::vector<char>& blob, const std::vector<T>& values) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T v : values) {
    U bits;
    std::memcpy(&bits, &v, sizeof(T));
    for (std::size_t b = 0; b < sizeof(T); ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  }
}

template <class T>
std::vector<T> read_le(const std::vector<char>& blob, std::size_t offset, std::size_t count) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  if (offset + count * sizeof(T) > blob.size()) throw IoError("checkpoint blob is truncated");
  std::vector<T> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    U bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b)
      bits |= static_cast<U>(static_cast<unsigned char>(blob[offset + i * sizeof(T) + b])) << (8 * b);
    std::memcpy(&out[i], &bits, sizeof(T));
  }
  return out;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& dir, const ParamStore<T>& params, const AdamW<T>* optim = nullptr,
                     const nlohmann::json& metadata = nlohmann::json::object()) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir + ": " + ec.message());
  std::vector<char> blob;
  nlohmann::json tensors = nlohmann::json::array();
  auto add = [&](const std::string& name, const Shape& shape, const std::vector<T>& values) {
    tensors.push_back({{"name", name},
                       {"shape", shape},
                       {"dtype", dtype_name<T>()},
                       {"offset", blob.size()},
                       {"bytes", values.size() * sizeof(T)}});
    detail::append_le(blob, values);
  };
  const auto& entries = params.entries();
  for (const auto& p : entries) add("param/" + p.name, p.value.shape(), p.value.values());
  if (optim) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      add("adam_m/" + entries[i].name, entries[i].value.shape(), optim->state().m[i]);
      add("adam_v/" + entries[i].name, entries[i].value.shape(), optim->state().v[i]);
    }
  }
  nlohmann::json manifest = {{"format", kCheckpointFormat},
                             {"blob", "tensors.bin"},
                             {"optimizer_step", optim ? optim->state().step : 0},
                             {"has_optimizer", optim != nullptr},
                             {"metadata", metadata},
                             {"tensors", tensors}};
  {
    std::ofstream out(fs::path(dir) / "tensors.bin", std::ios::binary);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("cannot write checkpoint blob in " + dir);
  }
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("cannot write checkpoint manifest in " + dir);
}

inline nlohmann::json read_checkpoint_manifest(const std::string& dir) {
  std::ifstream in(std::filesystem::path(dir) / "manifest.json");
  if (!in) throw IoError("missing checkpoint manifest in " + dir);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint manifest in " + dir + ": " + e.what());
  }
  if (manifest.value("format", "") != kCheckpointFormat) throw IoError("unrecognised checkpoint format in " + dir);
  return manifest;
}

// Restores every registered parameter (and optimizer moments when `optim` is
// given); names, shapes and dtype must match exactly. Returns the metadata.
template <class T>
nlohmann::json load_checkpoint(const std::string& dir, ParamStore<T>& params, AdamW<T>* optim = nullptr) {
  const auto manifest = read_checkpoint_manifest(dir);
  std::ifstream in(std::filesystem::path(dir) / manifest.at("blob").get<std::string>(), std::ios::binary);
  if (!in) throw IoError("missing checkpoint blob in " + dir);
  std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::unordered_map<std::string, nlohmann::json> index;
  for (const auto& t : manifest.at("tensors")) index[t.at("name").get<std::string>()] = t;
  auto fetch = [&](const std::string& name, const Shape& shape) {
    auto it = index.find(name);
    if (it == index.end()) throw IoError("checkpoint in " + dir + " lacks tensor " + name);
    const auto& t = it->second;
    if (t.at("dtype").get<std::string>() != dtype_name<T>()) throw IoError("dtype mismatch for " + name);
    if (t.at("shape").get<Shape>() != shape) {
      throw IoError("shape mismatch for " + name + ": checkpoint " + shape_str(t.at("shape").get<Shape>()) +
                    ", model " + shape_str(shape));
    }
    return detail::read_le<T>(blob, t.at("offset").get<std::size_t>(), shape_numel(shape));
  };
  auto& entries = params.entries();
  for (auto& p : entries) {
    const auto values = fetch("param/" + p.name, p.value.shape());
    std::copy(values.begin(), values.end(), p.value.mutable_data().begin());
  }
  if (optim) {
    if (!manifest.value("has_optimizer", false)) throw IoError("checkpoint in " + dir + " has no optimizer state");
    auto& st = optim->state();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      st.m[i] = fetch("adam_m/" + entries[i].name, entries[i].value.shape());
      st.v[i] = fetch("adam_v/" + entries[i].name, entries[i].value.shape());
    }
    st.step = manifest.at("optimizer_step").get<std::size_t>();
  }
  return manifest.at("metadata");
}

}  // namespace olvit
