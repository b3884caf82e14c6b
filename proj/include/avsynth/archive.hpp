#pragma once

// Named-array container used for every file the library persists: feature
// sequences, normalization stats, perceptual weights, model checkpoints and
// bundles.
//
// Layout (all integers little-endian):
//
//   bytes 0..3   magic "AVSA"
//   bytes 4..7   uint32 format version
//   bytes 8..15  uint64 header length N
//   next N bytes UTF-8 JSON header:
//                  { "kind": str, "meta": object,
//                    "arrays": [ { "name", "dtype", "shape", "offset", "nbytes" } ] }
//   remainder    raw array payloads, C order, at the recorded offsets
//
// dtype is one of "f32", "f64", "i64", "u8". Offsets are relative to the
// start of the payload section. Array order is insertion order, so saving the
// same content twice yields identical bytes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace avsynth {

class Archive {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  Archive() = default;
  explicit Archive(std::string kind) : kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }
  std::uint32_t version() const { return version_; }

  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  // Replaces an existing entry of the same name.
  void put(const std::string& name, const torch::Tensor& tensor);
  torch::Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;

  // Stores every parameter and buffer of `module` under "<prefix>.<name>".
  void put_module(const std::string& prefix, const torch::nn::Module& module);
  // Copies stored values into `module`; every parameter must be present with
  // a matching shape.
  void load_module(const std::string& prefix, torch::nn::Module& module) const;

  std::string to_bytes() const;
  static Archive from_bytes(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

  // Throws IoError unless kind() equals `expected`.
  void expect_kind(const std::string& expected) const;

 private:
  struct Entry {
    std::string name;
    torch::Tensor tensor;
  };

  std::string kind_;
  std::uint32_t version_ = kFormatVersion;
  nlohmann::json meta_ = nlohmann::json::object();
  std::vector<Entry> entries_;
};

// Lower-case hex SHA-256 of a byte string or file.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace avsynth
