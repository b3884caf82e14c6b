#include "avsynth/archive.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "avsynth/error.hpp"

namespace avsynth {
namespace {

constexpr std::array<char, 4> kMagic{'A', 'V', 'S', 'A'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    default:
      throw ConfigError("archive: unsupported dtype " + std::string(c10::toString(t)));
  }
}

torch::ScalarType dtype_from_name(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  if (name == "i64") return torch::kInt64;
  if (name == "u8") return torch::kUInt8;
  throw IoError("archive: unknown dtype '" + name + "'");
}

template <typename T>
void append_le(std::string& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <typename T>
T read_le(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return static_cast<T>(v);
}

}  // namespace

void Archive::put(const std::string& name, const torch::Tensor& tensor) {
  if (!tensor.defined()) throw ConfigError("archive: undefined tensor for '" + name + "'");
  dtype_name(tensor.scalar_type());
  auto stored = tensor.detach().to(torch::kCPU).contiguous().clone();
  for (auto& e : entries_) {
    if (e.name == name) {
      e.tensor = stored;
      return;
    }
  }
  entries_.push_back({name, stored});
}

torch::Tensor Archive::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw IoError("archive: missing array '" + name + "'");
}

bool Archive::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.name == name; });
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

void Archive::put_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters(true)) put(prefix + "." + p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) put(prefix + "." + b.key(), b.value());
}

void Archive::load_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard no_grad;
  auto assign = [&](const std::string& key, torch::Tensor& dst) {
    auto src = get(prefix + "." + key);
    if (src.sizes() != dst.sizes()) {
      throw ShapeError("archive: shape mismatch for '" + prefix + "." + key + "'");
    }
    dst.copy_(src.to(dst.scalar_type()));
  };
  for (auto& p : module.named_parameters(true)) assign(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) assign(b.key(), b.value());
}

std::string Archive::to_bytes() const {
  nlohmann::json header;
  header["kind"] = kind_;
  header["meta"] = meta_;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries_) {
    const auto nbytes = static_cast<std::uint64_t>(e.tensor.numel() * e.tensor.element_size());
    header["arrays"].push_back({{"name", e.name},
                                {"dtype", dtype_name(e.tensor.scalar_type())},
                                {"shape", e.tensor.sizes().vec()},
                                {"offset", offset},
                                {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = header.dump();

  std::string out(kMagic.begin(), kMagic.end());
  append_le<std::uint32_t>(out, version_);
  append_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& e : entries_) {
    const auto* data = static_cast<const char*>(e.tensor.data_ptr());
    out.append(data, static_cast<std::size_t>(e.tensor.numel() * e.tensor.element_size()));
  }
  return out;
}

Archive Archive::from_bytes(const std::string& bytes) {
  if (bytes.size() < 16 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw IoError("archive: bad magic");
  }
  Archive a;
  a.version_ = read_le<std::uint32_t>(bytes, 4);
  if (a.version_ != kFormatVersion) {
    throw IoError("archive: unsupported format version " + std::to_string(a.version_));
  }
  const auto header_len = read_le<std::uint64_t>(bytes, 8);
  if (16 + header_len > bytes.size()) throw IoError("archive: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("archive: malformed header: ") + e.what());
  }
  a.kind_ = header.value("kind", "");
  a.meta_ = header.value("meta", nlohmann::json::object());
  const std::size_t payload = 16 + header_len;
  for (const auto& arr : header.at("arrays")) {
    const auto dtype = dtype_from_name(arr.at("dtype").get<std::string>());
    const auto shape = arr.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = arr.at("offset").get<std::uint64_t>();
    const auto nbytes = arr.at("nbytes").get<std::uint64_t>();
    if (payload + offset + nbytes > bytes.size()) throw IoError("archive: truncated payload");
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != nbytes) {
      throw IoError("archive: size mismatch for '" + arr.at("name").get<std::string>() + "'");
    }
    std::memcpy(t.data_ptr(), bytes.data() + payload + offset, nbytes);
    a.entries_.push_back({arr.at("name").get<std::string>(), t});
  }
  return a;
}

void Archive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("archive: cannot write " + path.string());
  const auto bytes = to_bytes();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("archive: write failed for " + path.string());
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("archive: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_bytes(ss.str());
}

void Archive::expect_kind(const std::string& expected) const {
  if (kind_ != expected) {
    throw IoError("archive: expected kind '" + expected + "', found '" + kind_ + "'");
  }
}

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

}  // namespace avsynth
