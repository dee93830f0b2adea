#include "unispoof/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace unispoof {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

namespace {

constexpr const char* kFormat = "unispoof-checkpoint";

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& p : tensors) {
    if (p.name == name) return &p.tensor;
  }
  return nullptr;
}

ParamList<float> Checkpoint::with_prefix(const std::string& prefix) const {
  ParamList<float> out;
  for (const auto& p : tensors) {
    if (p.name.rfind(prefix + ".", 0) == 0) out.push_back(p);
  }
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["format"] = kFormat;
  header["version"] = 1;
  header["meta"] = ckpt.meta;
  auto& list = header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : ckpt.tensors) {
    list.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"dtype", "float32"}, {"offset", offset}});
    offset += p.tensor.numel() * sizeof(float);
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : ckpt.tensors) {
    out.write(reinterpret_cast<const char*>(p.tensor.data().data()),
              static_cast<std::streamsize>(p.tensor.numel() * sizeof(float)));
  }
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open checkpoint '" + path.string() + "'");
  const auto size = std::filesystem::file_size(path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  require(static_cast<bool>(in) && len <= size - sizeof len, ErrorCode::kIo,
          "checkpoint '" + path.string() + "' has a truncated header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, "checkpoint '" + path.string() + "' has a malformed header: " + e.what());
  }
  require(header.value("format", "") == kFormat, ErrorCode::kIo, "'" + path.string() + "' is not a checkpoint");
  const std::uint64_t payload = size - sizeof len - len;
  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  try {
    for (const auto& t : header.at("tensors")) {
      require(t.at("dtype") == "float32", ErrorCode::kIo, "checkpoint '" + path.string() + "': unsupported dtype");
      Shape shape = t.at("shape").get<Shape>();
      const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
      const std::size_t n = shape_numel(shape);
      require(offset + n * sizeof(float) <= payload, ErrorCode::kIo,
              "checkpoint '" + path.string() + "': tensor '" + t.at("name").get<std::string>() + "' runs past the payload");
      std::vector<float> data(n);
      in.seekg(static_cast<std::streamoff>(sizeof len + len + offset));
      in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float)));
      require(static_cast<bool>(in), ErrorCode::kIo, "checkpoint '" + path.string() + "': read failed");
      ckpt.tensors.push_back({t.at("name").get<std::string>(), Tensor<float>::from(std::move(shape), std::move(data))});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, "checkpoint '" + path.string() + "' has a malformed tensor table: " + e.what());
  }
  return ckpt;
}

std::string params_sha256(const ParamList<float>& params) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  require(ctx != nullptr, ErrorCode::kRuntime, "sha256: cannot allocate a digest context");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (const auto& p : params) {
    EVP_DigestUpdate(ctx, p.name.data(), p.name.size() + 1);  // includes the terminator
    for (std::size_t d : p.tensor.shape()) {
      const std::uint64_t v = d;
      EVP_DigestUpdate(ctx, &v, sizeof v);
    }
    EVP_DigestUpdate(ctx, p.tensor.data().data(), p.tensor.numel() * sizeof(float));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

}  // namespace unispoof
