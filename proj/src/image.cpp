#include "unispoof/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "unispoof/error.hpp"

namespace unispoof {

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Next header token, skipping whitespace and '#' comments.
std::string token(std::istream& in) {
  std::string t;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!t.empty()) break;
      continue;
    }
    t.push_back(static_cast<char>(c));
  }
  return t;
}

}  // namespace

void clamp01(Image& img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

void quantize8(Image& img) {
  for (auto& v : img.data) v = static_cast<float>(to_byte(v)) / 255.0f;
}

void write_pnm(const Image& img, const std::filesystem::path& path) {
  require(img.channels == 1 || img.channels == 3, ErrorCode::kInvalidArgument,
          "write_pnm: unsupported channel count " + std::to_string(img.channels));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  std::vector<char> bytes(img.data.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), [](float v) { return static_cast<char>(to_byte(v)); });
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open '" + path.string() + "'");
  const std::string magic = token(in);
  require(magic == "P6" || magic == "P5", ErrorCode::kIo, "'" + path.string() + "' is not a binary PPM/PGM file");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token(in));
    h = std::stoul(token(in));
    maxval = std::stoul(token(in));
  } catch (const std::exception&) {
    fail(ErrorCode::kIo, "malformed header in '" + path.string() + "'");
  }
  require(maxval == 255 && w > 0 && h > 0, ErrorCode::kIo, "unsupported header in '" + path.string() + "' (need maxval 255)");
  Image img(h, w, magic == "P6" ? 3 : 1);
  std::vector<unsigned char> bytes(img.data.size());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<std::size_t>(in.gcount()) == bytes.size(), ErrorCode::kIo, "truncated pixel data in '" + path.string() + "'");
  std::transform(bytes.begin(), bytes.end(), img.data.begin(), [](unsigned char b) { return static_cast<float>(b) / 255.0f; });
  return img;
}

}  // namespace unispoof
