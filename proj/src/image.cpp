#include "onavos/image.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "onavos/errors.hpp"

namespace onavos {

void Image::quantize() {
  for (auto& v : data) {
    const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    v = std::round(c * 255.0) / 255.0;
  }
}

namespace {

struct PnmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
};

int read_header_int(std::istream& is, const std::filesystem::path& path) {
  // Skip whitespace and '#' comments.
  while (true) {
    const int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      is.get();
    } else {
      break;
    }
  }
  int v = 0;
  if (!(is >> v) || v <= 0) throw IoError("malformed netpbm header in " + path.string());
  return v;
}

PnmHeader read_header(std::istream& is, const char* magic, const std::filesystem::path& path) {
  char m[2] = {0, 0};
  is.read(m, 2);
  if (!is || m[0] != magic[0] || m[1] != magic[1]) {
    throw IoError(path.string() + ": expected netpbm magic " + std::string(magic, 2));
  }
  PnmHeader h;
  h.width = read_header_int(is, path);
  h.height = read_header_int(is, path);
  h.maxval = read_header_int(is, path);
  if (h.maxval > 255) throw IoError(path.string() + ": only 8-bit netpbm files are supported");
  is.get();  // single whitespace before the raster
  return h;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return is;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
  auto os = open_out(path);
  os << "P5\n" << mask.width() << ' ' << mask.height() << "\n255\n";
  std::string raster(mask.size(), '\0');
  for (std::size_t i = 0; i < mask.size(); ++i) raster[i] = mask.at(i) ? static_cast<char>(255) : '\0';
  os.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

BinaryMask read_pgm(const std::filesystem::path& path) {
  auto is = open_in(path);
  const auto h = read_header(is, "P5", path);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(h.width) * h.height);
  is.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
  if (!is) throw IoError(path.string() + ": truncated raster");
  return BinaryMask(h.height, h.width, std::move(bits));
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  auto os = open_out(path);
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::string raster(static_cast<std::size_t>(3) * image.width * image.height, '\0');
  std::size_t k = 0;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = image.at(c, y, x);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        raster[k++] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
    }
  }
  os.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  auto is = open_in(path);
  const auto h = read_header(is, "P6", path);
  std::vector<unsigned char> raster(static_cast<std::size_t>(3) * h.width * h.height);
  is.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!is) throw IoError(path.string() + ": truncated raster");
  Image img(h.height, h.width);
  std::size_t k = 0;
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<double>(raster[k++]) / h.maxval;
    }
  }
  // Same rounding path as Image::quantize so loaded frames equal generated ones.
  img.quantize();
  return img;
}

}  // namespace onavos
