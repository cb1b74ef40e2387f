#include "harvim/png_io.hpp"

#include <zlib.h>

#include <cfenv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "harvim/errors.hpp"

namespace harvim {

namespace {

constexpr unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

std::uint32_t read_u32_be(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void push_u32_be(std::string& out, std::uint32_t v) {
  out.push_back(char((v >> 24) & 0xFF));
  out.push_back(char((v >> 16) & 0xFF));
  out.push_back(char((v >> 8) & 0xFF));
  out.push_back(char(v & 0xFF));
}

void push_chunk(std::string& out, const char type[4], const std::string& data) {
  push_u32_be(out, std::uint32_t(data.size()));
  const std::size_t type_pos = out.size();
  out.append(type, 4);
  out.append(data);
  const auto crc =
      crc32(0, reinterpret_cast<const Bytef*>(out.data() + type_pos),
            uInt(4 + data.size()));
  push_u32_be(out, std::uint32_t(crc));
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

Tensor load_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open PNG " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 8 ||
      std::memcmp(bytes.data(), kSignature, 8) != 0) {
    throw IoError(path + ": not a PNG file");
  }

  std::size_t width = 0, height = 0, channels = 0;
  bool saw_header = false;
  std::string compressed;
  std::size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    const std::uint32_t length = read_u32_be(p);
    const std::string type = bytes.substr(pos + 4, 4);
    if (pos + 12 + length > bytes.size()) throw IoError(path + ": truncated chunk");
    const char* data = bytes.data() + pos + 8;
    if (type == "IHDR") {
      if (length != 13) throw IoError(path + ": bad IHDR");
      const auto* h = reinterpret_cast<const unsigned char*>(data);
      width = read_u32_be(h);
      height = read_u32_be(h + 4);
      const int bit_depth = h[8], color_type = h[9], interlace = h[12];
      if (bit_depth != 8) {
        throw IoError(path + ": unsupported bit depth " + std::to_string(bit_depth));
      }
      if (interlace != 0) throw IoError(path + ": interlaced PNG unsupported");
      switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default:
          throw IoError(path + ": unsupported color type " +
                        std::to_string(color_type));
      }
      saw_header = true;
    } else if (type == "IDAT") {
      compressed.append(data, length);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + length;
  }
  if (!saw_header || width == 0 || height == 0) throw IoError(path + ": missing IHDR");
  if (compressed.empty()) throw IoError(path + ": no image data");

  const std::size_t stride = width * channels;
  std::vector<unsigned char> raw(height * (1 + stride));
  uLongf raw_len = raw.size();
  const int rc = uncompress(raw.data(), &raw_len,
                            reinterpret_cast<const Bytef*>(compressed.data()),
                            uLong(compressed.size()));
  if (rc != Z_OK || raw_len != raw.size()) {
    throw IoError(path + ": corrupt image data (zlib rc " + std::to_string(rc) + ")");
  }

  // undo per-row filters in place
  std::vector<unsigned char> pixels(height * stride);
  for (std::size_t r = 0; r < height; ++r) {
    const unsigned char filter = raw[r * (1 + stride)];
    const unsigned char* src = &raw[r * (1 + stride) + 1];
    unsigned char* dst = &pixels[r * stride];
    const unsigned char* up = r > 0 ? &pixels[(r - 1) * stride] : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int left = i >= channels ? dst[i - channels] : 0;
      const int above = up ? up[i] : 0;
      const int corner = (up && i >= channels) ? up[i - channels] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += above; break;
        case 3: v += (left + above) / 2; break;
        case 4: v += paeth(left, above, corner); break;
        default: throw IoError(path + ": unknown row filter");
      }
      dst[i] = static_cast<unsigned char>(v & 0xFF);
    }
  }

  std::vector<double> out(width * height);
  for (std::size_t i = 0; i < width * height; ++i) {
    const unsigned char* px = &pixels[i * channels];
    double gray;
    if (channels >= 3) {
      gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    } else {
      gray = px[0];
    }
    out[i] = gray / 255.0;
  }
  return Tensor::from_data({height, width}, std::move(out));
}

void save_png(const std::string& path, const Tensor& image) {
  std::size_t height, width;
  if (image.rank() == 2) {
    height = image.shape()[0];
    width = image.shape()[1];
  } else {
    const auto side =
        static_cast<std::size_t>(std::llround(std::sqrt(double(image.size()))));
    if (side * side != image.size()) {
      throw ShapeError("save_png: flattened image is not square");
    }
    height = width = side;
  }

  std::string raw;
  raw.reserve(height * (1 + width));
  for (std::size_t r = 0; r < height; ++r) {
    raw.push_back('\0');  // filter: none
    for (std::size_t c = 0; c < width; ++c) {
      double v = image.at(r * width + c);
      v = std::min(1.0, std::max(0.0, v)) * 255.0;
      // nearbyint rounds half to even under the default FP mode
      raw.push_back(char(static_cast<unsigned char>(std::nearbyint(v))));
    }
  }

  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<unsigned char> packed(bound);
  if (compress2(packed.data(), &bound,
                reinterpret_cast<const Bytef*>(raw.data()), uLong(raw.size()),
                Z_DEFAULT_COMPRESSION) != Z_OK) {
    throw IoError("save_png: compression failed for " + path);
  }

  std::string file;
  file.append(reinterpret_cast<const char*>(kSignature), 8);
  std::string ihdr;
  push_u32_be(ihdr, std::uint32_t(width));
  push_u32_be(ihdr, std::uint32_t(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(0);   // grayscale
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // no interlace
  push_chunk(file, "IHDR", ihdr);
  push_chunk(file, "IDAT",
             std::string(reinterpret_cast<const char*>(packed.data()), bound));
  push_chunk(file, "IEND", "");

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(file.data(), std::streamsize(file.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
}

}  // namespace harvim
