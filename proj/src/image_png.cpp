#include "alignps/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace alignps {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& data) {
  put_u32(out, static_cast<uint32_t>(data.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32(out, crc);
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const ImageU8& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.rgb.size() != static_cast<size_t>(img.width) * img.height * 3)
    throw std::invalid_argument("write_png: malformed image buffer");

  const size_t stride = static_cast<size_t>(img.width) * 3;
  std::vector<uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.rgb.begin() + y * stride, img.rgb.begin() + (y + 1) * stride);
  }

  uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_size);
  if (compress2(comp.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("write_png: deflate failed");
  comp.resize(comp_size);

  std::vector<uint8_t> out{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  std::vector<uint8_t> ihdr;
  put_u32(ihdr, static_cast<uint32_t>(img.width));
  put_u32(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter method
  ihdr.push_back(0);   // no interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write_png: write failed for " + path);
}

ImageU8 read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_png: cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
    throw std::runtime_error("read_png: not a PNG file: " + path);

  int width = 0, height = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  bool seen_ihdr = false;
  while (pos + 12 <= buf.size()) {
    const uint32_t len = get_u32(&buf[pos]);
    if (pos + 12 + len > buf.size()) throw std::runtime_error("read_png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(&buf[pos + 4]);
    const uint8_t* data = &buf[pos + 8];
    const uint32_t crc_stored = get_u32(&buf[pos + 8 + len]);
    const uint32_t crc_actual = crc32(0L, &buf[pos + 4], len + 4);
    if (crc_stored != crc_actual) throw std::runtime_error("read_png: CRC mismatch");
    if (std::memcmp(type, "IHDR", 4) == 0) {
      width = static_cast<int>(get_u32(data));
      height = static_cast<int>(get_u32(data + 4));
      if (data[8] != 8 || data[9] != 2 || data[12] != 0)
        throw std::runtime_error("read_png: only 8-bit non-interlaced RGB supported");
      seen_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (!seen_ihdr || width <= 0 || height <= 0)
    throw std::runtime_error("read_png: missing or invalid IHDR");

  const size_t stride = static_cast<size_t>(width) * 3;
  std::vector<uint8_t> raw((stride + 1) * height);
  uLongf raw_size = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_size, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_size != raw.size())
    throw std::runtime_error("read_png: inflate failed");

  ImageU8 img = ImageU8::filled(width, height);
  std::vector<uint8_t> prev(stride, 0);
  for (int y = 0; y < height; ++y) {
    const uint8_t filter = raw[y * (stride + 1)];
    const uint8_t* src = &raw[y * (stride + 1) + 1];
    uint8_t* dst = &img.rgb[y * stride];
    for (size_t i = 0; i < stride; ++i) {
      const int a = i >= 3 ? dst[i - 3] : 0;          // left
      const int b = prev[i];                          // up
      const int c = i >= 3 ? prev[i - 3] : 0;         // up-left
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw std::runtime_error("read_png: unknown filter type");
      }
      dst[i] = static_cast<uint8_t>(v & 0xFF);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return img;
}

Tensord image_to_tensor(const ImageU8& img) {
  Tensord t({3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t(c, y, x) = img.at(y, x, c) / 255.0;
  return t;
}

ImageU8 tensor_to_image(const Tensord& t) {
  if (t.ndim() != 3 || t.dim(0) != 3) throw std::invalid_argument("tensor_to_image: (3,H,W)");
  ImageU8 img = ImageU8::filled(t.dim(2), t.dim(1));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double v = std::clamp(t(c, y, x), 0.0, 1.0);
        img.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

}  // namespace alignps
