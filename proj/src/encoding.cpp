#include "alignps/encoding.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace alignps {

namespace {
const char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}
}  // namespace

std::string base64_encode(const uint8_t* data, size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (size_t i = 0; i < len; i += 3) {
    uint32_t n = uint32_t(data[i]) << 16;
    if (i + 1 < len) n |= uint32_t(data[i + 1]) << 8;
    if (i + 2 < len) n |= uint32_t(data[i + 2]);
    out.push_back(kB64[(n >> 18) & 63]);
    out.push_back(kB64[(n >> 12) & 63]);
    out.push_back(i + 1 < len ? kB64[(n >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? kB64[n & 63] : '=');
  }
  return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64: length not a multiple of 4");
  std::vector<uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (size_t i = 0; i < text.size(); i += 4) {
    uint32_t n = 0;
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=') {
        n <<= 6;
        ++pad;
      } else {
        const int v = b64_value(c);
        if (v < 0) throw std::invalid_argument("base64: invalid character");
        n = (n << 6) | static_cast<uint32_t>(v);
      }
    }
    out.push_back(static_cast<uint8_t>((n >> 16) & 0xFF));
    if (pad < 2) out.push_back(static_cast<uint8_t>((n >> 8) & 0xFF));
    if (pad < 1) out.push_back(static_cast<uint8_t>(n & 0xFF));
  }
  return out;
}

std::string base64_encode_floats(const std::vector<float>& v) {
  return base64_encode(reinterpret_cast<const uint8_t*>(v.data()), v.size() * sizeof(float));
}

std::vector<float> base64_decode_floats(const std::string& text) {
  auto bytes = base64_decode(text);
  if (bytes.size() % sizeof(float) != 0)
    throw std::invalid_argument("base64: byte count is not a float array");
  std::vector<float> out(bytes.size() / sizeof(float));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::string sha256_hex(const uint8_t* data, size_t len) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  if (!EVP_Digest(data, len, digest, &digest_len, EVP_sha256(), nullptr))
    throw std::runtime_error("sha256: EVP_Digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(digest_len * 2);
  for (unsigned int i = 0; i < digest_len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file_hex(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("sha256: cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return sha256_hex(buf.data(), buf.size());
}

}  // namespace alignps
