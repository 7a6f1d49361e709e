// Base64 for embedding export and a SHA-256 content digest for run metadata.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace alignps {

std::string base64_encode(const uint8_t* data, size_t len);
std::vector<uint8_t> base64_decode(const std::string& text);

std::string base64_encode_floats(const std::vector<float>& v);
std::vector<float> base64_decode_floats(const std::string& text);

// Hex SHA-256 of a byte buffer / of a file's contents.
std::string sha256_hex(const uint8_t* data, size_t len);
std::string sha256_file_hex(const std::string& path);

}  // namespace alignps
