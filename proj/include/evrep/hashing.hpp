#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "evrep/error.hpp"
#include "evrep/image.hpp"

namespace evrep {

using Sha256Digest = std::array<std::uint8_t, 32>;

inline Sha256Digest sha256(std::span<const std::uint8_t> bytes) {
  Sha256Digest out{};
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) || len != out.size()) {
    throw Error(Errc::IOFailure, "sha256 failed");
  }
  return out;
}

inline Sha256Digest sha256(std::string_view text) {
  return sha256(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0xF]);
  }
  return s;
}

inline std::string sha256_hex(std::string_view text) { return to_hex(sha256(text)); }

/// Content hash of an image: sha256 over "<width>x<height>\n" followed by the
/// 8-bit RGB bytes the image would be exported as.
inline std::string image_sha256(const Image& img) {
  std::string buf = std::to_string(img.width) + "x" + std::to_string(img.height) + "\n";
  const auto rgb = to_rgb8(img);
  buf.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  return sha256_hex(buf);
}

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), int(bytes.size()));
  out.resize(std::size_t(n));
  return out;
}

}  // namespace evrep
