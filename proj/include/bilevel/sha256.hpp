#pragma once

// SHA-256 (FIPS 180-4), used to verify downloaded dataset files.

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

namespace bilevel {

class Sha256 {
 public:
  Sha256() { reset(); }

  void reset() {
    state_ = {0x6A09E667u, 0xBB67AE85u, 0x3C6EF372u, 0xA54FF53Au,
              0x510E527Fu, 0x9B05688Cu, 0x1F83D9ABu, 0x5BE0CD19u};
    total_ = 0;
    buffer_len_ = 0;
  }

  void update(const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    total_ += len;
    while (len > 0) {
      const std::size_t take = std::min<std::size_t>(64 - buffer_len_, len);
      std::memcpy(buffer_ + buffer_len_, bytes, take);
      buffer_len_ += take;
      bytes += take;
      len -= take;
      if (buffer_len_ == 64) {
        process(buffer_);
        buffer_len_ = 0;
      }
    }
  }

  void update(std::string_view s) { update(s.data(), s.size()); }

  std::array<unsigned char, 32> digest() {
    const std::uint64_t bits = total_ * 8;
    unsigned char pad = 0x80;
    update(&pad, 1);
    const unsigned char zero = 0x00;
    while (buffer_len_ != 56) update(&zero, 1);
    unsigned char len_be[8];
    for (int k = 0; k < 8; ++k)
      len_be[k] = static_cast<unsigned char>(bits >> (56 - 8 * k));
    // bypass total_ accounting for the length block
    std::memcpy(buffer_ + 56, len_be, 8);
    process(buffer_);
    buffer_len_ = 0;

    std::array<unsigned char, 32> out{};
    for (int k = 0; k < 8; ++k) {
      out[4 * k + 0] = static_cast<unsigned char>(state_[k] >> 24);
      out[4 * k + 1] = static_cast<unsigned char>(state_[k] >> 16);
      out[4 * k + 2] = static_cast<unsigned char>(state_[k] >> 8);
      out[4 * k + 3] = static_cast<unsigned char>(state_[k]);
    }
    return out;
  }

  std::string hex_digest() {
    static const char* digits = "0123456789abcdef";
    const auto d = digest();
    std::string s;
    s.reserve(64);
    for (unsigned char b : d) {
      s += digits[b >> 4];
      s += digits[b & 0xF];
    }
    return s;
  }

 private:
  static std::uint32_t rotr(std::uint32_t x, int k) {
    return (x >> k) | (x << (32 - k));
  }

  void process(const unsigned char* chunk) {
    static constexpr std::uint32_t K[64] = {
        0x428A2F98, 0x71374491, 0xB5C0FBCF, 0xE9B5DBA5, 0x3956C25B, 0x59F111F1,
        0x923F82A4, 0xAB1C5ED5, 0xD807AA98, 0x12835B01, 0x243185BE, 0x550C7DC3,
        0x72BE5D74, 0x80DEB1FE, 0x9BDC06A7, 0xC19BF174, 0xE49B69C1, 0xEFBE4786,
        0x0FC19DC6, 0x240CA1CC, 0x2DE92C6F, 0x4A7484AA, 0x5CB0A9DC, 0x76F988DA,
        0x983E5152, 0xA831C66D, 0xB00327C8, 0xBF597FC7, 0xC6E00BF3, 0xD5A79147,
        0x06CA6351, 0x14292967, 0x27B70A85, 0x2E1B2138, 0x4D2C6DFC, 0x53380D13,
        0x650A7354, 0x766A0ABB, 0x81C2C92E, 0x92722C85, 0xA2BFE8A1, 0xA81A664B,
        0xC24B8B70, 0xC76C51A3, 0xD192E819, 0xD6990624, 0xF40E3585, 0x106AA070,
        0x19A4C116, 0x1E376C08, 0x2748774C, 0x34B0BCB5, 0x391C0CB3, 0x4ED8AA4A,
        0x5B9CCA4F, 0x682E6FF3, 0x748F82EE, 0x78A5636F, 0x84C87814, 0x8CC70208,
        0x90BEFFFA, 0xA4506CEB, 0xBEF9A3F7, 0xC67178F2};
    std::uint32_t w[64];
    for (int k = 0; k < 16; ++k)
      w[k] = (std::uint32_t(chunk[4 * k]) << 24) |
             (std::uint32_t(chunk[4 * k + 1]) << 16) |
             (std::uint32_t(chunk[4 * k + 2]) << 8) | std::uint32_t(chunk[4 * k + 3]);
    for (int k = 16; k < 64; ++k) {
      const std::uint32_t s0 =
          rotr(w[k - 15], 7) ^ rotr(w[k - 15], 18) ^ (w[k - 15] >> 3);
      const std::uint32_t s1 =
          rotr(w[k - 2], 17) ^ rotr(w[k - 2], 19) ^ (w[k - 2] >> 10);
      w[k] = w[k - 16] + s0 + w[k - 7] + s1;
    }
    auto [a, b, c, d, e, f, g, h] = state_;
    for (int k = 0; k < 64; ++k) {
      const std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const std::uint32_t ch = (e & f) ^ (~e & g);
      const std::uint32_t tmp1 = h + s1 + ch + K[k] + w[k];
      const std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t tmp2 = s0 + maj;
      h = g;
      g = f;
      f = e;
      e = d + tmp1;
      d = c;
      c = b;
      b = a;
      a = tmp1 + tmp2;
    }
    state_[0] += a;
    state_[1] += b;
    state_[2] += c;
    state_[3] += d;
    state_[4] += e;
    state_[5] += f;
    state_[6] += g;
    state_[7] += h;
  }

  std::array<std::uint32_t, 8> state_{};
  std::uint64_t total_ = 0;
  unsigned char buffer_[64] = {};
  std::size_t buffer_len_ = 0;
};

inline std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data);
  return h.hex_digest();
}

}  // namespace bilevel
