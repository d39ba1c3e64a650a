#pragma once

#include <cstddef>
#include <cstdint>

namespace proprio {

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, xorout 0.
/// check("123456789") == 0x29B1.
inline std::uint16_t crc16_ccitt_false(const std::uint8_t* data, std::size_t n,
                                       std::uint16_t crc = 0xFFFF) {
  for (std::size_t i = 0; i < n; ++i) {
    crc ^= static_cast<std::uint16_t>(data[i]) << 8;
    for (int b = 0; b < 8; ++b)
      crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                           : static_cast<std::uint16_t>(crc << 1);
  }
  return crc;
}

/// CRC-32 (IEEE 802.3, reflected 0xEDB88320). check("123456789") == 0xCBF43926.
inline std::uint32_t crc32_ieee(const std::uint8_t* data, std::size_t n,
                                std::uint32_t crc = 0) {
  crc = ~crc;
  for (std::size_t i = 0; i < n; ++i) {
    crc ^= data[i];
    for (int b = 0; b < 8; ++b)
      crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

}  // namespace proprio
