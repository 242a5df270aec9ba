#include "mmtpp/timecodec.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "mmtpp/error.hpp"

namespace mmtpp {

float narrow_interval(double interval) {
  if (!std::isfinite(interval)) {
    throw Error(ErrorCode::NonFiniteInterval, "interval is not finite");
  }
  if (interval < 0.0) {
    throw Error(ErrorCode::NegativeInterval,
                "negative interval " + std::to_string(interval));
  }
  // The conversion rounds to nearest-even under the default FP environment.
  const float narrowed = static_cast<float>(interval);
  if (!std::isfinite(narrowed)) {
    throw Error(ErrorCode::NonFiniteInterval,
                "interval overflows binary32: " + std::to_string(interval));
  }
  return narrowed == 0.0f ? 0.0f : narrowed;
}

ByteQuad float_to_bytes(float value) noexcept {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  return {static_cast<std::uint8_t>(bits >> 24),
          static_cast<std::uint8_t>(bits >> 16),
          static_cast<std::uint8_t>(bits >> 8),
          static_cast<std::uint8_t>(bits)};
}

float bytes_to_float(const ByteQuad& bytes) noexcept {
  const std::uint32_t bits = (std::uint32_t{bytes[0]} << 24) |
                             (std::uint32_t{bytes[1]} << 16) |
                             (std::uint32_t{bytes[2]} << 8) |
                             std::uint32_t{bytes[3]};
  return std::bit_cast<float>(bits);
}

ByteQuad encode_time(double interval) {
  return float_to_bytes(narrow_interval(interval));
}

DecodedTime decode_time(const ByteQuad& bytes) noexcept {
  const float value = bytes_to_float(bytes);
  return {value, std::isfinite(value)};
}

DecodedTime decode_time(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != 4) {
    throw Error(ErrorCode::WrongArity,
                "time decoding needs exactly 4 byte tokens, got " +
                    std::to_string(bytes.size()));
  }
  return decode_time(ByteQuad{bytes[0], bytes[1], bytes[2], bytes[3]});
}

}  // namespace mmtpp
