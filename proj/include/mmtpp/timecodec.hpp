#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace mmtpp {

// Four byte tokens holding the IEEE-754 binary32 pattern of an interval,
// most-significant byte first.
using ByteQuad = std::array<std::uint8_t, 4>;

struct DecodedTime {
  float value = 0.0f;
  bool finite = true;  // false for NaN/Inf patterns; the value is still returned
};

// Narrows a 64-bit interval to binary32 with round-to-nearest-even.
// Throws NonFiniteInterval / NegativeInterval. -0.0 narrows to +0.0.
float narrow_interval(double interval);

ByteQuad float_to_bytes(float value) noexcept;
float bytes_to_float(const ByteQuad& bytes) noexcept;

ByteQuad encode_time(double interval);
DecodedTime decode_time(const ByteQuad& bytes) noexcept;

// Arity-checked overload for token spans coming from generated output.
DecodedTime decode_time(std::span<const std::uint8_t> bytes);

}  // namespace mmtpp
