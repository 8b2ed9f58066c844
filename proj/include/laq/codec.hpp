#pragma once

// b-bit innovation quantizer and the byte format used to ship it.
//
// A gradient g is quantized against a center c (the previously stored
// quantization) on a uniform grid of 2^b points spanning [c - R, c + R] per
// coordinate, R = ||g - c||_inf. Only R and the b-bit grid indices travel.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "laq/errors.hpp"

namespace laq::codec {

inline constexpr int kMinBits = 1;
inline constexpr int kMaxBits = 32;
inline constexpr std::size_t kHeaderBytes = 11;
inline constexpr std::size_t kRadiusBytes = 4;

struct QuantizedInnovation {
  double radius = 0.0;
  std::vector<std::uint32_t> codes;
  int bits = 1;

  std::size_t dimension() const { return codes.size(); }
  bool operator==(const QuantizedInnovation&) const = default;
};

struct WireMessage {
  std::uint16_t worker_id = 0;
  std::uint32_t iteration = 0;
  std::uint8_t bits = 1;
  std::uint32_t dimension = 0;
  float radius = 0.0f;
  std::vector<std::uint8_t> packed_codes;

  bool operator==(const WireMessage&) const = default;
};

void check_bits(int bits);

/// Grid granularity 1 / (2^b - 1).
inline double granularity(int bits) {
  check_bits(bits);
  return 1.0 / (std::ldexp(1.0, bits) - 1.0);
}

inline std::uint32_t max_code(int bits) {
  check_bits(bits);
  return bits == 32 ? 0xFFFFFFFFu : ((std::uint32_t{1} << bits) - 1u);
}

/// Grid index of one coordinate; radius must be > 0.
inline std::uint32_t quantize_coordinate(double innovation, double radius, double tau,
                                         std::uint32_t top) {
  const double x = std::floor((innovation + radius) / (2.0 * tau * radius) + 0.5);
  if (!(x > 0.0)) return 0;
  if (x >= static_cast<double>(top)) return top;
  return static_cast<std::uint32_t>(x);
}

template <typename DerivedG, typename DerivedC>
QuantizedInnovation quantize_innovation(const Eigen::MatrixBase<DerivedG>& gradient,
                                        const Eigen::MatrixBase<DerivedC>& center, int bits) {
  check_bits(bits);
  if (gradient.size() != center.size()) {
    throw std::invalid_argument("quantize_innovation: gradient has " +
                                std::to_string(gradient.size()) + " entries, center has " +
                                std::to_string(center.size()));
  }
  if (gradient.size() == 0) throw std::invalid_argument("quantize_innovation: empty vector");

  QuantizedInnovation qi;
  qi.bits = bits;
  qi.codes.assign(static_cast<std::size_t>(gradient.size()), 0u);
  double radius = 0.0;
  for (Eigen::Index i = 0; i < gradient.size(); ++i) {
    radius = std::max(radius, std::abs(static_cast<double>(gradient(i)) -
                                       static_cast<double>(center(i))));
  }
  qi.radius = radius;
  if (radius == 0.0) return qi;

  const double tau = granularity(bits);
  const std::uint32_t top = max_code(bits);
  for (Eigen::Index i = 0; i < gradient.size(); ++i) {
    const double innovation = static_cast<double>(gradient(i)) - static_cast<double>(center(i));
    qi.codes[static_cast<std::size_t>(i)] = quantize_coordinate(innovation, radius, tau, top);
  }
  return qi;
}

/// The innovation delta_i = 2 tau R code_i - R; add it to the center to
/// obtain the new stored quantization.
Eigen::VectorXd decode_innovation(const QuantizedInnovation& qi);

/// Throws std::invalid_argument when the invariants of `qi` do not hold.
void validate(const QuantizedInnovation& qi);

/// MSB-first concatenation of b-bit fields, zero padded to a whole byte.
std::vector<std::uint8_t> pack_codes(std::span<const std::uint32_t> codes, int bits);

std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes, int bits,
                                        std::size_t count);

inline std::size_t packed_size(std::size_t count, int bits) {
  return (count * static_cast<std::size_t>(bits) + 7) / 8;
}

/// Accounted size of one quantized upload: 32 bits of radius plus b per coordinate.
std::uint64_t payload_bits(std::uint64_t dimension, int bits);

/// Wraps a quantized innovation for transport; the radius is rounded to binary32.
WireMessage make_message(std::uint16_t worker_id, std::uint32_t iteration,
                         const QuantizedInnovation& qi);

/// Receiver view of a message: codes unpacked, radius widened from binary32.
QuantizedInnovation to_innovation(const WireMessage& message);

std::vector<std::uint8_t> encode_message(const WireMessage& message);
WireMessage decode_message(std::span<const std::uint8_t> bytes);

inline std::size_t encoded_size(std::size_t dimension, int bits) {
  return kHeaderBytes + kRadiusBytes + packed_size(dimension, bits);
}

}  // namespace laq::codec
