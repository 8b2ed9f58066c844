#include "laq/codec.hpp"

#include <bit>
#include <cstring>

namespace laq::codec {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xFFu));
  }
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<T>(bytes[offset + i]) << (8 * i));
  }
  return value;
}

}  // namespace

void check_bits(int bits) {
  if (bits < kMinBits || bits > kMaxBits) {
    throw std::invalid_argument("bits per coordinate must be in [1, 32], got " +
                                std::to_string(bits));
  }
}

void validate(const QuantizedInnovation& qi) {
  check_bits(qi.bits);
  if (!(qi.radius >= 0.0) || !std::isfinite(qi.radius)) {
    throw std::invalid_argument("quantized innovation radius must be finite and >= 0");
  }
  const std::uint32_t top = max_code(qi.bits);
  for (std::size_t i = 0; i < qi.codes.size(); ++i) {
    if (qi.codes[i] > top) {
      throw std::invalid_argument("code " + std::to_string(qi.codes[i]) + " at index " +
                                  std::to_string(i) + " exceeds " + std::to_string(qi.bits) +
                                  " bits");
    }
    if (qi.radius == 0.0 && qi.codes[i] != 0) {
      throw std::invalid_argument("zero radius requires all codes to be zero");
    }
  }
}

Eigen::VectorXd decode_innovation(const QuantizedInnovation& qi) {
  validate(qi);
  const auto p = static_cast<Eigen::Index>(qi.codes.size());
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(p);
  if (qi.radius == 0.0) return delta;
  const double step = 2.0 * granularity(qi.bits) * qi.radius;
  for (Eigen::Index i = 0; i < p; ++i) {
    delta(i) = step * static_cast<double>(qi.codes[static_cast<std::size_t>(i)]) - qi.radius;
  }
  return delta;
}

std::vector<std::uint8_t> pack_codes(std::span<const std::uint32_t> codes, int bits) {
  check_bits(bits);
  const std::uint32_t top = max_code(bits);
  std::vector<std::uint8_t> out;
  out.reserve(packed_size(codes.size(), bits));

  std::uint64_t acc = 0;  // pending bits, right aligned
  int pending = 0;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] > top) {
      throw std::invalid_argument("pack_codes: code " + std::to_string(codes[i]) +
                                  " at index " + std::to_string(i) + " does not fit in " +
                                  std::to_string(bits) + " bits");
    }
    acc = (acc << bits) | codes[i];
    pending += bits;
    while (pending >= 8) {
      pending -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> pending) & 0xFFu));
    }
    acc &= (std::uint64_t{1} << pending) - 1;
  }
  if (pending > 0) {
    out.push_back(static_cast<std::uint8_t>((acc << (8 - pending)) & 0xFFu));
  }
  return out;
}

std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes, int bits,
                                        std::size_t count) {
  check_bits(bits);
  const std::size_t expected = packed_size(count, bits);
  if (bytes.size() != expected) {
    throw WireError("unpack_codes: expected " + std::to_string(expected) + " bytes for " +
                    std::to_string(count) + " codes of " + std::to_string(bits) +
                    " bits, got " + std::to_string(bytes.size()));
  }
  std::vector<std::uint32_t> codes;
  codes.reserve(count);

  std::uint64_t acc = 0;
  int available = 0;
  std::size_t next = 0;
  const std::uint64_t mask = (std::uint64_t{1} << bits) - 1;
  for (std::size_t i = 0; i < count; ++i) {
    while (available < bits) {
      acc = (acc << 8) | bytes[next++];
      available += 8;
    }
    available -= bits;
    codes.push_back(static_cast<std::uint32_t>((acc >> available) & mask));
    acc &= (std::uint64_t{1} << available) - 1;
  }
  if (acc != 0) throw WireError("unpack_codes: nonzero padding bits in final byte");
  return codes;
}

std::uint64_t payload_bits(std::uint64_t dimension, int bits) {
  check_bits(bits);
  if (dimension == 0) throw std::invalid_argument("payload_bits: dimension must be >= 1");
  return 32u + static_cast<std::uint64_t>(bits) * dimension;
}

WireMessage make_message(std::uint16_t worker_id, std::uint32_t iteration,
                         const QuantizedInnovation& qi) {
  validate(qi);
  WireMessage m;
  m.worker_id = worker_id;
  m.iteration = iteration;
  m.bits = static_cast<std::uint8_t>(qi.bits);
  m.dimension = static_cast<std::uint32_t>(qi.codes.size());
  m.radius = static_cast<float>(qi.radius);
  m.packed_codes = pack_codes(qi.codes, qi.bits);
  return m;
}

QuantizedInnovation to_innovation(const WireMessage& message) {
  QuantizedInnovation qi;
  qi.bits = message.bits;
  qi.radius = static_cast<double>(message.radius);
  qi.codes = unpack_codes(message.packed_codes, message.bits, message.dimension);
  validate(qi);
  return qi;
}

std::vector<std::uint8_t> encode_message(const WireMessage& message) {
  check_bits(message.bits);
  if (message.packed_codes.size() != packed_size(message.dimension, message.bits)) {
    throw WireError("encode_message: packed_codes length does not match dimension");
  }
  std::vector<std::uint8_t> out;
  out.reserve(encoded_size(message.dimension, message.bits));
  put_le(out, message.worker_id);
  put_le(out, message.iteration);
  out.push_back(message.bits);
  put_le(out, message.dimension);
  put_le(out, std::bit_cast<std::uint32_t>(message.radius));
  out.insert(out.end(), message.packed_codes.begin(), message.packed_codes.end());
  return out;
}

WireMessage decode_message(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes + kRadiusBytes) {
    throw WireError("decode_message: truncated buffer (" + std::to_string(bytes.size()) +
                    " bytes)");
  }
  WireMessage m;
  m.worker_id = get_le<std::uint16_t>(bytes, 0);
  m.iteration = get_le<std::uint32_t>(bytes, 2);
  m.bits = bytes[6];
  m.dimension = get_le<std::uint32_t>(bytes, 7);
  m.radius = std::bit_cast<float>(get_le<std::uint32_t>(bytes, 11));
  if (m.bits < kMinBits || m.bits > kMaxBits) {
    throw WireError("decode_message: invalid bit width " + std::to_string(m.bits));
  }
  const std::size_t expected = encoded_size(m.dimension, m.bits);
  if (bytes.size() != expected) {
    throw WireError("decode_message: dimension " + std::to_string(m.dimension) +
                    " implies " + std::to_string(expected) + " bytes, buffer has " +
                    std::to_string(bytes.size()));
  }
  auto payload = bytes.subspan(kHeaderBytes + kRadiusBytes);
  m.packed_codes.assign(payload.begin(), payload.end());
  // Rejects nonzero padding.
  (void)unpack_codes(m.packed_codes, m.bits, m.dimension);
  return m;
}

}  // namespace laq::codec
