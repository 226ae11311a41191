#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace progtx::entropy {

/// Raised for any malformed, truncated, or inconsistent coded stream.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using SymbolPlane = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-channel coding parameters shared by encoder and decoder.
///
/// `scales` is the standard deviation of each channel's quantized symbols
/// (the entropy model width); `steps` is each channel's quantizer step in
/// coefficient units.
struct ScaleTable {
  std::vector<double> scales;
  std::vector<double> steps;

  std::size_t channels() const { return scales.size(); }
  void validate() const;

  /// Side-information cost charged per image for `n_channels` carried channels.
  static std::int64_t side_info_bits(std::size_t n_channels) {
    return 16 * static_cast<std::int64_t>(n_channels);
  }

  std::string to_json() const;
  static ScaleTable from_json(const std::string& text);
};

/// Sample standard deviation of each channel's symbols over a corpus, floored
/// at 1e-3. `corpus[i][c]` is channel c of item i.
std::vector<double> estimate_scales(const std::vector<std::vector<SymbolPlane>>& corpus);

inline constexpr double kScaleFloor = 1e-3;

// ---------------------------------------------------------------------------
// Range coder: 32-bit range, carry propagation through a cached byte, 16-bit
// frequency totals.

inline constexpr int kTotalBits = 16;
inline constexpr std::uint32_t kTotal = 1u << kTotalBits;

class RangeEncoder {
 public:
  /// Codes the interval [start, start + freq) out of kTotal.
  void encode(std::uint32_t start, std::uint32_t freq);
  /// Codes `nbits` (<= 16) raw bits.
  void encode_bits(std::uint32_t value, int nbits);
  /// Flushes and returns the payload. The encoder must not be reused.
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();
  void emit(std::uint8_t byte);

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  bool first_byte_ = true;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> payload);

  /// Returns the cumulative-frequency target of the next symbol.
  std::uint32_t peek();
  /// Removes the interval chosen after `peek`.
  void consume(std::uint32_t start, std::uint32_t freq);
  std::uint32_t decode_bits(int nbits);
  /// Throws unless the payload was consumed exactly.
  void finish() const;

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  int overrun_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t step_ = 0;
};

/// Zero-mean discretized Laplacian over [-255, 255] with a uniform escape
/// bucket for larger magnitudes (sign bit + 16-bit offset).
class SymbolModel {
 public:
  static constexpr std::int32_t kDirectLimit = 255;
  static constexpr std::int32_t kMaxMagnitude = kDirectLimit + 1 + 0xFFFF;
  static constexpr int kEntries = 2 * kDirectLimit + 2;  // direct symbols + escape

  /// `scale` is the standard deviation of the symbol distribution.
  explicit SymbolModel(double scale);

  void encode(RangeEncoder& enc, std::int32_t symbol) const;
  std::int32_t decode(RangeDecoder& dec) const;

  /// Probability the coder actually assigns (after frequency quantization).
  double coded_probability(std::int32_t symbol) const;

 private:
  std::array<std::uint32_t, kEntries + 1> cum_{};
};

std::vector<SymbolModel> build_models(const ScaleTable& table);

/// Coded stream. Wire layout: 0xEC, version u8, symbol_count u32 LE, payload.
struct Bitstream {
  static constexpr std::uint8_t kMagic = 0xEC;
  static constexpr std::uint8_t kVersion = 1;
  static constexpr std::size_t kHeaderBytes = 6;

  std::uint32_t symbol_count = 0;
  std::vector<std::uint8_t> payload;

  std::int64_t bit_size() const {
    return 8 * static_cast<std::int64_t>(kHeaderBytes + payload.size());
  }
  void append_to(std::vector<std::uint8_t>& out) const;
  /// Parses a stream occupying all of `bytes`.
  static Bitstream parse(std::span<const std::uint8_t> bytes);
};

/// Check value coded after the last symbol; a mismatch flags length or
/// payload corruption.
inline constexpr std::uint32_t kStreamTag = 0xC0DE;

/// Helper for multi-channel streams: codes a symbol sequence under one model
/// per segment.
class StreamWriter {
 public:
  void put(const SymbolModel& model, std::int32_t symbol);
  Bitstream finish();

 private:
  RangeEncoder enc_;
  std::uint32_t count_ = 0;
};

class StreamReader {
 public:
  explicit StreamReader(const Bitstream& stream);
  std::int32_t get(const SymbolModel& model);
  /// Verifies the symbol count and trailing check value.
  void finish();

 private:
  const Bitstream& stream_;
  std::optional<RangeDecoder> dec_;
  std::uint32_t read_ = 0;
};

Bitstream encode_symbols(std::span<const std::int32_t> symbols, std::size_t channel_id,
                         const ScaleTable& table);
std::vector<std::int32_t> decode_symbols(const Bitstream& stream, std::size_t channel_id,
                                         const ScaleTable& table);

}  // namespace progtx::entropy
