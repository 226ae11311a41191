#include "progtx/entropy.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

namespace progtx::entropy {

namespace {
constexpr std::uint32_t kTop = 1u << 24;
// Bytes of the final low word that the flush leaves implicit (always zero).
constexpr int kImplicitTail = 3;
}  // namespace

void ScaleTable::validate() const {
  if (scales.size() != steps.size())
    throw std::invalid_argument("scale table: scales and steps differ in length");
  for (std::size_t c = 0; c < scales.size(); ++c) {
    if (!(scales[c] > 0) || !std::isfinite(scales[c]))
      throw std::invalid_argument("scale table: channel " + std::to_string(c) + " scale must be > 0");
    if (!(steps[c] > 0) || !std::isfinite(steps[c]))
      throw std::invalid_argument("scale table: channel " + std::to_string(c) + " step must be > 0");
  }
}

std::string ScaleTable::to_json() const {
  nlohmann::json j;
  j["scales"] = scales;
  j["steps"] = steps;
  return j.dump(1);
}

ScaleTable ScaleTable::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ScaleTable t;
  t.scales = j.at("scales").get<std::vector<double>>();
  t.steps = j.at("steps").get<std::vector<double>>();
  t.validate();
  return t;
}

std::vector<double> estimate_scales(const std::vector<std::vector<SymbolPlane>>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("estimate_scales: empty corpus");
  const std::size_t channels = corpus.front().size();
  std::vector<double> out(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    // Welford accumulation over every symbol of channel c.
    double mean = 0.0, m2 = 0.0;
    std::int64_t n = 0;
    for (const auto& item : corpus) {
      if (item.size() != channels)
        throw std::invalid_argument("estimate_scales: inconsistent channel count");
      const auto& plane = item[c];
      for (Eigen::Index i = 0; i < plane.size(); ++i) {
        const double x = plane.data()[i];
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
      }
    }
    const double sd = n > 0 ? std::sqrt(m2 / static_cast<double>(n)) : 0.0;
    out[c] = std::max(sd, kScaleFloor);
  }
  return out;
}

// ---------------------------------------------------------------------------

void RangeEncoder::emit(std::uint8_t byte) {
  if (first_byte_) {
    // The leading byte carries overflow above the unit interval, which a
    // valid coding interval never produces.
    first_byte_ = false;
    if (byte != 0) throw std::logic_error("range coder: carry into leading byte");
    return;
  }
  out_.push_back(byte);
}

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t pending = cache_;
    do {
      emit(static_cast<std::uint8_t>(pending + carry));
      pending = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::encode(std::uint32_t start, std::uint32_t freq) {
  const std::uint32_t r = range_ >> kTotalBits;
  low_ += static_cast<std::uint64_t>(r) * start;
  range_ = r * freq;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_bits(std::uint32_t value, int nbits) {
  const int shift = kTotalBits - nbits;
  encode(value << shift, 1u << shift);
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  // Any value in [low, low + range) identifies the stream; pick the one whose
  // low 24 bits are zero so only one byte of the final word must be written.
  low_ = (low_ + 0xFFFFFFu) & ~std::uint64_t{0xFFFFFFu};
  shift_low();
  shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> payload) : data_(payload) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ < data_.size()) return data_[pos_++];
  if (++overrun_ > kImplicitTail) throw DecodeError("range decoder: payload truncated");
  return 0;
}

std::uint32_t RangeDecoder::peek() {
  step_ = range_ >> kTotalBits;
  const std::uint32_t v = code_ / step_;
  if (v >= kTotal) throw DecodeError("range decoder: corrupt payload");
  return v;
}

void RangeDecoder::consume(std::uint32_t start, std::uint32_t freq) {
  code_ -= start * step_;
  range_ = step_ * freq;
  while (range_ < kTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

std::uint32_t RangeDecoder::decode_bits(int nbits) {
  const int shift = kTotalBits - nbits;
  const std::uint32_t v = peek() >> shift;
  consume(v << shift, 1u << shift);
  return v;
}

void RangeDecoder::finish() const {
  if (pos_ != data_.size() || overrun_ != kImplicitTail)
    throw DecodeError("range decoder: payload length does not match symbol count");
}

// ---------------------------------------------------------------------------

SymbolModel::SymbolModel(double scale) {
  if (!(scale > 0) || !std::isfinite(scale))
    throw std::invalid_argument("symbol model scale must be positive");
  const double b = scale / std::numbers::sqrt2;  // Laplace parameter for std `scale`
  std::array<double, kEntries> p{};
  p[kDirectLimit] = -std::expm1(-0.5 / b);
  for (int k = 1; k <= kDirectLimit; ++k) {
    const double pk = 0.5 * (std::exp(-(k - 0.5) / b) - std::exp(-(k + 0.5) / b));
    p[kDirectLimit + k] = pk;
    p[kDirectLimit - k] = pk;
  }
  p[kEntries - 1] = std::exp(-(kDirectLimit + 0.5) / b);

  // Every entry keeps a nonzero frequency; rounding slack goes to the mode.
  constexpr std::uint32_t spread = kTotal - kEntries;
  std::array<std::uint32_t, kEntries> f{};
  std::uint32_t used = 0;
  for (int i = 0; i < kEntries; ++i) {
    f[i] = 1 + static_cast<std::uint32_t>(std::floor(p[i] * spread));
    used += f[i];
  }
  f[kDirectLimit] += kTotal - used;
  cum_[0] = 0;
  for (int i = 0; i < kEntries; ++i) cum_[i + 1] = cum_[i] + f[i];
}

void SymbolModel::encode(RangeEncoder& enc, std::int32_t symbol) const {
  if (symbol >= -kDirectLimit && symbol <= kDirectLimit) {
    const int i = symbol + kDirectLimit;
    enc.encode(cum_[i], cum_[i + 1] - cum_[i]);
    return;
  }
  const std::int64_t mag = std::abs(static_cast<std::int64_t>(symbol));
  if (mag > kMaxMagnitude)
    throw std::out_of_range("symbol " + std::to_string(symbol) + " exceeds the coder alphabet (|s| <= " +
                            std::to_string(kMaxMagnitude) + ")");
  const int esc = kEntries - 1;
  enc.encode(cum_[esc], cum_[esc + 1] - cum_[esc]);
  enc.encode_bits(symbol < 0 ? 1u : 0u, 1);
  enc.encode_bits(static_cast<std::uint32_t>(mag - kDirectLimit - 1), 16);
}

std::int32_t SymbolModel::decode(RangeDecoder& dec) const {
  const std::uint32_t target = dec.peek();
  const auto it = std::upper_bound(cum_.begin(), cum_.end(), target);
  const int i = static_cast<int>(it - cum_.begin()) - 1;
  dec.consume(cum_[i], cum_[i + 1] - cum_[i]);
  if (i < kEntries - 1) return i - kDirectLimit;
  const bool negative = dec.decode_bits(1) != 0;
  const auto mag = static_cast<std::int32_t>(dec.decode_bits(16)) + kDirectLimit + 1;
  return negative ? -mag : mag;
}

double SymbolModel::coded_probability(std::int32_t symbol) const {
  auto freq = [&](int i) { return static_cast<double>(cum_[i + 1] - cum_[i]) / kTotal; };
  if (symbol >= -kDirectLimit && symbol <= kDirectLimit) return freq(symbol + kDirectLimit);
  if (std::abs(static_cast<std::int64_t>(symbol)) > kMaxMagnitude) return 0.0;
  return freq(kEntries - 1) / (2.0 * 65536.0);
}

std::vector<SymbolModel> build_models(const ScaleTable& table) {
  table.validate();
  std::vector<SymbolModel> out;
  out.reserve(table.channels());
  for (double s : table.scales) out.emplace_back(s);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

void Bitstream::append_to(std::vector<std::uint8_t>& out) const {
  out.push_back(kMagic);
  out.push_back(kVersion);
  put_u32(out, symbol_count);
  out.insert(out.end(), payload.begin(), payload.end());
}

Bitstream Bitstream::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw DecodeError("bitstream: truncated header");
  if (bytes[0] != kMagic) throw DecodeError("bitstream: bad magic");
  if (bytes[1] != kVersion)
    throw DecodeError("bitstream: unsupported version " + std::to_string(bytes[1]));
  Bitstream s;
  for (int i = 0; i < 4; ++i) s.symbol_count |= static_cast<std::uint32_t>(bytes[2 + i]) << (8 * i);
  s.payload.assign(bytes.begin() + kHeaderBytes, bytes.end());
  return s;
}

void StreamWriter::put(const SymbolModel& model, std::int32_t symbol) {
  model.encode(enc_, symbol);
  ++count_;
}

Bitstream StreamWriter::finish() {
  Bitstream s;
  s.symbol_count = count_;
  if (count_ == 0) return s;
  enc_.encode_bits(kStreamTag, 16);
  s.payload = enc_.finish();
  return s;
}

StreamReader::StreamReader(const Bitstream& stream) : stream_(stream) {
  if (stream.symbol_count == 0) {
    if (!stream.payload.empty()) throw DecodeError("bitstream: payload present for zero symbols");
    return;
  }
  dec_.emplace(stream.payload);
}

std::int32_t StreamReader::get(const SymbolModel& model) {
  if (read_ >= stream_.symbol_count)
    throw DecodeError("bitstream: read past declared symbol count");
  ++read_;
  return model.decode(*dec_);
}

void StreamReader::finish() {
  if (read_ != stream_.symbol_count)
    throw DecodeError("bitstream: declared symbol count " + std::to_string(stream_.symbol_count) +
                      " but " + std::to_string(read_) + " symbols were read");
  if (stream_.symbol_count == 0) return;
  if (dec_->decode_bits(16) != kStreamTag)
    throw DecodeError("bitstream: check value mismatch (corrupt or mislabelled length)");
  dec_->finish();
}

Bitstream encode_symbols(std::span<const std::int32_t> symbols, std::size_t channel_id,
                         const ScaleTable& table) {
  if (channel_id >= table.channels()) throw std::out_of_range("channel id outside scale table");
  const SymbolModel model(table.scales[channel_id]);
  StreamWriter w;
  for (const auto s : symbols) w.put(model, s);
  return w.finish();
}

std::vector<std::int32_t> decode_symbols(const Bitstream& stream, std::size_t channel_id,
                                         const ScaleTable& table) {
  if (channel_id >= table.channels()) throw std::out_of_range("channel id outside scale table");
  const SymbolModel model(table.scales[channel_id]);
  StreamReader r(stream);
  std::vector<std::int32_t> out(stream.symbol_count);
  for (auto& s : out) s = r.get(model);
  r.finish();
  return out;
}

}  // namespace progtx::entropy
