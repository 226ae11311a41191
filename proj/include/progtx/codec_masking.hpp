#pragma once

#include "progtx/entropy.hpp"
#include "progtx/image.hpp"
#include "progtx/transform.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace progtx::masking {

using Latent = ChannelizedLatent<double>;
using SymbolLatent = std::vector<entropy::SymbolPlane>;

inline constexpr int kBlock = 8;
inline constexpr int kChannels = 3 * kBlock * kBlock;

/// Quantizer step at quality 1.0; the step used is quality * kBaseStep for
/// every channel.
inline constexpr double kBaseStep = 12.0;
inline constexpr double kDefaultQuality = 0.5;

/// Channel order, most important first, with the score that produced it.
struct ImportanceRanking {
  std::vector<int> order;
  std::vector<double> scores;

  int channels() const { return static_cast<int>(order.size()); }
  /// Throws unless `order` is a permutation of [0, channels) and scores are
  /// non-negative with one entry per channel.
  void validate(int channels) const;

  std::string to_json() const;
  static ImportanceRanking from_json(const std::string& text);

  /// Natural order with zero scores.
  static ImportanceRanking identity(int channels);
  /// Caller-supplied order (e.g. a random permutation); scores are zero.
  static ImportanceRanking from_order(std::vector<int> order);
};

/// Edge-pads to whole blocks and applies the block transform.
Latent analyze_image(const ImageBuffer& image);

/// Synthesizes, then crops back to `width` x `height`.
ImageBuffer synthesize_image(const Latent& latent, int width, int height);

/// Keeps the `keep` highest-ranked channels and zeroes the rest.
Latent mask_channels(const Latent& latent, const ImportanceRanking& ranking, int keep);

/// symbol = round-half-even(coeff / step_c).
SymbolLatent quantize(const Latent& latent, const entropy::ScaleTable& table);
Latent dequantize(const SymbolLatent& symbols, const entropy::ScaleTable& table);

/// Uniform step `quality * kBaseStep` for every channel; symbol scales are the
/// per-channel standard deviation of the quantized calibration latents.
entropy::ScaleTable build_scale_table(const std::vector<Latent>& calibration, double quality);

/// One self-decodable group of channels.
///
/// Wire layout: 0x50, image_id u32, packet_index u16, channel_count u16,
/// channel ids u16 each (all little-endian), then the Bitstream.
struct MaskedPacket {
  static constexpr std::uint8_t kMagic = 0x50;
  static constexpr std::size_t kFixedHeaderBytes = 9;

  std::uint32_t image_id = 0;
  std::uint16_t packet_index = 0;
  std::vector<std::uint16_t> channel_ids;
  entropy::Bitstream stream;

  std::vector<std::uint8_t> serialize() const;
  static MaskedPacket parse(std::span<const std::uint8_t> bytes);

  /// Everything except the range-coded payload.
  std::int64_t header_bits() const {
    return 8 * static_cast<std::int64_t>(kFixedHeaderBytes + 2 * channel_ids.size() +
                                         entropy::Bitstream::kHeaderBytes);
  }
  std::int64_t bit_size() const { return header_bits() + 8 * static_cast<std::int64_t>(stream.payload.size()); }
};

/// Packets covering ranking.order[0 .. max_channels) in groups of
/// `group_size` (the last group may be short). max_channels < 0 means all.
std::vector<MaskedPacket> encode_packets(const Latent& latent, const ImportanceRanking& ranking,
                                         int group_size, const entropy::ScaleTable& table,
                                         std::uint32_t image_id = 0, int max_channels = -1);

/// Immutable codec configuration: scale table, ranking, and the entropy
/// models derived from the table. Shareable across threads.
class MaskingCodec {
 public:
  MaskingCodec(entropy::ScaleTable table, ImportanceRanking ranking);

  const entropy::ScaleTable& table() const { return table_; }
  const ImportanceRanking& ranking() const { return ranking_; }
  const std::vector<entropy::SymbolModel>& models() const { return models_; }

  std::vector<MaskedPacket> encode(const ImageBuffer& image, std::uint32_t image_id,
                                   int group_size, int max_channels = -1) const;

  /// Mask, quantize, dequantize and synthesize in one step (no entropy coding).
  ImageBuffer decode_oneshot(const ImageBuffer& image, int keep) const;

 private:
  entropy::ScaleTable table_;
  ImportanceRanking ranking_;
  std::vector<entropy::SymbolModel> models_;
};

/// Receiver side of one image: received channels are kept as symbols and
/// missing ones decode as zero.
class ReceiverState {
 public:
  ReceiverState(const MaskingCodec& codec, std::uint32_t image_id, int width, int height);

  /// Decodes and stores the packet's channels. Re-integrating a packet is a
  /// no-op; a packet for another image or with conflicting data throws.
  void integrate(const MaskedPacket& packet);

  /// Current reconstruction, 8-bit and cropped to the image size.
  ImageBuffer decode_current() const;
  Latent current_latent() const;

  int received_channels() const;
  std::uint32_t image_id() const { return image_id_; }

 private:
  const MaskingCodec& codec_;
  std::uint32_t image_id_;
  int width_, height_, grid_rows_, grid_cols_;
  std::vector<std::optional<entropy::SymbolPlane>> received_;
};

}  // namespace progtx::masking
