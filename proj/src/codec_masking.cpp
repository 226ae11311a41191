#include "progtx/codec_masking.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace progtx::masking {

using entropy::DecodeError;
using entropy::ScaleTable;
using entropy::SymbolPlane;

void ImportanceRanking::validate(int n) const {
  if (static_cast<int>(order.size()) != n)
    throw std::invalid_argument("ranking has " + std::to_string(order.size()) + " channels, expected " +
                                std::to_string(n));
  if (scores.size() != order.size())
    throw std::invalid_argument("ranking order and scores differ in length");
  std::vector<bool> seen(n, false);
  for (const int c : order) {
    if (c < 0 || c >= n || seen[c]) throw std::invalid_argument("ranking order is not a permutation");
    seen[c] = true;
  }
  for (const double s : scores)
    if (!(s >= 0.0)) throw std::invalid_argument("ranking scores must be non-negative");
}

std::string ImportanceRanking::to_json() const {
  nlohmann::json j;
  j["order"] = order;
  j["scores"] = scores;
  return j.dump(1);
}

ImportanceRanking ImportanceRanking::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ImportanceRanking r;
  r.order = j.at("order").get<std::vector<int>>();
  r.scores = j.at("scores").get<std::vector<double>>();
  r.validate(static_cast<int>(r.order.size()));
  return r;
}

ImportanceRanking ImportanceRanking::identity(int n) {
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  return from_order(std::move(order));
}

ImportanceRanking ImportanceRanking::from_order(std::vector<int> order) {
  ImportanceRanking r;
  r.scores.assign(order.size(), 0.0);
  r.order = std::move(order);
  r.validate(r.channels());
  return r;
}

Latent analyze_image(const ImageBuffer& image) {
  return analyze<double>(pad_to_multiple(image, kBlock), kBlock);
}

ImageBuffer synthesize_image(const Latent& latent, int width, int height) {
  return crop(synthesize(latent), width, height);
}

Latent mask_channels(const Latent& latent, const ImportanceRanking& ranking, int keep) {
  const int n = latent.channel_count();
  if (keep < 0 || keep > n)
    throw std::invalid_argument("keep must be in [0, " + std::to_string(n) + "]");
  ranking.validate(n);
  Latent out = Latent::zeros(latent.block, latent.grid_rows(), latent.grid_cols());
  for (int i = 0; i < keep; ++i) out.channels[ranking.order[i]] = latent.channels[ranking.order[i]];
  return out;
}

SymbolLatent quantize(const Latent& latent, const ScaleTable& table) {
  if (table.channels() != latent.channels.size())
    throw std::invalid_argument("scale table does not match latent channel count");
  SymbolLatent out(latent.channels.size());
  for (std::size_t c = 0; c < latent.channels.size(); ++c) {
    const double step = table.steps[c];
    out[c] = latent.channels[c].unaryExpr([step](double v) {
      // nearbyint follows the default rounding mode: ties to even.
      return static_cast<std::int32_t>(std::nearbyint(v / step));
    });
  }
  return out;
}

Latent dequantize(const SymbolLatent& symbols, const ScaleTable& table) {
  if (table.channels() != symbols.size())
    throw std::invalid_argument("scale table does not match symbol channel count");
  const int b = static_cast<int>(std::lround(std::sqrt(symbols.size() / 3.0)));
  if (3 * b * b != static_cast<int>(symbols.size()))
    throw std::invalid_argument("channel count is not 3*b*b");
  Latent out;
  out.block = b;
  out.channels.resize(symbols.size());
  for (std::size_t c = 0; c < symbols.size(); ++c)
    out.channels[c] = symbols[c].cast<double>() * table.steps[c];
  return out;
}

ScaleTable build_scale_table(const std::vector<Latent>& calibration, double quality) {
  if (calibration.empty()) throw std::invalid_argument("calibration corpus is empty");
  if (!(quality > 0)) throw std::invalid_argument("quality must be > 0");
  const std::size_t n = calibration.front().channels.size();
  ScaleTable table;
  table.steps.assign(n, quality * kBaseStep);
  table.scales.assign(n, 1.0);
  std::vector<SymbolLatent> symbols;
  symbols.reserve(calibration.size());
  for (const auto& latent : calibration) symbols.push_back(quantize(latent, table));
  table.scales = entropy::estimate_scales(symbols);
  return table;
}

// ---------------------------------------------------------------------------

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_le(std::span<const std::uint8_t> bytes, std::size_t pos, int n) {
  std::uint32_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
  return v;
}

std::vector<MaskedPacket> encode_with_models(const Latent& latent, const ImportanceRanking& ranking,
                                             int group_size, const ScaleTable& table,
                                             const std::vector<entropy::SymbolModel>& models,
                                             std::uint32_t image_id, int max_channels) {
  if (group_size < 1) throw std::invalid_argument("group_size must be >= 1");
  const int n = latent.channel_count();
  ranking.validate(n);
  if (max_channels < 0) max_channels = n;
  if (max_channels > n)
    throw std::invalid_argument("max_channels exceeds the channel count");
  const SymbolLatent symbols = quantize(latent, table);

  std::vector<MaskedPacket> packets;
  for (int first = 0; first < max_channels; first += group_size) {
    const int last = std::min(first + group_size, max_channels);
    MaskedPacket pkt;
    pkt.image_id = image_id;
    pkt.packet_index = static_cast<std::uint16_t>(packets.size());
    entropy::StreamWriter w;
    for (int i = first; i < last; ++i) {
      const int c = ranking.order[i];
      pkt.channel_ids.push_back(static_cast<std::uint16_t>(c));
      const auto& plane = symbols[c];
      for (Eigen::Index k = 0; k < plane.size(); ++k) w.put(models[c], plane.data()[k]);
    }
    pkt.stream = w.finish();
    packets.push_back(std::move(pkt));
  }
  return packets;
}

}  // namespace

std::vector<std::uint8_t> MaskedPacket::serialize() const {
  std::vector<std::uint8_t> out;
  out.reserve(bit_size() / 8);
  out.push_back(kMagic);
  put_u32(out, image_id);
  put_u16(out, packet_index);
  put_u16(out, static_cast<std::uint16_t>(channel_ids.size()));
  for (const auto c : channel_ids) put_u16(out, c);
  stream.append_to(out);
  return out;
}

MaskedPacket MaskedPacket::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFixedHeaderBytes) throw DecodeError("masked packet: truncated header");
  if (bytes[0] != kMagic) throw DecodeError("masked packet: bad magic");
  MaskedPacket pkt;
  pkt.image_id = get_le(bytes, 1, 4);
  pkt.packet_index = static_cast<std::uint16_t>(get_le(bytes, 5, 2));
  const std::size_t count = get_le(bytes, 7, 2);
  const std::size_t ids_end = kFixedHeaderBytes + 2 * count;
  if (bytes.size() < ids_end) throw DecodeError("masked packet: truncated channel list");
  for (std::size_t i = 0; i < count; ++i)
    pkt.channel_ids.push_back(static_cast<std::uint16_t>(get_le(bytes, kFixedHeaderBytes + 2 * i, 2)));
  pkt.stream = entropy::Bitstream::parse(bytes.subspan(ids_end));
  return pkt;
}

std::vector<MaskedPacket> encode_packets(const Latent& latent, const ImportanceRanking& ranking,
                                         int group_size, const ScaleTable& table,
                                         std::uint32_t image_id, int max_channels) {
  return encode_with_models(latent, ranking, group_size, table, entropy::build_models(table),
                            image_id, max_channels);
}

MaskingCodec::MaskingCodec(ScaleTable table, ImportanceRanking ranking)
    : table_(std::move(table)), ranking_(std::move(ranking)) {
  table_.validate();
  ranking_.validate(static_cast<int>(table_.channels()));
  if (table_.channels() != static_cast<std::size_t>(kChannels))
    throw std::invalid_argument("masking codec expects " + std::to_string(kChannels) + " channels");
  models_ = entropy::build_models(table_);
}

std::vector<MaskedPacket> MaskingCodec::encode(const ImageBuffer& image, std::uint32_t image_id,
                                               int group_size, int max_channels) const {
  return encode_with_models(analyze_image(image), ranking_, group_size, table_, models_, image_id,
                            max_channels);
}

ImageBuffer MaskingCodec::decode_oneshot(const ImageBuffer& image, int keep) const {
  const Latent masked = mask_channels(analyze_image(image), ranking_, keep);
  return synthesize_image(dequantize(quantize(masked, table_), table_), image.width(), image.height());
}

ReceiverState::ReceiverState(const MaskingCodec& codec, std::uint32_t image_id, int width, int height)
    : codec_(codec), image_id_(image_id), width_(width), height_(height) {
  if (width < 1 || height < 1) throw std::invalid_argument("receiver needs a non-empty geometry");
  grid_rows_ = (height + kBlock - 1) / kBlock;
  grid_cols_ = (width + kBlock - 1) / kBlock;
  received_.resize(kChannels);
}

void ReceiverState::integrate(const MaskedPacket& packet) {
  if (packet.image_id != image_id_)
    throw std::invalid_argument("packet for image " + std::to_string(packet.image_id) +
                                " offered to receiver of image " + std::to_string(image_id_));
  const auto& models = codec_.models();
  entropy::StreamReader r(packet.stream);
  std::vector<SymbolPlane> planes;
  for (const auto c : packet.channel_ids) {
    if (c >= kChannels) throw DecodeError("masked packet: channel id " + std::to_string(c) + " out of range");
    SymbolPlane plane(grid_rows_, grid_cols_);
    for (Eigen::Index k = 0; k < plane.size(); ++k) plane.data()[k] = r.get(models[c]);
    planes.push_back(std::move(plane));
  }
  r.finish();
  // Validate the whole packet before touching state.
  for (std::size_t i = 0; i < planes.size(); ++i) {
    const auto& have = received_[packet.channel_ids[i]];
    if (have && *have != planes[i])
      throw DecodeError("masked packet: conflicting data for channel " +
                        std::to_string(packet.channel_ids[i]));
  }
  for (std::size_t i = 0; i < planes.size(); ++i) received_[packet.channel_ids[i]] = std::move(planes[i]);
}

Latent ReceiverState::current_latent() const {
  SymbolLatent symbols(kChannels);
  for (int c = 0; c < kChannels; ++c)
    symbols[c] = received_[c] ? *received_[c] : SymbolPlane::Zero(grid_rows_, grid_cols_);
  return dequantize(symbols, codec_.table());
}

ImageBuffer ReceiverState::decode_current() const {
  return synthesize_image(current_latent(), width_, height_);
}

int ReceiverState::received_channels() const {
  return static_cast<int>(std::count_if(received_.begin(), received_.end(),
                                        [](const auto& p) { return p.has_value(); }));
}

}  // namespace progtx::masking
