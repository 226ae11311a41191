#pragma once

#include "progtx/channel.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace progtx::scheduler {

/// Quality level of the nonprogressive baseline: the `keep` top-ranked
/// channels coded with quantizer quality `quality`.
struct QualityLevel {
  int keep = 0;
  double quality = 1.0;
};

struct Policy {
  enum class Kind { progressive_masking, progressive_rvq, nonprogressive };

  Kind kind = Kind::progressive_masking;
  int group_size = 4;  // masking: channels per packet
  int n_max = 32;      // masking: channels sent per image
  int bpi = 8;         // rvq
  int m_max = 10;      // rvq: stages sent per image
  std::vector<QualityLevel> levels;  // nonprogressive, coarsest first

  bool progressive() const { return kind != Kind::nonprogressive; }
  void validate() const;

  static Policy masking(int group_size, int n_max);
  static Policy rvq(int bpi, int m_max);
  static Policy nonprogressive(std::vector<QualityLevel> levels);
};

const char* to_string(Policy::Kind kind);
Policy::Kind policy_kind_from_string(const std::string& s);

struct SlotAction {
  std::int64_t slot = 0;  // relative to the plan's first slot
  std::int64_t bits_used = 0;
  int units_completed = 0;  // cumulative; for the baseline, the level index + 1
  bool decodable = false;   // a decode event happens in this slot
};

struct DecodeEvent {
  std::int64_t slot = 0;
  int unit = 0;  // progressive: units now decodable; baseline: level index + 1
};

struct TransmissionPlan {
  std::vector<SlotAction> slots;
  std::vector<DecodeEvent> events;
  bool complete = false;

  std::int64_t bits_sent() const;
};

/// Progressive: units stream in order, spanning slots as needed; a decode
/// event fires in each slot where at least one unit completes. Baseline
/// (`progressive` false): in each slot the largest level that fits the slot
/// alone is sent, else the slot is lost; one successful slot completes the
/// image. Unit sizes must be positive; baseline sizes strictly increasing.
/// The plan stops at completion or when the budgets run out.
TransmissionPlan plan_image(bool progressive, std::span<const std::int64_t> unit_bits,
                            std::span<const channel::SlotBudget> budgets);

std::optional<std::int64_t> first_decode_slot(const TransmissionPlan& plan);
std::optional<std::int64_t> completion_slot(const TransmissionPlan& plan);

/// One JSON object per slot: {"slot", "bits_used", "units_completed", "decodable"}.
void write_plan_jsonl(std::ostream& out, const TransmissionPlan& plan);

}  // namespace progtx::scheduler
