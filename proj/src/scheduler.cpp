#include "progtx/scheduler.hpp"

#include <json.hpp>

#include <algorithm>
#include <ostream>
#include <stdexcept>

namespace progtx::scheduler {

void Policy::validate() const {
  switch (kind) {
    case Kind::progressive_masking:
      if (group_size < 1) throw std::invalid_argument("masking group_size must be >= 1");
      if (n_max < 1 || n_max > 192) throw std::invalid_argument("masking n_max must be in [1, 192]");
      break;
    case Kind::progressive_rvq:
      if (bpi < 1 || bpi > 24) throw std::invalid_argument("rvq bpi must be in [1, 24]");
      if (m_max < 1) throw std::invalid_argument("rvq m_max must be >= 1");
      break;
    case Kind::nonprogressive:
      if (levels.empty()) throw std::invalid_argument("baseline needs at least one quality level");
      for (const auto& l : levels) {
        if (l.keep < 1 || l.keep > 192) throw std::invalid_argument("baseline keep must be in [1, 192]");
        if (!(l.quality > 0)) throw std::invalid_argument("baseline quality must be > 0");
      }
      break;
  }
}

Policy Policy::masking(int group_size, int n_max) {
  Policy p;
  p.kind = Kind::progressive_masking;
  p.group_size = group_size;
  p.n_max = n_max;
  p.validate();
  return p;
}

Policy Policy::rvq(int bpi, int m_max) {
  Policy p;
  p.kind = Kind::progressive_rvq;
  p.bpi = bpi;
  p.m_max = m_max;
  p.validate();
  return p;
}

Policy Policy::nonprogressive(std::vector<QualityLevel> levels) {
  Policy p;
  p.kind = Kind::nonprogressive;
  p.levels = std::move(levels);
  p.validate();
  return p;
}

const char* to_string(Policy::Kind kind) {
  switch (kind) {
    case Policy::Kind::progressive_masking: return "progressive_masking";
    case Policy::Kind::progressive_rvq: return "progressive_rvq";
    case Policy::Kind::nonprogressive: return "nonprogressive";
  }
  return "?";
}

Policy::Kind policy_kind_from_string(const std::string& s) {
  if (s == "progressive_masking") return Policy::Kind::progressive_masking;
  if (s == "progressive_rvq") return Policy::Kind::progressive_rvq;
  if (s == "nonprogressive") return Policy::Kind::nonprogressive;
  throw std::invalid_argument("unknown policy kind '" + s + "'");
}

std::int64_t TransmissionPlan::bits_sent() const {
  std::int64_t total = 0;
  for (const auto& s : slots) total += s.bits_used;
  return total;
}

TransmissionPlan plan_image(bool progressive, std::span<const std::int64_t> unit_bits,
                            std::span<const channel::SlotBudget> budgets) {
  if (unit_bits.empty()) throw std::invalid_argument("plan_image: empty payload");
  for (std::size_t i = 0; i < unit_bits.size(); ++i) {
    if (unit_bits[i] < 1) throw std::invalid_argument("plan_image: unit sizes must be positive");
    if (!progressive && i > 0 && unit_bits[i] <= unit_bits[i - 1])
      throw std::invalid_argument("plan_image: quality level sizes must be strictly increasing");
  }

  TransmissionPlan plan;
  const auto n_units = static_cast<int>(unit_bits.size());
  if (progressive) {
    int done = 0;
    std::int64_t into_unit = 0;  // bits of unit `done` already sent
    for (std::size_t k = 0; k < budgets.size() && done < n_units; ++k) {
      SlotAction a;
      a.slot = static_cast<std::int64_t>(k);
      std::int64_t avail = std::max<std::int64_t>(budgets[k].n_bits, 0);
      const int before = done;
      while (avail > 0 && done < n_units) {
        const std::int64_t take = std::min(avail, unit_bits[done] - into_unit);
        avail -= take;
        into_unit += take;
        a.bits_used += take;
        if (into_unit == unit_bits[done]) {
          ++done;
          into_unit = 0;
        }
      }
      a.units_completed = done;
      a.decodable = done > before;
      if (a.decodable) plan.events.push_back({a.slot, done});
      plan.slots.push_back(a);
    }
    plan.complete = done == n_units;
  } else {
    for (std::size_t k = 0; k < budgets.size(); ++k) {
      SlotAction a;
      a.slot = static_cast<std::int64_t>(k);
      const auto fit = std::upper_bound(unit_bits.begin(), unit_bits.end(), budgets[k].n_bits);
      const int level = static_cast<int>(fit - unit_bits.begin()) - 1;
      if (level >= 0) {
        a.bits_used = unit_bits[level];
        a.units_completed = level + 1;
        a.decodable = true;
        plan.events.push_back({a.slot, level + 1});
        plan.slots.push_back(a);
        plan.complete = true;
        break;
      }
      plan.slots.push_back(a);
    }
  }
  return plan;
}

std::optional<std::int64_t> first_decode_slot(const TransmissionPlan& plan) {
  if (plan.events.empty()) return std::nullopt;
  return plan.events.front().slot;
}

std::optional<std::int64_t> completion_slot(const TransmissionPlan& plan) {
  if (!plan.complete) return std::nullopt;
  return plan.events.back().slot;
}

void write_plan_jsonl(std::ostream& out, const TransmissionPlan& plan) {
  for (const auto& s : plan.slots) {
    const nlohmann::json j = {{"slot", s.slot},
                              {"bits_used", s.bits_used},
                              {"units_completed", s.units_completed},
                              {"decodable", s.decodable}};
    out << j.dump() << '\n';
  }
}

}  // namespace progtx::scheduler
