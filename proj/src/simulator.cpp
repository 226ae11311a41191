#include "progtx/simulator.hpp"

#include "progtx/codec_masking.hpp"
#include "progtx/codec_rvq.hpp"
#include "progtx/imageio.hpp"
#include "progtx/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace progtx::sim {

using nlohmann::json;
using scheduler::Policy;

// ---------------------------------------------------------------------------
// Configuration

std::vector<MethodConfig> ExperimentConfig::default_methods() {
  return {
      {"masking", Policy::masking(4, 32)},
      {"rvq", Policy::rvq(8, 10)},
      {"baseline", Policy::nonprogressive({{1, 30.0}, {1, 16.0}, {1, 10.0}, {2, 30.0}})},
  };
}

void ExperimentConfig::validate() const {
  if (snr_grid.empty()) throw std::invalid_argument("snr_grid must not be empty");
  if (n_realizations < 1) throw std::invalid_argument("n_realizations must be >= 1");
  if (horizon_slots < 1) throw std::invalid_argument("horizon_slots must be >= 1");
  if (methods.empty()) throw std::invalid_argument("at least one method is required");
  if (max_images < 0) throw std::invalid_argument("max_images must be >= 0");
  if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
  if (constant_channel && !(constant_channel->gain_power >= 0))
    throw std::invalid_argument("constant channel gain must be >= 0");
  fading.validate();
  std::set<std::string> names;
  for (const auto& m : methods) {
    if (m.name.empty() || m.name.find_first_of(",\"\n") != std::string::npos)
      throw std::invalid_argument("method names must be non-empty and free of commas and quotes");
    if (!names.insert(m.name).second) throw std::invalid_argument("duplicate method name '" + m.name + "'");
    m.policy.validate();
  }
}

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

fs::path read_path(const json& j, const char* key, const fs::path& base, const fs::path& fallback) {
  if (!j.contains(key)) return fallback;
  const fs::path p = j.at(key).get<std::string>();
  return p.is_relative() ? base / p : p;
}

MethodConfig parse_method(const json& j) {
  check_keys(j, "method", {"name", "kind", "group_size", "n_max", "bpi", "m_max", "levels"});
  MethodConfig m;
  m.name = j.at("name").get<std::string>();
  m.policy.kind = scheduler::policy_kind_from_string(j.at("kind").get<std::string>());
  read(j, "group_size", m.policy.group_size);
  read(j, "n_max", m.policy.n_max);
  read(j, "bpi", m.policy.bpi);
  read(j, "m_max", m.policy.m_max);
  if (j.contains("levels")) {
    for (const auto& l : j.at("levels")) {
      check_keys(l, "quality level", {"keep", "quality"});
      m.policy.levels.push_back({l.at("keep").get<int>(), l.at("quality").get<double>()});
    }
  }
  return m;
}

std::pair<int, int> line_col(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& text, const fs::path& base, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte);
    std::string what = e.what();
    // Drop the library's "[json.exception.parse_error.101] parse error at line L, column C: " prefix.
    if (const auto p = what.find(": "); p != std::string::npos) what = what.substr(p + 2);
    throw std::runtime_error(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
  }

  ExperimentConfig c;
  c.methods = default_methods();
  try {
    check_keys(j, "config", {"snr_grid", "n_realizations", "horizon_slots", "seed", "channel", "rate_model",
                             "corpus", "artifacts", "methods", "outputs", "snapshot", "jobs"});
    read(j, "snr_grid", c.snr_grid);
    read(j, "n_realizations", c.n_realizations);
    read(j, "horizon_slots", c.horizon_slots);
    read(j, "seed", c.base_seed);
    read(j, "jobs", c.jobs);
    if (j.contains("channel")) {
      const auto& ch = j.at("channel");
      check_keys(ch, "channel",
                 {"doppler_hz", "slot_s", "bandwidth_hz", "num_sinusoids", "constant_gain_power"});
      read(ch, "doppler_hz", c.fading.doppler_hz);
      read(ch, "slot_s", c.fading.slot_s);
      read(ch, "bandwidth_hz", c.fading.bandwidth_hz);
      read(ch, "num_sinusoids", c.fading.num_sinusoids);
      if (ch.contains("constant_gain_power"))
        c.constant_channel = ConstantChannel{ch.at("constant_gain_power").get<double>()};
    }
    if (j.contains("rate_model")) {
      const auto& rm = j.at("rate_model");
      check_keys(rm, "rate_model", {"kind", "epsilon"});
      const auto kind = rm.value("kind", std::string("shannon"));
      if (kind == "shannon") {
        c.rate = channel::RateModel::shannon();
      } else if (kind == "finite_blocklength") {
        c.rate = channel::RateModel::finite_blocklength(rm.value("epsilon", 1e-3));
      } else {
        throw std::invalid_argument("unknown rate model '" + kind + "'");
      }
    }
    if (j.contains("corpus")) {
      const auto& co = j.at("corpus");
      check_keys(co, "corpus", {"manifest", "split", "max_images"});
      c.manifest = read_path(co, "manifest", base, {});
      read(co, "split", c.split);
      read(co, "max_images", c.max_images);
    }
    if (j.contains("artifacts")) {
      const auto& a = j.at("artifacts");
      check_keys(a, "artifacts", {"ranking", "scales", "stack", "projector"});
      c.ranking = read_path(a, "ranking", base, {});
      c.scales = read_path(a, "scales", base, {});
      c.stack = read_path(a, "stack", base, {});
      c.projector = read_path(a, "projector", base, {});
    }
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m));
    }
    if (j.contains("outputs")) {
      const auto& o = j.at("outputs");
      check_keys(o, "outputs", {"records", "aggregates", "snapshot", "latency"});
      c.records_out = read_path(o, "records", base, {});
      c.aggregates_out = read_path(o, "aggregates", base, {});
      c.snapshot_out = read_path(o, "snapshot", base, {});
      c.latency_out = read_path(o, "latency", base, {});
    }
    if (j.contains("snapshot")) {
      const auto& s = j.at("snapshot");
      check_keys(s, "snapshot", {"enabled", "snr_db", "window_ms", "realization"});
      read(s, "enabled", c.snapshot.enabled);
      read(s, "snr_db", c.snapshot.snr_db);
      read(s, "window_ms", c.snapshot.window_ms);
      read(s, "realization", c.snapshot.realization);
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(origin + ": " + e.what());
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(origin + ": " + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Preparation

namespace {

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw std::runtime_error("missing trained artifact: no " + what + " path configured");
  if (!fs::exists(p)) throw std::runtime_error("missing trained artifact: " + what + " file " + p.string());
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

using Clock = std::chrono::steady_clock;

Ladder masking_ladder(const masking::MaskingCodec& codec, const Policy& policy, const ImageBuffer& image,
                      std::uint32_t id) {
  Ladder l;
  auto t0 = Clock::now();
  const auto packets = codec.encode(image, id, policy.group_size, policy.n_max);
  l.encode_ms = ms_since(t0);
  masking::ReceiverState rx(codec, id, image.width(), image.height());
  for (const auto& p : packets) {
    l.unit_bits.push_back(p.bit_size());
    t0 = Clock::now();
    rx.integrate(p);
    const ImageBuffer rec = rx.decode_current();
    l.decode_ms += ms_since(t0);
    l.quality.push_back(metrics::quality(image, rec));
  }
  l.unit_bits.front() += entropy::ScaleTable::side_info_bits(static_cast<std::size_t>(policy.n_max));
  l.decode_ms /= static_cast<double>(packets.size());
  return l;
}

Ladder rvq_ladder(const rvq::RvqCodec& codec, const Policy& policy, const ImageBuffer& image, std::uint32_t id) {
  Ladder l;
  auto t0 = Clock::now();
  const auto tokens = codec.encode(image, policy.m_max);
  const auto packets = codec.packetize(tokens, id);
  l.encode_ms = ms_since(t0);
  for (int m = 1; m <= policy.m_max; ++m) {
    l.unit_bits.push_back(packets[m - 1].bit_size());
    t0 = Clock::now();
    const ImageBuffer rec = codec.decode(tokens, m, image.width(), image.height());
    l.decode_ms += ms_since(t0);
    l.quality.push_back(metrics::quality(image, rec));
  }
  l.decode_ms /= policy.m_max;
  return l;
}

Ladder baseline_ladder(const std::vector<masking::MaskingCodec>& levels, const Policy& policy,
                       const ImageBuffer& image, std::uint32_t id, const std::string& name,
                       const std::string& method) {
  Ladder l;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const int keep = policy.levels[i].keep;
    auto t0 = Clock::now();
    const auto packets = levels[i].encode(image, id, keep, keep);
    l.encode_ms += ms_since(t0);
    masking::ReceiverState rx(levels[i], id, image.width(), image.height());
    t0 = Clock::now();
    rx.integrate(packets.front());
    const ImageBuffer rec = rx.decode_current();
    l.decode_ms += ms_since(t0);
    l.unit_bits.push_back(packets.front().bit_size() +
                          entropy::ScaleTable::side_info_bits(static_cast<std::size_t>(keep)));
    l.quality.push_back(metrics::quality(image, rec));
    if (i > 0 && l.unit_bits[i] <= l.unit_bits[i - 1])
      throw std::runtime_error("baseline quality levels of image '" + name + "' are not strictly increasing in size (" +
                               std::to_string(l.unit_bits[i - 1]) + " then " + std::to_string(l.unit_bits[i]) +
                               " bits); adjust the levels of method '" + method + "'");
  }
  l.encode_ms /= static_cast<double>(levels.size());
  l.decode_ms /= static_cast<double>(levels.size());
  return l;
}

}  // namespace

std::vector<PreparedImage> prepare(const ExperimentConfig& config) {
  config.validate();
  if (config.manifest.empty()) throw std::runtime_error("no corpus manifest configured");
  const auto corpus = io::Corpus::load_manifest(config.manifest);
  auto entries = corpus.split(io::split_from_string(config.split));
  if (entries.empty()) throw std::runtime_error("corpus split '" + config.split + "' is empty");
  if (config.max_images > 0 && entries.size() > static_cast<std::size_t>(config.max_images))
    entries.resize(config.max_images);

  bool need_masking = false, need_rvq = false, need_baseline = false;
  for (const auto& m : config.methods) {
    need_masking |= m.policy.kind == Policy::Kind::progressive_masking;
    need_rvq |= m.policy.kind == Policy::Kind::progressive_rvq;
    need_baseline |= m.policy.kind == Policy::Kind::nonprogressive;
  }

  std::optional<masking::ImportanceRanking> ranking;
  if (need_masking || need_baseline) {
    require_file(config.ranking, "channel ranking");
    ranking = masking::ImportanceRanking::from_json(io::read_file(config.ranking));
  }
  std::optional<masking::MaskingCodec> masking_codec;
  if (need_masking) {
    require_file(config.scales, "scale table");
    masking_codec.emplace(entropy::ScaleTable::from_json(io::read_file(config.scales)), *ranking);
  }
  std::optional<rvq::RvqCodec> rvq_codec;
  if (need_rvq) {
    require_file(config.stack, "residual stack");
    auto stack = rvq::load_stack(config.stack);
    std::optional<rvq::Projector> projector;
    if (!config.projector.empty()) {
      require_file(config.projector, "projector");
      projector = rvq::Projector::from_json(io::read_file(config.projector));
    }
    rvq_codec.emplace(std::move(stack), std::move(projector));
  }

  // Baseline levels are calibrated on the calibration split with their own
  // quantizer quality.
  std::vector<std::vector<masking::MaskingCodec>> level_codecs(config.methods.size());
  if (need_baseline) {
    std::vector<masking::Latent> calib;
    for (const auto& img : corpus.load(io::Split::calibration)) calib.push_back(masking::analyze_image(img));
    if (calib.empty()) throw std::runtime_error("baseline calibration needs a non-empty calibration split");
    for (std::size_t m = 0; m < config.methods.size(); ++m) {
      const auto& p = config.methods[m].policy;
      if (p.kind != Policy::Kind::nonprogressive) continue;
      for (const auto& lvl : p.levels)
        level_codecs[m].emplace_back(masking::build_scale_table(calib, lvl.quality), *ranking);
    }
  }

  std::vector<PreparedImage> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    PreparedImage pi;
    pi.name = entries[i].name;
    pi.image = io::load_ppm(entries[i].path);
    const auto id = static_cast<std::uint32_t>(i);
    for (std::size_t m = 0; m < config.methods.size(); ++m) {
      const auto& p = config.methods[m].policy;
      switch (p.kind) {
        case Policy::Kind::progressive_masking:
          pi.ladders.push_back(masking_ladder(*masking_codec, p, pi.image, id));
          break;
        case Policy::Kind::progressive_rvq:
          if (p.bpi != rvq_codec->stack().bpi())
            throw std::runtime_error("method '" + config.methods[m].name + "' asks for bpi " + std::to_string(p.bpi) +
                                     " but the residual stack has bpi " + std::to_string(rvq_codec->stack().bpi()));
          if (p.m_max > rvq_codec->stack().stage_count())
            throw std::runtime_error("method '" + config.methods[m].name + "' asks for " + std::to_string(p.m_max) +
                                     " stages but the residual stack has " +
                                     std::to_string(rvq_codec->stack().stage_count()));
          pi.ladders.push_back(rvq_ladder(*rvq_codec, p, pi.image, id));
          break;
        case Policy::Kind::nonprogressive:
          pi.ladders.push_back(baseline_ladder(level_codecs[m], p, pi.image, id, pi.name, config.methods[m].name));
          break;
      }
    }
    out.push_back(std::move(pi));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo

std::uint64_t realization_seed(std::uint64_t base_seed, std::size_t snr_index, int realization) {
  return derive_seed(base_seed, snr_index, static_cast<std::uint64_t>(realization));
}

std::vector<channel::SlotBudget> realization_budgets(const ExperimentConfig& config, double snr_db,
                                                     std::uint64_t seed, std::size_t n_slots,
                                                     channel::FadingTrace* trace_out) {
  const auto fading = config.fading.with_snr(snr_db).with_seed(seed);
  channel::FadingTrace trace;
  if (config.constant_channel) {
    trace.gains.assign(n_slots, {std::sqrt(config.constant_channel->gain_power), 0.0});
  } else {
    trace = channel::generate_fading(fading, n_slots);
  }
  auto budgets = channel::slot_budgets(trace, fading, config.rate);
  if (trace_out) *trace_out = std::move(trace);
  return budgets;
}

namespace {

TransmissionRecord transmit(const Ladder& ladder, const Policy& policy,
                            std::span<const channel::SlotBudget> budgets) {
  const auto plan = scheduler::plan_image(policy.progressive(), ladder.unit_bits, budgets);
  TransmissionRecord r;
  r.first_decode_slot = scheduler::first_decode_slot(plan);
  r.completion_slot = scheduler::completion_slot(plan);
  r.bits_sent = plan.bits_sent();
  r.elapsed_slots = r.completion_slot ? *r.completion_slot + 1 : static_cast<std::int64_t>(plan.slots.size());
  for (const auto& e : plan.events) {
    const auto& q = ladder.quality[e.unit - 1];
    r.trajectory.push_back({e.slot, e.unit, q.psnr_db, q.ssim});
  }
  return r;
}

template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  std::size_t first_error_index = n;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (i < first_error_index) {
          first_error_index = i;
          first_error = std::current_exception();
        }
      }
    }
  };
  const int threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(jobs), n));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const std::vector<PreparedImage>& images) {
  config.validate();
  if (images.empty()) throw std::invalid_argument("run_experiment: no images");
  const std::size_t n_snr = config.snr_grid.size();
  const std::size_t n_methods = config.methods.size();
  const std::size_t n_images = images.size();
  const auto n_real = static_cast<std::size_t>(config.n_realizations);
  for (const auto& img : images)
    if (img.ladders.size() != n_methods) throw std::invalid_argument("prepared image lacks a method ladder");

  ExperimentResult res;
  res.records.resize(n_snr * n_methods * n_images * n_real);
  const std::size_t horizon = static_cast<std::size_t>(config.horizon_slots);

  parallel_for(n_snr * n_real, config.jobs, [&](std::size_t unit) {
    const std::size_t s = unit / n_real;
    const std::size_t r = unit % n_real;
    const double snr = config.snr_grid[s];
    const auto budgets = realization_budgets(config, snr, realization_seed(config.base_seed, s, static_cast<int>(r)),
                                             n_images * horizon);
    const std::span<const channel::SlotBudget> all(budgets);
    for (std::size_t m = 0; m < n_methods; ++m) {
      std::int64_t t = 0;
      for (std::size_t i = 0; i < n_images; ++i) {
        const auto len = std::min<std::size_t>(horizon, all.size() - static_cast<std::size_t>(t));
        TransmissionRecord rec = transmit(images[i].ladders[m], config.methods[m].policy,
                                          all.subspan(static_cast<std::size_t>(t), len));
        rec.snr_db = snr;
        rec.method = config.methods[m].name;
        rec.image = images[i].name;
        rec.realization = static_cast<int>(r);
        rec.pixels = images[i].image.pixel_count();
        rec.start_slot = t;
        t += rec.elapsed_slots;
        res.records[((s * n_methods + m) * n_images + i) * n_real + r] = std::move(rec);
      }
    }
  });

  res.aggregates = aggregate(config, res.records);
  return res;
}

std::vector<Aggregate> aggregate(const ExperimentConfig& config, const std::vector<TransmissionRecord>& records) {
  const double slot_ms = config.fading.slot_s * 1e3;
  std::vector<Aggregate> out;
  for (const double snr : config.snr_grid)
    for (const auto& m : config.methods) {
      std::vector<TransmissionRecord> group;
      for (const auto& r : records)
        if (r.snr_db == snr && r.method == m.name) group.push_back(r);
      Aggregate a;
      a.snr_db = snr;
      a.method = m.name;
      if (group.empty()) {
        out.push_back(a);
        continue;
      }
      std::int64_t slots = 0;
      double psnr = 0.0, ssim = 0.0;
      std::size_t decoded = 0;
      std::vector<std::optional<double>> first, full;
      for (const auto& r : group) {
        slots += r.elapsed_slots;
        first.push_back(r.first_decode_slot ? std::optional<double>((*r.first_decode_slot + 1) * slot_ms)
                                            : std::nullopt);
        full.push_back(r.completion_slot ? std::optional<double>((*r.completion_slot + 1) * slot_ms)
                                         : std::nullopt);
        if (r.decoded()) {
          psnr += r.trajectory.back().psnr_db;
          ssim += r.trajectory.back().ssim;
          ++decoded;
        }
      }
      a.throughput_mpps = metrics::throughput_mpps(group, static_cast<double>(slots) * config.fading.slot_s);
      if (decoded > 0) {
        a.psnr_db = psnr / static_cast<double>(decoded);
        a.ssim = ssim / static_cast<double>(decoded);
      }
      a.first = metrics::wait_stats(first);
      a.full = metrics::wait_stats(full);
      out.push_back(a);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Output

namespace {

std::string num(double v, int precision = 6) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string snr_str(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

json opt(const std::optional<std::int64_t>& v) { return v ? json(*v) : json(nullptr); }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

void write_records_jsonl(std::ostream& out, const std::vector<TransmissionRecord>& records) {
  for (const auto& r : records) {
    json traj = json::array();
    for (const auto& q : r.trajectory)
      traj.push_back({{"slot", q.slot}, {"units", q.units}, {"psnr_db", finite_or_null(q.psnr_db)},
                      {"ssim", finite_or_null(q.ssim)}});
    const json j = {{"snr_db", r.snr_db},
                    {"method", r.method},
                    {"image", r.image},
                    {"realization", r.realization},
                    {"pixels", r.pixels},
                    {"start_slot", r.start_slot},
                    {"elapsed_slots", r.elapsed_slots},
                    {"first_decode_slot", opt(r.first_decode_slot)},
                    {"completion_slot", opt(r.completion_slot)},
                    {"bits_sent", r.bits_sent},
                    {"trajectory", traj}};
    out << j.dump() << '\n';
  }
}

void write_aggregates_csv(std::ostream& out, const std::vector<Aggregate>& aggregates) {
  out << "snr_db,method,throughput_mpps,psnr_db,ssim,t_avg_ms,t_p999_ms,incomplete_fraction,"
         "t_full_avg_ms,t_full_p999_ms\n";
  for (const auto& a : aggregates) {
    out << snr_str(a.snr_db) << ',' << a.method << ',' << num(a.throughput_mpps) << ',' << num(a.psnr_db, 4)
        << ',' << num(a.ssim) << ',' << num(a.first.t_avg_ms, 3) << ',' << num(a.first.t_p999_ms, 3) << ','
        << num(a.first.incomplete_fraction) << ',' << num(a.full.t_avg_ms, 3) << ','
        << num(a.full.t_p999_ms, 3) << '\n';
  }
}

void write_latency_csv(std::ostream& out, const ExperimentConfig& config, const std::vector<PreparedImage>& images) {
  out << "method,image,encode_ms,decode_ms\n";
  for (std::size_t m = 0; m < config.methods.size(); ++m)
    for (const auto& img : images)
      out << config.methods[m].name << ',' << img.name << ',' << num(img.ladders[m].encode_ms, 4) << ','
          << num(img.ladders[m].decode_ms, 4) << '\n';
}

std::uint64_t snapshot_seed(const ExperimentConfig& config) {
  // A stream coordinate outside any grid index keeps the snapshot trace
  // independent of the Monte Carlo traces.
  return derive_seed(config.base_seed, 0x534E4150ULL, static_cast<std::uint64_t>(config.snapshot.realization));
}

std::vector<SnapshotRow> snapshot_trace(const ExperimentConfig& config, const std::vector<PreparedImage>& images,
                                        double window_ms) {
  config.validate();
  if (images.empty()) throw std::invalid_argument("snapshot_trace: no images");
  const auto window = static_cast<std::int64_t>(std::llround(window_ms / (config.fading.slot_s * 1e3)));
  if (window < 1) throw std::invalid_argument("snapshot window is shorter than one slot");
  if (window > config.horizon_slots) throw std::invalid_argument("snapshot window exceeds horizon_slots");

  channel::FadingTrace trace;
  const auto budgets = realization_budgets(config, config.snapshot.snr_db, snapshot_seed(config),
                                           static_cast<std::size_t>(window), &trace);
  const std::size_t n_methods = config.methods.size();
  const double slot_ms = config.fading.slot_s * 1e3;
  std::vector<SnapshotRow> rows(static_cast<std::size_t>(window));
  for (std::int64_t k = 0; k < window; ++k) {
    auto& row = rows[k];
    row.slot = k;
    row.time_ms = static_cast<double>(k) * slot_ms;
    row.h_abs = std::abs(trace.gains[k]);
    row.psnr_db.assign(n_methods, std::nullopt);
    row.wait_ms.assign(n_methods, 0.0);
    row.event.assign(n_methods, false);
  }
  const std::span<const channel::SlotBudget> all(budgets);
  for (std::size_t m = 0; m < n_methods; ++m) {
    std::int64_t t = 0;
    std::size_t img = 0;
    while (t < window) {
      const Ladder& ladder = images[img % images.size()].ladders[m];
      const auto len = static_cast<std::size_t>(std::min<std::int64_t>(config.horizon_slots, window - t));
      const auto plan = scheduler::plan_image(config.methods[m].policy.progressive(), ladder.unit_bits,
                                              all.subspan(static_cast<std::size_t>(t), len));
      std::optional<double> shown;
      std::size_t ev = 0;
      for (const auto& a : plan.slots) {
        auto& row = rows[static_cast<std::size_t>(t + a.slot)];
        if (ev < plan.events.size() && plan.events[ev].slot == a.slot) {
          shown = ladder.quality[plan.events[ev].unit - 1].psnr_db;
          row.event[m] = true;
          ++ev;
        }
        row.psnr_db[m] = shown;
        row.wait_ms[m] = static_cast<double>(a.slot + 1) * slot_ms;
      }
      t += static_cast<std::int64_t>(plan.slots.size());
      ++img;
    }
  }
  return rows;
}

void write_snapshot_csv(std::ostream& out, const ExperimentConfig& config, const std::vector<SnapshotRow>& rows) {
  out << "slot,time_ms,h_abs";
  for (const auto& m : config.methods) out << ',' << m.name << "_psnr_db," << m.name << "_wait_ms," << m.name << "_event";
  out << '\n';
  for (const auto& r : rows) {
    out << r.slot << ',' << num(r.time_ms, 3) << ',' << num(r.h_abs);
    for (std::size_t m = 0; m < config.methods.size(); ++m)
      out << ',' << (r.psnr_db[m] ? num(*r.psnr_db[m], 4) : std::string("NA")) << ',' << num(r.wait_ms[m], 3)
          << ',' << (r.event[m] ? 1 : 0);
    out << '\n';
  }
}

ExperimentResult simulate_and_write(const ExperimentConfig& config) {
  const auto images = prepare(config);
  auto result = run_experiment(config, images);
  auto emit = [](const fs::path& path, auto&& writer) {
    if (path.empty()) return;
    std::ostringstream ss;
    writer(ss);
    io::write_file_atomic(path, ss.str());
  };
  emit(config.records_out, [&](std::ostream& o) { write_records_jsonl(o, result.records); });
  emit(config.aggregates_out, [&](std::ostream& o) { write_aggregates_csv(o, result.aggregates); });
  emit(config.latency_out, [&](std::ostream& o) { write_latency_csv(o, config, images); });
  if (config.snapshot.enabled && !config.snapshot_out.empty()) {
    const auto rows = snapshot_trace(config, images, config.snapshot.window_ms);
    emit(config.snapshot_out, [&](std::ostream& o) { write_snapshot_csv(o, config, rows); });
  }
  return result;
}

}  // namespace progtx::sim
