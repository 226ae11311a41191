#pragma once

#include "progtx/channel.hpp"
#include "progtx/image.hpp"
#include "progtx/metrics.hpp"
#include "progtx/record.hpp"
#include "progtx/scheduler.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace progtx::sim {

namespace fs = std::filesystem;

struct MethodConfig {
  std::string name;
  scheduler::Policy policy;
};

/// Replaces the fading process with a fixed |h|^2 (h real), e.g. 0 for a dead
/// link or a large value for an effectively unlimited one.
struct ConstantChannel {
  double gain_power = 1.0;
};

struct SnapshotConfig {
  bool enabled = true;
  double snr_db = 5.0;
  double window_ms = 300.0;
  int realization = 0;
};

struct ExperimentConfig {
  std::vector<double> snr_grid{-10.0, -5.0, 0.0, 5.0};
  int n_realizations = 1000;
  std::int64_t horizon_slots = 2000;
  std::uint64_t base_seed = 1;
  channel::FadingConfig fading;
  channel::RateModel rate;
  std::optional<ConstantChannel> constant_channel;
  std::vector<MethodConfig> methods;

  fs::path manifest;
  std::string split = "evaluation";
  int max_images = 4;  // 0: every image of the split

  fs::path ranking;    // masking ranking JSON
  fs::path scales;     // masking scale table JSON
  fs::path stack;      // residual stack codebook file
  fs::path projector;  // projector JSON; empty means unprojected patches

  fs::path records_out;
  fs::path aggregates_out;
  fs::path snapshot_out;
  fs::path latency_out;

  SnapshotConfig snapshot;
  int jobs = 1;

  void validate() const;

  /// Default methods: masking (4 channels per packet, 32 channels), RVQ
  /// (bpi 8, 10 stages), and the four-level baseline.
  static std::vector<MethodConfig> default_methods();

  /// Parses the experiment JSON. Relative paths resolve against `base_dir`.
  /// Syntax errors are reported as "<origin>:<line>:<column>: ...".
  static ExperimentConfig parse(const std::string& text, const fs::path& base_dir,
                                const std::string& origin = "config");
};

/// Per-image payload ladder of one method: unit sizes in bits (side
/// information included) and the quality after each unit (or level).
struct Ladder {
  std::vector<std::int64_t> unit_bits;
  std::vector<metrics::QualityReport> quality;
  double encode_ms = 0.0;
  double decode_ms = 0.0;  // mean wall-clock per decode
};

struct PreparedImage {
  std::string name;
  ImageBuffer image;
  std::vector<Ladder> ladders;  // one per method
};

/// Loads images and trained artifacts and codes every image once per method.
std::vector<PreparedImage> prepare(const ExperimentConfig& config);

struct Aggregate {
  double snr_db = 0.0;
  std::string method;
  double throughput_mpps = 0.0;
  double psnr_db = metrics::kUndefined;
  double ssim = metrics::kUndefined;
  metrics::WaitStats first;  // waits to the first decode
  metrics::WaitStats full;   // waits to full delivery
};

struct ExperimentResult {
  std::vector<TransmissionRecord> records;  // sorted by (snr, method, image, realization)
  std::vector<Aggregate> aggregates;        // sorted by (snr, method)
};

/// Seed of the fading trace for one (snr, realization) work unit.
std::uint64_t realization_seed(std::uint64_t base_seed, std::size_t snr_index, int realization);

/// Slot budgets for one work unit, `n_slots` long.
std::vector<channel::SlotBudget> realization_budgets(const ExperimentConfig& config, double snr_db,
                                                     std::uint64_t seed, std::size_t n_slots,
                                                     channel::FadingTrace* trace = nullptr);

ExperimentResult run_experiment(const ExperimentConfig& config, const std::vector<PreparedImage>& images);

/// Aggregates computed from raw records (grouped by snr and method).
std::vector<Aggregate> aggregate(const ExperimentConfig& config, const std::vector<TransmissionRecord>& records);

void write_records_jsonl(std::ostream& out, const std::vector<TransmissionRecord>& records);
void write_aggregates_csv(std::ostream& out, const std::vector<Aggregate>& aggregates);
void write_latency_csv(std::ostream& out, const ExperimentConfig& config,
                       const std::vector<PreparedImage>& images);

struct SnapshotRow {
  std::int64_t slot = 0;
  double time_ms = 0.0;
  double h_abs = 0.0;
  std::vector<std::optional<double>> psnr_db;  // per method; empty while nothing is shown
  std::vector<double> wait_ms;                 // time since the current image started
  std::vector<bool> event;
};

std::uint64_t snapshot_seed(const ExperimentConfig& config);

/// Per-slot view of one realization at snapshot.snr_db: every method streams
/// the images back to back (cycling) over the window.
std::vector<SnapshotRow> snapshot_trace(const ExperimentConfig& config,
                                        const std::vector<PreparedImage>& images, double window_ms);

void write_snapshot_csv(std::ostream& out, const ExperimentConfig& config,
                        const std::vector<SnapshotRow>& rows);

/// prepare + run + write every configured output (atomically).
ExperimentResult simulate_and_write(const ExperimentConfig& config);

}  // namespace progtx::sim
