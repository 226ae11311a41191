#pragma once

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace progtx::channel {

/// Flat Rayleigh fading parameters. Validated on construction.
struct FadingConfig {
  double doppler_hz = 10.0;
  double slot_s = 1e-3;
  double bandwidth_hz = 100e3;
  double avg_snr_db = 0.0;
  int num_sinusoids = 16;
  std::uint64_t seed = 1;

  void validate() const;
  FadingConfig with_snr(double snr_db) const;
  FadingConfig with_seed(std::uint64_t s) const;
};

/// One complex channel coefficient per slot.
struct FadingTrace {
  std::vector<std::complex<double>> gains;

  std::size_t size() const { return gains.size(); }
};

struct RateModel {
  enum class Kind { shannon, finite_blocklength };

  Kind kind = Kind::shannon;
  double epsilon = 1e-3;

  static RateModel shannon() { return {}; }
  /// Throws unless epsilon is in (0, 0.5].
  static RateModel finite_blocklength(double epsilon);
};

struct SlotBudget {
  std::int64_t slot_index = 0;
  double gain_power = 0.0;  // |h|^2
  double rate_bps = 0.0;
  std::int64_t n_bits = 0;
};

/// Improved sum-of-sinusoids Rayleigh process (Clarke spectrum). The
/// in-phase and quadrature parts each sum `num_sinusoids` cosines with
/// independent uniform phases; arrival angles share one random rotation.
/// Output is scaled so E|h|^2 = 1.
FadingTrace generate_fading(const FadingConfig& config, std::size_t n_slots);

/// B * log2(1 + snr).
double shannon_capacity(double snr_linear, double bandwidth_hz);

/// Gaussian tail probability Q(x) = P(N(0,1) > x).
double q_function(double x);

/// Q^{-1}(epsilon): rational inverse-normal approximation refined by one
/// Newton step on Q.
double inverse_q(double epsilon);

/// Complex-AWGN channel dispersion in bits^2 per channel use.
double channel_dispersion(double snr_linear);

/// Channel uses per slot, round(B * Ts).
std::int64_t blocklength(double bandwidth_hz, double slot_s);

double achievable_rate(const RateModel& model, double snr_linear, double bandwidth_hz,
                       double slot_s);

std::vector<SlotBudget> slot_budgets(const FadingTrace& trace, const FadingConfig& config,
                                     const RateModel& model);

/// CSV: slot_index,re,im,gain_power,n_bits
void write_trace_csv(std::ostream& out, const FadingTrace& trace,
                     std::span<const SlotBudget> budgets);

}  // namespace progtx::channel
