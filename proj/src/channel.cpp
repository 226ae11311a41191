#include "progtx/channel.hpp"

#include "progtx/random.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

namespace progtx::channel {

void FadingConfig::validate() const {
  if (!(doppler_hz > 0)) throw std::invalid_argument("doppler_hz must be > 0");
  if (!(slot_s > 0)) throw std::invalid_argument("slot_s must be > 0");
  if (!(bandwidth_hz > 0)) throw std::invalid_argument("bandwidth_hz must be > 0");
  if (!std::isfinite(avg_snr_db)) throw std::invalid_argument("avg_snr_db must be finite");
  if (num_sinusoids < 8) throw std::invalid_argument("num_sinusoids must be >= 8");
}

FadingConfig FadingConfig::with_snr(double snr_db) const {
  FadingConfig c = *this;
  c.avg_snr_db = snr_db;
  return c;
}

FadingConfig FadingConfig::with_seed(std::uint64_t s) const {
  FadingConfig c = *this;
  c.seed = s;
  return c;
}

RateModel RateModel::finite_blocklength(double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 0.5))
    throw std::invalid_argument("finite-blocklength epsilon must be in (0, 0.5], got " +
                                std::to_string(epsilon));
  return {Kind::finite_blocklength, epsilon};
}

FadingTrace generate_fading(const FadingConfig& config, std::size_t n_slots) {
  config.validate();
  if (n_slots < 1) throw std::invalid_argument("n_slots must be >= 1");
  constexpr double pi = std::numbers::pi;
  const int m = config.num_sinusoids;

  Rng rng(config.seed);
  const double theta = rng.uniform(-pi, pi);
  std::vector<double> w_in(m), w_quad(m), ph_in(m), ph_quad(m);
  const double wd = 2.0 * pi * config.doppler_hz;
  for (int n = 0; n < m; ++n) {
    const double alpha = (2.0 * pi * (n + 1) - pi + theta) / (4.0 * m);
    w_in[n] = wd * std::cos(alpha);
    w_quad[n] = wd * std::sin(alpha);
    ph_in[n] = rng.uniform(-pi, pi);
    ph_quad[n] = rng.uniform(-pi, pi);
  }

  // Each quadrature has unit power with the sqrt(2/M) weight; the extra
  // 1/sqrt(2) brings E|h|^2 to 1.
  const double amp = std::sqrt(2.0 / m) / std::sqrt(2.0);
  FadingTrace trace;
  trace.gains.resize(n_slots);
  for (std::size_t k = 0; k < n_slots; ++k) {
    const double t = static_cast<double>(k) * config.slot_s;
    double re = 0.0, im = 0.0;
    for (int n = 0; n < m; ++n) {
      re += std::cos(w_in[n] * t + ph_in[n]);
      im += std::cos(w_quad[n] * t + ph_quad[n]);
    }
    trace.gains[k] = {amp * re, amp * im};
  }
  return trace;
}

double shannon_capacity(double snr_linear, double bandwidth_hz) {
  if (!(snr_linear >= 0)) throw std::invalid_argument("snr must be non-negative");
  return bandwidth_hz * std::log2(1.0 + snr_linear);
}

double q_function(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

namespace {

// Acklam's rational approximation of the standard normal quantile.
double normal_quantile_approx(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  auto tail = [&](double q) {
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  };
  if (p < p_low) return tail(std::sqrt(-2.0 * std::log(p)));
  if (p > 1.0 - p_low) return -tail(std::sqrt(-2.0 * std::log1p(-p)));
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double inverse_q(double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw std::invalid_argument("inverse_q: epsilon must be in (0, 1), got " +
                                std::to_string(epsilon));
  double x = -normal_quantile_approx(epsilon);
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  x += (q_function(x) - epsilon) / pdf;
  return x;
}

double channel_dispersion(double snr_linear) {
  const double u = 1.0 + snr_linear;
  return (1.0 - 1.0 / (u * u)) * std::numbers::log2e * std::numbers::log2e;
}

std::int64_t blocklength(double bandwidth_hz, double slot_s) {
  return std::llround(bandwidth_hz * slot_s);
}

double achievable_rate(const RateModel& model, double snr_linear, double bandwidth_hz,
                       double slot_s) {
  if (!(snr_linear >= 0)) throw std::invalid_argument("snr must be non-negative");
  if (model.kind == RateModel::Kind::shannon) return shannon_capacity(snr_linear, bandwidth_hz);

  const auto n = blocklength(bandwidth_hz, slot_s);
  if (n < 1) throw std::invalid_argument("blocklength B*Ts rounds to zero channel uses");
  const double per_use = std::log2(1.0 + snr_linear) -
                         std::sqrt(channel_dispersion(snr_linear) / static_cast<double>(n)) *
                             inverse_q(model.epsilon);
  return per_use > 0.0 ? per_use * bandwidth_hz : 0.0;
}

std::vector<SlotBudget> slot_budgets(const FadingTrace& trace, const FadingConfig& config,
                                     const RateModel& model) {
  const double mean_snr = std::pow(10.0, config.avg_snr_db / 10.0);
  std::vector<SlotBudget> out;
  out.reserve(trace.size());
  for (std::size_t k = 0; k < trace.size(); ++k) {
    SlotBudget b;
    b.slot_index = static_cast<std::int64_t>(k);
    b.gain_power = std::norm(trace.gains[k]);
    b.rate_bps = achievable_rate(model, b.gain_power * mean_snr, config.bandwidth_hz, config.slot_s);
    // The guard absorbs round-off in rate * Ts for exact products such as
    // 1e5 bps * 1 ms.
    b.n_bits = static_cast<std::int64_t>(std::floor(b.rate_bps * config.slot_s + 1e-9));
    out.push_back(b);
  }
  return out;
}

void write_trace_csv(std::ostream& out, const FadingTrace& trace,
                     std::span<const SlotBudget> budgets) {
  if (budgets.size() != trace.size())
    throw std::invalid_argument("trace and budget lengths differ");
  out << "slot_index,re,im,gain_power,n_bits\n";
  out.precision(17);
  for (std::size_t k = 0; k < trace.size(); ++k) {
    out << budgets[k].slot_index << ',' << trace.gains[k].real() << ',' << trace.gains[k].imag()
        << ',' << budgets[k].gain_power << ',' << budgets[k].n_bits << '\n';
  }
}

}  // namespace progtx::channel
