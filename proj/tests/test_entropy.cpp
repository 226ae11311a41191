#include "oracles.hpp"

#include "progtx/entropy.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace progtx::entropy;

namespace {

ScaleTable table_of(std::vector<double> scales) {
  ScaleTable t;
  t.steps.assign(scales.size(), 1.0);
  t.scales = std::move(scales);
  return t;
}

// Laplacian sample with standard deviation `scale`, rounded to an integer.
std::int32_t laplace_symbol(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const double v = u(rng);
  const double b = scale / std::sqrt(2.0);
  const double x = -b * std::copysign(1.0, v) * std::log(1.0 - 2.0 * std::abs(v));
  return static_cast<std::int32_t>(std::clamp(std::nearbyint(x), -double(SymbolModel::kMaxMagnitude),
                                              double(SymbolModel::kMaxMagnitude)));
}

// Probability of integer k under a Laplacian of std `scale` integrated over
// [k - 1/2, k + 1/2].
double laplace_pmf(int k, double scale) {
  const double b = scale / std::sqrt(2.0);
  auto cdf = [&](double x) { return x < 0 ? 0.5 * std::exp(x / b) : 1.0 - 0.5 * std::exp(-x / b); };
  return cdf(k + 0.5) - cdf(k - 0.5);
}

}  // namespace

TEST_CASE("scale estimation") {
  SymbolPlane zeros = SymbolPlane::Zero(4, 4);
  CHECK(estimate_scales({{zeros}}) == std::vector<double>{kScaleFloor});

  SymbolPlane pm(1, 6);
  pm << -1, 1, -1, 1, 1, -1;
  CHECK(estimate_scales({{pm}})[0] == doctest::Approx(1.0).epsilon(1e-15));

  std::mt19937_64 rng(4);
  std::vector<std::vector<SymbolPlane>> corpus(5);
  std::vector<std::vector<double>> flat(3);
  for (auto& item : corpus)
    for (int c = 0; c < 3; ++c) {
      SymbolPlane p(3, 7);
      for (int i = 0; i < p.size(); ++i) {
        p.data()[i] = laplace_symbol(rng, 1.0 + 4.0 * c);
        flat[c].push_back(p.data()[i]);
      }
      item.push_back(p);
    }
  const auto s = estimate_scales(corpus);
  for (int c = 0; c < 3; ++c) CHECK(s[c] == doctest::Approx(oracle::two_pass_std(flat[c])).epsilon(1e-12));
}

TEST_CASE("scale table json round trip and validation") {
  const auto t = table_of({0.5, 2.0, 1e3});
  const auto u = ScaleTable::from_json(t.to_json());
  CHECK(u.scales == t.scales);
  CHECK(u.steps == t.steps);
  ScaleTable bad = table_of({1.0, 0.0});
  CHECK_THROWS(bad.validate());
  bad = table_of({1.0});
  bad.steps.clear();
  CHECK_THROWS(bad.validate());
  CHECK(ScaleTable::side_info_bits(32) == 512);
}

TEST_CASE("empty and all-zero streams") {
  const auto t = table_of({1.0});
  const auto empty = encode_symbols({}, 0, t);
  CHECK(empty.symbol_count == 0);
  CHECK(empty.payload.empty());
  CHECK(decode_symbols(empty, 0, t).empty());

  for (double scale : {1e-3, 1.0, 50.0}) {
    const auto tt = table_of({scale});
    const std::vector<std::int32_t> zeros(4, 0);
    CHECK(decode_symbols(encode_symbols(zeros, 0, tt), 0, tt) == zeros);
  }
}

TEST_CASE("escape range") {
  const auto t = table_of({1.0});
  const std::vector<std::int32_t> s{SymbolModel::kMaxMagnitude, -SymbolModel::kMaxMagnitude, 256, -256, 255, -255,
                                    0};
  CHECK(decode_symbols(encode_symbols(s, 0, t), 0, t) == s);
  const std::vector<std::int32_t> too_big{SymbolModel::kMaxMagnitude + 1};
  CHECK_THROWS(encode_symbols(too_big, 0, t));
}

TEST_CASE("property: random multi-model streams round trip losslessly") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> log_scale(-3.0, 3.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n_models = 1 + static_cast<int>(rng() % 4);
    std::vector<SymbolModel> models;
    std::vector<double> scales;
    for (int m = 0; m < n_models; ++m) {
      scales.push_back(std::pow(10.0, log_scale(rng)));
      models.emplace_back(scales.back());
    }
    const int len = static_cast<int>(rng() % 600);
    std::vector<std::pair<int, std::int32_t>> seq;
    for (int i = 0; i < len; ++i) {
      const int m = static_cast<int>(rng() % n_models);
      // Occasionally a symbol far outside the model's bulk.
      const std::int32_t s = rng() % 50 == 0
                                 ? static_cast<std::int32_t>(rng() % (2 * SymbolModel::kMaxMagnitude + 1)) -
                                       SymbolModel::kMaxMagnitude
                                 : laplace_symbol(rng, scales[m]);
      seq.emplace_back(m, s);
    }
    StreamWriter w;
    for (auto [m, s] : seq) w.put(models[m], s);
    const Bitstream bs = w.finish();

    std::vector<std::uint8_t> wire;
    bs.append_to(wire);
    const Bitstream parsed = Bitstream::parse(wire);
    StreamReader r(parsed);
    bool ok = parsed.symbol_count == seq.size();
    for (auto [m, s] : seq) ok = ok && r.get(models[m]) == s;
    CHECK_NOTHROW(r.finish());
    CHECK_MESSAGE(ok, "trial " << trial);
  }
}

TEST_CASE("model-matched stream codes near its cross-entropy") {
  const double scale = 2.0;
  std::mt19937_64 rng(17);
  std::vector<std::int32_t> s(100000);
  double cross_entropy = 0.0;
  for (auto& v : s) {
    v = laplace_symbol(rng, scale);
    cross_entropy -= std::log2(laplace_pmf(v, scale));
  }
  const auto t = table_of({scale});
  const auto bs = encode_symbols(s, 0, t);
  const double bits = 8.0 * static_cast<double>(bs.payload.size());
  CHECK(bits <= 1.05 * cross_entropy);
  CHECK(bits >= 0.95 * cross_entropy);
  CHECK(decode_symbols(bs, 0, t) == s);
}

TEST_CASE("coded probabilities form a distribution close to the Laplacian") {
  const SymbolModel m(3.0);
  double total = 0.0;
  for (int k = -SymbolModel::kDirectLimit; k <= SymbolModel::kDirectLimit; ++k) {
    CHECK(m.coded_probability(k) > 0.0);
    total += m.coded_probability(k);
  }
  // Escape mass: 2 * 65536 symbols share the escape bucket evenly.
  total += m.coded_probability(SymbolModel::kDirectLimit + 1) * 2.0 * 65536.0;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  for (int k = -5; k <= 5; ++k) CHECK(m.coded_probability(k) == doctest::Approx(laplace_pmf(k, 3.0)).epsilon(2e-3));
}

TEST_CASE("corrupted streams are rejected") {
  const auto t = table_of({4.0});
  std::vector<std::int32_t> s(300);
  std::mt19937_64 rng(8);
  for (auto& v : s) v = laplace_symbol(rng, 4.0);
  const auto bs = encode_symbols(s, 0, t);

  Bitstream truncated = bs;
  truncated.payload.resize(bs.payload.size() / 2);
  CHECK_THROWS_AS(decode_symbols(truncated, 0, t), DecodeError);

  Bitstream longer = bs;
  longer.symbol_count += 1;
  CHECK_THROWS_AS(decode_symbols(longer, 0, t), DecodeError);

  Bitstream stray = bs;
  stray.symbol_count = 0;
  CHECK_THROWS_AS(decode_symbols(stray, 0, t), DecodeError);

  std::vector<std::uint8_t> wire;
  bs.append_to(wire);
  wire[0] ^= 0xFF;
  CHECK_THROWS_AS(Bitstream::parse(wire), DecodeError);
  CHECK_THROWS_AS(Bitstream::parse(std::vector<std::uint8_t>{0xEC, 1, 0}), DecodeError);

  CHECK_THROWS(encode_symbols(s, 1, t));
}

TEST_CASE("raw bits through the range coder") {
  RangeEncoder enc;
  std::mt19937_64 rng(1);
  std::vector<std::pair<std::uint32_t, int>> items;
  for (int i = 0; i < 500; ++i) {
    const int n = 1 + static_cast<int>(rng() % 16);
    items.emplace_back(static_cast<std::uint32_t>(rng() & ((1u << n) - 1)), n);
  }
  for (auto [v, n] : items) enc.encode_bits(v, n);
  const auto payload = enc.finish();
  RangeDecoder dec(payload);
  for (auto [v, n] : items) CHECK(dec.decode_bits(n) == v);
  CHECK_NOTHROW(dec.finish());
}
