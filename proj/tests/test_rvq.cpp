#include "oracles.hpp"

#include "progtx/codec_rvq.hpp"
#include "progtx/imageio.hpp"
#include "progtx/metrics.hpp"
#include "progtx/random.hpp"

#include <Eigen/Eigenvalues>
#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>

using namespace progtx;
using namespace progtx::rvq;

namespace {

Vectors gaussian_vectors(int dim, int n, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  Vectors v(dim, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < dim; ++i) v(i, j) = g(rng);
  return v;
}

double quantization_mse(const Vectors& x, const Vectors& entries) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double best = INFINITY;
    for (Eigen::Index k = 0; k < entries.cols(); ++k) best = std::min(best, (x.col(j) - entries.col(k)).squaredNorm());
    s += best;
  }
  return s / static_cast<double>(x.cols());
}

int brute_nearest(const Eigen::VectorXd& x, const Vectors& entries) {
  int best = 0;
  double bd = INFINITY;
  for (int k = 0; k < entries.cols(); ++k) {
    const double d = (x - entries.col(k)).squaredNorm();
    if (d < bd) {
      bd = d;
      best = k;
    }
  }
  return best;
}

CodebookFamily toy_family(int lo, int hi, int dim = 2) {
  CodebookFamily f;
  for (int b = lo; b <= hi; ++b) f.by_bpi[b] = Codebook{b, Vectors::Zero(dim, Eigen::Index{1} << b)};
  return f;
}

}  // namespace

TEST_CASE("patch extraction") {
  const auto im = oracle::random_image(16, 16, 1);
  const auto g = extract_patches(im);
  CHECK(g.rows == 2);
  CHECK(g.cols == 2);
  CHECK(g.vectors.rows() == 192);
  CHECK(g.vectors.cols() == 4);
  CHECK(assemble_patches(g) == im);
  // Cell (0, 1), plane 2, row 3, column 4.
  CHECK(g.vectors(2 * 64 + 3 * 8 + 4, 1) == im.planes[2](3, 12));

  const auto odd = oracle::random_image(19, 10, 2);
  const auto go = extract_patches(odd);
  CHECK(go.rows == 2);
  CHECK(go.cols == 3);
  CHECK(assemble_patches(go, 19, 10) == odd);

  const auto flat = extract_patches(ImageBuffer(24, 16, 77));
  for (Eigen::Index j = 1; j < flat.vectors.cols(); ++j) CHECK(flat.vectors.col(j) == flat.vectors.col(0));

  PatchGrid over = g;
  over.vectors.array() += 1000.0;
  const auto clamped = assemble_patches(over);
  CHECK(clamped == ImageBuffer(16, 16, 255));
}

TEST_CASE("training patches") {
  const auto im = oracle::random_image(16, 12, 3);
  // 16x12 edge-pads to 16x16 before sliding.
  CHECK(training_patches(im, 8, 1).cols() == 9 * 9);
  CHECK(training_patches(im, 8, 4).cols() == 3 * 3);
  const auto im16 = oracle::random_image(16, 16, 4);
  CHECK(training_patches(im16, 8, 8) == extract_patches(im16).vectors);
}

TEST_CASE("projector on an exact plane") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  Eigen::VectorXd a(6), b(6), o(6);
  for (int i = 0; i < 6; ++i) {
    a(i) = g(rng);
    b(i) = g(rng);
    o(i) = g(rng);
  }
  Vectors x(6, 50);
  for (int j = 0; j < 50; ++j) x.col(j) = o + g(rng) * a + g(rng) * b;
  const auto p = fit_projector(x, 2);
  CHECK((p.rows * p.rows.transpose() - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((p.back_project(p.project(x)) - x).cwiseAbs().maxCoeff() < 1e-6);
  const auto q = Projector::from_json(p.to_json());
  CHECK(q.rows == p.rows);
  CHECK(q.mean == p.mean);
}

TEST_CASE("projector on isotropic noise keeps orthonormal rows ordered by variance") {
  const auto x = gaussian_vectors(5, 400, 9);
  for (int k : {1, 3, 5}) {
    const auto p = fit_projector(x, k);
    CHECK((p.rows * p.rows.transpose() - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() < 1e-6);
    for (int i = 1; i < k; ++i) CHECK(p.variance(i - 1) >= p.variance(i) - 1e-9);
  }
}

TEST_CASE("projector captures the variance found by a dense eigensolver") {
  // Four strong directions embedded in 12 dimensions plus faint noise.
  const auto basis = gaussian_vectors(12, 4, 10);
  const auto coeff = gaussian_vectors(4, 600, 11, 5.0);
  Vectors x = basis * coeff + gaussian_vectors(12, 600, 12, 0.01);
  const auto p = fit_projector(x, 4);

  const Eigen::VectorXd mean = x.rowwise().mean();
  const Vectors c = x.colwise() - mean;
  const Eigen::MatrixXd cov = c * c.transpose() / 600.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd ev = es.eigenvalues().reverse();
  const double captured = (p.rows * c).squaredNorm() / 600.0;
  CHECK(captured >= 0.999 * cov.trace());
  for (int i = 0; i < 4; ++i) CHECK(p.variance(i) == doctest::Approx(ev(i)).epsilon(1e-6));
}

TEST_CASE("nearest search matches brute force") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto entries = gaussian_vectors(3 + static_cast<int>(seed), 64, seed);
    const NearestSearch ns(entries);
    const auto q = gaussian_vectors(entries.rows(), 300, 100 + seed, 1.5);
    for (Eigen::Index j = 0; j < q.cols(); ++j) CHECK(ns.nearest(q.col(j)) == brute_nearest(q.col(j), entries));
  }
  // Ties resolve to the lowest index.
  Vectors dup(2, 4);
  dup << 1, 0, 1, 0, 1, 0, 1, 0;
  const NearestSearch ns(dup);
  CHECK(ns.nearest(Eigen::Vector2d(1, 1)) == 0);
  CHECK(ns.nearest(Eigen::Vector2d(0, 0)) == 1);
  CHECK(ns.nearest(Eigen::Vector2d(0.5, 0.5)) == 0);
}

TEST_CASE("k-means trivial cases") {
  Vectors pts(2, 12);
  const Eigen::Vector2d locs[3] = {{0, 0}, {5, 1}, {-3, 7}};
  for (int j = 0; j < 12; ++j) pts.col(j) = locs[j % 3];
  const auto r = train_kmeans(pts, 3, 50, 1);
  CHECK(r.objective.back() == 0.0);
  std::set<std::pair<double, double>> got;
  for (int k = 0; k < 3; ++k) got.insert({r.centroids(0, k), r.centroids(1, k)});
  CHECK(got == std::set<std::pair<double, double>>{{0, 0}, {5, 1}, {-3, 7}});

  const auto x = gaussian_vectors(4, 30, 2);
  const auto one = train_kmeans(x, 1, 10, 3);
  CHECK((one.centroids.col(0) - x.rowwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS(train_kmeans(pts, 4, 10, 1));
}

TEST_CASE("k-means objective never increases and beats random assignments") {
  const auto x = gaussian_vectors(2, 20, 21, 3.0);
  const auto r = train_kmeans(x, 3, 100, 7);
  for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] <= r.objective[i - 1] + 1e-12);

  std::mt19937_64 rng(8);
  double best_random = INFINITY;
  for (int t = 0; t < 1000; ++t) {
    std::vector<int> a(20);
    for (auto& v : a) v = static_cast<int>(rng() % 3);
    double obj = 0.0;
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector2d m = Eigen::Vector2d::Zero();
      int n = 0;
      for (int j = 0; j < 20; ++j)
        if (a[j] == k) {
          m += x.col(j);
          ++n;
        }
      if (n == 0) continue;
      m /= n;
      for (int j = 0; j < 20; ++j)
        if (a[j] == k) obj += (x.col(j) - m).squaredNorm();
    }
    best_random = std::min(best_random, obj / 20.0);
  }
  CHECK(r.objective.back() / 20.0 <= best_random + 1e-12);
}

TEST_CASE("codebook construction and clustering") {
  CHECK_THROWS(make_codebook(Vectors::Zero(2, 3)));
  CHECK(make_codebook(Vectors::Zero(2, 8)).bpi == 3);

  const auto large = make_codebook(gaussian_vectors(3, 16, 30));
  const auto same = cluster_codebook(large, 4, 1);
  std::set<std::vector<double>> a, b;
  for (int k = 0; k < 16; ++k) {
    a.insert({large.entries(0, k), large.entries(1, k), large.entries(2, k)});
    b.insert({same.entries(0, k), same.entries(1, k), same.entries(2, k)});
  }
  CHECK(a == b);

  const auto mean = cluster_codebook(large, 0, 1);
  CHECK(mean.size() == 1);
  CHECK((mean.entries.col(0) - large.entries.rowwise().mean()).cwiseAbs().maxCoeff() < 1e-12);

  const auto x = gaussian_vectors(3, 500, 31);
  const auto big = make_codebook(train_kmeans(x, 64, 50, 2).centroids);
  const auto small = cluster_codebook(big, 3, 4);
  CHECK(quantization_mse(x, small.entries) >= quantization_mse(x, big.entries));
  CHECK_THROWS(cluster_codebook(big, 7, 1));
}

TEST_CASE("residual stack on an exactly representable corpus") {
  const auto x = gaussian_vectors(3, 8, 40);
  std::vector<double> mse;
  const auto s1 = train_residual_stack(x, 1, 3, 1, 50, &mse);
  CHECK(mse[0] < 1e-10);
  const auto s2 = train_residual_stack(x, 2, 3, 1, 50, &mse);
  CHECK(s2.stages[1].entries.cwiseAbs().maxCoeff() < 1e-6);
  CHECK(mse[1] < 1e-10);
  for (int j = 0; j < 8; ++j) {
    const auto idx = rq_encode(x.col(j), s2, 2);
    CHECK((rq_decode(idx, s2) - x.col(j)).norm() < 1e-5);
  }
}

TEST_CASE("residual stack training MSE never increases over ten stages") {
  std::vector<ImageBuffer> images;
  for (std::uint64_t s = 0; s < 2; ++s) images.push_back(io::synth_image(48, 32, derive_seed(3, s, 0)));
  Vectors x(192, 0);
  for (const auto& im : images) {
    const auto p = training_patches(im, 8, 2);
    Vectors y(192, x.cols() + p.cols());
    y << x, p;
    x = std::move(y);
  }
  const auto proj = fit_projector(x, 4);
  std::vector<double> mse;
  const auto stack = train_residual_stack(proj.project(x), 10, 8, 5, 30, &mse);
  REQUIRE(mse.size() == 10);
  for (std::size_t i = 1; i < mse.size(); ++i) CHECK(mse[i] <= mse[i - 1]);
  CHECK(stack.stage_count() == 10);
  CHECK(stack.bpi() == 8);
}

TEST_CASE("greedy residual encoding") {
  const auto x = gaussian_vectors(3, 200, 50);
  const auto stack = train_residual_stack(x, 3, 4, 2, 30);

  // A stage-1 codeword encodes to itself at m = 1.
  const Eigen::VectorXd w = stack.stages[0].entries.col(5);
  const auto i1 = rq_encode(w, stack, 1);
  CHECK(i1 == std::vector<int>{brute_nearest(w, stack.stages[0].entries)});
  CHECK((rq_decode(i1, stack) - w).norm() == 0.0);

  for (Eigen::Index j = 0; j < 20; ++j) CHECK(rq_encode(x.col(j), stack, 1)[0] == brute_nearest(x.col(j), stack.stages[0].entries));

  // Prefix decodes match the encoder's residual recursion.
  for (Eigen::Index j = 0; j < 20; ++j) {
    const auto idx = rq_encode(x.col(j), stack, 3);
    Eigen::VectorXd r = x.col(j);
    for (int s = 0; s < 3; ++s) {
      r -= stack.stages[s].entries.col(idx[s]);
      const std::vector<int> prefix(idx.begin(), idx.begin() + s + 1);
      CHECK((x.col(j) - rq_decode(prefix, stack)).norm() == doctest::Approx(r.norm()).epsilon(1e-12));
    }
  }
  CHECK(rq_decode({}, stack).isZero(0));
}

TEST_CASE("greedy encoding matches the per-stage oracle on a toy stack") {
  ResidualStack toy;
  std::mt19937_64 rng(60);
  for (int s = 0; s < 2; ++s) {
    Codebook cb{2, gaussian_vectors(2, 4, 61 + s, s == 0 ? 3.0 : 1.0)};
    cb.entries.col(3) = cb.entries.col(2);  // 3 distinct entries padded to a power of two
    toy.stages.push_back(cb);
  }
  const auto q = gaussian_vectors(2, 100, 70, 3.0);
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    std::vector<int> oracle_idx;
    Eigen::VectorXd r = q.col(j);
    for (int s = 0; s < 2; ++s) {
      int best = 0;
      for (int k = 1; k < 3; ++k)
        if ((r - toy.stages[s].entries.col(k)).squaredNorm() < (r - toy.stages[s].entries.col(best)).squaredNorm())
          best = k;
      oracle_idx.push_back(best);
      r -= toy.stages[s].entries.col(best);
    }
    CHECK(rq_encode(q.col(j), toy, 2) == oracle_idx);
  }
}

TEST_CASE("codebook selection") {
  const auto fam = toy_family(8, 16);
  CHECK(select_codebook(fam, 61440, 768, 512) == 10);
  CHECK_THROWS(select_codebook(fam, 49151, 768, 512));
  CHECK(select_codebook(fam, 49152, 768, 512) == 8);
  CHECK(select_codebook(fam, 1000000000, 768, 512) == 16);
}

TEST_CASE("property: codebook selection and stage count match exhaustive search") {
  const auto fam = toy_family(8, 16);
  std::mt19937_64 rng(71);
  for (int t = 0; t < 1000; ++t) {
    const std::int64_t budget = static_cast<std::int64_t>(rng() % 200000);
    const int w = 8 + static_cast<int>(rng() % 800), h = 8 + static_cast<int>(rng() % 600);
    const std::int64_t cells = static_cast<std::int64_t>((w + 7) / 8) * ((h + 7) / 8);
    int expect = -1;
    for (int b = 8; b <= 16; ++b)
      if (cells * b <= budget) expect = b;
    if (expect < 0)
      CHECK_THROWS(select_codebook(fam, budget, w, h));
    else
      CHECK(select_codebook(fam, budget, w, h) == expect);

    const std::int64_t per = 1 + static_cast<std::int64_t>(rng() % 60000);
    const int m_max = 1 + static_cast<int>(rng() % 12);
    int m = 0;
    while (m < m_max && (m + 1) * per <= budget) ++m;
    CHECK(m_stages(budget, per, m_max) == m);
  }
  CHECK(m_stages(100000, 49152, 10) == 2);
  CHECK(m_stages(100, 49152, 10) == 0);
  CHECK(m_stages(1000000000, 49152, 10) == 10);
}

TEST_CASE("codebook files") {
  const auto dir = std::filesystem::temp_directory_path() / "progtx_test_rvq";
  std::filesystem::create_directories(dir);
  auto cb = make_codebook(gaussian_vectors(5, 16, 80));
  round_to_float(cb);
  save_codebook(cb, dir / "cb.rvq");
  const auto back = load_codebook(dir / "cb.rvq");
  CHECK(back.bpi == 4);
  CHECK(back.entries == cb.entries);

  const auto stack = train_residual_stack(gaussian_vectors(3, 100, 81), 3, 2, 1, 20);
  save_stack(stack, dir / "stack.rvq");
  const auto sb = load_stack(dir / "stack.rvq");
  REQUIRE(sb.stage_count() == 3);
  for (int s = 0; s < 3; ++s) CHECK(sb.stages[s].entries == stack.stages[s].entries);

  auto bytes = serialize_stack(stack);
  CHECK_THROWS(parse_codebook(bytes));
  bytes.pop_back();
  CHECK_THROWS(parse_stack(bytes));
  CHECK_THROWS(load_stack(dir / "missing.rvq"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("token packets") {
  TokenPacket p;
  p.image_id = 7;
  p.stage = 3;
  p.bpi = 5;
  for (std::uint32_t i = 0; i < 13; ++i) p.indices.push_back((i * 7) % 32);
  const auto bytes = p.serialize();
  CHECK(static_cast<std::int64_t>(bytes.size()) * 8 == p.bit_size());
  CHECK(bytes.size() == TokenPacket::kHeaderBytes + 9);
  const auto q = TokenPacket::parse(bytes);
  CHECK(q.indices == p.indices);
  CHECK(q.stage == 3);
  CHECK(q.image_id == 7);
  p.indices[0] = 32;
  CHECK_THROWS(p.serialize());
  auto bad = bytes;
  bad.pop_back();
  CHECK_THROWS(TokenPacket::parse(bad));
}

TEST_CASE("rvq codec round trip") {
  std::vector<ImageBuffer> images;
  for (std::uint64_t s = 0; s < 3; ++s) images.push_back(io::synth_image(48, 32, derive_seed(9, s, 0)));
  Vectors x(192, 0);
  for (const auto& im : images) {
    const auto p = training_patches(im, 8, 2);
    Vectors y(192, x.cols() + p.cols());
    y << x, p;
    x = std::move(y);
  }

  SUBCASE("unprojected") {
    const RvqCodec codec(train_residual_stack(x, 4, 5, 3, 20), std::nullopt);
    const auto& im = images[0];
    const auto tokens = codec.encode(im, 4);
    CHECK(tokens.stages.size() == 4);
    CHECK(tokens.stages[0].size() == 24);
    double prev = INFINITY;
    for (int m = 1; m <= 4; ++m) {
      const double e = metrics::mse(im, codec.decode(tokens, m, 48, 32));
      CHECK(e <= prev * 1.05);
      prev = e;
    }
    const auto packets = codec.packetize(tokens, 12);
    CHECK(packets.size() == 4);
    const auto back = codec.depacketize(packets);
    CHECK(back.stages == tokens.stages);
    CHECK(codec.decode(back, 4, 48, 32) == codec.decode(tokens, 4, 48, 32));
    CHECK_THROWS(codec.decode(tokens, 5, 48, 32));
  }
  SUBCASE("projected") {
    const auto proj = fit_projector(x, 4);
    const RvqCodec codec(train_residual_stack(proj.project(x), 3, 5, 3, 20), proj);
    const auto& im = images[1];
    const auto tokens = codec.encode(im, 3);
    // Decoding all stages equals the back-projected quantized vectors.
    const auto g = extract_patches(im);
    const auto z = proj.project(g.vectors);
    Vectors zq(4, z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      std::vector<int> idx;
      for (const auto& s : tokens.stages) idx.push_back(static_cast<int>(s[j]));
      zq.col(j) = rq_decode(idx, codec.stack());
    }
    PatchGrid rec = g;
    rec.vectors = proj.back_project(zq);
    CHECK(codec.decode(tokens, 3, 48, 32) == assemble_patches(rec, 48, 32));
  }
}
