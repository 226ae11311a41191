#include "oracles.hpp"

#include "progtx/imageio.hpp"
#include "progtx/metrics.hpp"
#include "progtx/observer.hpp"
#include "progtx/random.hpp"

#include <doctest.h>

#include <numeric>

using namespace progtx;
using namespace progtx::masking;

TEST_CASE("constant images score only the DC channels") {
  const std::vector<ImageBuffer> corpus{ImageBuffer(16, 16, 30), ImageBuffer(16, 16, 220)};
  const auto r = observer::rank_channels(corpus);
  CHECK_NOTHROW(r.validate(kChannels));
  for (int c = 0; c < kChannels; ++c) {
    if (c % 64 == 0)
      CHECK(r.scores[c] > 0.0);
    else
      CHECK(r.scores[c] < 1e-9);
  }
  std::vector<int> top(r.order.begin(), r.order.begin() + 3);
  std::sort(top.begin(), top.end());
  CHECK(top == std::vector<int>{0, 64, 128});
}

TEST_CASE("single image scores are per-channel energy over the sample count") {
  const auto im = oracle::random_image(24, 16, 31);
  const auto r = observer::rank_channels({im});
  const auto lat = analyze<double>(im);
  const double samples = 3.0 * im.width() * im.height();
  for (int c = 0; c < kChannels; ++c)
    CHECK(r.scores[c] == doctest::Approx(lat.channels[c].squaredNorm() / samples).epsilon(1e-9));
  for (std::size_t i = 1; i < r.order.size(); ++i) {
    const double a = r.scores[r.order[i - 1]], b = r.scores[r.order[i]];
    CHECK(a >= b);
    if (a == b) CHECK(r.order[i - 1] < r.order[i]);
  }
}

TEST_CASE("duplicating the corpus leaves the ranking unchanged") {
  const auto im = oracle::smooth_image(32, 16, 4);
  const auto a = observer::rank_channels({im});
  const auto b = observer::rank_channels({im, im, im});
  CHECK(a.order == b.order);
}

TEST_CASE("masking curve end points") {
  std::vector<ImageBuffer> cal;
  for (std::uint64_t s = 0; s < 3; ++s) cal.push_back(io::synth_image(48, 32, derive_seed(5, s, 0)));
  std::vector<Latent> latents;
  for (const auto& im : cal) latents.push_back(analyze_image(im));
  const auto ranking = observer::rank_channels(cal);
  const MaskingCodec codec(build_scale_table(latents, kDefaultQuality), ranking);

  const auto& im = cal[0];
  const auto curve = observer::masking_curve(codec, ranking, im, {0, 10, kChannels});
  REQUIRE(curve.size() == 3);
  CHECK(curve[0].psnr_db == doctest::Approx(oracle::naive_psnr(im, ImageBuffer(48, 32, 128))));
  CHECK(curve[2].psnr_db == doctest::Approx(oracle::naive_psnr(im, codec.decode_oneshot(im, kChannels))));
  CHECK(curve[1].psnr_db > curve[0].psnr_db);
  CHECK_THROWS(observer::masking_curve(codec, ranking, im, {10, 5}));
}

TEST_CASE("sorted order beats random orders on held-out images") {
  std::vector<ImageBuffer> cal, eval;
  for (std::uint64_t s = 0; s < 4; ++s) cal.push_back(io::synth_image(48, 32, derive_seed(6, 0, s)));
  for (std::uint64_t s = 0; s < 2; ++s) eval.push_back(io::synth_image(48, 32, derive_seed(6, 1, s)));
  std::vector<Latent> latents;
  for (const auto& im : cal) latents.push_back(analyze_image(im));
  const auto ranking = observer::rank_channels(cal);
  const MaskingCodec codec(build_scale_table(latents, kDefaultQuality), ranking);
  const std::vector<int> grid{19, 58, 96, 134, 173};

  Rng rng(1);
  for (const auto& im : eval) {
    const auto sorted = observer::masking_curve(codec, ranking, im, grid);
    std::vector<double> mean(grid.size(), 0.0);
    for (int t = 0; t < 5; ++t) {
      std::vector<int> perm(kChannels);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm.begin(), perm.end());
      const auto curve = observer::masking_curve(codec, ImportanceRanking::from_order(perm), im, grid);
      for (std::size_t i = 0; i < grid.size(); ++i) mean[i] += curve[i].psnr_db / 5.0;
    }
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(sorted[i].psnr_db >= mean[i]);
  }
}
