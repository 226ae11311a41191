#include "oracles.hpp"

#include "progtx/imageio.hpp"

#include <doctest.h>

#include <filesystem>

using namespace progtx;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / "progtx_test_io";
  fs::create_directories(d);
  return d / name;
}

}  // namespace

TEST_CASE("ppm round trip") {
  const auto im = oracle::random_image(31, 7, 3);
  io::save_ppm(im, scratch("a.ppm"));
  CHECK(io::load_ppm(scratch("a.ppm")) == im);
}

TEST_CASE("ppm header parsing") {
  io::write_file_atomic(scratch("c.ppm"), std::string("P6\n# comment\n2 1\n255\n") + std::string("\x01\x02\x03\x04\x05\x06", 6));
  const auto im = io::load_ppm(scratch("c.ppm"));
  CHECK(im.width() == 2);
  CHECK(im.height() == 1);
  CHECK(im.planes[0](0, 1) == 4);
  CHECK(im.planes[2](0, 0) == 3);

  io::write_file_atomic(scratch("deep.ppm"), std::string("P6 1 1 65535\n") + std::string(6, '\0'));
  try {
    io::load_ppm(scratch("deep.ppm"));
    FAIL("expected a maxval error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("maxval") != std::string::npos);
  }
  io::write_file_atomic(scratch("short.ppm"), std::string("P6 4 4 255\n") + std::string(10, '\0'));
  CHECK_THROWS(io::load_ppm(scratch("short.ppm")));
  io::write_file_atomic(scratch("p3.ppm"), "P3 1 1 255\n1 2 3\n");
  CHECK_THROWS(io::load_ppm(scratch("p3.ppm")));
  CHECK_THROWS(io::load_ppm(scratch("missing.ppm")));
}

TEST_CASE("768x512 and 512x768 images keep their dimensions") {
  const auto land = io::synth_image(768, 512, 1);
  io::save_ppm(land, scratch("land.ppm"));
  const auto back = io::load_ppm(scratch("land.ppm"));
  CHECK(back.width() == 768);
  CHECK(back.height() == 512);
  const auto portrait = io::synth_image(512, 768, 2);
  io::save_ppm(portrait, scratch("portrait.ppm"));
  CHECK(io::load_ppm(scratch("portrait.ppm")).height() == 768);
}

TEST_CASE("synthetic images are deterministic and textured") {
  const auto a = io::synth_image(64, 48, 11), b = io::synth_image(64, 48, 11), c = io::synth_image(64, 48, 12);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  double mean = 0.0;
  for (int i = 0; i < a.planes[1].size(); ++i) mean += a.planes[1].data()[i];
  mean /= static_cast<double>(a.planes[1].size());
  double var = 0.0;
  for (int i = 0; i < a.planes[1].size(); ++i) var += std::pow(a.planes[1].data()[i] - mean, 2);
  CHECK(var / static_cast<double>(a.planes[1].size()) > 100.0);
}

TEST_CASE("corpus manifest") {
  const auto dir = scratch("corpus");
  fs::remove_all(dir);
  const auto corpus = io::write_synthetic_corpus(dir, 3, 2, 32, 24, 5);
  CHECK(corpus.split(io::Split::calibration).size() == 3);
  CHECK(corpus.split(io::Split::evaluation).size() == 2);

  const auto loaded = io::Corpus::load_manifest(dir / "manifest.json");
  REQUIRE(loaded.entries().size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(loaded.entries()[i].name == corpus.entries()[i].name);
    CHECK(fs::equivalent(loaded.entries()[i].path, corpus.entries()[i].path));
  }
  const auto eval = loaded.load(io::Split::evaluation);
  CHECK(eval[0].width() == 32);

  // The manifest stays valid when the directory moves.
  const auto moved = scratch("moved");
  fs::remove_all(moved);
  fs::rename(dir, moved);
  CHECK(io::Corpus::load_manifest(moved / "manifest.json").load(io::Split::calibration).size() == 3);

  CHECK_THROWS(io::Corpus({{"a", "x.ppm", io::Split::evaluation}, {"a", "y.ppm", io::Split::calibration}}));
  CHECK_THROWS(io::split_from_string("train"));
  fs::remove_all(moved);
}
