#include "progtx/imageio.hpp"

#include "progtx/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace progtx::io {
namespace fs = std::filesystem;

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long read_int(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000) fail(std::string("implausible ") + what);
      ++pos_;
    }
    if (pos_ == start) fail(std::string("malformed header: expected ") + what);
    return v;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error(path_.string() + ": " + msg);
  }

  std::size_t pos_ = 0;

 private:
  const std::string& bytes_;
  const fs::path& path_;
};

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

ImageBuffer load_ppm(const fs::path& path) {
  const std::string bytes = read_file(path);
  HeaderReader r(bytes, path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') r.fail("not a binary PPM (P6)");
  r.pos_ = 2;
  const long w = r.read_int("width");
  const long h = r.read_int("height");
  const long maxval = r.read_int("maxval");
  if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval) + " (only 255)");
  if (w <= 0 || h <= 0) r.fail("zero image dimension");
  if (r.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos_])))
    r.fail("malformed header: missing separator before raster");
  ++r.pos_;
  const std::size_t need = static_cast<std::size_t>(w * h * 3);
  if (bytes.size() - r.pos_ < need)
    r.fail("truncated raster: expected " + std::to_string(need) + " bytes, found " +
           std::to_string(bytes.size() - r.pos_));

  ImageBuffer img(static_cast<int>(w), static_cast<int>(h));
  const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data() + r.pos_);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.planes[c](y, x) = *p++;
  return img;
}

void save_ppm(const ImageBuffer& image, const fs::path& path) {
  std::string out = "P6\n" + std::to_string(image.width()) + " " +
                    std::to_string(image.height()) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + static_cast<std::size_t>(image.pixel_count()) * 3);
  auto* p = reinterpret_cast<std::uint8_t*>(out.data() + header);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c) *p++ = image.planes[c](y, x);
  write_file_atomic(path, out);
}

const char* to_string(Split split) {
  return split == Split::calibration ? "calibration" : "evaluation";
}

Split split_from_string(const std::string& s) {
  if (s == "calibration") return Split::calibration;
  if (s == "evaluation") return Split::evaluation;
  throw std::invalid_argument("unknown corpus split '" + s + "'");
}

Corpus::Corpus(std::vector<CorpusEntry> entries) : entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(),
            [](const CorpusEntry& a, const CorpusEntry& b) { return a.name < b.name; });
  for (std::size_t i = 1; i < entries_.size(); ++i)
    if (entries_[i].name == entries_[i - 1].name)
      throw std::invalid_argument("duplicate corpus entry '" + entries_[i].name + "'");
}

Corpus Corpus::load_manifest(const fs::path& manifest) {
  if (!fs::exists(manifest)) throw std::runtime_error("corpus manifest not found: " + manifest.string());
  const auto j = nlohmann::json::parse(read_file(manifest));
  if (!j.is_array()) throw std::runtime_error(manifest.string() + ": manifest must be a JSON array");
  const fs::path base = manifest.parent_path();
  std::vector<CorpusEntry> entries;
  for (const auto& e : j) {
    CorpusEntry entry;
    entry.name = e.at("name").get<std::string>();
    entry.path = e.at("path").get<std::string>();
    if (entry.path.is_relative()) entry.path = base / entry.path;
    entry.split = split_from_string(e.at("split").get<std::string>());
    entries.push_back(std::move(entry));
  }
  return Corpus(std::move(entries));
}

void Corpus::save_manifest(const fs::path& manifest) const {
  nlohmann::json j = nlohmann::json::array();
  const fs::path base = manifest.parent_path();
  for (const auto& e : entries_) {
    fs::path p = e.path;
    if (!base.empty()) p = fs::relative(fs::absolute(p), fs::absolute(base));
    j.push_back({{"name", e.name}, {"path", p.generic_string()}, {"split", to_string(e.split)}});
  }
  write_file_atomic(manifest, j.dump(2) + "\n");
}

std::vector<CorpusEntry> Corpus::split(Split which) const {
  std::vector<CorpusEntry> out;
  for (const auto& e : entries_)
    if (e.split == which) out.push_back(e);
  return out;
}

std::vector<ImageBuffer> Corpus::load(Split which) const {
  std::vector<ImageBuffer> out;
  for (const auto& e : split(which)) out.push_back(load_ppm(e.path));
  return out;
}

namespace {

// Smoothly interpolated lattice noise with cell size `cell` (pixels).
Eigen::MatrixXd value_noise(int w, int h, double cell, Rng& rng) {
  const int gw = static_cast<int>(std::ceil(w / cell)) + 2;
  const int gh = static_cast<int>(std::ceil(h / cell)) + 2;
  Eigen::MatrixXd grid(gh, gw);
  for (int i = 0; i < gh; ++i)
    for (int j = 0; j < gw; ++j) grid(i, j) = rng.uniform(-1.0, 1.0);
  const double ox = rng.uniform(0.0, 1.0);
  const double oy = rng.uniform(0.0, 1.0);
  Eigen::MatrixXd out(h, w);
  for (int y = 0; y < h; ++y) {
    const double fy = y / cell + oy;
    const int iy = static_cast<int>(fy);
    double ty = fy - iy;
    ty = ty * ty * (3 - 2 * ty);
    for (int x = 0; x < w; ++x) {
      const double fx = x / cell + ox;
      const int ix = static_cast<int>(fx);
      double tx = fx - ix;
      tx = tx * tx * (3 - 2 * tx);
      const double a = grid(iy, ix) * (1 - tx) + grid(iy, ix + 1) * tx;
      const double b = grid(iy + 1, ix) * (1 - tx) + grid(iy + 1, ix + 1) * tx;
      out(y, x) = a * (1 - ty) + b * ty;
    }
  }
  return out;
}

Eigen::MatrixXd fractal_noise(int w, int h, Rng& rng) {
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(h, w);
  double cell = std::max(w, h) / 2.0;
  double norm = 0;
  while (cell >= 1.5) {
    const double amp = std::pow(cell, 0.9);
    acc += amp * value_noise(w, h, cell, rng);
    norm += amp;
    cell /= 2.0;
  }
  return acc / norm;
}

}  // namespace

ImageBuffer synth_image(int width, int height, std::uint64_t seed) {
  if (width < 1 || height < 1) throw std::invalid_argument("synthetic image must be non-empty");
  Rng rng(seed);
  const Eigen::MatrixXd lum = fractal_noise(width, height, rng);
  const Eigen::MatrixXd chroma_a = fractal_noise(width, height, rng);
  const Eigen::MatrixXd chroma_b = fractal_noise(width, height, rng);

  std::array<double, 3> base{};
  for (auto& b : base) b = rng.uniform(70.0, 170.0);
  std::array<Eigen::MatrixXd, 3> rgb;
  const double lum_gain = rng.uniform(110.0, 190.0);
  for (int c = 0; c < 3; ++c) {
    const double wa = rng.uniform(-40.0, 40.0);
    const double wb = rng.uniform(-40.0, 40.0);
    rgb[c] = (base[c] + lum_gain * lum.array() + wa * chroma_a.array() + wb * chroma_b.array())
                 .matrix();
  }

  // Hard-edged objects: ellipses and axis-aligned boxes with one-pixel
  // anti-aliasing and their own internal shading.
  const int n_shapes = 3 + static_cast<int>(rng.index(6));
  const double scale = std::min(width, height);
  for (int s = 0; s < n_shapes; ++s) {
    const bool ellipse = rng.uniform() < 0.6;
    const double cx = rng.uniform(0.0, width);
    const double cy = rng.uniform(0.0, height);
    const double rx = rng.uniform(0.06, 0.35) * scale;
    const double ry = rng.uniform(0.06, 0.35) * scale;
    std::array<double, 3> color{};
    for (auto& v : color) v = rng.uniform(10.0, 245.0);
    const double shade = rng.uniform(-40.0, 40.0);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double dx = (x + 0.5 - cx) / rx;
        const double dy = (y + 0.5 - cy) / ry;
        double dist;  // signed distance in pixels, negative inside
        if (ellipse) {
          dist = (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(rx, ry);
        } else {
          dist = std::max((std::abs(dx) - 1.0) * rx, (std::abs(dy) - 1.0) * ry);
        }
        const double alpha = std::clamp(0.5 - dist, 0.0, 1.0);
        if (alpha <= 0.0) continue;
        const double t = shade * dy;
        for (int c = 0; c < 3; ++c)
          rgb[c](y, x) = (1 - alpha) * rgb[c](y, x) + alpha * (color[c] + t + 25.0 * lum(y, x));
      }
    }
  }

  const double grain = rng.uniform(1.0, 5.0);
  ImageBuffer img(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double g = grain * rng.uniform(-1.0, 1.0);
      for (int c = 0; c < 3; ++c) img.planes[c](y, x) = to_sample(rgb[c](y, x) + g);
    }
  return img;
}

Corpus write_synthetic_corpus(const fs::path& dir, int n_calibration, int n_evaluation,
                              int width, int height, std::uint64_t seed) {
  fs::create_directories(dir);
  std::vector<CorpusEntry> entries;
  auto emit = [&](const std::string& prefix, int count, Split split, std::uint64_t stream) {
    for (int i = 0; i < count; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%s%02d", prefix.c_str(), i + 1);
      const fs::path path = dir / (std::string(name) + ".ppm");
      save_ppm(synth_image(width, height, derive_seed(seed, stream, static_cast<std::uint64_t>(i))), path);
      entries.push_back({name, path, split});
    }
  };
  emit("calib", n_calibration, Split::calibration, 1);
  emit("eval", n_evaluation, Split::evaluation, 2);
  Corpus corpus(std::move(entries));
  corpus.save_manifest(dir / "manifest.json");
  return Corpus::load_manifest(dir / "manifest.json");
}

}  // namespace progtx::io
