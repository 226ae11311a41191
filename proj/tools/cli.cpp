#include "cli.hpp"

#include "progtx/codec_masking.hpp"
#include "progtx/codec_rvq.hpp"
#include "progtx/imageio.hpp"
#include "progtx/metrics.hpp"
#include "progtx/observer.hpp"
#include "progtx/random.hpp"
#include "progtx/simulator.hpp"

#include <CLI11.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <ostream>
#include <sstream>

namespace progtx::cli {

namespace fs = std::filesystem;

namespace {

fs::path data_root() {
  const char* env = std::getenv("PROGTX_DATA");
  return env && *env ? fs::path(env) : fs::path();
}

// Flag value, else $PROGTX_DATA/<name>, else error.
fs::path resolve(const std::string& flag, const std::string& name, const std::string& what) {
  if (!flag.empty()) return flag;
  const fs::path root = data_root();
  if (root.empty()) throw std::runtime_error("no " + what + " given (pass a flag or set PROGTX_DATA)");
  return root / name;
}

std::string fmt(double v, int precision = 4) {
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw std::invalid_argument("bad number '" + item + "' in list");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int calibration = 8;
  int evaluation = 5;
  int width = 96;
  int height = 64;
  std::uint64_t seed = 1;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto corpus = io::write_synthetic_corpus(resolve(a.out, "", "output directory"), a.calibration,
                                                 a.evaluation, a.width, a.height, a.seed);
  out << "wrote " << corpus.entries().size() << " images\n";
}

struct RankArgs {
  std::string manifest;
  std::string split = "calibration";
  std::string out;
  std::string scales_out;
  double quality = masking::kDefaultQuality;
};

void cmd_rank(const RankArgs& a, std::ostream& out) {
  const auto manifest = resolve(a.manifest, "manifest.json", "corpus manifest");
  const auto images = io::Corpus::load_manifest(manifest).load(io::split_from_string(a.split));
  if (images.empty()) throw std::runtime_error("corpus split '" + a.split + "' is empty");
  const auto ranking = observer::rank_channels(images);
  const fs::path rank_path = resolve(a.out, "ranking.json", "ranking output path");
  io::write_file_atomic(rank_path, ranking.to_json() + "\n");

  std::vector<masking::Latent> latents;
  for (const auto& img : images) latents.push_back(masking::analyze_image(img));
  const auto table = masking::build_scale_table(latents, a.quality);
  const fs::path scales_path =
      a.scales_out.empty() ? rank_path.parent_path() / "scales.json" : fs::path(a.scales_out);
  io::write_file_atomic(scales_path, table.to_json() + "\n");
  out << "ranked " << ranking.channels() << " channels over " << images.size() << " images; top channel "
      << ranking.order.front() << "\n";
}

struct TrainArgs {
  std::string manifest;
  std::string split = "calibration";
  std::string out_dir;
  int bpi_min = 8;
  int bpi_max = 16;
  int large_size = 16384;
  int stages = 10;
  int stack_bpi = 8;
  int project_dim = 4;
  int stride = 1;
  int max_vectors = 65536;
  int max_iters = 100;
  std::uint64_t seed = 1;
};

void cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.bpi_min < 0 || a.bpi_max < a.bpi_min) throw std::invalid_argument("bad bpi range");
  const auto manifest = resolve(a.manifest, "manifest.json", "corpus manifest");
  const auto images = io::Corpus::load_manifest(manifest).load(io::split_from_string(a.split));
  if (images.empty()) throw std::runtime_error("corpus split '" + a.split + "' is empty");
  const fs::path dir = resolve(a.out_dir, "codebooks", "output directory");

  std::vector<rvq::Vectors> parts;
  Eigen::Index total = 0;
  for (const auto& img : images) {
    parts.push_back(rvq::training_patches(img, rvq::kPatch, a.stride));
    total += parts.back().cols();
  }
  rvq::Vectors x(parts.front().rows(), total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    x.middleCols(at, p.cols()) = p;
    at += p.cols();
  }
  if (a.max_vectors > 0 && total > a.max_vectors) {
    std::vector<Eigen::Index> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(a.seed, 0, 0));
    rng.shuffle(idx.begin(), idx.end());
    idx.resize(a.max_vectors);
    std::sort(idx.begin(), idx.end());
    rvq::Vectors sub(x.rows(), a.max_vectors);
    for (int i = 0; i < a.max_vectors; ++i) sub.col(i) = x.col(idx[i]);
    x = std::move(sub);
  }

  nlohmann::json summary;
  summary["training_vectors"] = x.cols();
  rvq::Vectors z = x;
  if (a.project_dim > 0) {
    const auto projector = rvq::fit_projector(x, a.project_dim);
    z = projector.project(x);
    io::write_file_atomic(dir / "projector.json", projector.to_json() + "\n");
    summary["projector_variance"] = std::vector<double>(projector.variance.data(),
                                                        projector.variance.data() + projector.variance.size());
  }

  // Large codebook, then the family by clustering it.
  const auto distinct = rvq::count_distinct(z);
  int large_bpi = 0;
  while ((std::size_t{2} << large_bpi) <= std::min<std::size_t>(distinct, static_cast<std::size_t>(a.large_size)))
    ++large_bpi;
  auto large = rvq::make_codebook(
      rvq::train_kmeans(z, 1 << large_bpi, a.max_iters, derive_seed(a.seed, 1, 0)).centroids);
  rvq::round_to_float(large);
  rvq::save_codebook(large, dir / "large.rvq");
  summary["large_bpi"] = large_bpi;

  const int top = std::min(a.bpi_max, large_bpi);
  if (a.bpi_min > top)
    throw std::runtime_error("bpi_min " + std::to_string(a.bpi_min) + " exceeds the large codebook's bpi " +
                             std::to_string(large_bpi));
  if (top < a.bpi_max)
    out << "note: family capped at bpi " << top << " by the " << large.size() << "-entry large codebook\n";
  for (int bpi = a.bpi_min; bpi <= top; ++bpi) {
    auto cb = rvq::cluster_codebook(large, bpi, derive_seed(a.seed, 2, static_cast<std::uint64_t>(bpi)), a.max_iters);
    rvq::round_to_float(cb);
    char name[32];
    std::snprintf(name, sizeof name, "codebook_bpi%02d.rvq", bpi);
    rvq::save_codebook(cb, dir / name);
  }
  summary["family_bpi"] = {a.bpi_min, top};

  std::vector<double> stage_mse;
  const auto stack =
      rvq::train_residual_stack(z, a.stages, a.stack_bpi, derive_seed(a.seed, 3, 0), a.max_iters, &stage_mse);
  rvq::save_stack(stack, dir / "stack.rvq");
  summary["stack_stage_mse"] = stage_mse;
  io::write_file_atomic(dir / "training.json", summary.dump(1) + "\n");
  out << "trained on " << x.cols() << " patches: large bpi " << large_bpi << ", family " << a.bpi_min << ".."
      << top << ", stack " << a.stages << " x bpi " << a.stack_bpi << "\n";
}

struct SimArgs {
  std::string config;
  std::string snr_grid;
  int realizations = 0;
  int jobs = 0;
  std::int64_t seed = -1;
  std::string out_dir;
};

void cmd_simulate(const SimArgs& a, std::ostream& out) {
  const fs::path path = resolve(a.config, "experiment.json", "experiment config");
  if (!fs::exists(path)) throw std::runtime_error("config file not found: " + path.string());
  auto config = sim::ExperimentConfig::parse(io::read_file(path), path.parent_path(), path.string());
  if (!a.snr_grid.empty()) config.snr_grid = parse_list(a.snr_grid);
  if (a.realizations > 0) config.n_realizations = a.realizations;
  if (a.jobs > 0) config.jobs = a.jobs;
  if (a.seed >= 0) config.base_seed = static_cast<std::uint64_t>(a.seed);
  if (!a.out_dir.empty()) {
    const fs::path d = a.out_dir;
    config.records_out = d / "records.jsonl";
    config.aggregates_out = d / "aggregates.csv";
    config.snapshot_out = d / "snapshot.csv";
    config.latency_out = d / "latency.csv";
  }
  if (const auto root = data_root(); !root.empty()) {
    auto fill = [&](fs::path& p, const char* name) {
      if (p.empty()) p = root / name;
    };
    fill(config.manifest, "manifest.json");
    fill(config.ranking, "ranking.json");
    fill(config.scales, "scales.json");
    fill(config.stack, "codebooks/stack.rvq");
    // An unprojected stack has no projector file.
    if (config.projector.empty() && fs::exists(root / "codebooks/projector.json"))
      config.projector = root / "codebooks/projector.json";
  }
  const auto result = sim::simulate_and_write(config);
  sim::write_aggregates_csv(out, result.aggregates);
}

// Offline container: "PTX1", codec u8 (0 masking, 1 rvq), width u16,
// height u16, unit count u16, then each unit as u32 length + bytes (LE).
struct Container {
  int codec = 0;
  int width = 0;
  int height = 0;
  std::vector<std::vector<std::uint8_t>> units;
};

std::string write_container(const Container& c) {
  std::string s = "PTX1";
  auto u16 = [&](std::uint32_t v) {
    s.push_back(static_cast<char>(v & 0xFF));
    s.push_back(static_cast<char>((v >> 8) & 0xFF));
  };
  s.push_back(static_cast<char>(c.codec));
  u16(static_cast<std::uint32_t>(c.width));
  u16(static_cast<std::uint32_t>(c.height));
  u16(static_cast<std::uint32_t>(c.units.size()));
  for (const auto& u : c.units) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((u.size() >> (8 * i)) & 0xFF));
    s.append(u.begin(), u.end());
  }
  return s;
}

Container read_container(const std::string& s) {
  auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])); };
  if (s.size() < 11 || s.compare(0, 4, "PTX1") != 0) throw std::runtime_error("not a PTX1 container");
  Container c;
  c.codec = static_cast<int>(b(4));
  c.width = static_cast<int>(b(5) | b(6) << 8);
  c.height = static_cast<int>(b(7) | b(8) << 8);
  const std::uint32_t n = b(9) | b(10) << 8;
  std::size_t pos = 11;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (pos + 4 > s.size()) throw std::runtime_error("container truncated");
    const std::size_t len = b(pos) | b(pos + 1) << 8 | b(pos + 2) << 16 | b(pos + 3) << 24;
    pos += 4;
    if (pos + len > s.size()) throw std::runtime_error("container truncated");
    c.units.emplace_back(s.begin() + static_cast<std::ptrdiff_t>(pos),
                         s.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  if (pos != s.size()) throw std::runtime_error("trailing bytes after container units");
  return c;
}

struct CodecArgs {
  std::string codec = "masking";
  std::string input;
  std::string output;
  int keep = masking::kChannels;
  int stages = 10;
  int group_size = 4;
  std::string ranking;
  std::string scales;
  std::string stack;
  std::string projector;
  bool no_projector = false;
};

masking::MaskingCodec load_masking(const CodecArgs& a) {
  const auto ranking = resolve(a.ranking, "ranking.json", "ranking file");
  const auto scales = resolve(a.scales, "scales.json", "scale table");
  for (const auto& p : {ranking, scales})
    if (!fs::exists(p)) throw std::runtime_error("missing trained artifact: " + p.string());
  return masking::MaskingCodec(entropy::ScaleTable::from_json(io::read_file(scales)),
                               masking::ImportanceRanking::from_json(io::read_file(ranking)));
}

rvq::RvqCodec load_rvq(const CodecArgs& a) {
  auto stack = rvq::load_stack(resolve(a.stack, "codebooks/stack.rvq", "residual stack"));
  std::optional<rvq::Projector> projector;
  if (!a.no_projector) {
    const auto p = resolve(a.projector, "codebooks/projector.json", "projector");
    if (!fs::exists(p)) throw std::runtime_error("missing trained artifact: " + p.string());
    projector = rvq::Projector::from_json(io::read_file(p));
  }
  return rvq::RvqCodec(std::move(stack), std::move(projector));
}

void cmd_encode(const CodecArgs& a, std::ostream& out) {
  const ImageBuffer image = io::load_ppm(a.input);
  Container c;
  c.width = image.width();
  c.height = image.height();
  std::int64_t bits = 0;
  if (a.codec == "masking") {
    const auto codec = load_masking(a);
    if (a.keep < 0 || a.keep > masking::kChannels) throw std::invalid_argument("--keep must be in [0, 192]");
    c.codec = 0;
    if (a.keep > 0)
      for (const auto& p : codec.encode(image, 0, a.group_size, a.keep)) {
        c.units.push_back(p.serialize());
        bits += p.bit_size();
      }
  } else if (a.codec == "rvq") {
    const auto codec = load_rvq(a);
    c.codec = 1;
    if (a.stages > 0)
      for (const auto& p : codec.packetize(codec.encode(image, a.stages), 0)) {
        c.units.push_back(p.serialize());
        bits += p.bit_size();
      }
  } else {
    throw std::invalid_argument("unknown codec '" + a.codec + "' (masking or rvq)");
  }
  io::write_file_atomic(a.output, write_container(c));
  out << c.units.size() << " units, " << bits << " bits\n";
}

void cmd_decode(const CodecArgs& a, std::ostream& out) {
  const Container c = read_container(io::read_file(a.input));
  ImageBuffer image;
  if (c.codec == 0) {
    const auto codec = load_masking(a);
    masking::ReceiverState rx(codec, 0, c.width, c.height);
    for (const auto& u : c.units) rx.integrate(masking::MaskedPacket::parse(u));
    image = rx.decode_current();
  } else if (c.codec == 1) {
    const auto codec = load_rvq(a);
    std::vector<rvq::TokenPacket> packets;
    for (const auto& u : c.units) packets.push_back(rvq::TokenPacket::parse(u));
    const auto tokens = codec.depacketize(packets);
    image = codec.decode(tokens, static_cast<int>(tokens.stages.size()), c.width, c.height);
  } else {
    throw std::runtime_error("unknown codec id " + std::to_string(c.codec) + " in container");
  }
  io::save_ppm(image, a.output);
  out << "decoded " << image.width() << "x" << image.height() << "\n";
}

void cmd_metrics(const std::string& ref, const std::string& test, std::ostream& out) {
  const auto q = metrics::quality(io::load_ppm(ref), io::load_ppm(test));
  out << "mse " << fmt(q.mse, 6) << "\npsnr_db " << fmt(q.psnr_db) << "\nssim " << fmt(q.ssim, 6) << "\n";
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Progressive image transmission over simulated fading channels", "progtx"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-corpus", "Write a synthetic calibration/evaluation corpus");
  s->add_option("--out", synth.out, "Output directory");
  s->add_option("--calibration", synth.calibration, "Calibration image count");
  s->add_option("--evaluation", synth.evaluation, "Evaluation image count");
  s->add_option("--width", synth.width);
  s->add_option("--height", synth.height);
  s->add_option("--seed", synth.seed);

  RankArgs rank;
  auto* r = app.add_subcommand("rank-channels", "Rank masking channels and write ranking and scale tables");
  r->add_option("--manifest", rank.manifest, "Corpus manifest");
  r->add_option("--split", rank.split);
  r->add_option("--out", rank.out, "Ranking JSON path");
  r->add_option("--scales-out", rank.scales_out, "Scale table JSON path (default: next to the ranking)");
  r->add_option("--quality", rank.quality, "Quantizer quality knob");

  TrainArgs train;
  auto* t = app.add_subcommand("train-codebooks", "Train the codebook family and residual stack");
  t->add_option("--manifest", train.manifest, "Corpus manifest");
  t->add_option("--split", train.split);
  t->add_option("--out-dir", train.out_dir, "Output directory");
  t->add_option("--bpi-min", train.bpi_min);
  t->add_option("--bpi-max", train.bpi_max);
  t->add_option("--large-size", train.large_size, "Entries of the large codebook");
  t->add_option("--stages", train.stages, "Residual stages");
  t->add_option("--stack-bpi", train.stack_bpi);
  t->add_option("--project-dim", train.project_dim, "Projected dimension (0 disables projection)");
  t->add_option("--stride", train.stride, "Training patch stride");
  t->add_option("--max-vectors", train.max_vectors, "Training vector cap (0: no cap)");
  t->add_option("--max-iters", train.max_iters);
  t->add_option("--seed", train.seed);

  SimArgs simargs;
  auto* m = app.add_subcommand("simulate", "Run the Monte Carlo experiment");
  m->add_option("--config", simargs.config, "Experiment JSON");
  m->add_option("--snr-grid", simargs.snr_grid, "Comma-separated SNR list in dB, e.g. --snr-grid=-10,-5,0,5");
  m->add_option("--realizations", simargs.realizations);
  m->add_option("--jobs", simargs.jobs, "Worker threads");
  m->add_option("--seed", simargs.seed);
  m->add_option("--out-dir", simargs.out_dir, "Write all outputs into this directory");

  CodecArgs enc, dec;
  for (auto [cmd, a, help] : {std::tuple{"encode", &enc, "Encode one image"},
                              std::tuple{"decode", &dec, "Decode one container"}}) {
    auto* c = app.add_subcommand(cmd, help);
    if (std::string(cmd) == "encode") {
      c->add_option("--codec", a->codec, "masking or rvq");
      c->add_option("--keep", a->keep, "Masking: channels to send");
      c->add_option("--stages", a->stages, "RVQ: stages to send");
      c->add_option("--group-size", a->group_size, "Masking: channels per packet");
    }
    c->add_option("--input", a->input)->required();
    c->add_option("--output", a->output)->required();
    c->add_option("--ranking", a->ranking);
    c->add_option("--scales", a->scales);
    c->add_option("--stack", a->stack);
    c->add_option("--projector", a->projector);
    c->add_flag("--no-projector", a->no_projector, "RVQ on raw patches");
  }

  std::string mref, mtest;
  auto* q = app.add_subcommand("metrics", "PSNR and SSIM of a test image against a reference");
  q->add_option("--reference", mref)->required();
  q->add_option("--test", mtest)->required();

  std::vector<std::string> argv_store{"progtx"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "progtx: error: " << one_line(e.what()) << "\n";
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*s) cmd_synth(synth, out);
    else if (*r) cmd_rank(rank, out);
    else if (*t) cmd_train(train, out);
    else if (*m) cmd_simulate(simargs, out);
    else if (app.got_subcommand("encode")) cmd_encode(enc, out);
    else if (app.got_subcommand("decode")) cmd_decode(dec, out);
    else if (*q) cmd_metrics(mref, mtest, out);
  } catch (const std::exception& e) {
    err << "progtx: error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace progtx::cli
