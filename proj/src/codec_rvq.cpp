#include "progtx/codec_rvq.hpp"

#include "progtx/imageio.hpp"
#include "progtx/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace progtx::rvq {

PatchGrid extract_patches(const ImageBuffer& image, int d) {
  if (d < 1) throw std::invalid_argument("patch size must be positive");
  const ImageBuffer padded = pad_to_multiple(image, d);
  PatchGrid g;
  g.patch = d;
  g.rows = padded.height() / d;
  g.cols = padded.width() / d;
  g.vectors.resize(3 * d * d, g.cells());
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) {
      auto v = g.vectors.col(r * g.cols + c);
      int k = 0;
      for (int p = 0; p < 3; ++p)
        for (int y = 0; y < d; ++y)
          for (int x = 0; x < d; ++x) v(k++) = padded.planes[p](r * d + y, c * d + x);
    }
  return g;
}

ImageBuffer assemble_patches(const PatchGrid& grid, int width, int height) {
  const int d = grid.patch;
  if (grid.vectors.rows() != 3 * d * d || grid.vectors.cols() != grid.cells())
    throw std::invalid_argument("patch grid shape does not match its geometry");
  ImageBuffer img(grid.cols * d, grid.rows * d);
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) {
      const auto v = grid.vectors.col(r * grid.cols + c);
      int k = 0;
      for (int p = 0; p < 3; ++p)
        for (int y = 0; y < d; ++y)
          for (int x = 0; x < d; ++x) img.planes[p](r * d + y, c * d + x) = to_sample(v(k++));
    }
  return crop(img, width, height);
}

ImageBuffer assemble_patches(const PatchGrid& grid) {
  return assemble_patches(grid, grid.cols * grid.patch, grid.rows * grid.patch);
}

Vectors training_patches(const ImageBuffer& image, int d, int stride) {
  if (d < 1 || stride < 1) throw std::invalid_argument("patch size and stride must be positive");
  const ImageBuffer padded = pad_to_multiple(image, d);
  const int ny = (padded.height() - d) / stride + 1;
  const int nx = (padded.width() - d) / stride + 1;
  Vectors out(3 * d * d, static_cast<Eigen::Index>(ny) * nx);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      auto v = out.col(static_cast<Eigen::Index>(iy) * nx + ix);
      int k = 0;
      for (int p = 0; p < 3; ++p)
        for (int y = 0; y < d; ++y)
          for (int x = 0; x < d; ++x) v(k++) = padded.planes[p](iy * stride + y, ix * stride + x);
    }
  return out;
}

// ---------------------------------------------------------------------------

Vectors Projector::project(const Vectors& x) const {
  if (x.rows() != in_dim()) throw std::invalid_argument("projector input dimension mismatch");
  return rows * (x.colwise() - mean);
}

Vectors Projector::back_project(const Vectors& z) const {
  if (z.rows() != out_dim()) throw std::invalid_argument("projector output dimension mismatch");
  return (rows.transpose() * z).colwise() + mean;
}

std::string Projector::to_json() const {
  nlohmann::json j;
  j["mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
  j["variance"] = std::vector<double>(variance.data(), variance.data() + variance.size());
  auto& rs = j["rows"] = nlohmann::json::array();
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const Eigen::VectorXd row = rows.row(r).transpose();
    rs.push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  return j.dump(1);
}

Projector Projector::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Projector p;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto var = j.at("variance").get<std::vector<double>>();
  const auto rows = j.at("rows").get<std::vector<std::vector<double>>>();
  p.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  p.variance = Eigen::Map<const Eigen::VectorXd>(var.data(), static_cast<Eigen::Index>(var.size()));
  p.rows.resize(static_cast<Eigen::Index>(rows.size()), p.mean.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != mean.size()) throw std::invalid_argument("projector row length mismatch");
    for (std::size_t c = 0; c < mean.size(); ++c) p.rows(r, c) = rows[r][c];
  }
  if (p.variance.size() != p.rows.rows()) throw std::invalid_argument("projector variance length mismatch");
  return p;
}

Projector fit_projector(const Vectors& corpus, int out_dim) {
  const Eigen::Index dim = corpus.rows();
  const Eigen::Index n = corpus.cols();
  if (out_dim < 1 || out_dim > dim) throw std::invalid_argument("projector out_dim out of range");
  if (n <= out_dim) throw std::invalid_argument("projector corpus must have more vectors than out_dim");

  Projector p;
  p.mean = corpus.rowwise().mean();
  const Vectors centered = corpus.colwise() - p.mean;
  const Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(n);
  const double total = cov.trace();
  if (!(total > 1e-12)) throw std::invalid_argument("projector corpus has zero variance");

  Eigen::MatrixXd work = cov;
  Eigen::MatrixXd basis(out_dim, dim);
  Rng rng(0x9C0FFEEULL);
  auto orthogonalize = [&](Eigen::VectorXd& v, int upto) {
    for (int pass = 0; pass < 2; ++pass)
      for (int i = 0; i < upto; ++i) v -= basis.row(i).dot(v) * basis.row(i).transpose();
  };
  auto random_unit = [&](int upto) {
    for (;;) {
      Eigen::VectorXd v(dim);
      for (Eigen::Index i = 0; i < dim; ++i) v(i) = rng.uniform(-1.0, 1.0);
      orthogonalize(v, upto);
      const double nv = v.norm();
      if (nv > 1e-6) return Eigen::VectorXd(v / nv);
    }
  };

  for (int j = 0; j < out_dim; ++j) {
    Eigen::VectorXd v = random_unit(j);
    double lambda = 0.0;
    for (int it = 0; it < 20000; ++it) {
      Eigen::VectorXd w = work * v;
      orthogonalize(w, j);
      const double nw = w.norm();
      if (nw < 1e-300) break;  // remaining variance is zero: any orthogonal direction works
      w /= nw;
      const double delta = std::min((w - v).norm(), (w + v).norm());
      v = w;
      lambda = nw;
      if (delta < 1e-13) break;
    }
    basis.row(j) = v.transpose();
    work -= lambda * v * v.transpose();
  }

  // Order by the variance each direction actually captures.
  std::vector<double> rq(out_dim);
  for (int j = 0; j < out_dim; ++j) rq[j] = basis.row(j) * cov * basis.row(j).transpose();
  std::vector<int> order(out_dim);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rq[a] > rq[b]; });
  p.rows.resize(out_dim, dim);
  p.variance.resize(out_dim);
  for (int j = 0; j < out_dim; ++j) {
    p.rows.row(j) = basis.row(order[j]);
    p.variance(j) = rq[order[j]];
  }
  return p;
}

// ---------------------------------------------------------------------------

double squared_distance(const Eigen::Ref<const Eigen::VectorXd>& a,
                        const Eigen::Ref<const Eigen::VectorXd>& b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = a(i) - b(i);
    acc += d * d;
  }
  return acc;
}

NearestSearch::NearestSearch(const Vectors& entries) {
  if (entries.cols() == 0) throw std::invalid_argument("nearest search over an empty set");
  Eigen::VectorXd spread = (entries.colwise() - entries.rowwise().mean()).rowwise().squaredNorm();
  spread.maxCoeff(&axis_);
  ids_.resize(entries.cols());
  std::iota(ids_.begin(), ids_.end(), 0);
  std::stable_sort(ids_.begin(), ids_.end(),
                   [&](int a, int b) { return entries(axis_, a) < entries(axis_, b); });
  sorted_.resize(entries.rows(), entries.cols());
  keys_.resize(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    sorted_.col(static_cast<Eigen::Index>(i)) = entries.col(ids_[i]);
    keys_[i] = entries(axis_, ids_[i]);
  }
}

int NearestSearch::nearest(const Eigen::Ref<const Eigen::VectorXd>& x, double* dist2) const {
  const double kx = x(axis_);
  const auto n = static_cast<std::ptrdiff_t>(keys_.size());
  std::ptrdiff_t hi = std::lower_bound(keys_.begin(), keys_.end(), kx) - keys_.begin();
  std::ptrdiff_t lo = hi - 1;
  double best = std::numeric_limits<double>::infinity();
  int best_id = -1;
  auto visit = [&](std::ptrdiff_t i) {
    const double d = squared_distance(sorted_.col(i), x);
    if (d < best || (d == best && ids_[i] < best_id)) {
      best = d;
      best_id = ids_[i];
    }
  };
  // A candidate whose key gap alone exceeds the best distance cannot win;
  // equal distances are still visited so the tie rule sees them.
  while (lo >= 0 || hi < n) {
    const double gl = lo >= 0 ? kx - keys_[lo] : std::numeric_limits<double>::infinity();
    const double gh = hi < n ? keys_[hi] - kx : std::numeric_limits<double>::infinity();
    if (gl <= gh) {
      if (gl * gl > best) break;
      visit(lo--);
    } else {
      if (gh * gh > best) break;
      visit(hi++);
    }
  }
  if (dist2) *dist2 = best;
  return best_id;
}

std::size_t count_distinct(const Vectors& vectors) {
  const Eigen::Index n = vectors.cols();
  if (n == 0) return 0;
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
      if (vectors(r, a) < vectors(r, b)) return true;
      if (vectors(r, a) > vectors(r, b)) return false;
    }
    return false;
  };
  std::sort(idx.begin(), idx.end(), less);
  std::size_t distinct = 1;
  for (Eigen::Index i = 1; i < n; ++i)
    if (less(idx[i - 1], idx[i])) ++distinct;
  return distinct;
}

KMeansResult train_kmeans(const Vectors& x, int k, int max_iters, std::uint64_t seed) {
  const Eigen::Index n = x.cols();
  if (n == 0) throw std::invalid_argument("k-means needs at least one vector");
  if (k < 1) throw std::invalid_argument("k-means needs k >= 1");
  if (max_iters < 1) throw std::invalid_argument("k-means needs max_iters >= 1");
  const std::size_t distinct = count_distinct(x);
  if (static_cast<std::size_t>(k) > distinct)
    throw std::invalid_argument("k = " + std::to_string(k) + " exceeds the " + std::to_string(distinct) +
                                " distinct training vectors");

  Rng rng(seed);
  Vectors c(x.rows(), k);
  std::vector<double> d2(n);
  {
    const auto first = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
    c.col(0) = x.col(first);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) total += d2[i] = squared_distance(x.col(i), c.col(0));
    for (int j = 1; j < k; ++j) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      Eigen::Index pick = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        acc += d2[i];
        if (acc > target) break;
      }
      c.col(j) = x.col(pick);
      total = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        d2[i] = std::min(d2[i], squared_distance(x.col(i), c.col(j)));
        total += d2[i];
      }
    }
  }

  KMeansResult res;
  res.assignment.resize(n);
  auto assign = [&] {
    const NearestSearch search(c);
    double obj = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      res.assignment[i] = search.nearest(x.col(i), &d2[i]);
      obj += d2[i];
    }
    res.objective.push_back(obj);
  };

  for (int it = 0; it < max_iters; ++it) {
    assign();
    ++res.iterations;
    Vectors sums = Vectors::Zero(x.rows(), k);
    std::vector<Eigen::Index> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.col(res.assignment[i]) += x.col(i);
      ++counts[res.assignment[i]];
    }
    Vectors next = c;
    for (int j = 0; j < k; ++j) {
      if (counts[j] > 0) {
        next.col(j) = sums.col(j) / static_cast<double>(counts[j]);
        continue;
      }
      // Empty cluster: move it onto the worst-served point.
      const auto far = static_cast<Eigen::Index>(std::max_element(d2.begin(), d2.end()) - d2.begin());
      next.col(j) = x.col(far);
      d2[far] = 0.0;
    }
    const double shift = (next - c).colwise().norm().maxCoeff();
    c = std::move(next);
    if (shift < 1e-6) break;
  }
  assign();
  res.centroids = std::move(c);
  return res;
}

void Codebook::validate() const {
  if (bpi < 0 || bpi > 24) throw std::invalid_argument("codebook bpi out of range");
  if (entries.cols() != (Eigen::Index{1} << bpi))
    throw std::invalid_argument("codebook has " + std::to_string(entries.cols()) + " entries, expected 2^" +
                                std::to_string(bpi));
  if (!entries.allFinite()) throw std::invalid_argument("codebook entries must be finite");
}

Codebook make_codebook(Vectors centroids) {
  const auto k = static_cast<std::uint64_t>(centroids.cols());
  if (k == 0 || !std::has_single_bit(k))
    throw std::invalid_argument("codebook size " + std::to_string(k) + " is not a power of two");
  Codebook cb;
  cb.bpi = std::countr_zero(k);
  cb.entries = std::move(centroids);
  cb.validate();
  return cb;
}

void round_to_float(Codebook& codebook) {
  codebook.entries = codebook.entries.cast<float>().cast<double>();
}

Codebook cluster_codebook(const Codebook& large, int bpi, std::uint64_t seed, int max_iters) {
  if (bpi < 0) throw std::invalid_argument("bpi must be non-negative");
  if ((Eigen::Index{1} << bpi) > large.entries.cols())
    throw std::invalid_argument("bpi " + std::to_string(bpi) + " too large for a " +
                                std::to_string(large.entries.cols()) + "-entry codebook");
  return make_codebook(train_kmeans(large.entries, 1 << bpi, max_iters, seed).centroids);
}

void CodebookFamily::validate() const {
  if (by_bpi.empty()) throw std::invalid_argument("codebook family is empty");
  int expect = min_bpi();
  for (const auto& [bpi, cb] : by_bpi) {
    if (bpi != expect++) throw std::invalid_argument("codebook family bpi range is not contiguous");
    if (cb.bpi != bpi) throw std::invalid_argument("codebook family key does not match codebook bpi");
    cb.validate();
  }
}

void ResidualStack::validate() const {
  if (stages.empty()) throw std::invalid_argument("residual stack has no stages");
  for (const auto& s : stages) {
    s.validate();
    if (s.bpi != stages.front().bpi || s.dim() != stages.front().dim())
      throw std::invalid_argument("residual stack stages differ in shape");
  }
}

ResidualStack train_residual_stack(const Vectors& corpus, int m, int bpi, std::uint64_t seed, int max_iters,
                                   std::vector<double>* stage_mse) {
  if (m < 1) throw std::invalid_argument("residual stack needs at least one stage");
  if (bpi < 0 || bpi > 20) throw std::invalid_argument("bpi out of range");
  const int k = 1 << bpi;
  if (static_cast<std::size_t>(k) > count_distinct(corpus))
    throw std::invalid_argument("k = " + std::to_string(k) + " exceeds the distinct training vectors");
  ResidualStack stack;
  Vectors residual = corpus;
  if (stage_mse) stage_mse->clear();
  for (int s = 0; s < m; ++s) {
    const int kk = static_cast<int>(std::min<std::size_t>(k, count_distinct(residual)));
    Vectors c = train_kmeans(residual, kk, max_iters, derive_seed(seed, static_cast<std::uint64_t>(s), 0))
                    .centroids;
    if (kk < k) {
      Vectors full(c.rows(), k);
      full.leftCols(kk) = c;
      for (int j = kk; j < k; ++j) full.col(j) = c.col(0);
      c = std::move(full);
    }
    Codebook cb = make_codebook(std::move(c));
    round_to_float(cb);
    const NearestSearch search(cb.entries);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < residual.cols(); ++i) {
      residual.col(i) -= cb.entries.col(search.nearest(residual.col(i)));
      acc += residual.col(i).squaredNorm();
    }
    if (stage_mse) stage_mse->push_back(acc / static_cast<double>(residual.cols()));
    stack.stages.push_back(std::move(cb));
  }
  return stack;
}

namespace {

std::vector<int> encode_with(const Eigen::Ref<const Eigen::VectorXd>& x, const ResidualStack& stack,
                             std::span<const NearestSearch> searches, int m) {
  if (m < 1 || m > stack.stage_count())
    throw std::invalid_argument("stage count m must be in [1, " + std::to_string(stack.stage_count()) + "]");
  if (x.size() != stack.dim()) throw std::invalid_argument("vector dimension does not match the stack");
  std::vector<int> out(m);
  Eigen::VectorXd r = x;
  for (int s = 0; s < m; ++s) {
    out[s] = searches[s].nearest(r);
    r -= stack.stages[s].entries.col(out[s]);
  }
  return out;
}

std::vector<NearestSearch> build_searches(const ResidualStack& stack) {
  std::vector<NearestSearch> out;
  out.reserve(stack.stages.size());
  for (const auto& s : stack.stages) out.emplace_back(s.entries);
  return out;
}

}  // namespace

std::vector<int> rq_encode(const Eigen::Ref<const Eigen::VectorXd>& x, const ResidualStack& stack, int m) {
  if (m < 1 || m > stack.stage_count())
    throw std::invalid_argument("stage count m must be in [1, " + std::to_string(stack.stage_count()) + "]");
  ResidualStack head;
  head.stages.assign(stack.stages.begin(), stack.stages.begin() + m);
  return encode_with(x, head, build_searches(head), m);
}

Eigen::VectorXd rq_decode(std::span<const int> indices, const ResidualStack& stack) {
  if (static_cast<int>(indices.size()) > stack.stage_count())
    throw std::invalid_argument("more indices than stages");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(stack.dim());
  for (std::size_t s = 0; s < indices.size(); ++s) {
    if (indices[s] < 0 || indices[s] >= stack.stages[s].size())
      throw std::out_of_range("index " + std::to_string(indices[s]) + " out of range for stage " +
                              std::to_string(s));
    out += stack.stages[s].entries.col(indices[s]);
  }
  return out;
}

int select_codebook(const CodebookFamily& family, std::int64_t budget, int width, int height, int d) {
  if (family.empty()) throw std::invalid_argument("codebook family is empty");
  const std::int64_t cells = static_cast<std::int64_t>((width + d - 1) / d) * ((height + d - 1) / d);
  for (auto it = family.by_bpi.rbegin(); it != family.by_bpi.rend(); ++it)
    if (cells * it->first <= budget) return it->first;
  throw std::runtime_error("budget too small: " + std::to_string(budget) + " bits cannot carry " +
                           std::to_string(cells) + " indices at bpi " + std::to_string(family.min_bpi()));
}

int m_stages(std::int64_t budget, std::int64_t per_stage, int m_max) {
  if (per_stage <= 0) throw std::invalid_argument("bits per stage must be positive");
  if (budget <= 0) return 0;
  return static_cast<int>(std::min<std::int64_t>(budget / per_stage, m_max));
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kFileMagic[4] = {'R', 'V', 'Q', '1'};

void put_u16(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_le(std::span<const std::uint8_t> b, std::size_t pos, int n) {
  std::uint32_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> serialize_stages(std::uint8_t kind, const std::vector<const Codebook*>& stages) {
  const Codebook& first = *stages.front();
  std::vector<std::uint8_t> out(kFileMagic, kFileMagic + 4);
  out.push_back(kind);
  out.push_back(static_cast<std::uint8_t>(first.bpi));
  put_u16(out, static_cast<std::uint32_t>(first.dim()));
  put_u16(out, static_cast<std::uint32_t>(stages.size()));
  for (const Codebook* cb : stages)
    for (Eigen::Index e = 0; e < cb->entries.cols(); ++e)
      for (Eigen::Index i = 0; i < cb->entries.rows(); ++i)
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(cb->entries(i, e))));
  return out;
}

std::vector<Codebook> parse_stages(std::span<const std::uint8_t> bytes, std::uint8_t expect_kind) {
  if (bytes.size() < 10 || !std::equal(kFileMagic, kFileMagic + 4, bytes.begin()))
    throw std::runtime_error("not a codebook file (bad magic)");
  const std::uint8_t kind = bytes[4];
  if (kind != expect_kind)
    throw std::runtime_error(kind == 0 ? "expected a residual stack file, found a single codebook"
                                       : "expected a single codebook file, found a residual stack");
  const int bpi = bytes[5];
  const int dim = static_cast<int>(get_le(bytes, 6, 2));
  const int stages = static_cast<int>(get_le(bytes, 8, 2));
  if (bpi > 24 || dim < 1 || stages < 1) throw std::runtime_error("codebook file: bad header");
  const std::size_t entries = std::size_t{1} << bpi;
  if (bytes.size() != 10 + 4 * entries * dim * stages)
    throw std::runtime_error("codebook file: size does not match header");
  std::vector<Codebook> out(stages);
  std::size_t pos = 10;
  for (auto& cb : out) {
    cb.bpi = bpi;
    cb.entries.resize(dim, static_cast<Eigen::Index>(entries));
    for (std::size_t e = 0; e < entries; ++e)
      for (int i = 0; i < dim; ++i, pos += 4)
        cb.entries(i, static_cast<Eigen::Index>(e)) = std::bit_cast<float>(get_le(bytes, pos, 4));
    cb.validate();
  }
  return out;
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace

std::vector<std::uint8_t> serialize_codebook(const Codebook& codebook) {
  codebook.validate();
  return serialize_stages(0, {&codebook});
}

std::vector<std::uint8_t> serialize_stack(const ResidualStack& stack) {
  stack.validate();
  std::vector<const Codebook*> ptrs;
  for (const auto& s : stack.stages) ptrs.push_back(&s);
  return serialize_stages(1, ptrs);
}

Codebook parse_codebook(std::span<const std::uint8_t> bytes) { return parse_stages(bytes, 0).front(); }

ResidualStack parse_stack(std::span<const std::uint8_t> bytes) {
  ResidualStack s;
  s.stages = parse_stages(bytes, 1);
  return s;
}

void save_codebook(const Codebook& codebook, const std::filesystem::path& path) {
  const auto b = serialize_codebook(codebook);
  io::write_file_atomic(path, std::string(b.begin(), b.end()));
}

void save_stack(const ResidualStack& stack, const std::filesystem::path& path) {
  const auto b = serialize_stack(stack);
  io::write_file_atomic(path, std::string(b.begin(), b.end()));
}

Codebook load_codebook(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("codebook file not found: " + path.string());
  return parse_codebook(as_bytes(io::read_file(path)));
}

ResidualStack load_stack(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("residual stack file not found: " + path.string());
  return parse_stack(as_bytes(io::read_file(path)));
}

std::vector<std::uint8_t> TokenPacket::serialize() const {
  if (bpi < 1 || bpi > 32) throw std::invalid_argument("token bpi must be in [1, 32]");
  std::vector<std::uint8_t> out;
  out.push_back(kMagic);
  put_u32(out, image_id);
  out.push_back(static_cast<std::uint8_t>(stage));
  out.push_back(static_cast<std::uint8_t>(bpi));
  put_u32(out, static_cast<std::uint32_t>(indices.size()));
  std::uint64_t acc = 0;
  int nacc = 0;
  for (const auto idx : indices) {
    if (bpi < 32 && (idx >> bpi) != 0) throw std::invalid_argument("token index exceeds bpi bits");
    acc = (acc << bpi) | idx;
    nacc += bpi;
    while (nacc >= 8) {
      out.push_back(static_cast<std::uint8_t>(acc >> (nacc - 8)));
      nacc -= 8;
    }
  }
  if (nacc > 0) out.push_back(static_cast<std::uint8_t>(acc << (8 - nacc)));
  return out;
}

TokenPacket TokenPacket::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw std::runtime_error("token packet: truncated header");
  if (bytes[0] != kMagic) throw std::runtime_error("token packet: bad magic");
  TokenPacket p;
  p.image_id = get_le(bytes, 1, 4);
  p.stage = bytes[5];
  p.bpi = bytes[6];
  const std::size_t count = get_le(bytes, 7, 4);
  if (p.bpi < 1 || p.bpi > 32) throw std::runtime_error("token packet: bad bpi");
  if (bytes.size() != kHeaderBytes + (count * p.bpi + 7) / 8)
    throw std::runtime_error("token packet: payload length does not match cell count");
  p.indices.resize(count);
  std::size_t bit = 8 * kHeaderBytes;
  for (auto& idx : p.indices) {
    std::uint32_t v = 0;
    for (int i = 0; i < p.bpi; ++i, ++bit) v = (v << 1) | ((bytes[bit / 8] >> (7 - bit % 8)) & 1u);
    idx = v;
  }
  return p;
}

RvqCodec::RvqCodec(ResidualStack stack, std::optional<Projector> projector, int d)
    : stack_(std::move(stack)), projector_(std::move(projector)), d_(d) {
  stack_.validate();
  const int in_dim = 3 * d * d;
  if (projector_) {
    if (projector_->in_dim() != in_dim) throw std::invalid_argument("projector input does not match patch size");
    if (projector_->out_dim() != stack_.dim()) throw std::invalid_argument("projector output does not match stack");
  } else if (stack_.dim() != in_dim) {
    throw std::invalid_argument("stack dimension does not match patch size");
  }
}

TokenMap RvqCodec::encode(const ImageBuffer& image, int m) const {
  const PatchGrid grid = extract_patches(image, d_);
  const Vectors z = projector_ ? projector_->project(grid.vectors) : grid.vectors;
  const auto searches = build_searches(stack_);
  TokenMap t;
  t.bpi = stack_.bpi();
  t.stages.assign(m, std::vector<std::uint32_t>(grid.cells()));
  for (int cell = 0; cell < grid.cells(); ++cell) {
    const auto idx = encode_with(z.col(cell), stack_, searches, m);
    for (int s = 0; s < m; ++s) t.stages[s][cell] = static_cast<std::uint32_t>(idx[s]);
  }
  return t;
}

ImageBuffer RvqCodec::decode(const TokenMap& tokens, int m, int width, int height) const {
  if (m < 0 || m > static_cast<int>(tokens.stages.size()) || m > stack_.stage_count())
    throw std::invalid_argument("cannot decode " + std::to_string(m) + " stages");
  PatchGrid grid;
  grid.patch = d_;
  grid.rows = (height + d_ - 1) / d_;
  grid.cols = (width + d_ - 1) / d_;
  Vectors z = Vectors::Zero(stack_.dim(), grid.cells());
  for (int s = 0; s < m; ++s) {
    if (static_cast<int>(tokens.stages[s].size()) != grid.cells())
      throw std::invalid_argument("token map does not match the image geometry");
    const auto& entries = stack_.stages[s].entries;
    for (int cell = 0; cell < grid.cells(); ++cell) {
      const auto idx = tokens.stages[s][cell];
      if (idx >= static_cast<std::uint32_t>(entries.cols()))
        throw std::out_of_range("token index out of range");
      z.col(cell) += entries.col(idx);
    }
  }
  grid.vectors = projector_ ? projector_->back_project(z) : z;
  return assemble_patches(grid, width, height);
}

std::vector<TokenPacket> RvqCodec::packetize(const TokenMap& tokens, std::uint32_t image_id) const {
  std::vector<TokenPacket> out;
  for (std::size_t s = 0; s < tokens.stages.size(); ++s)
    out.push_back({image_id, static_cast<int>(s), tokens.bpi, tokens.stages[s]});
  return out;
}

TokenMap RvqCodec::depacketize(std::span<const TokenPacket> packets) const {
  TokenMap t;
  t.bpi = stack_.bpi();
  for (std::size_t i = 0; i < packets.size(); ++i) {
    const auto& p = packets[i];
    if (p.stage != static_cast<int>(i)) throw std::runtime_error("token packets out of stage order");
    if (p.bpi != t.bpi) throw std::runtime_error("token packet bpi does not match the stack");
    if (p.image_id != packets.front().image_id) throw std::runtime_error("token packets from different images");
    if (!t.stages.empty() && p.indices.size() != t.stages.front().size())
      throw std::runtime_error("token packets differ in cell count");
    t.stages.push_back(p.indices);
  }
  return t;
}

}  // namespace progtx::rvq
