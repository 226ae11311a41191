#pragma once

#include "progtx/image.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace progtx::rvq {

/// Vectors are stored as the columns of a dim x n matrix.
using Vectors = Eigen::MatrixXd;

inline constexpr int kPatch = 8;

/// Patch vectors of one image. Cell (r, c) is column r * cols + c; each
/// vector lists samples plane-major, then row, then column.
struct PatchGrid {
  int patch = kPatch;
  int rows = 0;
  int cols = 0;
  Vectors vectors;

  int cells() const { return rows * cols; }
};

/// Edge-pads to whole patches and splits into non-overlapping d x d patches.
PatchGrid extract_patches(const ImageBuffer& image, int d = kPatch);

/// Inverse of extract_patches: samples rounded and clamped to [0, 255], then
/// cropped to `width` x `height` (pass the grid extent to skip cropping).
ImageBuffer assemble_patches(const PatchGrid& grid, int width, int height);
ImageBuffer assemble_patches(const PatchGrid& grid);

/// Overlapping d x d patches at every `stride`-th offset, for training.
Vectors training_patches(const ImageBuffer& image, int d, int stride);

/// Orthonormal linear projection with centering.
struct Projector {
  Eigen::MatrixXd rows;  // out_dim x in_dim
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // variance captured by each row

  int in_dim() const { return static_cast<int>(rows.cols()); }
  int out_dim() const { return static_cast<int>(rows.rows()); }

  Vectors project(const Vectors& x) const;
  Vectors back_project(const Vectors& z) const;

  std::string to_json() const;
  static Projector from_json(const std::string& text);
};

/// Top principal directions by power iteration with deflation; rows are
/// ordered by captured variance, largest first.
Projector fit_projector(const Vectors& corpus, int out_dim);

/// Exact nearest-neighbour search under squared Euclidean distance; ties go to
/// the lowest entry index. Candidates are visited in order of their distance
/// along the coordinate where entries spread most, which allows early exit.
class NearestSearch {
 public:
  explicit NearestSearch(const Vectors& entries);

  int nearest(const Eigen::Ref<const Eigen::VectorXd>& x, double* dist2 = nullptr) const;

 private:
  Vectors sorted_;  // entries reordered by key
  int axis_ = 0;
  std::vector<double> keys_;
  std::vector<int> ids_;
};

double squared_distance(const Eigen::Ref<const Eigen::VectorXd>& a,
                        const Eigen::Ref<const Eigen::VectorXd>& b);

struct KMeansResult {
  Vectors centroids;
  std::vector<int> assignment;
  std::vector<double> objective;  // after each assignment step
  int iterations = 0;
};

/// Number of distinct columns.
std::size_t count_distinct(const Vectors& vectors);

/// k-means++ seeding followed by Lloyd iterations until the largest centroid
/// move is below 1e-6 or `max_iters` is reached.
KMeansResult train_kmeans(const Vectors& vectors, int k, int max_iters, std::uint64_t seed);

/// 2^bpi entries, each a column.
struct Codebook {
  int bpi = 0;
  Vectors entries;

  int dim() const { return static_cast<int>(entries.rows()); }
  int size() const { return static_cast<int>(entries.cols()); }
  void validate() const;
};

/// Wraps k-means centroids; throws unless the count is a power of two.
Codebook make_codebook(Vectors centroids);

/// Rounds entries to single precision (the on-disk format).
void round_to_float(Codebook& codebook);

/// k-means over the entries of `large` down to 2^bpi centroids.
Codebook cluster_codebook(const Codebook& large, int bpi, std::uint64_t seed, int max_iters = 100);

/// Single codebooks keyed by contiguous bpi.
struct CodebookFamily {
  std::map<int, Codebook> by_bpi;

  bool empty() const { return by_bpi.empty(); }
  int min_bpi() const { return by_bpi.begin()->first; }
  int max_bpi() const { return by_bpi.rbegin()->first; }
  void validate() const;
};

struct ResidualStack {
  std::vector<Codebook> stages;

  int stage_count() const { return static_cast<int>(stages.size()); }
  int bpi() const { return stages.front().bpi; }
  int dim() const { return stages.front().dim(); }
  void validate() const;
};

/// Stage i is trained on the residuals left by stages 1..i-1. When a stage's
/// residuals have fewer than 2^bpi distinct values, the codebook is filled
/// up by repeating its first centroid. `stage_mse`, if given, receives the
/// corpus mean squared residual norm after each stage.
ResidualStack train_residual_stack(const Vectors& corpus, int m, int bpi, std::uint64_t seed,
                                   int max_iters = 100, std::vector<double>* stage_mse = nullptr);

/// Greedy residual encoding with the first m stages.
std::vector<int> rq_encode(const Eigen::Ref<const Eigen::VectorXd>& x, const ResidualStack& stack, int m);

/// Sum of the selected codewords of the leading stages.
Eigen::VectorXd rq_decode(std::span<const int> indices, const ResidualStack& stack);

/// Largest bpi whose token map fits in the budget.
int select_codebook(const CodebookFamily& family, std::int64_t n_bits_budget, int width, int height,
                    int d = kPatch);

/// min(floor(budget / per_stage), m_max).
int m_stages(std::int64_t n_bits_budget, std::int64_t n_bits_per_stage, int m_max);

// ---------------------------------------------------------------------------
// Serialization

/// Codebook file: "RVQ1", u8 kind (0 single, 1 stack), u8 bpi, u16 dim,
/// u16 stage_count, then f32 entries stage-major, entry-major (LE).
std::vector<std::uint8_t> serialize_codebook(const Codebook& codebook);
std::vector<std::uint8_t> serialize_stack(const ResidualStack& stack);
Codebook parse_codebook(std::span<const std::uint8_t> bytes);
ResidualStack parse_stack(std::span<const std::uint8_t> bytes);

void save_codebook(const Codebook& codebook, const std::filesystem::path& path);
void save_stack(const ResidualStack& stack, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);
ResidualStack load_stack(const std::filesystem::path& path);

/// Indices of one stage for every cell of an image.
///
/// Wire layout: 0x54, image_id u32 LE, stage u8, bpi u8, cell_count u32 LE,
/// then the indices packed MSB-first at bpi bits each.
struct TokenPacket {
  static constexpr std::uint8_t kMagic = 0x54;
  static constexpr std::size_t kHeaderBytes = 11;

  std::uint32_t image_id = 0;
  int stage = 0;
  int bpi = 0;
  std::vector<std::uint32_t> indices;

  std::vector<std::uint8_t> serialize() const;
  static TokenPacket parse(std::span<const std::uint8_t> bytes);
  std::int64_t bit_size() const {
    return 8 * static_cast<std::int64_t>(kHeaderBytes + (indices.size() * bpi + 7) / 8);
  }
};

/// Per-cell index lists: stages[s][cell].
struct TokenMap {
  int bpi = 0;
  std::vector<std::vector<std::uint32_t>> stages;
};

/// Patch codec: optional projection, then residual quantization.
class RvqCodec {
 public:
  RvqCodec(ResidualStack stack, std::optional<Projector> projector, int d = kPatch);

  const ResidualStack& stack() const { return stack_; }
  const std::optional<Projector>& projector() const { return projector_; }
  int patch() const { return d_; }

  TokenMap encode(const ImageBuffer& image, int m) const;
  /// Decodes the first `m` stages of `tokens` (m <= stage count of tokens).
  ImageBuffer decode(const TokenMap& tokens, int m, int width, int height) const;

  std::vector<TokenPacket> packetize(const TokenMap& tokens, std::uint32_t image_id) const;
  TokenMap depacketize(std::span<const TokenPacket> packets) const;

 private:
  ResidualStack stack_;
  std::optional<Projector> projector_;
  int d_;
};

}  // namespace progtx::rvq
