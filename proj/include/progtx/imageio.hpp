#pragma once

#include "progtx/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace progtx::io {

/// Reads a binary P6 portable pixmap with maxval 255.
ImageBuffer load_ppm(const std::filesystem::path& path);

/// Writes a binary P6 portable pixmap.
void save_ppm(const ImageBuffer& image, const std::filesystem::path& path);

enum class Split { calibration, evaluation };

const char* to_string(Split split);
Split split_from_string(const std::string& s);

struct CorpusEntry {
  std::string name;
  std::filesystem::path path;
  Split split = Split::evaluation;
};

/// Named image list with calibration/evaluation tags. Entries are kept
/// sorted by name; names are unique, which makes the splits disjoint.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<CorpusEntry> entries);

  /// Manifest is a JSON array of {name, path, split}; relative paths are
  /// resolved against the manifest's directory.
  static Corpus load_manifest(const std::filesystem::path& manifest);
  void save_manifest(const std::filesystem::path& manifest) const;

  const std::vector<CorpusEntry>& entries() const { return entries_; }
  std::vector<CorpusEntry> split(Split which) const;
  std::vector<ImageBuffer> load(Split which) const;

 private:
  std::vector<CorpusEntry> entries_;
};

/// Procedural stand-in for natural photographs: multi-octave 1/f value noise
/// with correlated chroma, overlaid with hard-edged shapes and fine grain.
ImageBuffer synth_image(int width, int height, std::uint64_t seed);

/// Writes `n_calibration + n_evaluation` synthetic images plus manifest.json
/// into `dir` and returns the corpus.
Corpus write_synthetic_corpus(const std::filesystem::path& dir, int n_calibration,
                              int n_evaluation, int width, int height, std::uint64_t seed);

/// Atomically replaces `path` with `bytes` (write to a sibling temp file, then
/// rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

std::string read_file(const std::filesystem::path& path);

}  // namespace progtx::io
