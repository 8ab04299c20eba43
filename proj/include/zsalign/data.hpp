#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "zsalign/numeric.hpp"

namespace zsalign {

// Labeled visual feature vectors. Rows are unit-norm after ingestion.
//
// Access for scoring/training must go through sample(), which bumps a
// per-sample read counter; the zero-shot hygiene check asserts that
// unseen-class rows were never fetched during training. Counters are not
// thread-safe in general; parallel kernels may bump sample counters only
// from the iteration that owns the sample.
class EmbeddingSet {
 public:
  int visual_dim = 0;
  std::vector<std::string> sample_ids;
  std::vector<int> class_ids;
  Matrix features;  // n_samples x visual_dim

  std::size_t size() const { return sample_ids.size(); }

  std::span<const double> sample(std::size_t i) const {
    ++reads_[i];
    return features.row(i);
  }
  int class_of(std::size_t i) const { return class_ids[i]; }

  void reset_audit() const { reads_.assign(size(), 0); }
  std::uint64_t reads_of(std::size_t i) const { return reads_[i]; }

  // Serialization-only access; does not count as a data read.
  const Matrix& raw_features() const { return features; }

  void init_audit() { reads_.assign(size(), 0); }

 private:
  mutable std::vector<std::uint64_t> reads_;
};

struct CodebookClass {
  int id = 0;
  std::string name;
  Matrix descriptions;        // n_descriptions x semantic_dim, rows unit-norm
  std::optional<Vec> motion;  // unit-norm when present
};

// Per-class description matrices plus optional motion vectors.
class SemanticCodebook {
 public:
  int semantic_dim = 0;
  std::vector<CodebookClass> classes;  // sorted by id

  const CodebookClass& cls(int class_id) const {
    const std::size_t idx = index_of(class_id);
    ++reads_[idx];
    return classes[idx];
  }
  bool has_class(int class_id) const {
    return index_.find(class_id) != index_.end();
  }
  std::size_t index_of(int class_id) const;
  std::vector<int> class_ids() const;

  void reset_audit() const { reads_.assign(classes.size(), 0); }
  std::uint64_t reads_of_class(int class_id) const {
    return reads_[index_of(class_id)];
  }

  const CodebookClass& raw_class(std::size_t idx) const { return classes[idx]; }

  void rebuild_index();

 private:
  std::unordered_map<int, std::size_t> index_;
  mutable std::vector<std::uint64_t> reads_;
};

struct SplitFold {
  std::vector<int> seen;
  std::vector<int> unseen;
};

struct SplitSpec {
  std::vector<SplitFold> folds;
  std::uint64_t seed = 0;
};

struct SyntheticWorldConfig {
  int n_classes = 10;
  int n_unseen = 2;
  int visual_dim = 16;
  int semantic_dim = 24;
  int n_descriptions = 20;
  int samples_per_class = 40;
  double visual_noise = 0.1;
  double description_spread = 0.3;
  int ambiguity_pairs = 0;
  bool with_motion = true;
  std::uint64_t seed = 0;
};

// Brute-force nearest-class-mean accuracy over the generated samples.
struct WorldOracleReport {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;  // indexed by class id
};

struct SyntheticWorld {
  EmbeddingSet embeddings;
  SemanticCodebook codebook;
  WorldOracleReport oracle;
};

// Latent-space dimensionality and ambiguous-pair prototype offset used by
// the generator. Fixed constants: worlds are fully described by
// SyntheticWorldConfig. The latent space is kept small so that unseen-class
// prototypes stay inside the span of a handful of seen classes; zero-shot
// transfer is impossible otherwise.
inline constexpr int kWorldLatentDim = 6;
inline constexpr double kAmbiguityOffset = 0.25;
inline constexpr int kFacetsPerClass = 4;
inline constexpr double kFacetScale = 0.4;

SyntheticWorld gen_synthetic_world(const SyntheticWorldConfig& cfg);

// Three seen/unseen folds over `class_ids`. Unseen sets are disjoint across
// folds when 3*n_unseen <= |class_ids|, otherwise sampled independently.
SplitSpec make_tri_splits(const std::vector<int>& class_ids, int n_unseen,
                          std::uint64_t seed);

EmbeddingSet load_embedding_set(const std::filesystem::path& manifest_path);
SemanticCodebook load_codebook(const std::filesystem::path& manifest_path);
SplitSpec load_splits(const std::filesystem::path& path);
void save_splits(const std::filesystem::path& path, const SplitSpec& splits);

// Writes manifest.json, labels.csv and the f32le blobs into `dir`.
void save_world(const std::filesystem::path& dir, const EmbeddingSet& set,
                const SemanticCodebook& codebook);

void save_oracle_report(const std::filesystem::path& path,
                        const WorldOracleReport& report);

}  // namespace zsalign
