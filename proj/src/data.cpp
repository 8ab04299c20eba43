#include "zsalign/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "zsalign/io.hpp"
#include "zsalign/rng.hpp"

namespace zsalign {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr double kNormTol = 1e-6;

// Ingestion normalization. Rows already unit-norm within 1e-6 are left
// bit-untouched so that load -> save round-trips exactly.
void ingest_row(std::span<double> row, const std::string& what) {
  double sq = 0.0;
  for (double x : row) {
    if (!std::isfinite(x)) {
      throw ValidationError("non-finite value in " + what);
    }
    sq += x * x;
  }
  const double n = std::sqrt(sq);
  if (n == 0.0) throw ValidationError("zero-norm vector in " + what);
  if (std::fabs(n - 1.0) > kNormTol) {
    for (double& x : row) x /= n;
  }
}

Matrix matrix_from_f32(const std::vector<float>& raw, std::size_t rows,
                       std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    m.data[i] = static_cast<double>(raw[i]);
  }
  return m;
}

std::vector<float> matrix_to_f32(const Matrix& m) {
  std::vector<float> out(m.data.size());
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    out[i] = static_cast<float>(m.data[i]);
  }
  return out;
}

json parse_manifest(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("manifest " + path.string() + ": " + e.what());
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1) {
    throw ValidationError("manifest " + path.string() +
                          ": unsupported format_version");
  }
  if (j.value("dtype", "") != "f32le") {
    throw ValidationError("manifest " + path.string() +
                          ": dtype must be \"f32le\"");
  }
  return j;
}

std::string class_tag(int id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", id);
  return buf;
}

}  // namespace

std::size_t SemanticCodebook::index_of(int class_id) const {
  auto it = index_.find(class_id);
  if (it == index_.end()) {
    throw ValidationError("unknown class_id " + std::to_string(class_id));
  }
  return it->second;
}

std::vector<int> SemanticCodebook::class_ids() const {
  std::vector<int> ids;
  ids.reserve(classes.size());
  for (const auto& c : classes) ids.push_back(c.id);
  return ids;
}

void SemanticCodebook::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (!index_.emplace(classes[i].id, i).second) {
      throw ValidationError("duplicate class_id " +
                            std::to_string(classes[i].id));
    }
  }
  reads_.assign(classes.size(), 0);
}

SyntheticWorld gen_synthetic_world(const SyntheticWorldConfig& cfg) {
  if (cfg.n_classes < 2 || cfg.n_unseen < 1 || cfg.n_unseen >= cfg.n_classes) {
    throw ValidationError("synthetic world: need 1 <= n_unseen < n_classes");
  }
  if (cfg.visual_noise < 0.0 || cfg.description_spread < 0.0) {
    throw ValidationError("synthetic world: noise/spread must be >= 0");
  }
  if (2 * cfg.ambiguity_pairs > cfg.n_classes) {
    throw ValidationError("synthetic world: too many ambiguity pairs");
  }
  if (cfg.visual_dim < 1 || cfg.semantic_dim < 1 || cfg.n_descriptions < 1 ||
      cfg.samples_per_class < 1) {
    throw ValidationError("synthetic world: dims and counts must be >= 1");
  }

  const int L = kWorldLatentDim;
  const double inv_sqrt_l = 1.0 / std::sqrt(static_cast<double>(L));
  Rng rng(cfg.seed);

  auto draw_matrix = [&](std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& x : m.data) x = rng.gaussian();
    return m;
  };
  auto draw_latent = [&](double scale) {
    Vec v(static_cast<std::size_t>(L));
    for (double& x : v) x = scale * inv_sqrt_l * rng.gaussian();
    return v;
  };

  // Fixed draw order: maps, prototypes, then per class descriptions, motion,
  // samples. Changing this order changes every seeded world.
  const Matrix map_visual = draw_matrix(cfg.visual_dim, L);
  const Matrix map_semantic = draw_matrix(cfg.semantic_dim, L);
  const Matrix map_motion = draw_matrix(cfg.semantic_dim, L);

  // Class similarity is opt-in via ambiguity_pairs; independently drawn
  // prototypes are rejected until they keep a minimum angular separation
  // from every earlier one (pair members excepted, they share a base).
  std::vector<Vec> prototypes(static_cast<std::size_t>(cfg.n_classes));
  std::vector<Vec> bases;
  auto well_separated = [&](const Vec& cand) {
    for (const Vec& prev : bases) {
      if (std::fabs(cosine(cand, prev)) > 0.55) return false;
    }
    return true;
  };
  auto draw_base = [&]() {
    Vec cand = draw_latent(1.0);
    for (int tries = 0; tries < 4096 && !well_separated(cand); ++tries) {
      cand = draw_latent(1.0);
    }
    bases.push_back(cand);
    return cand;
  };
  for (int p = 0; p < cfg.ambiguity_pairs; ++p) {
    const Vec base = draw_base();
    for (int side = 0; side < 2; ++side) {
      Vec offset = l2_normalized(draw_latent(1.0));
      Vec proto = base;
      for (int i = 0; i < L; ++i) {
        proto[static_cast<std::size_t>(i)] +=
            kAmbiguityOffset * offset[static_cast<std::size_t>(i)];
      }
      prototypes[static_cast<std::size_t>(2 * p + side)] = proto;
    }
  }
  for (int c = 2 * cfg.ambiguity_pairs; c < cfg.n_classes; ++c) {
    prototypes[static_cast<std::size_t>(c)] = draw_base();
  }

  auto map_apply = [](const Matrix& m, const Vec& x) {
    Vec out(m.rows);
    matvec(m, x, out);
    return out;
  };


  SyntheticWorld world;
  world.codebook.semantic_dim = cfg.semantic_dim;

  const std::size_t n_samples = static_cast<std::size_t>(cfg.n_classes) *
                                static_cast<std::size_t>(cfg.samples_per_class);
  world.embeddings.visual_dim = cfg.visual_dim;
  world.embeddings.features =
      Matrix(n_samples, static_cast<std::size_t>(cfg.visual_dim));
  world.embeddings.sample_ids.reserve(n_samples);
  world.embeddings.class_ids.reserve(n_samples);

  // Every class carries a few latent facets: samples and description rows
  // are drawn per facet, so the description set has query-relevant variety
  // for top-k attention to exploit. Ambiguous twins share a prototype up to
  // the pair offset; their facet profiles are what tells them apart at a
  // fine grain, while row averages collapse toward the shared prototype.
  std::size_t row = 0;
  for (int c = 0; c < cfg.n_classes; ++c) {
    const Vec& proto = prototypes[static_cast<std::size_t>(c)];

    std::vector<Vec> facets(static_cast<std::size_t>(kFacetsPerClass));
    for (auto& f : facets) {
      f = draw_latent(kFacetScale);
    }
    auto facet_latent = [&](int index, double noise_scale) {
      Vec latent = proto;
      const Vec& f = facets[static_cast<std::size_t>(index % kFacetsPerClass)];
      const Vec noise = draw_latent(noise_scale);
      for (int i = 0; i < L; ++i) {
        latent[static_cast<std::size_t>(i)] +=
            f[static_cast<std::size_t>(i)] + noise[static_cast<std::size_t>(i)];
      }
      return latent;
    };

    CodebookClass entry;
    entry.id = c;
    entry.name = "class_" + class_tag(c);
    entry.descriptions = Matrix(static_cast<std::size_t>(cfg.n_descriptions),
                                static_cast<std::size_t>(cfg.semantic_dim));
    for (int d = 0; d < cfg.n_descriptions; ++d) {
      const Vec mapped = l2_normalized(
          map_apply(map_semantic, facet_latent(d, cfg.description_spread)));
      std::copy(mapped.begin(), mapped.end(),
                entry.descriptions.row(static_cast<std::size_t>(d)).begin());
    }
    if (cfg.with_motion) {
      entry.motion = l2_normalized(map_apply(map_motion, proto));
    }
    world.codebook.classes.push_back(std::move(entry));

    for (int s = 0; s < cfg.samples_per_class; ++s) {
      const Vec mapped = l2_normalized(
          map_apply(map_visual, facet_latent(s, cfg.visual_noise)));
      std::copy(mapped.begin(), mapped.end(), world.embeddings.features.row(row).begin());
      char buf[24];
      std::snprintf(buf, sizeof(buf), "s%06zu", row);
      world.embeddings.sample_ids.emplace_back(buf);
      world.embeddings.class_ids.push_back(c);
      ++row;
    }
  }
  world.embeddings.init_audit();
  world.codebook.rebuild_index();

  // Nearest-class-mean oracle over the generated samples.
  Matrix means(static_cast<std::size_t>(cfg.n_classes),
               static_cast<std::size_t>(cfg.visual_dim));
  std::vector<std::size_t> counts(static_cast<std::size_t>(cfg.n_classes), 0);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto u = world.embeddings.raw_features().row(i);
    const auto c = static_cast<std::size_t>(world.embeddings.class_ids[i]);
    for (std::size_t d = 0; d < u.size(); ++d) means.at(c, d) += u[d];
    ++counts[c];
  }
  for (std::size_t c = 0; c < means.rows; ++c) {
    for (std::size_t d = 0; d < means.cols; ++d) {
      means.at(c, d) /= static_cast<double>(counts[c]);
    }
  }
  std::vector<std::size_t> correct(static_cast<std::size_t>(cfg.n_classes), 0);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto u = world.embeddings.raw_features().row(i);
    int best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int c = 0; c < cfg.n_classes; ++c) {
      double d2 = 0.0;
      const auto m = means.row(static_cast<std::size_t>(c));
      for (std::size_t d = 0; d < u.size(); ++d) {
        const double diff = u[d] - m[d];
        d2 += diff * diff;
      }
      if (d2 < best_d2) {
        best_d2 = d2;
        best = c;
      }
    }
    if (best == world.embeddings.class_ids[i]) {
      ++correct[static_cast<std::size_t>(best)];
    }
  }
  std::size_t total_correct = 0;
  world.oracle.per_class_accuracy.resize(static_cast<std::size_t>(cfg.n_classes));
  for (int c = 0; c < cfg.n_classes; ++c) {
    total_correct += correct[static_cast<std::size_t>(c)];
    world.oracle.per_class_accuracy[static_cast<std::size_t>(c)] =
        static_cast<double>(correct[static_cast<std::size_t>(c)]) /
        static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  world.oracle.accuracy =
      static_cast<double>(total_correct) / static_cast<double>(n_samples);
  return world;
}

SplitSpec make_tri_splits(const std::vector<int>& class_ids, int n_unseen,
                          std::uint64_t seed) {
  std::vector<int> ids = class_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (n_unseen < 1 || static_cast<std::size_t>(n_unseen) >= ids.size()) {
    throw ValidationError("make_tri_splits: need 1 <= n_unseen < n_classes");
  }
  Rng rng(seed);
  SplitSpec spec;
  spec.seed = seed;
  const std::size_t n = static_cast<std::size_t>(n_unseen);
  if (3 * n <= ids.size()) {
    std::vector<int> shuffled = ids;
    rng.shuffle(shuffled);
    for (int f = 0; f < 3; ++f) {
      SplitFold fold;
      fold.unseen.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(f * n),
                         shuffled.begin() + static_cast<std::ptrdiff_t>((f + 1) * n));
      std::sort(fold.unseen.begin(), fold.unseen.end());
      for (int id : ids) {
        if (!std::binary_search(fold.unseen.begin(), fold.unseen.end(), id)) {
          fold.seen.push_back(id);
        }
      }
      spec.folds.push_back(std::move(fold));
    }
  } else {
    for (int f = 0; f < 3; ++f) {
      std::vector<int> shuffled = ids;
      rng.shuffle(shuffled);
      SplitFold fold;
      fold.unseen.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n));
      std::sort(fold.unseen.begin(), fold.unseen.end());
      for (int id : ids) {
        if (!std::binary_search(fold.unseen.begin(), fold.unseen.end(), id)) {
          fold.seen.push_back(id);
        }
      }
      spec.folds.push_back(std::move(fold));
    }
  }
  return spec;
}

EmbeddingSet load_embedding_set(const std::filesystem::path& manifest_path) {
  const json j = parse_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();

  EmbeddingSet set;
  set.visual_dim = j.at("visual_dim").get<int>();
  if (set.visual_dim < 1) throw ValidationError("visual_dim must be >= 1");
  const auto n_samples = j.at("n_samples").get<std::size_t>();

  std::set<int> known_classes;
  for (const auto& c : j.at("classes")) {
    known_classes.insert(c.at("id").get<int>());
  }

  const auto raw = read_f32_blob(dir / j.at("embeddings_file").get<std::string>(),
                                 n_samples * static_cast<std::size_t>(set.visual_dim));
  set.features = matrix_from_f32(raw, n_samples, static_cast<std::size_t>(set.visual_dim));

  // labels.csv: one "sample_id,class_id" row per sample, ordered as the blob.
  std::ifstream labels(dir / j.at("labels_file").get<std::string>());
  if (!labels) throw ValidationError("cannot open labels file");
  std::string line;
  std::getline(labels, line);  // header
  std::set<std::string> seen_ids;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw ValidationError("labels row without comma: " + line);
    }
    std::string sid = line.substr(0, comma);
    const int cid = std::stoi(line.substr(comma + 1));
    if (!seen_ids.insert(sid).second) {
      throw ValidationError("duplicate sample_id " + sid);
    }
    if (known_classes.find(cid) == known_classes.end()) {
      throw ValidationError("sample " + sid + ": unknown class_id " +
                            std::to_string(cid));
    }
    set.sample_ids.push_back(std::move(sid));
    set.class_ids.push_back(cid);
  }
  if (set.sample_ids.size() != n_samples) {
    throw ValidationError("labels file row count does not match n_samples");
  }
  for (std::size_t i = 0; i < n_samples; ++i) {
    ingest_row(set.features.row(i), "sample " + set.sample_ids[i]);
  }
  set.init_audit();
  return set;
}

SemanticCodebook load_codebook(const std::filesystem::path& manifest_path) {
  const json j = parse_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();

  SemanticCodebook book;
  book.semantic_dim = j.at("semantic_dim").get<int>();
  if (book.semantic_dim < 1) throw ValidationError("semantic_dim must be >= 1");
  const auto ce = static_cast<std::size_t>(book.semantic_dim);

  for (const auto& cj : j.at("classes")) {
    CodebookClass entry;
    entry.id = cj.at("id").get<int>();
    entry.name = cj.at("name").get<std::string>();
    if (entry.name.empty()) {
      throw ValidationError("class " + std::to_string(entry.id) +
                            ": missing class name");
    }
    const auto n_desc = cj.at("n_descriptions").get<std::size_t>();
    if (n_desc < 1) {
      throw ValidationError("class " + entry.name +
                            ": needs at least one description");
    }
    const auto desc_path = dir / cj.at("descriptions_file").get<std::string>();
    std::vector<float> raw;
    try {
      raw = read_f32_blob(desc_path, n_desc * ce);
    } catch (const ValidationError& e) {
      throw ValidationError("class " + entry.name +
                            ": ragged or missing descriptions (" + e.what() + ")");
    }
    entry.descriptions = matrix_from_f32(raw, n_desc, ce);
    for (std::size_t r = 0; r < n_desc; ++r) {
      ingest_row(entry.descriptions.row(r),
                 "class " + entry.name + " description " + std::to_string(r));
    }
    if (cj.contains("motion_file")) {
      const auto m_raw = read_f32_blob(dir / cj.at("motion_file").get<std::string>(), ce);
      Vec m(m_raw.begin(), m_raw.end());
      ingest_row(m, "class " + entry.name + " motion");
      entry.motion = std::move(m);
    }
    book.classes.push_back(std::move(entry));
  }
  std::sort(book.classes.begin(), book.classes.end(),
            [](const CodebookClass& a, const CodebookClass& b) { return a.id < b.id; });
  book.rebuild_index();
  return book;
}

SplitSpec load_splits(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("splits " + path.string() + ": " + e.what());
  }
  SplitSpec spec;
  spec.seed = j.value("seed", std::uint64_t{0});
  for (const auto& fj : j.at("folds")) {
    SplitFold fold;
    fold.seen = fj.at("seen").get<std::vector<int>>();
    fold.unseen = fj.at("unseen").get<std::vector<int>>();
    std::set<int> seen_set(fold.seen.begin(), fold.seen.end());
    for (int u : fold.unseen) {
      if (seen_set.count(u)) {
        throw ValidationError("splits: class " + std::to_string(u) +
                              " is both seen and unseen");
      }
    }
    if (fold.unseen.empty()) throw ValidationError("splits: empty unseen set");
    spec.folds.push_back(std::move(fold));
  }
  return spec;
}

void save_splits(const std::filesystem::path& path, const SplitSpec& splits) {
  ordered_json j;
  j["seed"] = splits.seed;
  j["folds"] = ordered_json::array();
  for (const auto& fold : splits.folds) {
    ordered_json fj;
    fj["seen"] = fold.seen;
    fj["unseen"] = fold.unseen;
    j["folds"].push_back(fj);
  }
  write_text_file(path, j.dump(2) + "\n");
}

void save_world(const std::filesystem::path& dir, const EmbeddingSet& set,
                const SemanticCodebook& codebook) {
  std::filesystem::create_directories(dir);
  ordered_json manifest;
  manifest["format_version"] = 1;
  manifest["semantic_dim"] = codebook.semantic_dim;
  manifest["visual_dim"] = set.visual_dim;
  manifest["classes"] = ordered_json::array();
  for (const auto& cls : codebook.classes) {
    const std::string tag = class_tag(cls.id);
    ordered_json cj;
    cj["id"] = cls.id;
    cj["name"] = cls.name;
    cj["descriptions_file"] = "class_" + tag + "_desc.f32";
    cj["n_descriptions"] = cls.descriptions.rows;
    write_f32_blob(dir / ("class_" + tag + "_desc.f32"),
                   matrix_to_f32(cls.descriptions));
    if (cls.motion) {
      cj["motion_file"] = "class_" + tag + "_motion.f32";
      std::vector<float> m(cls.motion->size());
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = static_cast<float>((*cls.motion)[i]);
      }
      write_f32_blob(dir / ("class_" + tag + "_motion.f32"), m);
    }
    manifest["classes"].push_back(cj);
  }
  manifest["embeddings_file"] = "embeddings.f32";
  manifest["labels_file"] = "labels.csv";
  manifest["n_samples"] = set.size();
  manifest["dtype"] = "f32le";
  write_f32_blob(dir / "embeddings.f32", matrix_to_f32(set.raw_features()));

  std::ostringstream labels;
  labels << "sample_id,class_id\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    labels << set.sample_ids[i] << ',' << set.class_ids[i] << '\n';
  }
  write_text_file(dir / "labels.csv", labels.str());
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

void save_oracle_report(const std::filesystem::path& path,
                        const WorldOracleReport& report) {
  ordered_json j;
  j["nearest_mean_accuracy"] = report.accuracy;
  j["per_class_accuracy"] = report.per_class_accuracy;
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace zsalign
