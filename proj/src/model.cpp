#include "zsalign/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include "json.hpp"
#include "zsalign/gradients.hpp"
#include "zsalign/io.hpp"
#include "zsalign/rng.hpp"
#include "zsalign/version.hpp"

namespace zsalign {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ParamBlock block(const char* name, Vec& v) {
  return {name, v.data(), v.size()};
}
ParamBlock block(const char* name, Matrix& m) {
  return {name, m.data.data(), m.data.size()};
}

double uniform_symmetric(Rng& rng, double bound) {
  return (2.0 * rng.uniform() - 1.0) * bound;
}

void init_fan_in(Rng& rng, Matrix& w, Vec& b, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& x : w.data) x = uniform_symmetric(rng, bound);
  for (double& x : b) x = uniform_symmetric(rng, bound);
}

}  // namespace

const char* agg_mode_name(AggMode m) {
  switch (m) {
    case AggMode::kTopK: return "topk";
    case AggMode::kFullAttention: return "att";
    case AggMode::kUniformAverage: return "avg";
  }
  return "topk";
}

AggMode agg_mode_from_name(const std::string& name) {
  if (name == "topk") return AggMode::kTopK;
  if (name == "att") return AggMode::kFullAttention;
  if (name == "avg") return AggMode::kUniformAverage;
  throw ValidationError("unknown aggregation mode: " + name);
}

std::vector<ParamBlock> BranchParams::blocks() {
  return {
      block("proj.w", proj.w), block("proj.b", proj.b),
      block("head.w1", head.w1), block("head.b1", head.b1),
      block("head.w2", head.w2), block("head.b2", head.b2),
      block("head.w3", head.w3), block("head.b3", head.b3),
  };
}

std::vector<ParamBlock> BranchParams::blocks() const {
  // Read-only callers (serialization, gradient checks) share the mutable
  // block table; they must not write through it.
  return const_cast<BranchParams*>(this)->blocks();
}

std::size_t BranchParams::param_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks()) n += b.size;
  return n;
}

void BranchParams::fill(double v) {
  for (auto& b : blocks()) std::fill(b.data, b.data + b.size, v);
}

std::vector<int> parse_k_schedule(const std::string& spec) {
  auto parse_int = [&](const std::string& s) {
    std::size_t pos = 0;
    int v = 0;
    try {
      v = std::stoi(s, &pos);
    } catch (const std::exception&) {
      throw ValidationError("k-schedule: bad integer '" + s + "' in '" + spec + "'");
    }
    if (pos != s.size()) {
      throw ValidationError("k-schedule: bad integer '" + s + "' in '" + spec + "'");
    }
    return v;
  };

  std::vector<int> ks;
  if (spec.find('_') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, '_')) parts.push_back(item);
    if (parts.size() != 3) {
      throw ValidationError("k-schedule: compact form must be first_last_step");
    }
    const int first = parse_int(parts[0]);
    const int last = parse_int(parts[1]);
    const int step = parse_int(parts[2]);
    if (first < 1 || last < first || step < 1) {
      throw ValidationError("k-schedule: need 1 <= first <= last, step >= 1");
    }
    std::set<int> set;
    set.insert(first);
    for (int k = step; k <= last; k += step) set.insert(k);
    ks.assign(set.begin(), set.end());
  } else {
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) ks.push_back(parse_int(item));
    }
    if (ks.empty()) throw ValidationError("k-schedule: empty spec");
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (ks[i] < 1) throw ValidationError("k-schedule: entries must be >= 1");
      if (i > 0 && ks[i] <= ks[i - 1]) {
        throw ValidationError("k-schedule: entries must be strictly increasing");
      }
    }
  }
  return ks;
}

BranchParams make_branch_params(int visual_dim, int semantic_dim, int hidden1,
                                int hidden2) {
  const auto d = static_cast<std::size_t>(visual_dim);
  const auto ce = static_cast<std::size_t>(semantic_dim);
  const auto h1 = static_cast<std::size_t>(hidden1);
  const auto h2 = static_cast<std::size_t>(hidden2);
  BranchParams p;
  p.proj.w = Matrix(ce, d);
  p.proj.b = Vec(ce, 0.0);
  p.head.w1 = Matrix(h1, 2 * ce);
  p.head.b1 = Vec(h1, 0.0);
  p.head.w2 = Matrix(h2, h1);
  p.head.b2 = Vec(h2, 0.0);
  p.head.w3 = Vec(h2, 0.0);
  p.head.b3 = Vec(1, 0.0);
  return p;
}

AlignmentModel build_model(int visual_dim, int semantic_dim, int hidden1,
                           int hidden2, const std::vector<int>& k_list,
                           AggMode agg, std::uint64_t seed) {
  if (visual_dim < 1 || semantic_dim < 1 || hidden1 < 1 || hidden2 < 1) {
    throw ValidationError("build_model: dims must be >= 1");
  }
  if (k_list.empty()) throw ValidationError("build_model: empty k list");
  AlignmentModel model;
  model.visual_dim = visual_dim;
  model.semantic_dim = semantic_dim;
  model.hidden1 = hidden1;
  model.hidden2 = hidden2;
  model.agg = agg;
  model.root_seed = seed;
  for (std::size_t bi = 0; bi < k_list.size(); ++bi) {
    if (k_list[bi] < 1) throw ValidationError("build_model: k must be >= 1");
    Branch br;
    br.k = k_list[bi];
    br.params = make_branch_params(visual_dim, semantic_dim, hidden1, hidden2);
    Rng rng(Rng::mix(seed, bi));
    init_fan_in(rng, br.params.proj.w, br.params.proj.b,
                static_cast<std::size_t>(visual_dim));
    init_fan_in(rng, br.params.head.w1, br.params.head.b1,
                2 * static_cast<std::size_t>(semantic_dim));
    init_fan_in(rng, br.params.head.w2, br.params.head.b2,
                static_cast<std::size_t>(hidden1));
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden2));
    for (double& x : br.params.head.w3) x = uniform_symmetric(rng, bound);
    br.params.head.b3[0] = uniform_symmetric(rng, bound);
    model.branches.push_back(std::move(br));
  }
  return model;
}

double branch_score(const Branch& branch, AggMode agg, std::span<const double> u,
                    const CodebookClass& cls, bool inverted) {
  return branch_forward(branch.params, agg, branch.k, inverted, u, cls).score;
}

double ensemble_score(const AlignmentModel& model, std::span<const double> u,
                      const CodebookClass& cls, bool inverted) {
  double sum = 0.0;
  for (const auto& br : model.branches) {
    sum += branch_score(br, model.agg, u, cls, inverted);
  }
  return sum / static_cast<double>(model.branches.size());
}

double training_free_score(const CodebookClass& cls, std::span<const double> query,
                           const std::vector<int>& k_list) {
  if (k_list.empty()) throw ValidationError("training_free_score: empty k list");
  if (cls.descriptions.cols != query.size()) {
    throw ValidationError("training_free_score: dimension mismatch");
  }
  Vec sims(cls.descriptions.rows);
  for (std::size_t i = 0; i < cls.descriptions.rows; ++i) {
    sims[i] = cosine(query, cls.descriptions.row(i));
  }
  double total = 0.0;
  for (int k : k_list) {
    const AttentionLogits sel = select_topk(sims, k, false);
    const Vec agg = aggregate(cls.descriptions, sel);
    total += cosine(query, agg);
  }
  return total;
}

void save_checkpoint(const std::filesystem::path& dir, const AlignmentModel& model) {
  std::filesystem::create_directories(dir);
  ordered_json j;
  j["format_version"] = 1;
  j["engine_version"] = kEngineVersion;
  j["visual_dim"] = model.visual_dim;
  j["semantic_dim"] = model.semantic_dim;
  j["hidden1"] = model.hidden1;
  j["hidden2"] = model.hidden2;
  j["agg"] = agg_mode_name(model.agg);
  j["root_seed"] = model.root_seed;
  j["branches"] = ordered_json::array();
  for (std::size_t bi = 0; bi < model.branches.size(); ++bi) {
    const auto& br = model.branches[bi];
    std::vector<float> flat;
    flat.reserve(br.params.param_count());
    for (const auto& blk : br.params.blocks()) {
      for (std::size_t i = 0; i < blk.size; ++i) {
        flat.push_back(static_cast<float>(blk.data[i]));
      }
    }
    char name[32];
    std::snprintf(name, sizeof(name), "branch_%04zu.f32", bi);
    write_f32_blob(dir / name, flat);
    ordered_json bj;
    bj["k"] = br.k;
    bj["file"] = name;
    bj["checksum"] = fnv1a_hex(fnv1a_file(dir / name));
    j["branches"].push_back(bj);
  }
  write_text_file(dir / "model.json", j.dump(2) + "\n");
}

AlignmentModel load_checkpoint(const std::filesystem::path& dir) {
  json j;
  try {
    j = json::parse(read_text_file(dir / "model.json"));
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint " + dir.string() + ": " + e.what());
  }
  if (j.value("format_version", 0) != 1) {
    throw ValidationError("checkpoint: unsupported format_version");
  }
  AlignmentModel model;
  model.visual_dim = j.at("visual_dim").get<int>();
  model.semantic_dim = j.at("semantic_dim").get<int>();
  model.hidden1 = j.at("hidden1").get<int>();
  model.hidden2 = j.at("hidden2").get<int>();
  model.agg = agg_mode_from_name(j.at("agg").get<std::string>());
  model.root_seed = j.at("root_seed").get<std::uint64_t>();
  for (const auto& bj : j.at("branches")) {
    Branch br;
    br.k = bj.at("k").get<int>();
    br.params = make_branch_params(model.visual_dim, model.semantic_dim,
                                   model.hidden1, model.hidden2);
    const auto file = dir / bj.at("file").get<std::string>();
    const auto checksum = fnv1a_hex(fnv1a_file(file));
    if (checksum != bj.at("checksum").get<std::string>()) {
      throw ValidationError("checkpoint blob checksum mismatch: " + file.string());
    }
    const auto flat = read_f32_blob(file, br.params.param_count());
    std::size_t off = 0;
    for (auto& blk : br.params.blocks()) {
      for (std::size_t i = 0; i < blk.size; ++i) {
        blk.data[i] = static_cast<double>(flat[off++]);
      }
    }
    model.branches.push_back(std::move(br));
  }
  if (model.branches.empty()) {
    throw ValidationError("checkpoint: no branches");
  }
  return model;
}

}  // namespace zsalign
