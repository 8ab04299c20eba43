#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "zsalign/io.hpp"
#include "zsalign/model.hpp"
#include "zsalign/rng.hpp"

using namespace zsalign;
namespace fs = std::filesystem;

namespace {

CodebookClass random_class(Rng& rng, int id, int n_desc, int ce, bool motion) {
  CodebookClass cls;
  cls.id = id;
  cls.name = "c" + std::to_string(id);
  cls.descriptions = Matrix(static_cast<std::size_t>(n_desc), static_cast<std::size_t>(ce));
  for (int r = 0; r < n_desc; ++r) {
    Vec row(static_cast<std::size_t>(ce));
    for (auto& x : row) x = rng.gaussian();
    row = l2_normalized(row);
    std::copy(row.begin(), row.end(), cls.descriptions.row(static_cast<std::size_t>(r)).begin());
  }
  if (motion) {
    Vec m(static_cast<std::size_t>(ce));
    for (auto& x : m) x = rng.gaussian();
    cls.motion = l2_normalized(m);
  }
  return cls;
}

}  // namespace

TEST_CASE("parse_k_schedule") {
  CHECK(parse_k_schedule("1_60_5") ==
        std::vector<int>{1, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60});
  CHECK(parse_k_schedule("1_15_5") == std::vector<int>{1, 5, 10, 15});
  CHECK(parse_k_schedule("1_25_5") == std::vector<int>{1, 5, 10, 15, 20, 25});
  CHECK(parse_k_schedule("7") == std::vector<int>{7});
  CHECK(parse_k_schedule("1,5,10") == std::vector<int>{1, 5, 10});
  CHECK(parse_k_schedule("2_9_3") == std::vector<int>{2, 3, 6, 9});
  CHECK_THROWS_AS(parse_k_schedule("5,3"), ValidationError);
  CHECK_THROWS_AS(parse_k_schedule("0,1"), ValidationError);
  CHECK_THROWS_AS(parse_k_schedule("1_5"), ValidationError);
  CHECK_THROWS_AS(parse_k_schedule("1_5_0"), ValidationError);
  CHECK_THROWS_AS(parse_k_schedule(""), ValidationError);
  CHECK_THROWS_AS(parse_k_schedule("abc"), ValidationError);
}

TEST_CASE("build_model: shapes, defaults, per-branch independent init") {
  const AlignmentModel m = build_model(256, 768, 1024, 512, {1, 5}, AggMode::kTopK, 3);
  REQUIRE(m.branches.size() == 2);
  // Paper-scale head: 1536 -> 1024 -> 512 -> 1.
  CHECK(m.branches[0].params.head.w1.rows == 1024);
  CHECK(m.branches[0].params.head.w1.cols == 1536);
  CHECK(m.branches[0].params.head.w2.rows == 512);
  CHECK(m.branches[0].params.head.w3.size() == 512);
  CHECK(m.branches[0].params.proj.w.rows == 768);
  CHECK(m.branches[0].params.proj.w.cols == 256);
  // Distinct streams per branch.
  CHECK(m.branches[0].params.head.w1.data[0] != m.branches[1].params.head.w1.data[0]);
  // Same seed, same init.
  const AlignmentModel m2 = build_model(256, 768, 1024, 512, {1, 5}, AggMode::kTopK, 3);
  CHECK(m.branches[0].params.head.w1.data == m2.branches[0].params.head.w1.data);
}

TEST_CASE("branch_score: zero-weight head and k-independence on degenerate rows") {
  Rng rng(4);
  AlignmentModel m = build_model(5, 8, 6, 3, {1, 2, 4}, AggMode::kTopK, 11);
  CodebookClass cls = random_class(rng, 0, 4, 8, true);
  Vec u(5);
  for (auto& x : u) x = rng.gaussian();

  Branch zero = m.branches[0];
  zero.params.fill(0.0);
  zero.params.head.b3[0] = -1.5;
  CHECK(branch_score(zero, AggMode::kTopK, u, cls, false) == -1.5);

  // All description rows identical: the score cannot depend on k.
  CodebookClass degen = cls;
  for (std::size_t r = 1; r < degen.descriptions.rows; ++r) {
    std::copy(degen.descriptions.row(0).begin(), degen.descriptions.row(0).end(),
              degen.descriptions.row(r).begin());
  }
  Vec scores;
  for (const auto& br : m.branches) {
    scores.push_back(branch_score(br, AggMode::kTopK, u, degen, false));
  }
  Branch b0 = m.branches[0];
  for (int k : {1, 2, 3, 4}) {
    b0.k = k;
    CHECK(branch_score(b0, AggMode::kTopK, u, degen, false) ==
          doctest::Approx(scores[0]).epsilon(1e-12));
  }
}

TEST_CASE("branch_score: N_d=1 ignores k and inversion") {
  Rng rng(6);
  const AlignmentModel m = build_model(5, 8, 6, 3, {1}, AggMode::kTopK, 2);
  const CodebookClass cls = random_class(rng, 0, 1, 8, false);
  Vec u(5);
  for (auto& x : u) x = rng.gaussian();
  Branch br = m.branches[0];
  const double base = branch_score(br, AggMode::kTopK, u, cls, false);
  for (int k : {1, 3, 9}) {
    br.k = k;
    for (bool inv : {false, true}) {
      CHECK(branch_score(br, AggMode::kTopK, u, cls, inv) ==
            doctest::Approx(base).epsilon(1e-12));
    }
  }
}

TEST_CASE("ensemble_score: mean, permutation invariance, determinism") {
  Rng rng(8);
  AlignmentModel m = build_model(6, 9, 8, 4, {1, 2, 3}, AggMode::kTopK, 21);
  const CodebookClass cls = random_class(rng, 0, 6, 9, true);
  Vec u(6);
  for (auto& x : u) x = rng.gaussian();

  double mean = 0.0;
  for (const auto& br : m.branches) {
    mean += branch_score(br, m.agg, u, cls, false);
  }
  mean /= 3.0;
  const double s = ensemble_score(m, u, cls, false);
  CHECK(std::fabs(s - mean) <= 1e-12);

  AlignmentModel perm = m;
  std::swap(perm.branches[0], perm.branches[2]);
  CHECK(ensemble_score(perm, u, cls, false) == doctest::Approx(s).epsilon(1e-15));

  CHECK(ensemble_score(m, u, cls, false) == s);  // bit-identical rerun

  AlignmentModel single = m;
  single.branches.resize(1);
  CHECK(ensemble_score(single, u, cls, false) ==
        branch_score(m.branches[0], m.agg, u, cls, false));

  // Identical branches collapse to any single branch's score.
  AlignmentModel same = m;
  same.branches[1] = same.branches[0];
  same.branches[2] = same.branches[0];
  CHECK(ensemble_score(same, u, cls, false) ==
        doctest::Approx(branch_score(same.branches[0], m.agg, u, cls, false)).epsilon(1e-12));
}

TEST_CASE("training_free_score identities") {
  Rng rng(10);
  const int ce = 12;
  CodebookClass cls = random_class(rng, 0, 5, ce, false);
  // All rows identical: every k aggregates to the same row.
  for (std::size_t r = 1; r < cls.descriptions.rows; ++r) {
    std::copy(cls.descriptions.row(0).begin(), cls.descriptions.row(0).end(),
              cls.descriptions.row(r).begin());
  }
  Vec q(ce);
  for (auto& x : q) x = rng.gaussian();
  q = l2_normalized(q);
  const double cos_row = cosine(q, cls.descriptions.row(0));
  CHECK(training_free_score(cls, q, {1, 3, 5}) ==
        doctest::Approx(3.0 * cos_row).epsilon(1e-9));

  // k=1 selects the single best row.
  CodebookClass multi = random_class(rng, 1, 5, ce, false);
  double best = -2.0;
  for (std::size_t r = 0; r < multi.descriptions.rows; ++r) {
    best = std::max(best, cosine(q, multi.descriptions.row(r)));
  }
  CHECK(training_free_score(multi, q, {1}) == doctest::Approx(best).epsilon(1e-12));

  // Duplicate k counts twice (sum semantics).
  const double once = training_free_score(multi, q, {2});
  CHECK(training_free_score(multi, q, {2, 2}) == doctest::Approx(2.0 * once).epsilon(1e-12));

  CHECK_THROWS_AS(training_free_score(multi, q, {}), ValidationError);
}

TEST_CASE("training_free_score: equal similarities with k = N_d give the row mean") {
  // Rows symmetric around the query direction: all cosines equal.
  const int ce = 4;
  CodebookClass cls;
  cls.id = 0;
  cls.name = "sym";
  cls.descriptions = Matrix(2, ce);
  const Vec r0 = l2_normalized(Vec{1.0, 0.5, 0.0, 0.0});
  const Vec r1 = l2_normalized(Vec{1.0, -0.5, 0.0, 0.0});
  std::copy(r0.begin(), r0.end(), cls.descriptions.row(0).begin());
  std::copy(r1.begin(), r1.end(), cls.descriptions.row(1).begin());
  const Vec q{1.0, 0.0, 0.0, 0.0};

  Vec mean(ce, 0.0);
  for (std::size_t d = 0; d < ce; ++d) {
    mean[d] = 0.5 * (cls.descriptions.at(0, d) + cls.descriptions.at(1, d));
  }
  CHECK(training_free_score(cls, q, {2}) ==
        doctest::Approx(cosine(q, mean)).epsilon(1e-6));
}

TEST_CASE("checkpoint round-trip and checksum verification") {
  const fs::path dir = fs::temp_directory_path() / "zsalign_test_ckpt";
  fs::remove_all(dir);
  const AlignmentModel m = build_model(6, 9, 8, 4, {1, 4}, AggMode::kTopK, 77);
  save_checkpoint(dir, m);
  const AlignmentModel loaded = load_checkpoint(dir);
  CHECK(loaded.visual_dim == 6);
  CHECK(loaded.semantic_dim == 9);
  CHECK(loaded.agg == AggMode::kTopK);
  REQUIRE(loaded.branches.size() == 2);
  CHECK(loaded.branches[0].k == 1);
  CHECK(loaded.branches[1].k == 4);
  // Parameters survive modulo the f32 storage precision.
  for (std::size_t i = 0; i < m.branches[0].params.head.w1.data.size(); ++i) {
    const double orig = m.branches[0].params.head.w1.data[i];
    const double back = loaded.branches[0].params.head.w1.data[i];
    CHECK(back == static_cast<double>(static_cast<float>(orig)));
  }

  // Corrupting a blob must fail the checksum.
  auto blob = read_f32_blob(dir / "branch_0000.f32", m.branches[0].params.param_count());
  blob[3] += 1.0f;
  write_f32_blob(dir / "branch_0000.f32", blob);
  CHECK_THROWS_AS(load_checkpoint(dir), ValidationError);
}

TEST_CASE("save_checkpoint is deterministic") {
  const fs::path a = fs::temp_directory_path() / "zsalign_test_ckpt_a";
  const fs::path b = fs::temp_directory_path() / "zsalign_test_ckpt_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const AlignmentModel m = build_model(4, 6, 5, 3, {2}, AggMode::kFullAttention, 5);
  save_checkpoint(a, m);
  save_checkpoint(b, m);
  CHECK(fnv1a_file(a / "model.json") == fnv1a_file(b / "model.json"));
  CHECK(fnv1a_file(a / "branch_0000.f32") == fnv1a_file(b / "branch_0000.f32"));
}
