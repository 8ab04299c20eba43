#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "zsalign/attention.hpp"
#include "zsalign/data.hpp"
#include "zsalign/numeric.hpp"

namespace zsalign {

// How a branch turns description rows into the class embedding it aligns
// against. kTopK is the standard path; kFullAttention softmaxes over all
// rows; kUniformAverage bypasses attention with a plain row mean (the
// ablation baseline).
enum class AggMode { kTopK, kFullAttention, kUniformAverage };

const char* agg_mode_name(AggMode m);
AggMode agg_mode_from_name(const std::string& name);

// Three affine layers with ReLU between them; maps the concatenated
// (u_hd, e) pair to a raw compatibility score. Default dims 1536-1024-512-1.
struct ScoringHead {
  Matrix w1;  // h1 x 2*C_e
  Vec b1;     // h1
  Matrix w2;  // h2 x h1
  Vec b2;     // h2
  Vec w3;     // h2
  Vec b3;     // 1
};

struct BranchParams {
  ProjectionLayer proj;
  ScoringHead head;

  // Named flat views over every tensor, in a fixed order shared by the
  // optimizer, the gradient buffers and the checkpoint blobs.
  std::vector<ParamBlock> blocks();
  std::vector<ParamBlock> blocks() const;
  std::size_t param_count() const;
  void fill(double v);
};

struct Branch {
  int k = 1;
  BranchParams params;
};

struct AlignmentModel {
  int visual_dim = 0;
  int semantic_dim = 0;
  int hidden1 = 1024;
  int hidden2 = 512;
  AggMode agg = AggMode::kTopK;
  std::uint64_t root_seed = 0;
  std::vector<Branch> branches;
};

// "a_b_c" -> {a} followed by the multiples of c up to b, deduplicated and
// ascending; "x,y,z" or a single integer pass through. Entries must end up
// strictly increasing and >= 1.
std::vector<int> parse_k_schedule(const std::string& spec);

// Branch shapes allocated and initialized with symmetric uniform fan-in
// scaling; branch i draws from an independent stream derived from `seed`.
AlignmentModel build_model(int visual_dim, int semantic_dim, int hidden1,
                           int hidden2, const std::vector<int>& k_list,
                           AggMode agg, std::uint64_t seed);

BranchParams make_branch_params(int visual_dim, int semantic_dim, int hidden1,
                                int hidden2);

// head(concat(u_hd, e)) with e assembled from the class's descriptions via
// the branch's attention (and motion addition when present).
double branch_score(const Branch& branch, AggMode agg, std::span<const double> u,
                    const CodebookClass& cls, bool inverted);

// Arithmetic mean of branch_score over all branches.
double ensemble_score(const AlignmentModel& model, std::span<const double> u,
                      const CodebookClass& cls, bool inverted);

// Training-free scorer: for each k, aggregate the rows most cosine-similar
// to the query (softmax-of-similarity weights), score the aggregate by
// cosine against the query, and sum over the k list.
double training_free_score(const CodebookClass& cls, std::span<const double> query,
                           const std::vector<int>& k_list);

void save_checkpoint(const std::filesystem::path& dir, const AlignmentModel& model);
AlignmentModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace zsalign
