#pragma once

#include <functional>

#include "zsalign/data.hpp"
#include "zsalign/losses.hpp"
#include "zsalign/model.hpp"
#include "zsalign/parallel.hpp"
#include "zsalign/rng.hpp"

namespace zsalign {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 128;
  int warmup_epochs = 15;
  double lr_max = 1e-5;
  bool a_inv = true;  // invert attention while epoch < n_ep
  int n_ep = 15;
  LossConfig loss;
  std::uint64_t seed = 0;
};

// Linear 0 -> lr_max ramp over warmup_epochs, then cosine annealing to the
// final epoch. Continuous at the junction.
double lr_at(int epoch, const TrainConfig& cfg);

// One anchor's contrastive workload: the positive pair plus either other
// samples scored against the anchor's class (xsample) or the anchor scored
// against other classes (ysample). For softmax_ce the anchor is scored
// against every seen class instead.
struct PairSample {
  int anchor = -1;
  int anchor_class = -1;
  std::vector<int> neg_samples;
  std::vector<int> neg_classes;
};

// Draws n_neg negatives per anchor without replacement. xsample pools the
// rest of the batch excluding the anchor's own class; ysample pools the
// other seen classes. Throws "insufficient negative pool" when a pool is
// too small.
std::vector<PairSample> sample_negatives(const std::vector<int>& batch,
                                         const std::vector<int>& batch_classes,
                                         LossKind regime, int n_neg,
                                         const std::vector<int>& seen_classes,
                                         Rng& rng);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  bool a_inv_active = false;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::string checkpoint_ref;  // set by the caller that persists the model
  double wall_seconds = 0.0;   // stdout/provenance only, not serialized
};

// Prefetched views for one batch; all audited data access happens while
// assembling this (single-threaded), so the parallel kernel touches no
// counters.
struct AnchorWork {
  std::span<const double> u;
  const CodebookClass* cls = nullptr;
  int true_class_pos = -1;  // softmax_ce: index into the seen-class row
  std::vector<std::span<const double>> neg_u;
  std::vector<const CodebookClass*> neg_cls;
};

struct BatchWork {
  std::vector<AnchorWork> anchors;
  std::vector<const CodebookClass*> seen_entries;  // softmax_ce row, seen order
};

BatchWork build_batch_work(const EmbeddingSet& data,
                           const SemanticCodebook& codebook,
                           const std::vector<PairSample>& pairs,
                           const LossConfig& loss,
                           const std::vector<int>& seen_classes);

// Mean loss over the batch and d(mean loss)/d(branch params). The parallel
// path accumulates per-block partial sums (kGradBlockSize anchors each,
// reduced in block order), so its result is bit-identical for any thread
// count; the serial path is the plain per-anchor reference.
double branch_batch_grads(const Branch& branch, AggMode agg, bool inverted,
                          const BatchWork& work, const LossConfig& loss,
                          BranchParams& grads, ExecMode exec);

using EpochCallback = std::function<void(int epoch, const AlignmentModel&)>;

// Full training loop: seeded shuffling, negative sampling, attention
// inversion gating, per-branch Adam updates with lr_at(epoch). Training
// reads only seen-class samples and codebook entries.
TrainReport train(AlignmentModel& model, const EmbeddingSet& data,
                  const SemanticCodebook& codebook, const SplitFold& fold,
                  const TrainConfig& cfg, ExecMode exec = ExecMode::kParallel,
                  const EpochCallback& on_epoch = {});

}  // namespace zsalign
