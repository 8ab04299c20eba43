// Benchmark comparing the serial reference kernels against the OpenMP
// parallel ones: batch scoring and one gradient epoch on a medium synthetic
// workload.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "zsalign/eval.hpp"
#include "zsalign/parallel.hpp"
#include "zsalign/trainer.hpp"

using namespace zsalign;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <class F>
double time_best_of(int reps, F fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_seconds();
    fn();
    best = std::min(best, now_seconds() - t0);
  }
  return best;
}

}  // namespace

int main() {
  SyntheticWorldConfig wc;
  wc.n_classes = 20;
  wc.n_unseen = 4;
  wc.visual_dim = 64;
  wc.semantic_dim = 96;
  wc.n_descriptions = 50;
  wc.samples_per_class = 100;
  wc.visual_noise = 0.2;
  wc.description_spread = 0.3;
  wc.seed = 7;
  const SyntheticWorld world = gen_synthetic_world(wc);

  AlignmentModel model =
      build_model(wc.visual_dim, wc.semantic_dim, 256, 128, {1, 5, 10, 20},
                  AggMode::kTopK, 7);

  std::vector<int> samples;
  for (int i = 0; i < 800; ++i) samples.push_back(i);
  const std::vector<int> classes = world.codebook.class_ids();

  std::printf("workload: %zu samples x %zu classes, %zu branches, D=%d, C_e=%d, N_d=%d\n",
              samples.size(), classes.size(), model.branches.size(),
              wc.visual_dim, wc.semantic_dim, wc.n_descriptions);
  std::printf("threads: %d\n\n", max_threads());

  // Inference scoring.
  Matrix serial_scores, parallel_scores;
  const double t_score_serial = time_best_of(3, [&] {
    serial_scores = score_matrix(model, world.embeddings, samples, classes,
                                 world.codebook, ExecMode::kSerial);
  });
  const double t_score_parallel = time_best_of(3, [&] {
    parallel_scores = score_matrix(model, world.embeddings, samples, classes,
                                   world.codebook, ExecMode::kParallel);
  });
  double max_diff = 0.0;
  for (std::size_t i = 0; i < serial_scores.data.size(); ++i) {
    max_diff = std::max(max_diff,
                        std::fabs(serial_scores.data[i] - parallel_scores.data[i]));
  }
  std::printf("score_matrix   serial %8.3f s   parallel %8.3f s   speedup %5.2fx   max |diff| %g\n",
              t_score_serial, t_score_parallel, t_score_serial / t_score_parallel,
              max_diff);

  // Gradient accumulation over one batch per branch.
  SplitFold fold;
  for (int c = 0; c < wc.n_classes; ++c) {
    (c < wc.n_classes - wc.n_unseen ? fold.seen : fold.unseen).push_back(c);
  }
  std::vector<int> batch;
  std::vector<int> batch_classes;
  for (std::size_t i = 0; i < world.embeddings.size() && batch.size() < 128; i += 7) {
    const int c = world.embeddings.class_of(i);
    if (c < wc.n_classes - wc.n_unseen) {
      batch.push_back(static_cast<int>(i));
      batch_classes.push_back(c);
    }
  }
  LossConfig loss;
  loss.kind = LossKind::kXSample;
  loss.n_neg = 8;
  Rng rng(3);
  const auto pairs =
      sample_negatives(batch, batch_classes, LossKind::kXSample, 8, fold.seen, rng);
  const BatchWork work =
      build_batch_work(world.embeddings, world.codebook, pairs, loss, fold.seen);

  BranchParams grads = make_branch_params(wc.visual_dim, wc.semantic_dim, 256, 128);
  double loss_serial = 0.0, loss_parallel = 0.0;
  const double t_grad_serial = time_best_of(3, [&] {
    for (const auto& br : model.branches) {
      loss_serial = branch_batch_grads(br, model.agg, false, work, loss, grads,
                                       ExecMode::kSerial);
    }
  });
  BranchParams grads_serial = grads;
  const double t_grad_parallel = time_best_of(3, [&] {
    for (const auto& br : model.branches) {
      loss_parallel = branch_batch_grads(br, model.agg, false, work, loss, grads,
                                         ExecMode::kParallel);
    }
  });
  double grad_diff = 0.0;
  {
    const auto a = grads_serial.blocks();
    const auto b = grads.blocks();
    for (std::size_t blk = 0; blk < a.size(); ++blk) {
      for (std::size_t i = 0; i < a[blk].size; ++i) {
        grad_diff = std::max(grad_diff, std::fabs(a[blk].data[i] - b[blk].data[i]));
      }
    }
  }
  std::printf("batch_grads    serial %8.3f s   parallel %8.3f s   speedup %5.2fx   max |diff| %g\n",
              t_grad_serial, t_grad_parallel, t_grad_serial / t_grad_parallel,
              grad_diff);
  std::printf("batch loss     serial %.12f   parallel %.12f\n", loss_serial,
              loss_parallel);
  return 0;
}
