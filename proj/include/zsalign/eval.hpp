#pragma once

#include <filesystem>
#include <string>

#include "zsalign/data.hpp"
#include "zsalign/model.hpp"
#include "zsalign/parallel.hpp"
#include "zsalign/trainer.hpp"

namespace zsalign {

// Ensemble scores for each (sample, class); rows follow sample_indices,
// columns follow class_ids. Rows are independent, so the parallel path is
// bit-identical to the serial one.
Matrix score_matrix(const AlignmentModel& model, const EmbeddingSet& data,
                    const std::vector<int>& sample_indices,
                    const std::vector<int>& class_ids,
                    const SemanticCodebook& codebook, ExecMode exec);

// Argmax of ensemble_score over the unseen classes; ties resolve to the
// lowest class id. Attention inversion is never active at inference.
int predict(const AlignmentModel& model, std::span<const double> u,
            const std::vector<int>& unseen_classes,
            const SemanticCodebook& codebook);

struct FoldEval {
  double accuracy = 0.0;
  std::vector<int> class_order;    // sorted unseen ids; confusion row/col order
  Matrix confusion;                // counts, true class x predicted class
  std::vector<double> per_class_accuracy;
  std::size_t n_samples = 0;
};

// Scores the fold's unseen-class samples against its unseen classes.
FoldEval evaluate_fold(const AlignmentModel& model, const EmbeddingSet& data,
                       const SplitFold& fold, const SemanticCodebook& codebook,
                       ExecMode exec = ExecMode::kParallel);

struct EvalReport {
  std::vector<FoldEval> folds;
  double mean_accuracy = 0.0;
};

EvalReport tri_split_evaluate(const std::vector<AlignmentModel>& models,
                              const EmbeddingSet& data, const SplitSpec& splits,
                              const SemanticCodebook& codebook,
                              ExecMode exec = ExecMode::kParallel);

void save_eval_report(const std::filesystem::path& path, const EvalReport& report);
void save_confusion_csv(const std::filesystem::path& path, const FoldEval& fold);
void save_per_class_csv(const std::filesystem::path& path, const FoldEval& fold);

// One experiment arm of the ablation driver. Unset options inherit the base
// configuration.
struct AblationVariant {
  std::string name;
  LossConfig loss;
  std::vector<int> k_list;
  AggMode agg = AggMode::kTopK;
  bool a_inv = true;
};

// Parses "name:key=value,..." with keys loss, n_neg, k, agg, ainv.
AblationVariant parse_variant(const std::string& spec, const LossConfig& base_loss);

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<std::string> variant_names;
  std::vector<double> mean_accuracy;  // per variant, over seeds
  std::string to_csv() const;
};

// Trains and evaluates every variant on freshly generated ambiguous worlds,
// one per seed. By default the last n_unseen classes are held out, so the
// ambiguity pairs (the low class ids) stress training while the unseen task
// keeps headroom; pass unseen_ids to override the held-out set.
// Each (seed, variant) accuracy is itself averaged over model_reps
// independently initialized training runs.
AblationTable run_ablation(const SyntheticWorldConfig& world_cfg,
                           const std::vector<AblationVariant>& variants,
                           const TrainConfig& base_cfg,
                           const std::vector<std::uint64_t>& seeds,
                           int hidden1, int hidden2,
                           ExecMode exec = ExecMode::kParallel,
                           const std::vector<int>& unseen_ids = {},
                           int model_reps = 1);

}  // namespace zsalign
