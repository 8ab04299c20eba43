#include "zsalign/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "zsalign/io.hpp"

namespace zsalign {

namespace {
using nlohmann::ordered_json;
}

Matrix score_matrix(const AlignmentModel& model, const EmbeddingSet& data,
                    const std::vector<int>& sample_indices,
                    const std::vector<int>& class_ids,
                    const SemanticCodebook& codebook, ExecMode exec) {
  // Class entries are fetched once, outside the parallel region; sample rows
  // are fetched by the iteration that owns them.
  std::vector<const CodebookClass*> entries;
  entries.reserve(class_ids.size());
  for (int c : class_ids) entries.push_back(&codebook.cls(c));

  Matrix scores(sample_indices.size(), class_ids.size());
  const auto n = static_cast<std::ptrdiff_t>(sample_indices.size());
  if (exec == ExecMode::kSerial) {
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto u = data.sample(static_cast<std::size_t>(sample_indices[static_cast<std::size_t>(i)]));
      for (std::size_t j = 0; j < entries.size(); ++j) {
        scores.at(static_cast<std::size_t>(i), j) =
            ensemble_score(model, u, *entries[j], false);
      }
    }
  } else {
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto u = data.sample(static_cast<std::size_t>(sample_indices[static_cast<std::size_t>(i)]));
      for (std::size_t j = 0; j < entries.size(); ++j) {
        scores.at(static_cast<std::size_t>(i), j) =
            ensemble_score(model, u, *entries[j], false);
      }
    }
  }
  return scores;
}

int predict(const AlignmentModel& model, std::span<const double> u,
            const std::vector<int>& unseen_classes,
            const SemanticCodebook& codebook) {
  if (unseen_classes.empty()) throw ValidationError("predict: empty unseen set");
  std::vector<int> order = unseen_classes;
  std::sort(order.begin(), order.end());
  int best = order[0];
  double best_score = -std::numeric_limits<double>::infinity();
  for (int c : order) {
    const double s = ensemble_score(model, u, codebook.cls(c), false);
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

FoldEval evaluate_fold(const AlignmentModel& model, const EmbeddingSet& data,
                       const SplitFold& fold, const SemanticCodebook& codebook,
                       ExecMode exec) {
  FoldEval out;
  out.class_order = fold.unseen;
  std::sort(out.class_order.begin(), out.class_order.end());

  std::vector<int> test_indices;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (std::binary_search(out.class_order.begin(), out.class_order.end(),
                           data.class_of(i))) {
      test_indices.push_back(static_cast<int>(i));
    }
  }
  if (test_indices.empty()) throw ValidationError("evaluate_fold: empty test set");

  const Matrix scores =
      score_matrix(model, data, test_indices, out.class_order, codebook, exec);

  const std::size_t n_cls = out.class_order.size();
  out.confusion = Matrix(n_cls, n_cls);
  for (std::size_t i = 0; i < test_indices.size(); ++i) {
    const int true_cls = data.class_of(static_cast<std::size_t>(test_indices[i]));
    const auto true_pos = static_cast<std::size_t>(
        std::lower_bound(out.class_order.begin(), out.class_order.end(), true_cls) -
        out.class_order.begin());
    std::size_t pred_pos = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n_cls; ++j) {
      if (scores.at(i, j) > best) {
        best = scores.at(i, j);
        pred_pos = j;
      }
    }
    out.confusion.at(true_pos, pred_pos) += 1.0;
  }

  out.n_samples = test_indices.size();
  double correct = 0.0;
  out.per_class_accuracy.assign(n_cls, 0.0);
  for (std::size_t c = 0; c < n_cls; ++c) {
    double row_total = 0.0;
    for (std::size_t j = 0; j < n_cls; ++j) row_total += out.confusion.at(c, j);
    correct += out.confusion.at(c, c);
    out.per_class_accuracy[c] =
        row_total > 0.0 ? out.confusion.at(c, c) / row_total : 0.0;
  }
  out.accuracy = correct / static_cast<double>(out.n_samples);
  return out;
}

EvalReport tri_split_evaluate(const std::vector<AlignmentModel>& models,
                              const EmbeddingSet& data, const SplitSpec& splits,
                              const SemanticCodebook& codebook, ExecMode exec) {
  if (models.size() != splits.folds.size()) {
    throw ValidationError("tri_split_evaluate: fold/model count mismatch");
  }
  EvalReport report;
  double sum = 0.0;
  for (std::size_t f = 0; f < models.size(); ++f) {
    report.folds.push_back(
        evaluate_fold(models[f], data, splits.folds[f], codebook, exec));
    sum += report.folds.back().accuracy;
  }
  report.mean_accuracy = sum / static_cast<double>(models.size());
  return report;
}

void save_eval_report(const std::filesystem::path& path, const EvalReport& report) {
  ordered_json j;
  j["mean_accuracy"] = report.mean_accuracy;
  j["folds"] = ordered_json::array();
  for (const auto& fold : report.folds) {
    ordered_json fj;
    fj["accuracy"] = fold.accuracy;
    fj["n_samples"] = fold.n_samples;
    fj["class_order"] = fold.class_order;
    fj["per_class_accuracy"] = fold.per_class_accuracy;
    auto conf = ordered_json::array();
    for (std::size_t r = 0; r < fold.confusion.rows; ++r) {
      auto row = ordered_json::array();
      for (std::size_t c = 0; c < fold.confusion.cols; ++c) {
        row.push_back(static_cast<std::uint64_t>(fold.confusion.at(r, c)));
      }
      conf.push_back(row);
    }
    fj["confusion"] = conf;
    j["folds"].push_back(fj);
  }
  write_text_file(path, j.dump(2) + "\n");
}

void save_confusion_csv(const std::filesystem::path& path, const FoldEval& fold) {
  std::ostringstream ss;
  ss << "true_class";
  for (int c : fold.class_order) ss << ",pred_" << c;
  ss << '\n';
  for (std::size_t r = 0; r < fold.confusion.rows; ++r) {
    ss << fold.class_order[r];
    for (std::size_t c = 0; c < fold.confusion.cols; ++c) {
      ss << ',' << static_cast<std::uint64_t>(fold.confusion.at(r, c));
    }
    ss << '\n';
  }
  write_text_file(path, ss.str());
}

void save_per_class_csv(const std::filesystem::path& path, const FoldEval& fold) {
  std::ostringstream ss;
  ss << "class_id,accuracy\n";
  for (std::size_t c = 0; c < fold.class_order.size(); ++c) {
    ss << fold.class_order[c] << ',' << fold.per_class_accuracy[c] << '\n';
  }
  write_text_file(path, ss.str());
}

AblationVariant parse_variant(const std::string& spec, const LossConfig& base_loss) {
  AblationVariant v;
  v.loss = base_loss;
  v.k_list = {1};
  const auto colon = spec.find(':');
  if (colon == std::string::npos || colon == 0) {
    throw ValidationError("variant '" + spec + "': expected name:key=value,...");
  }
  v.name = spec.substr(0, colon);
  std::stringstream ss(spec.substr(colon + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("variant '" + spec + "': bad option '" + item + "'");
    }
    const std::string key = item.substr(0, eq);
    const std::string val = item.substr(eq + 1);
    if (key == "loss") {
      v.loss.kind = loss_kind_from_name(val);
    } else if (key == "n_neg") {
      v.loss.n_neg = std::stoi(val);
    } else if (key == "k") {
      v.k_list = parse_k_schedule(val);
    } else if (key == "agg") {
      v.agg = agg_mode_from_name(val);
    } else if (key == "ainv") {
      if (val == "on") {
        v.a_inv = true;
      } else if (val == "off") {
        v.a_inv = false;
      } else {
        throw ValidationError("variant '" + spec + "': ainv must be on|off");
      }
    } else {
      throw ValidationError("unknown variant option '" + key + "'");
    }
  }
  return v;
}

std::string AblationTable::to_csv() const {
  std::ostringstream ss;
  ss << "variant,seed,accuracy\n";
  for (const auto& row : rows) {
    ss << row.variant << ',' << row.seed << ',' << row.accuracy << '\n';
  }
  for (std::size_t i = 0; i < variant_names.size(); ++i) {
    ss << variant_names[i] << ",mean," << mean_accuracy[i] << '\n';
  }
  return ss.str();
}

AblationTable run_ablation(const SyntheticWorldConfig& world_cfg,
                           const std::vector<AblationVariant>& variants,
                           const TrainConfig& base_cfg,
                           const std::vector<std::uint64_t>& seeds,
                           int hidden1, int hidden2, ExecMode exec,
                           const std::vector<int>& unseen_ids, int model_reps) {
  if (variants.empty()) throw ValidationError("run_ablation: empty variant list");
  if (seeds.empty()) throw ValidationError("run_ablation: empty seed list");
  if (model_reps < 1) throw ValidationError("run_ablation: model_reps must be >= 1");

  AblationTable table;
  std::vector<double> sums(variants.size(), 0.0);

  for (std::uint64_t seed : seeds) {
    SyntheticWorldConfig wc = world_cfg;
    wc.seed = seed;
    const SyntheticWorld world = gen_synthetic_world(wc);

    SplitFold fold;
    if (!unseen_ids.empty()) {
      fold.unseen = unseen_ids;
    } else {
      // Ambiguity pairs occupy the low ids; holding out the top ids keeps
      // the hard pairs inside the training set.
      for (int c = wc.n_classes - wc.n_unseen; c < wc.n_classes; ++c) {
        fold.unseen.push_back(c);
      }
    }
    for (int c = 0; c < wc.n_classes; ++c) {
      if (std::find(fold.unseen.begin(), fold.unseen.end(), c) == fold.unseen.end()) {
        fold.seen.push_back(c);
      }
    }

    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      const auto& v = variants[vi];
      double acc = 0.0;
      for (int rep = 0; rep < model_reps; ++rep) {
        const std::uint64_t run_seed = Rng::mix(seed, 0x6d6f64ULL + static_cast<std::uint64_t>(rep));
        AlignmentModel model = build_model(wc.visual_dim, wc.semantic_dim,
                                           hidden1, hidden2, v.k_list, v.agg,
                                           run_seed);
        TrainConfig cfg = base_cfg;
        cfg.loss = v.loss;
        cfg.a_inv = v.a_inv;
        cfg.seed = run_seed;
        train(model, world.embeddings, world.codebook, fold, cfg, exec);
        const FoldEval ev =
            evaluate_fold(model, world.embeddings, fold, world.codebook, exec);
        acc += ev.accuracy;
      }
      acc /= static_cast<double>(model_reps);
      table.rows.push_back({v.name, seed, acc});
      sums[vi] += acc;
    }
  }
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    table.variant_names.push_back(variants[vi].name);
    table.mean_accuracy.push_back(sums[vi] / static_cast<double>(seeds.size()));
  }
  return table;
}

}  // namespace zsalign
