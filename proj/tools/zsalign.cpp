// Command-line entry point: dataset synthesis, training, zero-shot
// evaluation, gradient checking and the training-free scorer.

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "zsalign/data.hpp"
#include "zsalign/eval.hpp"
#include "zsalign/gradcheck.hpp"
#include "zsalign/io.hpp"
#include "zsalign/model.hpp"
#include "zsalign/parallel.hpp"
#include "zsalign/trainer.hpp"
#include "zsalign/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace zsalign;

namespace {

// Exit codes: 0 success, 1 computation failure, 2 validation failure.
constexpr int kExitComputation = 1;
constexpr int kExitValidation = 2;

fs::path resolve_out(const std::string& flag_value, const char* command) {
  if (!flag_value.empty()) return flag_value;
  if (const char* root = std::getenv("ZSALIGN_OUT_ROOT")) {
    return fs::path(root) / command;
  }
  throw ValidationError("no output directory: pass --out or set ZSALIGN_OUT_ROOT");
}

std::string iso_timestamp() {
  char buf[32];
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

// Provenance record written before any work starts. Timestamps and absolute
// paths live here and only here; reports and checkpoints stay byte-stable
// across reruns of the same seed and inputs.
void write_run_manifest(const fs::path& out_dir, const std::string& command,
                        const ordered_json& effective_config,
                        const std::vector<fs::path>& inputs) {
  fs::create_directories(out_dir);
  ordered_json m;
  m["engine_version"] = kEngineVersion;
  m["command"] = command;
  m["created_at"] = iso_timestamp();
  m["config"] = effective_config;
  const std::string dumped = effective_config.dump();
  m["config_checksum"] = fnv1a_hex(fnv1a(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(dumped.data()), dumped.size())));
  ordered_json files = ordered_json::object();
  for (const auto& p : inputs) {
    files[p.string()] = fnv1a_hex(fnv1a_file(p));
  }
  m["input_checksums"] = files;
  write_text_file(out_dir / "run_manifest.json", m.dump(2) + "\n");
}

struct TrainOptions {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  int fold = 0;
  int threads = 0;
  bool serial = false;
  int checkpoint_every = 0;
  std::optional<int> epochs, batch_size, warmup, n_ep, n_neg, hidden1, hidden2;
  std::optional<double> lr_max, temperature;
  std::optional<std::string> loss_kind, k_schedule, agg;
  std::optional<std::uint64_t> seed;
  std::optional<bool> a_inv;
};

struct MergedTrainConfig {
  TrainConfig train;
  std::vector<int> k_list{1};
  int hidden1 = 1024;
  int hidden2 = 512;
  AggMode agg = AggMode::kTopK;
};

// Config file first, then flag overrides; n_ep defaults to warmup_epochs
// when neither source names it.
MergedTrainConfig merge_train_config(const TrainOptions& opt) {
  MergedTrainConfig cfg;
  bool n_ep_given = false;

  if (!opt.config_path.empty()) {
    json j;
    try {
      j = json::parse(read_text_file(opt.config_path));
    } catch (const json::exception& e) {
      throw ValidationError("config " + opt.config_path + ": " + e.what());
    }
    cfg.train.epochs = j.value("epochs", cfg.train.epochs);
    cfg.train.batch_size = j.value("batch_size", cfg.train.batch_size);
    cfg.train.warmup_epochs = j.value("warmup_epochs", cfg.train.warmup_epochs);
    cfg.train.lr_max = j.value("lr_max", cfg.train.lr_max);
    cfg.train.a_inv = j.value("a_inv", cfg.train.a_inv);
    if (j.contains("n_ep")) {
      cfg.train.n_ep = j["n_ep"].get<int>();
      n_ep_given = true;
    }
    cfg.train.seed = j.value("seed", cfg.train.seed);
    if (j.contains("loss")) {
      const auto& lj = j["loss"];
      cfg.train.loss.kind =
          loss_kind_from_name(lj.value("kind", std::string("xsample")));
      cfg.train.loss.n_neg = lj.value("n_neg", cfg.train.loss.n_neg);
      cfg.train.loss.temperature =
          lj.value("temperature", cfg.train.loss.temperature);
    }
    if (j.contains("k_schedule")) {
      cfg.k_list = parse_k_schedule(j["k_schedule"].get<std::string>());
    }
    cfg.hidden1 = j.value("hidden1", cfg.hidden1);
    cfg.hidden2 = j.value("hidden2", cfg.hidden2);
    if (j.contains("agg")) {
      cfg.agg = agg_mode_from_name(j["agg"].get<std::string>());
    }
  }

  if (opt.epochs) cfg.train.epochs = *opt.epochs;
  if (opt.batch_size) cfg.train.batch_size = *opt.batch_size;
  if (opt.warmup) cfg.train.warmup_epochs = *opt.warmup;
  if (opt.lr_max) cfg.train.lr_max = *opt.lr_max;
  if (opt.a_inv) cfg.train.a_inv = *opt.a_inv;
  if (opt.n_ep) {
    cfg.train.n_ep = *opt.n_ep;
    n_ep_given = true;
  }
  if (opt.seed) cfg.train.seed = *opt.seed;
  if (opt.loss_kind) cfg.train.loss.kind = loss_kind_from_name(*opt.loss_kind);
  if (opt.n_neg) cfg.train.loss.n_neg = *opt.n_neg;
  if (opt.temperature) cfg.train.loss.temperature = *opt.temperature;
  if (opt.k_schedule) cfg.k_list = parse_k_schedule(*opt.k_schedule);
  if (opt.hidden1) cfg.hidden1 = *opt.hidden1;
  if (opt.hidden2) cfg.hidden2 = *opt.hidden2;
  if (opt.agg) cfg.agg = agg_mode_from_name(*opt.agg);
  if (!n_ep_given) cfg.train.n_ep = cfg.train.warmup_epochs;
  return cfg;
}

ordered_json config_to_json(const MergedTrainConfig& cfg) {
  ordered_json j;
  j["epochs"] = cfg.train.epochs;
  j["batch_size"] = cfg.train.batch_size;
  j["warmup_epochs"] = cfg.train.warmup_epochs;
  j["lr_max"] = cfg.train.lr_max;
  j["a_inv"] = cfg.train.a_inv;
  j["n_ep"] = cfg.train.n_ep;
  j["seed"] = cfg.train.seed;
  j["loss"] = {{"kind", loss_kind_name(cfg.train.loss.kind)},
               {"n_neg", cfg.train.loss.n_neg},
               {"temperature", cfg.train.loss.temperature}};
  ordered_json ks = ordered_json::array();
  for (int k : cfg.k_list) ks.push_back(k);
  j["k_schedule"] = ks;
  j["hidden1"] = cfg.hidden1;
  j["hidden2"] = cfg.hidden2;
  j["agg"] = agg_mode_name(cfg.agg);
  return j;
}

void write_train_outputs(const fs::path& out, const TrainReport& report) {
  ordered_json j;
  j["checkpoint"] = "checkpoint";
  j["epochs"] = ordered_json::array();
  for (const auto& e : report.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"loss", e.mean_loss},
                           {"lr", e.lr},
                           {"a_inv_active", e.a_inv_active}});
  }
  write_text_file(out / "train_report.json", j.dump(2) + "\n");

  std::string csv = "epoch,loss,lr,a_inv_active\n";
  for (const auto& e : report.epochs) {
    char line[128];
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%d\n", e.epoch,
                  e.mean_loss, e.lr, e.a_inv_active ? 1 : 0);
    csv += line;
  }
  write_text_file(out / "train_log.csv", csv);
}

int run_synth(const SyntheticWorldConfig& wc, const std::string& out_flag) {
  const fs::path out = resolve_out(out_flag, "synth");

  ordered_json cfg_json;
  cfg_json["n_classes"] = wc.n_classes;
  cfg_json["n_unseen"] = wc.n_unseen;
  cfg_json["visual_dim"] = wc.visual_dim;
  cfg_json["semantic_dim"] = wc.semantic_dim;
  cfg_json["n_descriptions"] = wc.n_descriptions;
  cfg_json["samples_per_class"] = wc.samples_per_class;
  cfg_json["visual_noise"] = wc.visual_noise;
  cfg_json["description_spread"] = wc.description_spread;
  cfg_json["ambiguity_pairs"] = wc.ambiguity_pairs;
  cfg_json["with_motion"] = wc.with_motion;
  cfg_json["seed"] = wc.seed;
  write_run_manifest(out, "synth", cfg_json, {});

  const SyntheticWorld world = gen_synthetic_world(wc);
  save_world(out, world.embeddings, world.codebook);
  const SplitSpec splits =
      make_tri_splits(world.codebook.class_ids(), wc.n_unseen, wc.seed);
  save_splits(out / "splits.json", splits);
  save_oracle_report(out / "oracle.json", world.oracle);

  std::printf("world: %d classes, %zu samples, D=%d, C_e=%d\n", wc.n_classes,
              world.embeddings.size(), wc.visual_dim, wc.semantic_dim);
  std::printf("nearest-mean oracle accuracy: %.4f\n", world.oracle.accuracy);
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

int run_train(const TrainOptions& opt) {
  const MergedTrainConfig cfg = merge_train_config(opt);
  if (opt.threads > 0) set_threads(opt.threads);
  const fs::path data_dir = opt.data_dir;
  const fs::path manifest = data_dir / "manifest.json";
  const fs::path splits_path = data_dir / "splits.json";
  const fs::path out = resolve_out(opt.out_dir, "train");

  write_run_manifest(out, "train", config_to_json(cfg),
                     {manifest, splits_path});

  const EmbeddingSet data = load_embedding_set(manifest);
  const SemanticCodebook codebook = load_codebook(manifest);
  const SplitSpec splits = load_splits(splits_path);
  if (opt.fold < 0 || static_cast<std::size_t>(opt.fold) >= splits.folds.size()) {
    throw ValidationError("fold index out of range");
  }
  const SplitFold& fold = splits.folds[static_cast<std::size_t>(opt.fold)];

  AlignmentModel model =
      build_model(data.visual_dim, codebook.semantic_dim, cfg.hidden1,
                  cfg.hidden2, cfg.k_list, cfg.agg, cfg.train.seed);

  EpochCallback on_epoch;
  if (opt.checkpoint_every > 0) {
    on_epoch = [&](int epoch, const AlignmentModel& m) {
      if ((epoch + 1) % opt.checkpoint_every == 0) {
        char name[32];
        std::snprintf(name, sizeof(name), "checkpoint_ep%04d", epoch);
        save_checkpoint(out / name, m);
      }
    };
  }

  TrainReport report =
      train(model, data, codebook, fold, cfg.train,
            opt.serial ? ExecMode::kSerial : ExecMode::kParallel, on_epoch);
  save_checkpoint(out / "checkpoint", model);
  report.checkpoint_ref = "checkpoint";
  write_train_outputs(out, report);

  std::printf("trained %zu branches, %d epochs, final loss %.6f\n",
              model.branches.size(), cfg.train.epochs,
              report.epochs.back().mean_loss);
  std::printf("wall time: %.1f s\n", report.wall_seconds);
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

int run_eval(const std::vector<std::string>& model_dirs,
             const std::string& data_dir, int fold_idx, bool tri_split,
             const std::string& out_flag, int threads, bool serial) {
  if (threads > 0) set_threads(threads);
  const fs::path manifest = data_dir + "/manifest.json";
  const fs::path splits_path = data_dir + "/splits.json";
  const fs::path out = resolve_out(out_flag, "eval");
  const ExecMode exec = serial ? ExecMode::kSerial : ExecMode::kParallel;

  ordered_json cfg_json;
  cfg_json["models"] = model_dirs;
  cfg_json["fold"] = fold_idx;
  cfg_json["tri_split"] = tri_split;
  std::vector<fs::path> inputs{manifest, splits_path};
  for (const auto& m : model_dirs) inputs.push_back(fs::path(m) / "model.json");
  write_run_manifest(out, "eval", cfg_json, inputs);

  const EmbeddingSet data = load_embedding_set(manifest);
  const SemanticCodebook codebook = load_codebook(manifest);
  const SplitSpec splits = load_splits(splits_path);

  std::vector<AlignmentModel> models;
  for (const auto& dir : model_dirs) {
    AlignmentModel m = load_checkpoint(dir);
    if (m.visual_dim != data.visual_dim ||
        m.semantic_dim != codebook.semantic_dim) {
      throw ValidationError("checkpoint " + dir +
                            ": dims do not match the data manifest");
    }
    models.push_back(std::move(m));
  }

  EvalReport report;
  if (tri_split) {
    report = tri_split_evaluate(models, data, splits, codebook, exec);
  } else {
    if (models.size() != 1) {
      throw ValidationError("single-fold eval expects exactly one --model");
    }
    if (fold_idx < 0 || static_cast<std::size_t>(fold_idx) >= splits.folds.size()) {
      throw ValidationError("fold index out of range");
    }
    report.folds.push_back(evaluate_fold(
        models[0], data, splits.folds[static_cast<std::size_t>(fold_idx)],
        codebook, exec));
    report.mean_accuracy = report.folds[0].accuracy;
  }

  save_eval_report(out / "eval_report.json", report);
  for (std::size_t f = 0; f < report.folds.size(); ++f) {
    char name[48];
    std::snprintf(name, sizeof(name), "confusion_fold%zu.csv", f);
    save_confusion_csv(out / name, report.folds[f]);
    std::snprintf(name, sizeof(name), "per_class_fold%zu.csv", f);
    save_per_class_csv(out / name, report.folds[f]);
  }

  for (std::size_t f = 0; f < report.folds.size(); ++f) {
    std::printf("fold %zu accuracy: %.4f (%zu samples)\n", f,
                report.folds[f].accuracy, report.folds[f].n_samples);
  }
  std::printf("mean accuracy: %.4f\n", report.mean_accuracy);
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

int run_gradcheck(int seeds, double h, double tol, double inject_fault,
                  std::uint64_t seed) {
  GradSuiteConfig cfg;
  cfg.instances = seeds;
  cfg.h = h;
  cfg.seed = seed;
  cfg.inject_fault = inject_fault;
  const GradSuiteResult res = run_gradient_suite(cfg);
  std::printf("gradient suite: %d instances, max relative error %.3e (tolerance %.1e)\n",
              res.instances, res.max_rel_err, tol);
  if (res.redraws > 0) {
    std::printf("redrew %d ill-conditioned instances\n", res.redraws);
  }
  if (res.max_rel_err >= tol) {
    std::printf("FAIL\n");
    return kExitComputation;
  }
  std::printf("PASS\n");
  return 0;
}

int run_score(const std::string& data_dir, const std::string& queries_dir,
              const std::string& k_spec, const std::string& out_flag) {
  const fs::path out = resolve_out(out_flag, "score");
  const fs::path codebook_manifest = fs::path(data_dir) / "manifest.json";
  const fs::path query_manifest = fs::path(queries_dir) / "manifest.json";

  ordered_json cfg_json;
  cfg_json["k_list"] = k_spec;
  write_run_manifest(out, "score", cfg_json, {codebook_manifest, query_manifest});

  const SemanticCodebook codebook = load_codebook(codebook_manifest);
  const EmbeddingSet queries = load_embedding_set(query_manifest);
  if (queries.visual_dim != codebook.semantic_dim) {
    throw ValidationError(
        "training-free scoring expects queries in the semantic space (dim " +
        std::to_string(codebook.semantic_dim) + ")");
  }
  const std::vector<int> k_list = parse_k_schedule(k_spec);

  const std::vector<int> ids = codebook.class_ids();
  std::string csv = "sample_id,predicted_class";
  for (int c : ids) csv += ",score_" + std::to_string(c);
  csv += "\n";
  std::size_t correct = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto q = queries.sample(i);
    int best = ids.front();
    double best_score = -std::numeric_limits<double>::infinity();
    std::string row;
    for (int c : ids) {
      const double s = training_free_score(codebook.cls(c), q, k_list);
      if (s > best_score) {
        best_score = s;
        best = c;
      }
      char buf[32];
      std::snprintf(buf, sizeof(buf), ",%.17g", s);
      row += buf;
    }
    csv += queries.sample_ids[i] + "," + std::to_string(best) + row + "\n";
    if (best == queries.class_of(i)) ++correct;
  }
  write_text_file(out / "scores.csv", csv);
  std::printf("scored %zu queries over %zu classes (k list \"%s\")\n",
              queries.size(), ids.size(), k_spec.c_str());
  std::printf("label agreement: %.4f\n",
              static_cast<double>(correct) / static_cast<double>(queries.size()));
  std::printf("wrote %s\n", (out / "scores.csv").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zero-shot embedding alignment engine"};
  app.require_subcommand(1);

  // synth
  SyntheticWorldConfig wc;
  std::string synth_out;
  bool no_motion = false;
  auto* synth = app.add_subcommand("synth", "generate a synthetic world");
  synth->add_option("--classes", wc.n_classes, "number of classes");
  synth->add_option("--unseen", wc.n_unseen, "unseen classes per fold");
  synth->add_option("--nd", wc.n_descriptions, "descriptions per class");
  synth->add_option("--samples-per-class", wc.samples_per_class, "samples per class");
  synth->add_option("--visual-dim", wc.visual_dim, "visual feature dim");
  synth->add_option("--semantic-dim", wc.semantic_dim, "semantic feature dim");
  synth->add_option("--visual-noise", wc.visual_noise, "visual noise level");
  synth->add_option("--spread", wc.description_spread, "description spread");
  synth->add_option("--ambiguity-pairs", wc.ambiguity_pairs, "near-identical class pairs");
  synth->add_flag("--no-motion", no_motion, "omit motion vectors");
  synth->add_option("--seed", wc.seed, "world seed");
  synth->add_option("--out", synth_out, "output directory");

  // train
  TrainOptions topt;
  auto* tr = app.add_subcommand("train", "train an alignment model");
  tr->add_option("--config", topt.config_path, "JSON training config");
  tr->add_option("--data", topt.data_dir, "world directory")->required();
  tr->add_option("--fold", topt.fold, "split fold index");
  tr->add_option("--out", topt.out_dir, "output directory");
  tr->add_option("--threads", topt.threads, "OpenMP thread count");
  tr->add_flag("--serial", topt.serial, "use the serial reference kernels");
  tr->add_option("--checkpoint-every", topt.checkpoint_every,
                 "also checkpoint every N epochs");
  tr->add_option("--epochs", topt.epochs, "training epochs");
  tr->add_option("--batch-size", topt.batch_size, "batch size");
  tr->add_option("--warmup", topt.warmup, "learning-rate warmup epochs");
  tr->add_option("--n-ep", topt.n_ep, "attention inversion epochs");
  tr->add_option("--lr", topt.lr_max, "peak learning rate");
  tr->add_option("--loss", topt.loss_kind, "xsample|ysample|softmax_ce|jsd");
  tr->add_option("--n-neg", topt.n_neg, "negatives per anchor");
  tr->add_option("--temperature", topt.temperature, "softmax_ce temperature");
  tr->add_option("--k-schedule", topt.k_schedule, "k schedule, e.g. 1_60_5");
  tr->add_option("--hidden1", topt.hidden1, "first hidden width");
  tr->add_option("--hidden2", topt.hidden2, "second hidden width");
  tr->add_option("--agg", topt.agg, "aggregation: topk|att|avg");
  tr->add_option("--seed", topt.seed, "training seed");
  std::optional<bool>& a_inv_opt = topt.a_inv;
  tr->add_flag_callback("--a-inv", [&a_inv_opt]() { a_inv_opt = true; },
                        "enable attention inversion warmup");
  tr->add_flag_callback("--no-a-inv", [&a_inv_opt]() { a_inv_opt = false; },
                        "disable attention inversion warmup");

  // eval
  std::vector<std::string> eval_models;
  std::string eval_data, eval_out;
  int eval_fold = 0;
  bool tri_split = false, eval_serial = false;
  int eval_threads = 0;
  auto* ev = app.add_subcommand("eval", "zero-shot evaluation");
  ev->add_option("--model", eval_models, "checkpoint directory (repeat for tri-split)")
      ->required();
  ev->add_option("--data", eval_data, "world directory")->required();
  ev->add_option("--fold", eval_fold, "split fold index");
  ev->add_flag("--tri-split", tri_split, "evaluate all three folds (one model each)");
  ev->add_option("--out", eval_out, "output directory");
  ev->add_option("--threads", eval_threads, "OpenMP thread count");
  ev->add_flag("--serial", eval_serial, "use the serial reference kernels");

  // gradcheck
  int gc_seeds = 100;
  double gc_h = 1e-5, gc_tol = 1e-4, gc_fault = 0.0;
  std::uint64_t gc_seed = 2024;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seeds", gc_seeds, "number of random instances");
  gc->add_option("--step", gc_h, "central-difference step");
  gc->add_option("--tol", gc_tol, "max relative error tolerance");
  gc->add_option("--seed", gc_seed, "base seed");
  gc->add_option("--inject-fault", gc_fault,
                 "test fixture: offset one analytic gradient entry");

  // score
  std::string score_data, score_queries, score_k = "1", score_out;
  auto* sc = app.add_subcommand("score", "training-free prompt-ensemble scorer");
  sc->add_option("--data", score_data, "codebook directory")->required();
  sc->add_option("--queries", score_queries, "query embedding directory")->required();
  sc->add_option("--k-list", score_k, "k schedule for the ensemble");
  sc->add_option("--out", score_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      wc.with_motion = !no_motion;
      return run_synth(wc, synth_out);
    }
    if (tr->parsed()) return run_train(topt);
    if (ev->parsed()) {
      return run_eval(eval_models, eval_data, eval_fold, tri_split, eval_out,
                      eval_threads, eval_serial);
    }
    if (gc->parsed()) return run_gradcheck(gc_seeds, gc_h, gc_tol, gc_fault, gc_seed);
    if (sc->parsed()) return run_score(score_data, score_queries, score_k, score_out);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitComputation;
  }
  return 0;
}
