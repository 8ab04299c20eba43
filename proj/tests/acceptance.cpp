// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. argv[1] names the CLI binary (used by the determinism
// criterion); it defaults to "./zsalign".

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "zsalign/data.hpp"
#include "zsalign/eval.hpp"
#include "zsalign/gradcheck.hpp"
#include "zsalign/io.hpp"
#include "zsalign/model.hpp"
#include "zsalign/rng.hpp"
#include "zsalign/trainer.hpp"

namespace fs = std::filesystem;
using namespace zsalign;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what) {
  std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion,
              what.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---------------------------------------------------------------- 1
void criterion_gradients() {
  const double t0 = now_s();
  GradSuiteConfig cfg;  // C_e=16, D=8, N_d=8, k=3, n_neg=4
  cfg.instances = 100;
  cfg.h = 1e-5;
  cfg.seed = 2024;
  const GradSuiteResult res = run_gradient_suite(cfg);
  const double elapsed = now_s() - t0;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "gradient check: max rel err %.3e over %d instances in %.1f s",
                res.max_rel_err, res.instances, elapsed);
  report(1, res.max_rel_err < 1e-4 && res.instances == 100 && elapsed < 60.0, buf);
}

// ---------------------------------------------------------------- 2
AttentionLogits topk_reference(const Vec& scores, int k, bool inverted) {
  const std::size_t n = scores.size();
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    const double sa = inverted ? -scores[(std::size_t)a] : scores[(std::size_t)a];
    const double sb = inverted ? -scores[(std::size_t)b] : scores[(std::size_t)b];
    return sa > sb;
  });
  AttentionLogits out;
  out.values.assign(n, kNegInf);
  const std::size_t kk = std::min<std::size_t>((std::size_t)k, n);
  out.selected.assign(idx.begin(), idx.begin() + (std::ptrdiff_t)kk);
  std::sort(out.selected.begin(), out.selected.end());
  for (int i : out.selected) {
    out.values[(std::size_t)i] =
        inverted ? -scores[(std::size_t)i] : scores[(std::size_t)i];
  }
  return out;
}

void criterion_topk_oracle() {
  Rng rng(777);
  int checked = 0;
  bool ok = true;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(16);
    const int k = 1 + (int)rng.uniform_index(20);
    Vec scores(n);
    for (auto& s : scores) {
      s = rng.uniform() < 0.5 ? (double)rng.uniform_index(4) * 0.5
                              : 2.0 * (rng.uniform() - 0.5);
    }
    for (bool inverted : {false, true}) {
      const AttentionLogits got = select_topk(scores, k, inverted);
      const AttentionLogits want = topk_reference(scores, k, inverted);
      if (got.selected != want.selected || got.values != want.values) {
        ok = false;
        break;
      }
      ++checked;
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "top-k matches the full-sort oracle on %d selections", checked);
  report(2, ok && checked == 2000, buf);
}

// ---------------------------------------------------------------- 3
void criterion_attention_invariants() {
  Rng rng(778);
  bool ok = true;
  double worst_sum = 0.0, worst_resid = 0.0;
  for (int trial = 0; trial < 300 && ok; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(12);
    const std::size_t d = 3 + rng.uniform_index(8);
    const int k = 1 + (int)rng.uniform_index(n + 2);
    Matrix desc(n, d);
    for (auto& x : desc.data) x = rng.gaussian();
    Vec scores(n);
    for (auto& s : scores) s = rng.gaussian();
    const AttentionLogits lg = select_topk(scores, k, false);
    const Vec w = attention_weights(lg);

    std::size_t nonzero = 0;
    double sum = 0.0;
    for (double x : w) {
      if (x != 0.0) ++nonzero;
      if (x < 0.0) ok = false;
      sum += x;
    }
    worst_sum = std::max(worst_sum, std::fabs(sum - 1.0));
    if (nonzero != std::min<std::size_t>((std::size_t)k, n)) ok = false;

    // Barycentric reconstruction with independently recomputed weights.
    double m = kNegInf;
    for (int i : lg.selected) m = std::max(m, scores[(std::size_t)i]);
    double z = 0.0;
    std::map<int, double> wref;
    for (int i : lg.selected) {
      wref[i] = std::exp(scores[(std::size_t)i] - m);
      z += wref[i];
    }
    const Vec e = aggregate(desc, lg);
    Vec recon(d, 0.0);
    for (int i : lg.selected) {
      for (std::size_t dd = 0; dd < d; ++dd) {
        recon[dd] += (wref[i] / z) * desc.at((std::size_t)i, dd);
      }
    }
    for (std::size_t dd = 0; dd < d; ++dd) {
      worst_resid = std::max(worst_resid, std::fabs(e[dd] - recon[dd]));
    }
  }
  ok = ok && worst_sum <= 1e-12 && worst_resid < 1e-9;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "attention weights: max |sum-1| %.2e, hull residual %.2e",
                worst_sum, worst_resid);
  report(3, ok, buf);
}

// ---------------------------------------------------------------- 4
void criterion_loss_closed_forms() {
  bool ok = true;
  for (int n : {1, 8, 32}) {
    const Vec neg((std::size_t)n, 1.3);
    if (std::fabs(infonce(1.3, neg) - std::log(1.0 + n)) > 1e-12) ok = false;
  }
  const Vec uniform_row(7, 0.42);
  for (double t : {0.07, 1.0, 2.0}) {
    if (std::fabs(softmax_ce(uniform_row, 3, t) - std::log(7.0)) > 1e-12) ok = false;
  }
  if (std::fabs(jsd_mi(Vec{0.0, 0.0}, Vec{0.0, 0.0, 0.0}) - 2.0 * std::log(2.0)) >
      1e-12) {
    ok = false;
  }
  report(4, ok,
         "loss closed forms: ln(1+n_neg) uniform InfoNCE, ln(C) uniform CE, "
         "2 ln 2 zero-score JSD");
}

// ---------------------------------------------------------------- 5
struct E2EOutcome {
  double accuracy = 0.0;
  double final_loss = 0.0;
  double oracle = 0.0;
  double seconds = 0.0;
};

E2EOutcome run_e2e(std::uint64_t seed) {
  const double t0 = now_s();
  SyntheticWorldConfig wc;
  wc.n_classes = 10;
  wc.n_unseen = 2;
  wc.visual_dim = 16;
  wc.semantic_dim = 24;
  wc.n_descriptions = 20;
  wc.samples_per_class = 50;
  wc.visual_noise = 0.03;
  wc.description_spread = 0.1;
  wc.seed = seed;
  const SyntheticWorld world = gen_synthetic_world(wc);

  const SplitSpec splits = make_tri_splits(world.codebook.class_ids(), 2, seed);
  const SplitFold& fold = splits.folds[0];

  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 32;
  cfg.warmup_epochs = 7;
  cfg.n_ep = 7;
  cfg.lr_max = 5e-3;
  cfg.a_inv = true;
  cfg.loss.kind = LossKind::kXSample;
  cfg.loss.n_neg = 8;
  cfg.seed = seed;

  AlignmentModel model = build_model(wc.visual_dim, wc.semantic_dim, 48, 24,
                                     {1, 5, 10}, AggMode::kTopK, seed);
  const TrainReport tr = train(model, world.embeddings, world.codebook, fold, cfg);
  const FoldEval ev = evaluate_fold(model, world.embeddings, fold, world.codebook);

  E2EOutcome out;
  out.accuracy = ev.accuracy;
  out.final_loss = tr.epochs.back().mean_loss;
  out.oracle = world.oracle.accuracy;
  out.seconds = now_s() - t0;
  return out;
}

void criterion_e2e_convergence() {
  const std::uint64_t seed = 3;
  const E2EOutcome a = run_e2e(seed);
  const E2EOutcome b = run_e2e(seed);
  const bool deterministic =
      a.accuracy == b.accuracy && a.final_loss == b.final_loss;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "end-to-end: oracle %.3f, unseen accuracy %.3f (>=0.95), "
                "%.1f s, deterministic=%d",
                a.oracle, a.accuracy, a.seconds + b.seconds, deterministic);
  report(5, a.oracle == 1.0 && a.accuracy >= 0.95 && a.seconds < 300.0 &&
             deterministic,
         buf);
}

// ---------------------------------------------------------------- 6
void criterion_ablation_orderings() {
  SyntheticWorldConfig wc;
  wc.n_classes = 14;
  wc.n_unseen = 4;
  wc.visual_dim = 10;
  wc.semantic_dim = 14;
  wc.n_descriptions = 20;
  wc.samples_per_class = 50;
  wc.visual_noise = 0.1;
  wc.description_spread = 0.1;
  wc.ambiguity_pairs = 2;
  wc.with_motion = false;

  TrainConfig base;
  base.epochs = 60;
  base.batch_size = 32;
  base.warmup_epochs = 15;
  base.n_ep = 15;
  base.lr_max = 3e-3;
  base.loss.n_neg = 8;

  const std::vector<AblationVariant> variants{
      parse_variant("xsample8:loss=xsample,n_neg=8,k=5,agg=topk,ainv=on", base.loss),
      parse_variant("ysample8:loss=ysample,n_neg=8,k=5,agg=topk,ainv=on", base.loss),
      parse_variant("mla_topk:loss=xsample,n_neg=8,k=5_15_5,agg=topk,ainv=on", base.loss),
      parse_variant("single_avg:loss=xsample,n_neg=8,k=5,agg=avg,ainv=off", base.loss),
      parse_variant("topk_ainv_on:loss=xsample,n_neg=8,k=5,agg=topk,ainv=on", base.loss),
      parse_variant("topk_ainv_off:loss=xsample,n_neg=8,k=5,agg=topk,ainv=off", base.loss),
  };

  std::vector<std::uint64_t> seeds;
  for (int s = 0; s < 10; ++s) seeds.push_back(100 + (std::uint64_t)s);
  const std::vector<int> unseen{0, 1, 2, 3};

  const AblationTable table =
      run_ablation(wc, variants, base, seeds, 48, 24, ExecMode::kParallel,
                   unseen, 2);

  std::map<std::string, std::map<std::uint64_t, double>> acc;
  for (const auto& row : table.rows) acc[row.variant][row.seed] = row.accuracy;
  auto count_wins = [&](const std::string& a, const std::string& b) {
    int wins = 0;
    for (auto s : seeds) {
      if (acc[a][s] > acc[b][s]) ++wins;
    }
    return wins;
  };
  const int wins_a = count_wins("xsample8", "ysample8");
  const int wins_b = count_wins("mla_topk", "single_avg");
  const int wins_c = count_wins("topk_ainv_on", "topk_ainv_off");

  std::printf("--- ablation table (criterion 6) ---\n%s", table.to_csv().c_str());
  const fs::path out = fs::path("acceptance_artifacts");
  fs::create_directories(out);
  write_text_file(out / "ablation_table.csv", table.to_csv());

  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "ablation orderings: xsample>ysample %d/10, mla>single-avg "
                "%d/10, a_inv on>off %d/10 (need >=7 each)",
                wins_a, wins_b, wins_c);
  report(6, wins_a >= 7 && wins_b >= 7 && wins_c >= 7, buf);
}

// ---------------------------------------------------------------- 7
bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::string ca((std::istreambuf_iterator<char>(fa)),
                 std::istreambuf_iterator<char>());
  std::string cb((std::istreambuf_iterator<char>(fb)),
                 std::istreambuf_iterator<char>());
  return !ca.empty() && ca == cb;
}

void criterion_cli_determinism(const std::string& cli) {
  const fs::path root = "acceptance_tmp";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string world = (root / "world").string();

  auto sh = [&](const std::string& cmd) {
    const std::string full = cmd + " > /dev/null 2>&1";
    return std::system(full.c_str());
  };

  bool ok = sh(cli + " synth --classes 8 --unseen 2 --nd 10 --samples-per-class 20"
                     " --visual-dim 12 --semantic-dim 16 --visual-noise 0.05"
                     " --spread 0.1 --seed 11 --out " + world) == 0;

  const std::string train_flags =
      " train --data " + world +
      " --fold 0 --epochs 6 --batch-size 24 --warmup 2 --lr 2e-3"
      " --k-schedule 1,3 --hidden1 24 --hidden2 12 --n-neg 4 --seed 9 --out ";
  const std::string eval_flags = " --data " + world + " --fold 0 --out ";

  ok = ok && sh(cli + train_flags + (root / "run_a").string()) == 0;
  ok = ok && sh(cli + train_flags + (root / "run_b").string()) == 0;
  ok = ok && sh(cli + " eval --model " + (root / "run_a" / "checkpoint").string() +
                eval_flags + (root / "eval_a").string()) == 0;
  ok = ok && sh(cli + " eval --model " + (root / "run_b" / "checkpoint").string() +
                eval_flags + (root / "eval_b").string()) == 0;

  bool identical = ok;
  for (const char* f :
       {"checkpoint/model.json", "checkpoint/branch_0000.f32",
        "checkpoint/branch_0001.f32", "train_report.json", "train_log.csv"}) {
    identical = identical && same_bytes(root / "run_a" / f, root / "run_b" / f);
  }
  for (const char* f :
       {"eval_report.json", "confusion_fold0.csv", "per_class_fold0.csv"}) {
    identical = identical && same_bytes(root / "eval_a" / f, root / "eval_b" / f);
  }
  report(7, identical,
         "two cmd_train + cmd_eval runs with one seed produce bit-identical "
         "checkpoints and reports");
}

// ---------------------------------------------------------------- 8
void criterion_hygiene() {
  SyntheticWorldConfig wc;
  wc.n_classes = 8;
  wc.n_unseen = 2;
  wc.visual_dim = 10;
  wc.semantic_dim = 14;
  wc.n_descriptions = 8;
  wc.samples_per_class = 16;
  wc.visual_noise = 0.1;
  wc.description_spread = 0.2;
  wc.seed = 21;
  const SyntheticWorld world = gen_synthetic_world(wc);
  SplitFold fold;
  for (int c = 0; c < 6; ++c) fold.seen.push_back(c);
  fold.unseen = {6, 7};

  world.embeddings.reset_audit();
  world.codebook.reset_audit();

  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 24;
  cfg.warmup_epochs = 2;
  cfg.n_ep = 2;
  cfg.lr_max = 1e-3;
  cfg.loss.kind = LossKind::kYSample;  // touches every seen codebook entry
  cfg.loss.n_neg = 5;
  cfg.seed = 4;
  AlignmentModel model =
      build_model(wc.visual_dim, wc.semantic_dim, 16, 8, {1, 3}, AggMode::kTopK, 4);
  train(model, world.embeddings, world.codebook, fold, cfg);

  bool clean = true;
  for (std::size_t i = 0; i < world.embeddings.size(); ++i) {
    const int c = world.embeddings.class_of(i);
    if ((c == 6 || c == 7) && world.embeddings.reads_of(i) != 0) clean = false;
  }
  for (int c : fold.unseen) {
    if (world.codebook.reads_of_class(c) != 0) clean = false;
  }
  std::uint64_t seen_reads = 0;
  for (int c : fold.seen) seen_reads += world.codebook.reads_of_class(c);

  // Negative control: the audit must actually detect an unseen access.
  (void)world.codebook.cls(6);
  const bool detects = world.codebook.reads_of_class(6) == 1;

  report(8, clean && seen_reads > 0 && detects,
         "zero-shot hygiene: no unseen sample or codebook entry read during "
         "training; audit detects the negative control");
}

// ---------------------------------------------------------------- 9
void criterion_training_free() {
  Rng rng(31);
  const int ce = 12;
  CodebookClass cls;
  cls.id = 0;
  cls.name = "c0";
  Vec row((std::size_t)ce);
  for (auto& x : row) x = rng.gaussian();
  row = l2_normalized(row);
  cls.descriptions = Matrix(6, (std::size_t)ce);
  for (std::size_t r = 0; r < 6; ++r) {
    std::copy(row.begin(), row.end(), cls.descriptions.row(r).begin());
  }
  Vec q((std::size_t)ce);
  for (auto& x : q) x = rng.gaussian();
  q = l2_normalized(q);

  const std::vector<int> k_list{1, 2, 5};
  const double got = training_free_score(cls, q, k_list);
  const double want = 3.0 * cosine(q, row);
  const bool identical_rows_ok = std::fabs(got - want) < 1e-9;

  // Equal similarities with k = N_d: aggregation equals the row mean.
  CodebookClass sym;
  sym.id = 1;
  sym.name = "sym";
  sym.descriptions = Matrix(2, 4);
  const Vec r0 = l2_normalized(Vec{1.0, 0.7, 0.0, 0.0});
  const Vec r1 = l2_normalized(Vec{1.0, -0.7, 0.0, 0.0});
  std::copy(r0.begin(), r0.end(), sym.descriptions.row(0).begin());
  std::copy(r1.begin(), r1.end(), sym.descriptions.row(1).begin());
  const Vec q2{1.0, 0.0, 0.0, 0.0};
  Vec mean(4, 0.0);
  for (std::size_t d = 0; d < 4; ++d) {
    mean[d] = 0.5 * (sym.descriptions.at(0, d) + sym.descriptions.at(1, d));
  }
  const double got2 = training_free_score(sym, q2, {2});
  const bool mean_ok = std::fabs(got2 - cosine(q2, mean)) < 1e-6;

  report(9, identical_rows_ok && mean_ok,
         "training-free scorer: identical rows give cosine x |k list|; equal "
         "similarities with k=N_d aggregate to the row mean");
}

// ---------------------------------------------------------------- 10
void criterion_schedule() {
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.warmup_epochs = 15;
  cfg.lr_max = 1e-5;
  const double ramp_at_boundary =
      cfg.lr_max * (double)cfg.warmup_epochs / (double)cfg.warmup_epochs;
  const double cosine_at_boundary = lr_at(cfg.warmup_epochs, cfg);
  const bool ok = lr_at(0, cfg) == 0.0 &&
                  lr_at(cfg.warmup_epochs, cfg) == cfg.lr_max &&
                  std::fabs(ramp_at_boundary - cosine_at_boundary) <
                      1e-15 * cfg.lr_max;
  report(10, ok,
         "schedule: lr(0)=0, lr(warmup)=lr_max, continuous at the warmup "
         "boundary");
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "./zsalign";
  criterion_gradients();
  criterion_topk_oracle();
  criterion_attention_invariants();
  criterion_loss_closed_forms();
  criterion_e2e_convergence();
  criterion_ablation_orderings();
  criterion_cli_determinism(cli);
  criterion_hygiene();
  criterion_training_free();
  criterion_schedule();
  if (g_failures > 0) {
    std::printf("%d criterion(s) FAILED\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
