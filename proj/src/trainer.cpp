#include "zsalign/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "zsalign/gradients.hpp"

namespace zsalign {

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw ValidationError("lr_at: epoch out of range");
  }
  if (epoch < cfg.warmup_epochs) {
    return cfg.lr_max * static_cast<double>(epoch) /
           static_cast<double>(cfg.warmup_epochs);
  }
  if (cfg.epochs == cfg.warmup_epochs) return cfg.lr_max;
  const double t = static_cast<double>(epoch - cfg.warmup_epochs) /
                   static_cast<double>(cfg.epochs - cfg.warmup_epochs);
  return cfg.lr_max * 0.5 * (1.0 + std::cos(M_PI * t));
}

namespace {

// First n_take entries of a partial Fisher-Yates pass, i.e. n_take draws
// without replacement.
std::vector<int> draw_without_replacement(std::vector<int> pool,
                                          std::size_t n_take, Rng& rng) {
  for (std::size_t t = 0; t < n_take; ++t) {
    const std::size_t j = t + rng.uniform_index(pool.size() - t);
    std::swap(pool[t], pool[j]);
  }
  pool.resize(n_take);
  return pool;
}

}  // namespace

std::vector<PairSample> sample_negatives(const std::vector<int>& batch,
                                         const std::vector<int>& batch_classes,
                                         LossKind regime, int n_neg,
                                         const std::vector<int>& seen_classes,
                                         Rng& rng) {
  if (regime != LossKind::kXSample && regime != LossKind::kYSample) {
    throw ValidationError("sample_negatives: regime must be xsample or ysample");
  }
  if (n_neg < 1) throw ValidationError("sample_negatives: n_neg must be >= 1");
  std::vector<PairSample> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    PairSample ps;
    ps.anchor = batch[i];
    ps.anchor_class = batch_classes[i];
    if (regime == LossKind::kXSample) {
      std::vector<int> pool;
      for (std::size_t j = 0; j < batch.size(); ++j) {
        if (batch_classes[j] != ps.anchor_class) pool.push_back(batch[j]);
      }
      if (pool.size() < static_cast<std::size_t>(n_neg)) {
        throw ValidationError("sample_negatives: insufficient negative pool");
      }
      ps.neg_samples =
          draw_without_replacement(std::move(pool), static_cast<std::size_t>(n_neg), rng);
    } else {
      std::vector<int> pool;
      for (int c : seen_classes) {
        if (c != ps.anchor_class) pool.push_back(c);
      }
      if (pool.size() < static_cast<std::size_t>(n_neg)) {
        throw ValidationError("sample_negatives: insufficient negative pool");
      }
      ps.neg_classes =
          draw_without_replacement(std::move(pool), static_cast<std::size_t>(n_neg), rng);
    }
    out.push_back(std::move(ps));
  }
  return out;
}

BatchWork build_batch_work(const EmbeddingSet& data,
                           const SemanticCodebook& codebook,
                           const std::vector<PairSample>& pairs,
                           const LossConfig& loss,
                           const std::vector<int>& seen_classes) {
  BatchWork work;
  if (loss.kind == LossKind::kSoftmaxCE) {
    work.seen_entries.reserve(seen_classes.size());
    for (int c : seen_classes) work.seen_entries.push_back(&codebook.cls(c));
  }
  work.anchors.reserve(pairs.size());
  for (const auto& ps : pairs) {
    AnchorWork aw;
    aw.u = data.sample(static_cast<std::size_t>(ps.anchor));
    aw.cls = &codebook.cls(ps.anchor_class);
    if (loss.kind == LossKind::kSoftmaxCE) {
      const auto it = std::lower_bound(seen_classes.begin(), seen_classes.end(),
                                       ps.anchor_class);
      aw.true_class_pos = static_cast<int>(it - seen_classes.begin());
    }
    for (int j : ps.neg_samples) {
      aw.neg_u.push_back(data.sample(static_cast<std::size_t>(j)));
    }
    for (int c : ps.neg_classes) {
      aw.neg_cls.push_back(&codebook.cls(c));
    }
    work.anchors.push_back(std::move(aw));
  }
  return work;
}

namespace {

// Loss and gradient contribution of a single anchor, accumulated unscaled
// into `gbuf`.
double anchor_loss_grad(const Branch& branch, AggMode agg, bool inverted,
                        const AnchorWork& aw, const BatchWork& work,
                        const LossConfig& loss, BranchParams& gbuf) {
  if (loss.kind == LossKind::kSoftmaxCE) {
    const std::size_t n_cls = work.seen_entries.size();
    std::vector<BranchTrace> traces(n_cls);
    Vec row(n_cls);
    for (std::size_t c = 0; c < n_cls; ++c) {
      traces[c] = branch_forward(branch.params, agg, branch.k, inverted, aw.u,
                                 *work.seen_entries[c]);
      row[c] = traces[c].score;
    }
    const double l = softmax_ce(row, aw.true_class_pos, loss.temperature);
    Vec d_row;
    softmax_ce_grad(row, aw.true_class_pos, loss.temperature, d_row);
    for (std::size_t c = 0; c < n_cls; ++c) {
      branch_backward(branch.params, agg, inverted, aw.u, *work.seen_entries[c],
                      traces[c], d_row[c], gbuf);
    }
    return l;
  }

  const BranchTrace pos = branch_forward(branch.params, agg, branch.k, inverted,
                                         aw.u, *aw.cls);
  const bool x_regime = !aw.neg_u.empty();
  const std::size_t n_neg = x_regime ? aw.neg_u.size() : aw.neg_cls.size();
  std::vector<BranchTrace> negs(n_neg);
  for (std::size_t j = 0; j < n_neg; ++j) {
    negs[j] = x_regime
                  ? branch_forward(branch.params, agg, branch.k, inverted,
                                   aw.neg_u[j], *aw.cls)
                  : branch_forward(branch.params, agg, branch.k, inverted, aw.u,
                                   *aw.neg_cls[j]);
  }

  double l = 0.0;
  double d_pos_score = 0.0;
  Vec d_neg_scores(n_neg);
  if (loss.kind == LossKind::kJSD) {
    Vec neg_scores(n_neg);
    for (std::size_t j = 0; j < n_neg; ++j) neg_scores[j] = negs[j].score;
    l = jsd_mi({pos.score}, neg_scores);
    Vec d_pos_vec;
    jsd_mi_grad({pos.score}, neg_scores, d_pos_vec, d_neg_scores);
    d_pos_score = d_pos_vec[0];
  } else {
    const double f_pos = softplus(pos.score);
    Vec f_neg(n_neg);
    for (std::size_t j = 0; j < n_neg; ++j) f_neg[j] = softplus(negs[j].score);
    l = infonce(f_pos, f_neg);
    double d_f_pos = 0.0;
    Vec d_f_neg;
    infonce_grad(f_pos, f_neg, d_f_pos, d_f_neg);
    d_pos_score = d_f_pos * sigmoid(pos.score);
    for (std::size_t j = 0; j < n_neg; ++j) {
      d_neg_scores[j] = d_f_neg[j] * sigmoid(negs[j].score);
    }
  }

  branch_backward(branch.params, agg, inverted, aw.u, *aw.cls, pos, d_pos_score,
                  gbuf);
  for (std::size_t j = 0; j < n_neg; ++j) {
    if (x_regime) {
      branch_backward(branch.params, agg, inverted, aw.neg_u[j], *aw.cls,
                      negs[j], d_neg_scores[j], gbuf);
    } else {
      branch_backward(branch.params, agg, inverted, aw.u, *aw.neg_cls[j],
                      negs[j], d_neg_scores[j], gbuf);
    }
  }
  return l;
}

void add_params(BranchParams& dst, const BranchParams& src) {
  auto d = dst.blocks();
  auto s = src.blocks();
  for (std::size_t b = 0; b < d.size(); ++b) {
    for (std::size_t i = 0; i < d[b].size; ++i) d[b].data[i] += s[b].data[i];
  }
}

void scale_params(BranchParams& p, double a) {
  for (auto& blk : p.blocks()) {
    for (std::size_t i = 0; i < blk.size; ++i) blk.data[i] *= a;
  }
}

}  // namespace

double branch_batch_grads(const Branch& branch, AggMode agg, bool inverted,
                          const BatchWork& work, const LossConfig& loss,
                          BranchParams& grads, ExecMode exec) {
  const std::size_t n = work.anchors.size();
  if (n == 0) throw ValidationError("branch_batch_grads: empty batch");
  grads.fill(0.0);
  Vec losses(n, 0.0);

  if (exec == ExecMode::kSerial) {
    for (std::size_t i = 0; i < n; ++i) {
      losses[i] = anchor_loss_grad(branch, agg, inverted, work.anchors[i], work,
                                   loss, grads);
    }
  } else {
    const std::size_t bs = static_cast<std::size_t>(kGradBlockSize);
    const std::size_t n_blocks = (n + bs - 1) / bs;
    std::vector<BranchParams> block_grads(n_blocks);
    for (auto& bg : block_grads) {
      bg = branch.params;  // clone shapes
      bg.fill(0.0);
    }
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(n_blocks); ++blk) {
      const std::size_t lo = static_cast<std::size_t>(blk) * bs;
      const std::size_t hi = std::min(lo + bs, n);
      for (std::size_t i = lo; i < hi; ++i) {
        losses[i] = anchor_loss_grad(branch, agg, inverted, work.anchors[i],
                                     work, loss, block_grads[static_cast<std::size_t>(blk)]);
      }
    }
    for (const auto& bg : block_grads) add_params(grads, bg);
  }

  double loss_sum = 0.0;
  for (double l : losses) loss_sum += l;
  scale_params(grads, 1.0 / static_cast<double>(n));
  return loss_sum / static_cast<double>(n);
}

TrainReport train(AlignmentModel& model, const EmbeddingSet& data,
                  const SemanticCodebook& codebook, const SplitFold& fold,
                  const TrainConfig& cfg, ExecMode exec,
                  const EpochCallback& on_epoch) {
  const auto t_start = std::chrono::steady_clock::now();

  if (cfg.epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (cfg.batch_size < 2) throw ValidationError("train: batch_size must be >= 2");
  if (cfg.warmup_epochs < 0 || cfg.warmup_epochs > cfg.epochs) {
    throw ValidationError("train: need 0 <= warmup_epochs <= epochs");
  }
  if (cfg.n_ep < 0 || cfg.n_ep > cfg.epochs) {
    throw ValidationError("train: need 0 <= n_ep <= epochs");
  }
  if (cfg.loss.n_neg < 1) throw ValidationError("train: n_neg must be >= 1");
  if (fold.seen.empty()) throw ValidationError("train: empty seen set");
  if (model.visual_dim != data.visual_dim ||
      model.semantic_dim != codebook.semantic_dim) {
    throw ValidationError("train: model dims do not match data dims");
  }

  std::vector<int> seen_sorted = fold.seen;
  std::sort(seen_sorted.begin(), seen_sorted.end());
  for (int c : seen_sorted) {
    if (!codebook.has_class(c)) {
      throw ValidationError("train: seen class " + std::to_string(c) +
                            " not in codebook");
    }
  }
  for (int c : fold.unseen) {
    if (std::binary_search(seen_sorted.begin(), seen_sorted.end(), c)) {
      throw ValidationError("train: class " + std::to_string(c) +
                            " is both seen and unseen");
    }
  }

  // Training only ever touches the seen-class rows.
  std::vector<int> seen_indices;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (std::binary_search(seen_sorted.begin(), seen_sorted.end(),
                           data.class_of(i))) {
      seen_indices.push_back(static_cast<int>(i));
    }
  }
  if (seen_indices.empty()) {
    throw ValidationError("train: no samples belong to the seen classes");
  }

  Rng rng(Rng::mix(cfg.seed, 0x7261696eULL));
  std::vector<AdamState> adam(model.branches.size());

  // Regime actually used for pair construction; the jsd estimator samples
  // negatives per class like ysample.
  LossKind regime = cfg.loss.kind;
  if (regime == LossKind::kJSD) regime = LossKind::kYSample;

  TrainReport report;
  report.epochs.reserve(static_cast<std::size_t>(cfg.epochs));

  const std::size_t batch_size = static_cast<std::size_t>(cfg.batch_size);
  BranchParams grad_buf = make_branch_params(model.visual_dim, model.semantic_dim,
                                             model.hidden1, model.hidden2);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool inverted = cfg.a_inv && epoch < cfg.n_ep;
    const double lr = lr_at(epoch, cfg);

    rng.shuffle(seen_indices);
    // Full batches only; when the whole seen set is smaller than one batch,
    // train on it as a single batch.
    std::size_t n_batches = seen_indices.size() / batch_size;
    std::size_t eff_batch = batch_size;
    if (n_batches == 0) {
      n_batches = 1;
      eff_batch = seen_indices.size();
    }

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::vector<int> batch(seen_indices.begin() + static_cast<std::ptrdiff_t>(b * eff_batch),
                             seen_indices.begin() + static_cast<std::ptrdiff_t>((b + 1) * eff_batch));
      std::vector<int> batch_classes(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        batch_classes[i] = data.class_of(static_cast<std::size_t>(batch[i]));
      }

      std::vector<PairSample> pairs;
      if (cfg.loss.kind == LossKind::kSoftmaxCE) {
        pairs.reserve(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) {
          PairSample ps;
          ps.anchor = batch[i];
          ps.anchor_class = batch_classes[i];
          pairs.push_back(std::move(ps));
        }
      } else {
        pairs = sample_negatives(batch, batch_classes, regime, cfg.loss.n_neg,
                                 seen_sorted, rng);
      }
      const BatchWork work =
          build_batch_work(data, codebook, pairs, cfg.loss, seen_sorted);

      for (std::size_t bi = 0; bi < model.branches.size(); ++bi) {
        const double batch_loss =
            branch_batch_grads(model.branches[bi], model.agg, inverted, work,
                               cfg.loss, grad_buf, exec);
        if (!std::isfinite(batch_loss)) {
          throw std::runtime_error("train: non-finite loss at epoch " +
                                   std::to_string(epoch) + " batch " +
                                   std::to_string(b) + " branch " +
                                   std::to_string(bi));
        }
        adam_step(model.branches[bi].params.blocks(), grad_buf.blocks(),
                  adam[bi], lr);
        loss_sum += batch_loss;
        ++loss_count;
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(loss_count);
    stats.lr = lr;
    stats.a_inv_active = inverted;
    report.epochs.push_back(stats);
    if (on_epoch) on_epoch(epoch, model);
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return report;
}

}  // namespace zsalign
