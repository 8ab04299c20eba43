#include "zsalign/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "zsalign/gradients.hpp"
#include "zsalign/rng.hpp"
#include "zsalign/trainer.hpp"

namespace zsalign {

namespace {

// Finite differences are only valid away from the kinks of the graph: ReLU
// zero crossings and top-k selection boundaries. Instances whose traces sit
// closer than these margins to a kink are redrawn.
constexpr double kReluMargin = 2e-3;
constexpr double kTopkGapMargin = 2e-3;

// Central differences of a loss of magnitude ~1 cannot resolve gradients
// below ulp(loss)/2h ~ 1e-11; against the 1e-8 relative-error floor these
// entries read as large errors for any correct implementation. An instance
// whose worst disagreement sits at such an unresolvable entry is redrawn.
constexpr double kResolvableGrad = 1e-6;

struct Instance {
  Branch branch;
  std::vector<CodebookClass> classes;
  Vec anchor;
  std::vector<Vec> neg_u;
  bool inverted = false;
  BatchWork work;
  LossConfig loss;
};

Vec random_unit(Rng& rng, int dim) {
  Vec v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = rng.gaussian();
  return l2_normalized(v);
}

CodebookClass random_class(Rng& rng, int id, int n_desc, int ce) {
  CodebookClass cls;
  cls.id = id;
  cls.name = "c" + std::to_string(id);
  cls.descriptions = Matrix(static_cast<std::size_t>(n_desc), static_cast<std::size_t>(ce));
  for (int r = 0; r < n_desc; ++r) {
    const Vec row = random_unit(rng, ce);
    std::copy(row.begin(), row.end(),
              cls.descriptions.row(static_cast<std::size_t>(r)).begin());
  }
  cls.motion = random_unit(rng, ce);
  return cls;
}

// True when every pair forward in the batch is safely away from ReLU and
// top-k decision boundaries.
bool well_conditioned(const Instance& inst) {
  auto check_pair = [&](std::span<const double> u, const CodebookClass& cls) {
    const BranchTrace t = branch_forward(inst.branch.params, AggMode::kTopK,
                                         inst.branch.k, inst.inverted, u, cls);
    for (double a : t.a1) {
      if (std::fabs(a) < kReluMargin) return false;
    }
    for (double a : t.a2) {
      if (std::fabs(a) < kReluMargin) return false;
    }
    const std::size_t n_desc = t.scores.size();
    const std::size_t kk = inst.branch.k < static_cast<int>(n_desc)
                               ? static_cast<std::size_t>(inst.branch.k)
                               : n_desc;
    if (kk < n_desc) {
      Vec eff = t.scores;
      if (inst.inverted) {
        for (double& s : eff) s = -s;
      }
      std::sort(eff.begin(), eff.end(), std::greater<double>());
      if (eff[kk - 1] - eff[kk] < kTopkGapMargin) return false;
    }
    return true;
  };

  for (const auto& aw : inst.work.anchors) {
    if (!inst.work.seen_entries.empty()) {
      for (const auto* cls : inst.work.seen_entries) {
        if (!check_pair(aw.u, *cls)) return false;
      }
      continue;
    }
    if (!check_pair(aw.u, *aw.cls)) return false;
    for (const auto& nu : aw.neg_u) {
      if (!check_pair(nu, *aw.cls)) return false;
    }
    for (const auto* nc : aw.neg_cls) {
      if (!check_pair(aw.u, *nc)) return false;
    }
  }
  return true;
}

Instance draw_instance(const GradSuiteConfig& cfg, std::uint64_t sub_seed,
                       bool inverted) {
  Instance inst;
  inst.inverted = inverted;
  inst.loss.kind = cfg.loss;
  inst.loss.n_neg = cfg.n_neg;
  inst.loss.temperature = cfg.temperature;

  Rng rng(sub_seed);
  const AlignmentModel proto =
      build_model(cfg.visual_dim, cfg.semantic_dim, cfg.hidden1, cfg.hidden2,
                  {cfg.k}, AggMode::kTopK, rng.next_u64());
  inst.branch = proto.branches[0];

  const int n_classes =
      (cfg.loss == LossKind::kXSample) ? 1 : std::max(cfg.n_classes, cfg.n_neg + 1);
  for (int c = 0; c < n_classes; ++c) {
    inst.classes.push_back(
        random_class(rng, c, cfg.n_descriptions, cfg.semantic_dim));
  }
  inst.anchor = random_unit(rng, cfg.visual_dim);
  for (int j = 0; j < cfg.n_neg; ++j) {
    inst.neg_u.push_back(random_unit(rng, cfg.visual_dim));
  }

  AnchorWork aw;
  aw.u = inst.anchor;
  aw.cls = &inst.classes[0];
  switch (cfg.loss) {
    case LossKind::kXSample:
      for (const auto& nu : inst.neg_u) aw.neg_u.push_back(nu);
      break;
    case LossKind::kYSample:
    case LossKind::kJSD:
      for (int j = 1; j <= cfg.n_neg; ++j) {
        aw.neg_cls.push_back(&inst.classes[static_cast<std::size_t>(j)]);
      }
      break;
    case LossKind::kSoftmaxCE:
      aw.true_class_pos = 0;
      for (const auto& cls : inst.classes) {
        inst.work.seen_entries.push_back(&cls);
      }
      break;
  }
  inst.work.anchors.push_back(std::move(aw));
  return inst;
}

}  // namespace

GradSuiteResult run_gradient_suite(const GradSuiteConfig& cfg) {
  GradSuiteResult result;
  BranchParams analytic = make_branch_params(cfg.visual_dim, cfg.semantic_dim,
                                             cfg.hidden1, cfg.hidden2);
  BranchParams scratch = analytic;

  for (int i = 0; i < cfg.instances; ++i) {
    const bool inverted = (i % 2) == 1;
    double rel = 0.0;
    bool done = false;
    for (int attempt = 0; attempt < 200 && !done; ++attempt) {
      const Instance inst = draw_instance(
          cfg, Rng::mix(cfg.seed, static_cast<std::uint64_t>(i) * 1000 + static_cast<std::uint64_t>(attempt)),
          inverted);
      if (!well_conditioned(inst)) continue;

      branch_batch_grads(inst.branch, AggMode::kTopK, inst.inverted, inst.work,
                         inst.loss, analytic, ExecMode::kSerial);
      if (cfg.inject_fault != 0.0) {
        analytic.head.b3[0] += cfg.inject_fault;
      }
      auto loss_fn = [&]() {
        return branch_batch_grads(inst.branch, AggMode::kTopK, inst.inverted,
                                  inst.work, inst.loss, scratch, ExecMode::kSerial);
      };
      GradCheckDetail detail;
      rel = grad_check(loss_fn, inst.branch.params.blocks(), analytic.blocks(),
                       cfg.h, &detail);
      const double worst_mag = std::max(std::fabs(detail.worst_analytic),
                                        std::fabs(detail.worst_numeric));
      if (rel > 1e-6 && worst_mag < kResolvableGrad) {
        ++result.redraws;
        continue;
      }
      done = true;
    }
    if (!done) {
      throw std::runtime_error(
          "gradient suite: could not draw a well-conditioned instance");
    }
    result.max_rel_err = std::max(result.max_rel_err, rel);
    ++result.instances;
  }
  return result;
}

}  // namespace zsalign
