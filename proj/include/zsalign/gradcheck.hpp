#pragma once

#include <cstdint>

#include "zsalign/losses.hpp"
#include "zsalign/model.hpp"

namespace zsalign {

// Randomized finite-difference check of the full single-branch loss
// gradient (projection -> top-k attention -> motion add -> concat -> head
// -> loss) as computed by the production batch kernel.
struct GradSuiteConfig {
  int instances = 100;
  double h = 1e-5;
  std::uint64_t seed = 0;
  int visual_dim = 8;
  int semantic_dim = 16;
  int n_descriptions = 8;
  int k = 3;
  int n_neg = 4;
  int n_classes = 4;  // ysample / softmax_ce instances
  int hidden1 = 12;
  int hidden2 = 6;
  LossKind loss = LossKind::kXSample;
  double temperature = 0.5;
  // Test fixture: offset added to one analytic gradient entry so a broken
  // comparison can be exercised end to end.
  double inject_fault = 0.0;
};

struct GradSuiteResult {
  double max_rel_err = 0.0;
  int instances = 0;
  int redraws = 0;  // instances rejected as unresolvable at double precision
};

GradSuiteResult run_gradient_suite(const GradSuiteConfig& cfg);

}  // namespace zsalign
