#pragma once

#include <string>

#include "zsalign/numeric.hpp"

namespace zsalign {

// Negative-pair construction regime (xsample/ysample) or ablation losses.
enum class LossKind { kXSample, kYSample, kSoftmaxCE, kJSD };

const char* loss_kind_name(LossKind k);
LossKind loss_kind_from_name(const std::string& name);

struct LossConfig {
  LossKind kind = LossKind::kXSample;
  int n_neg = 8;
  double temperature = 0.07;  // softmax_ce only
};

// -log( e^{f_pos} / (e^{f_pos} + sum_j e^{f_neg_j}) ), via log-sum-exp.
// Inputs are softplus-wrapped head scores.
double infonce(double f_pos, const Vec& f_neg);
void infonce_grad(double f_pos, const Vec& f_neg, double& d_pos, Vec& d_neg);

// Cross-entropy of softmax(sim_row / temperature) against true_idx.
// Logits are raw head scores.
double softmax_ce(const Vec& sim_row, int true_idx, double temperature);
void softmax_ce_grad(const Vec& sim_row, int true_idx, double temperature,
                     Vec& d_row);

// Negative Jensen-Shannon MI lower bound over raw scores:
// mean(softplus(-pos)) + mean(softplus(neg)).
double jsd_mi(const Vec& pos_scores, const Vec& neg_scores);
void jsd_mi_grad(const Vec& pos_scores, const Vec& neg_scores, Vec& d_pos,
                 Vec& d_neg);

}  // namespace zsalign
