#include "zsalign/losses.hpp"

#include <cmath>

namespace zsalign {

const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::kXSample: return "xsample";
    case LossKind::kYSample: return "ysample";
    case LossKind::kSoftmaxCE: return "softmax_ce";
    case LossKind::kJSD: return "jsd";
  }
  return "xsample";
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "xsample") return LossKind::kXSample;
  if (name == "ysample") return LossKind::kYSample;
  if (name == "softmax_ce") return LossKind::kSoftmaxCE;
  if (name == "jsd") return LossKind::kJSD;
  throw ValidationError("unknown loss kind: " + name);
}

double infonce(double f_pos, const Vec& f_neg) {
  if (f_neg.empty()) throw ValidationError("infonce: empty negatives");
  Vec all;
  all.reserve(f_neg.size() + 1);
  all.push_back(f_pos);
  all.insert(all.end(), f_neg.begin(), f_neg.end());
  return log_sum_exp(all) - f_pos;
}

void infonce_grad(double f_pos, const Vec& f_neg, double& d_pos, Vec& d_neg) {
  if (f_neg.empty()) throw ValidationError("infonce: empty negatives");
  Vec all;
  all.reserve(f_neg.size() + 1);
  all.push_back(f_pos);
  all.insert(all.end(), f_neg.begin(), f_neg.end());
  const Vec q = masked_softmax(all);
  d_pos = q[0] - 1.0;
  d_neg.resize(f_neg.size());
  for (std::size_t j = 0; j < f_neg.size(); ++j) d_neg[j] = q[j + 1];
}

double softmax_ce(const Vec& sim_row, int true_idx, double temperature) {
  if (temperature <= 0.0) throw ValidationError("softmax_ce: temperature must be > 0");
  if (true_idx < 0 || static_cast<std::size_t>(true_idx) >= sim_row.size()) {
    throw ValidationError("softmax_ce: true_idx out of range");
  }
  Vec scaled(sim_row.size());
  for (std::size_t i = 0; i < sim_row.size(); ++i) scaled[i] = sim_row[i] / temperature;
  return log_sum_exp(scaled) - scaled[static_cast<std::size_t>(true_idx)];
}

void softmax_ce_grad(const Vec& sim_row, int true_idx, double temperature,
                     Vec& d_row) {
  if (temperature <= 0.0) throw ValidationError("softmax_ce: temperature must be > 0");
  if (true_idx < 0 || static_cast<std::size_t>(true_idx) >= sim_row.size()) {
    throw ValidationError("softmax_ce: true_idx out of range");
  }
  Vec scaled(sim_row.size());
  for (std::size_t i = 0; i < sim_row.size(); ++i) scaled[i] = sim_row[i] / temperature;
  const Vec p = masked_softmax(scaled);
  d_row.resize(sim_row.size());
  for (std::size_t i = 0; i < sim_row.size(); ++i) {
    d_row[i] = p[i] / temperature;
  }
  d_row[static_cast<std::size_t>(true_idx)] -= 1.0 / temperature;
}

double jsd_mi(const Vec& pos_scores, const Vec& neg_scores) {
  if (pos_scores.empty() || neg_scores.empty()) {
    throw ValidationError("jsd_mi: empty inputs");
  }
  double pos = 0.0;
  for (double s : pos_scores) pos += softplus(-s);
  double neg = 0.0;
  for (double s : neg_scores) neg += softplus(s);
  return pos / static_cast<double>(pos_scores.size()) +
         neg / static_cast<double>(neg_scores.size());
}

void jsd_mi_grad(const Vec& pos_scores, const Vec& neg_scores, Vec& d_pos,
                 Vec& d_neg) {
  if (pos_scores.empty() || neg_scores.empty()) {
    throw ValidationError("jsd_mi: empty inputs");
  }
  d_pos.resize(pos_scores.size());
  for (std::size_t i = 0; i < pos_scores.size(); ++i) {
    d_pos[i] = -sigmoid(-pos_scores[i]) / static_cast<double>(pos_scores.size());
  }
  d_neg.resize(neg_scores.size());
  for (std::size_t i = 0; i < neg_scores.size(); ++i) {
    d_neg[i] = sigmoid(neg_scores[i]) / static_cast<double>(neg_scores.size());
  }
}

}  // namespace zsalign
