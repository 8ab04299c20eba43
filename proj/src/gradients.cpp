#include "zsalign/gradients.hpp"

#include <cmath>

namespace zsalign {

BranchTrace branch_forward(const BranchParams& params, AggMode agg, int k,
                           bool inverted, std::span<const double> u,
                           const CodebookClass& cls) {
  BranchTrace t;
  t.u_hd = project(params.proj, u);

  const Matrix& desc = cls.descriptions;
  const std::size_t n_desc = desc.rows;
  if (desc.cols != t.u_hd.size()) {
    throw ValidationError("branch_forward: projection dim does not match descriptions");
  }

  Vec e(desc.cols, 0.0);
  if (agg == AggMode::kUniformAverage) {
    t.weights.assign(n_desc, 1.0 / static_cast<double>(n_desc));
    for (std::size_t i = 0; i < n_desc; ++i) {
      const auto row = desc.row(i);
      for (std::size_t d = 0; d < e.size(); ++d) e[d] += t.weights[i] * row[d];
    }
  } else {
    t.scores = raw_attention(desc, t.u_hd);
    const int eff_k =
        agg == AggMode::kFullAttention ? static_cast<int>(n_desc) : k;
    t.logits = select_topk(t.scores, eff_k, inverted);
    t.weights = attention_weights(t.logits);
    for (int idx : t.logits.selected) {
      const auto i = static_cast<std::size_t>(idx);
      const auto row = desc.row(i);
      for (std::size_t d = 0; d < e.size(); ++d) e[d] += t.weights[i] * row[d];
    }
  }
  t.e_full = compose_motion(std::move(e), cls.motion);

  t.z.resize(2 * t.u_hd.size());
  std::copy(t.u_hd.begin(), t.u_hd.end(), t.z.begin());
  std::copy(t.e_full.begin(), t.e_full.end(),
            t.z.begin() + static_cast<std::ptrdiff_t>(t.u_hd.size()));

  const ScoringHead& head = params.head;
  t.a1.resize(head.w1.rows);
  matvec(head.w1, t.z, t.a1);
  t.h1.resize(t.a1.size());
  for (std::size_t i = 0; i < t.a1.size(); ++i) {
    t.a1[i] += head.b1[i];
    t.h1[i] = t.a1[i] > 0.0 ? t.a1[i] : 0.0;
  }
  t.a2.resize(head.w2.rows);
  matvec(head.w2, t.h1, t.a2);
  t.h2.resize(t.a2.size());
  for (std::size_t i = 0; i < t.a2.size(); ++i) {
    t.a2[i] += head.b2[i];
    t.h2[i] = t.a2[i] > 0.0 ? t.a2[i] : 0.0;
  }
  t.score = dot(head.w3, t.h2) + head.b3[0];
  return t;
}

void branch_backward(const BranchParams& params, AggMode agg, bool inverted,
                     std::span<const double> u, const CodebookClass& cls,
                     const BranchTrace& trace, double d_score,
                     BranchParams& grads) {
  const ScoringHead& head = params.head;
  const std::size_t ce = trace.u_hd.size();

  // Output layer.
  Vec d_h2(trace.h2.size());
  for (std::size_t i = 0; i < trace.h2.size(); ++i) {
    grads.head.w3[i] += d_score * trace.h2[i];
    d_h2[i] = d_score * head.w3[i];
  }
  grads.head.b3[0] += d_score;

  // Second hidden layer.
  Vec d_h1(trace.h1.size(), 0.0);
  for (std::size_t i = 0; i < trace.a2.size(); ++i) {
    const double d_a2 = trace.a2[i] > 0.0 ? d_h2[i] : 0.0;
    if (d_a2 == 0.0) continue;
    grads.head.b2[i] += d_a2;
    auto w_row = head.w2.row(i);
    auto g_row = grads.head.w2.row(i);
    for (std::size_t jj = 0; jj < trace.h1.size(); ++jj) {
      g_row[jj] += d_a2 * trace.h1[jj];
      d_h1[jj] += d_a2 * w_row[jj];
    }
  }

  // First hidden layer.
  Vec d_z(trace.z.size(), 0.0);
  for (std::size_t i = 0; i < trace.a1.size(); ++i) {
    const double d_a1 = trace.a1[i] > 0.0 ? d_h1[i] : 0.0;
    if (d_a1 == 0.0) continue;
    grads.head.b1[i] += d_a1;
    auto w_row = head.w1.row(i);
    auto g_row = grads.head.w1.row(i);
    for (std::size_t jj = 0; jj < trace.z.size(); ++jj) {
      g_row[jj] += d_a1 * trace.z[jj];
      d_z[jj] += d_a1 * w_row[jj];
    }
  }

  // Split the concat: first half feeds u_hd directly, second half is the
  // aggregated embedding (motion addition is a passthrough).
  Vec d_u_hd(d_z.begin(), d_z.begin() + static_cast<std::ptrdiff_t>(ce));
  std::span<const double> d_e(d_z.data() + ce, ce);

  const Matrix& desc = cls.descriptions;
  if (agg == AggMode::kUniformAverage) {
    // Constant weights: no gradient through the attention path.
  } else {
    // Softmax over the selected logits; masked rows received no weight and
    // get no gradient.
    double weighted_sum = 0.0;
    Vec d_w(trace.logits.selected.size());
    for (std::size_t si = 0; si < trace.logits.selected.size(); ++si) {
      const auto i = static_cast<std::size_t>(trace.logits.selected[si]);
      d_w[si] = dot(d_e, desc.row(i));
      weighted_sum += trace.weights[i] * d_w[si];
    }
    const double sign = inverted ? -1.0 : 1.0;
    const double scale = 1.0 / std::sqrt(static_cast<double>(desc.cols));
    for (std::size_t si = 0; si < trace.logits.selected.size(); ++si) {
      const auto i = static_cast<std::size_t>(trace.logits.selected[si]);
      const double d_logit = trace.weights[i] * (d_w[si] - weighted_sum);
      const double d_raw = sign * d_logit * scale;
      if (d_raw == 0.0) continue;
      const auto row = desc.row(i);
      for (std::size_t d = 0; d < ce; ++d) d_u_hd[d] += d_raw * row[d];
    }
  }

  // Projection.
  for (std::size_t r = 0; r < ce; ++r) {
    if (d_u_hd[r] == 0.0) continue;
    grads.proj.b[r] += d_u_hd[r];
    auto g_row = grads.proj.w.row(r);
    for (std::size_t c = 0; c < u.size(); ++c) {
      g_row[c] += d_u_hd[r] * u[c];
    }
  }
}

}  // namespace zsalign
