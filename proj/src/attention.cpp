#include "zsalign/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace zsalign {

Vec project(const ProjectionLayer& layer, std::span<const double> u) {
  if (layer.w.cols != u.size() || layer.w.rows != layer.b.size()) {
    throw ValidationError("project: dimension mismatch");
  }
  Vec out(layer.b);
  for (std::size_t r = 0; r < layer.w.rows; ++r) {
    out[r] += dot(layer.w.row(r), u);
  }
  return out;
}

Vec raw_attention(const Matrix& descriptions, std::span<const double> u_hd) {
  if (descriptions.cols != u_hd.size()) {
    throw ValidationError("raw_attention: dimension mismatch");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(descriptions.cols));
  Vec scores(descriptions.rows);
  for (std::size_t i = 0; i < descriptions.rows; ++i) {
    scores[i] = scale * dot(descriptions.row(i), u_hd);
  }
  return scores;
}

AttentionLogits select_topk(const Vec& scores, int k, bool inverted) {
  if (k < 1) throw ValidationError("select_topk: k must be >= 1");
  const std::size_t n = scores.size();
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Largest effective score first; ties go to the lowest index.
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = inverted ? -scores[static_cast<std::size_t>(a)]
                               : scores[static_cast<std::size_t>(a)];
    const double sb = inverted ? -scores[static_cast<std::size_t>(b)]
                               : scores[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  });

  AttentionLogits out;
  out.values.assign(n, kNegInf);
  out.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk));
  std::sort(out.selected.begin(), out.selected.end());
  for (int idx : out.selected) {
    const auto i = static_cast<std::size_t>(idx);
    out.values[i] = inverted ? -scores[i] : scores[i];
  }
  return out;
}

Vec attention_weights(const AttentionLogits& logits) {
  return masked_softmax(logits.values);
}

Vec aggregate(const Matrix& descriptions, const AttentionLogits& logits) {
  if (descriptions.rows != logits.values.size()) {
    throw ValidationError("aggregate: logits do not match description rows");
  }
  const Vec w = attention_weights(logits);
  Vec e(descriptions.cols, 0.0);
  for (int idx : logits.selected) {
    const auto i = static_cast<std::size_t>(idx);
    const auto row = descriptions.row(i);
    for (std::size_t d = 0; d < e.size(); ++d) e[d] += w[i] * row[d];
  }
  return e;
}

Vec compose_motion(Vec e, const std::optional<Vec>& motion) {
  if (!motion) return e;
  if (motion->size() != e.size()) {
    throw ValidationError("compose_motion: dimension mismatch");
  }
  for (std::size_t i = 0; i < e.size(); ++i) e[i] += (*motion)[i];
  return e;
}

}  // namespace zsalign
