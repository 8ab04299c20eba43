#pragma once

#include <optional>
#include <span>
#include <vector>

#include "zsalign/numeric.hpp"

namespace zsalign {

// Per-branch affine map from visual space (D) to semantic space (C_e).
// Branches do not share projections.
struct ProjectionLayer {
  Matrix w;  // C_e x D
  Vec b;     // C_e
};

// u_hd = W u + b
Vec project(const ProjectionLayer& layer, std::span<const double> u);

// Scaled cross-attention scores against a class's description rows:
// score_i = <row_i, u_hd> / sqrt(C_e).
Vec raw_attention(const Matrix& descriptions, std::span<const double> u_hd);

// Top-k selection result: non-selected positions carry -inf so the softmax
// gradient through them is exactly zero.
struct AttentionLogits {
  Vec values;                 // N_d, -inf outside the selection
  std::vector<int> selected;  // ascending, size min(k, N_d)
};

// Keeps the k largest scores (ties broken toward the lowest index); the rest
// are masked to -inf. With inverted=true the scores are negated first, so
// the k *least* aligned rows are kept and weighted by softmax of the
// negated scores. k > N_d degrades to k = N_d.
AttentionLogits select_topk(const Vec& scores, int k, bool inverted);

// Softmax weights over the selection (zero elsewhere).
Vec attention_weights(const AttentionLogits& logits);

// Convex combination of the selected description rows.
Vec aggregate(const Matrix& descriptions, const AttentionLogits& logits);

// e + m; identity when the motion vector is absent. No re-normalization.
Vec compose_motion(Vec e, const std::optional<Vec>& motion);

}  // namespace zsalign
