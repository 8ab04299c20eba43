#pragma once

#include <span>

#include "zsalign/model.hpp"

namespace zsalign {

// Cached intermediates of one branch forward pass, enough to run the fixed
// reverse pass without recomputation.
struct BranchTrace {
  Vec u_hd;     // C_e
  Vec scores;   // N_d raw attention scores (empty for uniform average)
  AttentionLogits logits;
  Vec weights;  // N_d softmax weights (uniform for kUniformAverage)
  Vec e_full;   // C_e aggregated embedding after motion addition
  Vec z;        // 2*C_e concat(u_hd, e_full)
  Vec a1, h1;   // first hidden pre/post ReLU
  Vec a2, h2;   // second hidden pre/post ReLU
  double score = 0.0;
};

BranchTrace branch_forward(const BranchParams& params, AggMode agg, int k,
                           bool inverted, std::span<const double> u,
                           const CodebookClass& cls);

// Reverse pass for the fixed graph
//   projection -> scaled attention -> top-k mask -> softmax -> aggregate
//   -> motion add -> concat -> 3-layer head,
// accumulating d(score)/d(params) * d_score into `grads`. The description
// matrix and motion vector are inputs, not parameters; the projection
// receives gradient both through the concatenated u_hd and through the
// attention logits. Masked rows contribute exactly zero.
void branch_backward(const BranchParams& params, AggMode agg, bool inverted,
                     std::span<const double> u, const CodebookClass& cls,
                     const BranchTrace& trace, double d_score,
                     BranchParams& grads);

}  // namespace zsalign
