#include "zsalign/numeric.hpp"

#include <algorithm>
#include <cmath>

namespace zsalign {

double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z)));
}

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

Vec l2_normalized(std::span<const double> v, double eps) {
  Vec out(v.begin(), v.end());
  const double n = norm2(v);
  if (n <= eps) return out;
  for (double& x : out) x /= n;
  return out;
}

void matvec(const Matrix& w, std::span<const double> x, std::span<double> out) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    out[r] = dot(w.row(r), x);
  }
}

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) {
    if (x != kNegInf) s += std::exp(x - m);
  }
  return m + std::log(s);
}

Vec masked_softmax(std::span<const double> logits) {
  double m = kNegInf;
  for (double x : logits) m = std::max(m, x);
  if (m == kNegInf) throw ValidationError("masked_softmax: empty support");
  Vec out(logits.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (logits[i] != kNegInf) {
      out[i] = std::exp(logits[i] - m);
      sum += out[i];
    }
  }
  for (double& x : out) x /= sum;
  return out;
}

namespace {

std::size_t total_size(const std::vector<ParamBlock>& blocks) {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.size;
  return n;
}

}  // namespace

void adam_step(const std::vector<ParamBlock>& params,
               const std::vector<ParamBlock>& grads, AdamState& state,
               double lr) {
  const std::size_t n = total_size(params);
  if (state.first_moment.empty()) {
    state.first_moment.assign(n, 0.0);
    state.second_moment.assign(n, 0.0);
  }
  if (state.first_moment.size() != n || total_size(grads) != n) {
    throw std::runtime_error("adam_step: shape mismatch");
  }
  for (const auto& g : grads) {
    for (std::size_t i = 0; i < g.size; ++i) {
      if (!std::isfinite(g.data[i])) {
        throw std::runtime_error("adam_step: non-finite gradient in block '" +
                                 g.name + "'");
      }
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  std::size_t off = 0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    double* p = params[b].data;
    const double* g = grads[b].data;
    for (std::size_t i = 0; i < params[b].size; ++i) {
      double& m = state.first_moment[off + i];
      double& v = state.second_moment[off + i];
      m = state.beta1 * m + (1.0 - state.beta1) * g[i];
      v = state.beta2 * v + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
    off += params[b].size;
  }
}

double grad_check(const std::function<double()>& loss_fn,
                  const std::vector<ParamBlock>& params,
                  const std::vector<ParamBlock>& analytic, double h,
                  GradCheckDetail* detail) {
  double max_rel = 0.0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b].size; ++i) {
      double& p = params[b].data[i];
      const double saved = p;
      p = saved + h;
      const double f_plus = loss_fn();
      p = saved - h;
      const double f_minus = loss_fn();
      p = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw std::runtime_error("grad_check: non-finite loss in block '" +
                                 params[b].name + "'");
      }
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[b].data[i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > max_rel) {
        max_rel = rel;
        if (detail) {
          detail->worst_block = params[b].name;
          detail->worst_index = i;
          detail->worst_analytic = a;
          detail->worst_numeric = numeric;
        }
      }
    }
  }
  return max_rel;
}

}  // namespace zsalign
