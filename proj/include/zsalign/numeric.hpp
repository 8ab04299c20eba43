#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace zsalign {

using Vec = std::vector<double>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Input/config problems that abort before any computation (CLI exit code 2).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
};

// log(1 + e^z) without overflow: max(z,0) + log1p(e^(-|z|)).
double softplus(double z);
double sigmoid(double z);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
double cosine(std::span<const double> a, std::span<const double> b);

// Unit-norm copy; the zero vector (norm <= eps) is returned unchanged.
Vec l2_normalized(std::span<const double> v, double eps = 1e-12);

// out = W x
void matvec(const Matrix& w, std::span<const double> x, std::span<double> out);

double log_sum_exp(std::span<const double> v);

// Softmax over entries, where -inf marks masked positions that map to an
// exact 0 weight. Throws ValidationError("empty support") if all entries are
// masked.
Vec masked_softmax(std::span<const double> logits);

// Named view of a flat parameter (or gradient) array, used by the optimizer
// and the finite-difference checker.
struct ParamBlock {
  std::string name;
  double* data = nullptr;
  std::size_t size = 0;
};

struct AdamState {
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Vec first_moment;
  Vec second_moment;
};

// One bias-corrected Adam update over all blocks. Param and grad block lists
// must agree in shape; moments are lazily sized on the first call. A
// non-finite gradient entry raises a runtime_error naming its block.
void adam_step(const std::vector<ParamBlock>& params,
               const std::vector<ParamBlock>& grads, AdamState& state,
               double lr);

// Where the worst relative error occurred, for conditioning diagnostics.
struct GradCheckDetail {
  std::string worst_block;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares `analytic` to central finite differences of `loss_fn` taken over
// every entry of `params` (perturbed in place and restored). Returns the max
// relative error with denominator max(|analytic|, |numeric|, 1e-8).
double grad_check(const std::function<double()>& loss_fn,
                  const std::vector<ParamBlock>& params,
                  const std::vector<ParamBlock>& analytic, double h,
                  GradCheckDetail* detail = nullptr);

}  // namespace zsalign
