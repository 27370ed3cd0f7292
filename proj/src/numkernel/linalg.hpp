#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "numkernel/matrix.hpp"

namespace aotmem {

inline constexpr double kDefaultRankTol = 1e-8;

// Thin SVD m = U·diag(σ)·Vt with σ descending. numeric_rank counts
// σ_i > tol·σ_max.
struct SvdResult {
  Matrix U;
  Vector singular_values;
  Matrix Vt;
  std::size_t numeric_rank = 0;
  double tol = kDefaultRankTol;

  double sigma_max() const { return singular_values.empty() ? 0.0 : singular_values.front(); }
};

SvdResult svd(const Matrix& m, double tol = kDefaultRankTol);
std::size_t numeric_rank(const Matrix& m, double tol = kDefaultRankTol);
double spectral_norm(const Matrix& m);
// σ_max / σ_min of a square matrix; +inf when singular.
double condition_number(const Matrix& m);

// Minimum-Frobenius-norm minimizer of ‖A·X − B‖_F through the truncated
// pseudoinverse (singular values ≤ tol·σ_max are dropped).
Matrix lstsq_min_norm(const Matrix& a, const Matrix& b, double tol = kDefaultRankTol);
Matrix pseudo_inverse(const Matrix& m, double tol = kDefaultRankTol);
// Inverse of a square matrix via partial-pivot LU. Throws ComputationError
// when singular to working precision.
Matrix inverse(const Matrix& m);

Vector softmax(std::span<const double> v);
Vector log_softmax(std::span<const double> v);
double logsumexp(std::span<const double> v);

enum class FitForm { linear, quadratic, cubic, affine_quadratic };

FitForm parse_fit_form(std::string_view name);
std::string_view to_string(FitForm form);

// Coefficients are ascending in degree. For affine_quadratic (a·x² + b) the
// order is [b, a].
struct FitResult {
  FitForm form = FitForm::linear;
  Vector coefficients;
  double residual_norm = 0.0;
  double r_squared = 0.0;

  double evaluate(double x) const;
};

FitResult polyfit_ls(std::span<const double> xs, std::span<const double> ys, FitForm form);
// Design matrix used by polyfit_ls; exposed so tests can solve the normal
// equations independently.
Matrix fit_design_matrix(std::span<const double> xs, FitForm form);

}  // namespace aotmem
