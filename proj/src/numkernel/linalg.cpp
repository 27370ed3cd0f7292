#include "numkernel/linalg.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "common/error.hpp"

namespace aotmem {
namespace {

using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

EigenMat to_eigen(const Matrix& m) {
  EigenMat out(m.rows(), m.cols());
  std::copy(m.data().begin(), m.data().end(), out.data());
  return out;
}

Matrix from_eigen(const EigenMat& m) {
  Matrix out(m.rows(), m.cols());
  std::copy(m.data(), m.data() + m.size(), out.data().begin());
  return out;
}

}  // namespace

SvdResult svd(const Matrix& m, double tol) {
  AOTMEM_REQUIRE(tol > 0.0, "svd tolerance must be positive");
  AOTMEM_REQUIRE(m.all_finite(), "svd input has non-finite entries");
  SvdResult out;
  out.tol = tol;
  const std::size_t k = std::min(m.rows(), m.cols());
  if (k == 0) {
    out.U = Matrix(m.rows(), 0);
    out.Vt = Matrix(0, m.cols());
    return out;
  }
  // BDCSVD switches to one-sided Jacobi below 16 columns.
  Eigen::BDCSVD<EigenMat> solver(to_eigen(m), Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success)
    throw ComputationError("svd did not converge");
  const auto& sv = solver.singularValues();
  out.singular_values.assign(sv.data(), sv.data() + sv.size());
  for (double s : out.singular_values)
    if (!std::isfinite(s)) throw ComputationError("svd produced non-finite singular values");
  out.U = from_eigen(solver.matrixU());
  out.Vt = from_eigen(solver.matrixV().transpose());
  const double cutoff = tol * out.sigma_max();
  out.numeric_rank = static_cast<std::size_t>(std::count_if(
      out.singular_values.begin(), out.singular_values.end(), [&](double s) { return s > cutoff; }));
  return out;
}

std::size_t numeric_rank(const Matrix& m, double tol) { return svd(m, tol).numeric_rank; }

double spectral_norm(const Matrix& m) {
  if (m.empty()) return 0.0;
  return svd(m).sigma_max();
}

double condition_number(const Matrix& m) {
  AOTMEM_REQUIRE(m.rows() == m.cols(), "condition number needs a square matrix");
  if (m.empty()) return 1.0;
  const auto s = svd(m);
  const double smin = s.singular_values.back();
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return s.sigma_max() / smin;
}

Matrix pseudo_inverse(const Matrix& m, double tol) {
  const auto s = svd(m, tol);
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < s.numeric_rank; ++i) {
    const double inv = 1.0 / s.singular_values[i];
    for (std::size_t r = 0; r < m.cols(); ++r) {
      const double v = s.Vt(i, r) * inv;
      if (v == 0.0) continue;
      for (std::size_t c = 0; c < m.rows(); ++c) out(r, c) += v * s.U(c, i);
    }
  }
  return out;
}

Matrix lstsq_min_norm(const Matrix& a, const Matrix& b, double tol) {
  AOTMEM_REQUIRE(a.rows() == b.rows(), "lstsq: A and B must have the same row count");
  return pseudo_inverse(a, tol) * b;
}

Matrix inverse(const Matrix& m) {
  AOTMEM_REQUIRE(m.rows() == m.cols(), "inverse needs a square matrix");
  const EigenMat em = to_eigen(m);
  Eigen::FullPivLU<EigenMat> lu(em);
  if (!lu.isInvertible()) throw ComputationError("matrix is singular");
  return from_eigen(lu.inverse());
}

double logsumexp(std::span<const double> v) {
  AOTMEM_REQUIRE(!v.empty(), "logsumexp of empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

Vector softmax(std::span<const double> v) {
  AOTMEM_REQUIRE(!v.empty(), "softmax of empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    s += out[i];
  }
  for (double& x : out) x /= s;
  return out;
}

Vector log_softmax(std::span<const double> v) {
  const double lse = logsumexp(v);
  Vector out(v.begin(), v.end());
  for (double& x : out) x -= lse;
  return out;
}

FitForm parse_fit_form(std::string_view name) {
  if (name == "linear") return FitForm::linear;
  if (name == "quadratic" || name == "quadratic_in_x") return FitForm::quadratic;
  if (name == "cubic") return FitForm::cubic;
  if (name == "affine_quadratic") return FitForm::affine_quadratic;
  throw InvalidArgument("unknown fit form '" + std::string(name) + "'");
}

std::string_view to_string(FitForm form) {
  switch (form) {
    case FitForm::linear: return "linear";
    case FitForm::quadratic: return "quadratic";
    case FitForm::cubic: return "cubic";
    case FitForm::affine_quadratic: return "affine_quadratic";
  }
  return "linear";
}

double FitResult::evaluate(double x) const {
  if (form == FitForm::affine_quadratic) return coefficients[0] + coefficients[1] * x * x;
  double y = 0.0;
  for (std::size_t i = coefficients.size(); i-- > 0;) y = y * x + coefficients[i];
  return y;
}

Matrix fit_design_matrix(std::span<const double> xs, FitForm form) {
  const std::size_t ncoef = form == FitForm::linear      ? 2
                            : form == FitForm::quadratic ? 3
                            : form == FitForm::cubic     ? 4
                                                         : 2;
  Matrix a(xs.size(), ncoef);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (form == FitForm::affine_quadratic) {
      a(i, 0) = 1.0;
      a(i, 1) = xs[i] * xs[i];
    } else {
      double p = 1.0;
      for (std::size_t j = 0; j < ncoef; ++j, p *= xs[i]) a(i, j) = p;
    }
  }
  return a;
}

FitResult polyfit_ls(std::span<const double> xs, std::span<const double> ys, FitForm form) {
  AOTMEM_REQUIRE(xs.size() == ys.size(), "polyfit: xs and ys differ in length");
  const Matrix a = fit_design_matrix(xs, form);
  AOTMEM_REQUIRE(xs.size() >= a.cols(), "polyfit: fewer points than coefficients");
  for (double v : xs) AOTMEM_REQUIRE(std::isfinite(v), "polyfit: non-finite x");
  for (double v : ys) AOTMEM_REQUIRE(std::isfinite(v), "polyfit: non-finite y");

  // Column scaling keeps the rank test meaningful when x spans decades.
  Matrix scaled = a;
  Vector scale(a.cols(), 1.0);
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) m = std::max(m, std::abs(a(i, j)));
    if (m > 0.0) scale[j] = m;
    for (std::size_t i = 0; i < a.rows(); ++i) scaled(i, j) /= scale[j];
  }
  if (numeric_rank(scaled, 1e-10) < a.cols())
    throw ComputationError("polyfit: degenerate design matrix (too few distinct x values)");

  const Matrix b = Matrix::column(ys);
  const Matrix coef_scaled = lstsq_min_norm(scaled, b, 1e-12);

  FitResult out;
  out.form = form;
  out.coefficients.resize(a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) out.coefficients[j] = coef_scaled(j, 0) / scale[j];

  double ss_res = 0.0;
  double mean = 0.0;
  for (double y : ys) mean += y;
  mean /= static_cast<double>(ys.size());
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - out.evaluate(xs[i]);
    ss_res += r * r;
    ss_tot += (ys[i] - mean) * (ys[i] - mean);
  }
  out.residual_norm = std::sqrt(ss_res);
  if (ss_tot > 0.0)
    out.r_squared = std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
  else
    out.r_squared = ss_res <= 1e-24 ? 1.0 : 0.0;
  return out;
}

}  // namespace aotmem
