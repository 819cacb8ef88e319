#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>

#include "mvprior/error.hpp"
#include "mvprior/prior.hpp"

namespace mvprior {

// How e_max is found: a full symmetric eigensolve, or power iteration on
// sigma shifted by its Gershgorin bound (started from the all-ones vector).
enum class EigMethod { exact, power };

struct RegularizerOptions {
  double lambda_factor = 0.9;  // lambda = lambda_factor / e_max
  int max_halvings = 20;
  EigMethod eig = EigMethod::exact;
  int power_max_iters = 100000;
  double power_tol = 1e-10;
  std::size_t max_dim = 20000;
};

// K = I - lambda * sigma with a positive-definiteness certificate.
struct Regularizer {
  SigmaMatrix sigma;
  double lambda = 0.0;
  double e_max = 0.0;
  bool pd_certified = false;
  int halvings = 0;
  Eigen::MatrixXd K;

  std::size_t dim() const { return std::size_t(K.rows()); }
  bool is_identity() const { return lambda == 0.0; }
};

namespace detail {

inline double gershgorin_bound(const Eigen::MatrixXd& m) {
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

inline double power_emax(const SigmaMatrix& sigma, double shift, int max_iters, double tol) {
  const auto p = Eigen::Index(sigma.dim());
  Eigen::VectorXd x = Eigen::VectorXd::Ones(p).normalized();
  double mu = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd y = sigma.multiply(x) + shift * x;
    const double next = x.dot(y);
    const double n = y.norm();
    if (n == 0.0) return -shift;
    x = y / n;
    if (it > 0 && std::abs(next - mu) <= tol * std::max(1.0, std::abs(next))) return next - shift;
    mu = next;
  }
  return mu - shift;
}

inline bool is_positive_definite(const Eigen::MatrixXd& k) {
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  return llt.info() == Eigen::Success;
}

}  // namespace detail

// lambda = 0.9 / e_max, halved (at most 20 times) until K passes a Cholesky
// attempt. A zero sigma gives K = I and lambda = 0. When every eigenvalue of a
// nonzero sigma is <= 0, K is PD for any lambda > 0 and lambda is set from
// the Gershgorin bound instead.
inline Regularizer build_regularizer(SigmaMatrix sigma, const RegularizerOptions& opt = {}) {
  const std::size_t p = sigma.dim();
  if (p > opt.max_dim)
    throw InvalidArgument("parameter count " + std::to_string(p) + " exceeds the cap of " +
                          std::to_string(opt.max_dim) + " for dense factorization");
  Regularizer reg;
  const Eigen::MatrixXd s = sigma.to_dense();
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, s.cwiseAbs().maxCoeff()))
    throw InvalidArgument("sigma is not symmetric");
  reg.sigma = std::move(sigma);
  const auto n = Eigen::Index(p);
  if (reg.sigma.is_zero()) {
    reg.K = Eigen::MatrixXd::Identity(n, n);
    reg.pd_certified = true;
    return reg;
  }

  const double g = detail::gershgorin_bound(s);
  if (opt.eig == EigMethod::exact) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
    reg.e_max = es.eigenvalues().maxCoeff();
  } else {
    reg.e_max = detail::power_emax(reg.sigma, g, opt.power_max_iters, opt.power_tol);
  }
  reg.lambda = reg.e_max > 0 ? opt.lambda_factor / reg.e_max : opt.lambda_factor / g;

  for (;;) {
    reg.K = Eigen::MatrixXd::Identity(n, n) - reg.lambda * s;
    if (detail::is_positive_definite(reg.K)) break;
    if (reg.halvings == opt.max_halvings)
      throw NumericError("K is not positive definite after " + std::to_string(opt.max_halvings) +
                         " halvings of lambda");
    reg.lambda *= 0.5;
    ++reg.halvings;
  }
  reg.pd_certified = true;
  return reg;
}

enum class FactorMethod { cholesky, eigen };

inline const char* factor_method_name(FactorMethod m) {
  return m == FactorMethod::cholesky ? "cholesky" : "eigen";
}

class Factorization;
inline Factorization factorize(const Regularizer& reg, FactorMethod method);

// K = U^T U. Cholesky: U upper triangular. Eigen: U = diag(sqrt(eigs)) V^T.
// An identity K is kept implicit.
class Factorization {
 public:
  // Implicit identity factorization of size p (plain SVM training).
  static Factorization identity_of(std::size_t p) {
    Factorization f;
    f.identity_ = true;
    f.dim_ = p;
    return f;
  }

  FactorMethod method() const { return method_; }
  bool identity() const { return identity_; }
  std::size_t dim() const { return dim_; }
  double condition() const { return condition_; }

  Eigen::MatrixXd matrix_u() const {
    const auto n = Eigen::Index(dim_);
    if (identity_) return Eigen::MatrixXd::Identity(n, n);
    if (method_ == FactorMethod::cholesky) return u_;
    return root_.asDiagonal() * v_.transpose();
  }

  // x~ = U^{-T} x
  Eigen::VectorXd transform_features(const Eigen::VectorXd& x) const {
    check(x.size());
    if (identity_) return x;
    if (method_ == FactorMethod::cholesky)
      return u_.triangularView<Eigen::Upper>().transpose().solve(x);
    return (v_.transpose() * x).cwiseQuotient(root_);
  }

  // Column-wise transform of a P x n feature matrix.
  Eigen::MatrixXd transform_features(const Eigen::MatrixXd& x) const {
    check(x.rows());
    if (identity_) return x;
    if (method_ == FactorMethod::cholesky)
      return u_.triangularView<Eigen::Upper>().transpose().solve(x);
    return root_.cwiseInverse().asDiagonal() * (v_.transpose() * x);
  }

  // w~ = U w
  Eigen::VectorXd transform_model(const Eigen::VectorXd& w) const {
    check(w.size());
    if (identity_) return w;
    if (method_ == FactorMethod::cholesky) return u_.triangularView<Eigen::Upper>() * w;
    return root_.cwiseProduct(v_.transpose() * w);
  }

  // Solves U w = w~.
  Eigen::VectorXd transform_model_back(const Eigen::VectorXd& wt) const {
    check(wt.size());
    if (identity_) return wt;
    if (method_ == FactorMethod::cholesky) return u_.triangularView<Eigen::Upper>().solve(wt);
    return v_ * wt.cwiseQuotient(root_);
  }

 private:
  friend Factorization factorize(const Regularizer&, FactorMethod);

  void check(Eigen::Index n) const {
    if (std::size_t(n) != dim_)
      throw InvalidArgument("vector length " + std::to_string(n) + " does not match P = " +
                            std::to_string(dim_));
  }

  FactorMethod method_ = FactorMethod::cholesky;
  bool identity_ = false;
  std::size_t dim_ = 0;
  double condition_ = 1.0;
  Eigen::MatrixXd u_;      // cholesky
  Eigen::MatrixXd v_;      // eigen: eigenvectors
  Eigen::VectorXd root_;   // eigen: sqrt of eigenvalues
};

inline constexpr double kMinEigenvalue = 1e-12;

inline Factorization factorize(const Regularizer& reg, FactorMethod method) {
  if (!reg.pd_certified) throw NumericError("regularizer is not certified positive definite");
  Factorization f;
  f.method_ = method;
  f.dim_ = reg.dim();
  if (reg.is_identity()) {
    f.identity_ = true;
    return f;
  }
  if (method == FactorMethod::cholesky) {
    Eigen::LLT<Eigen::MatrixXd> llt(reg.K);
    if (llt.info() != Eigen::Success) throw NumericError("Cholesky failed: K is not PD");
    f.u_ = llt.matrixU();
    const auto d = f.u_.diagonal().cwiseAbs();
    f.condition_ = std::pow(d.maxCoeff() / d.minCoeff(), 2);
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(reg.K);
    if (es.info() != Eigen::Success) throw NumericError("eigen decomposition failed");
    const Eigen::VectorXd& ev = es.eigenvalues();
    if (ev.minCoeff() <= kMinEigenvalue)
      throw NumericError("K has an eigenvalue below 1e-12; eigen factorization refused");
    f.v_ = es.eigenvectors();
    f.root_ = ev.cwiseSqrt();
    f.condition_ = ev.maxCoeff() / ev.minCoeff();
  }
  return f;
}

}  // namespace mvprior
