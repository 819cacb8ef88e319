#pragma once

// Independent reference computations shared by unit and acceptance tests.
// Nothing here calls the solver or evaluator under test.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

// Minimum of  w^T K w + C sum_i c_i max(0, 1 - y_i x_i^T w)  by enumerating
// every split of the examples into (hinge active, on the margin, inactive).
// Each split fixes a linear KKT system; its solution is a point of the
// primal, so the smallest primal value over all splits is the optimum.
struct HingeProblem {
  Eigen::MatrixXd K;  // P x P, PD
  Eigen::MatrixXd X;  // P x n, one example per column
  Eigen::VectorXd y;  // +-1
  Eigen::VectorXd c;  // example weights
  double C = 1.0;

  double primal(const Eigen::VectorXd& w) const {
    double loss = 0;
    for (Eigen::Index i = 0; i < X.cols(); ++i)
      loss += c[i] * std::max(0.0, 1.0 - y[i] * X.col(i).dot(w));
    return w.dot(K * w) + C * loss;
  }
};

struct HingeSolution {
  Eigen::VectorXd w;
  double objective = std::numeric_limits<double>::infinity();
  std::size_t candidates = 0;
};

inline HingeSolution solve_by_enumeration(const HingeProblem& p) {
  const Eigen::Index P = p.K.rows(), n = p.X.cols();
  std::size_t total = 1;
  for (Eigen::Index i = 0; i < n; ++i) total *= 3;
  HingeSolution best;
  std::vector<int> state(static_cast<std::size_t>(n));
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    std::vector<Eigen::Index> margin;
    Eigen::VectorXd rhs_w = Eigen::VectorXd::Zero(P);
    for (Eigen::Index i = 0; i < n; ++i) {
      state[std::size_t(i)] = int(c % 3);
      c /= 3;
      if (state[std::size_t(i)] == 0) rhs_w += p.C * p.c[i] * p.y[i] * p.X.col(i);
      if (state[std::size_t(i)] == 1) margin.push_back(i);
    }
    // [2K  -Ye] [w ]   [C sum_active c_i y_i x_i]
    // [Ye^T  0] [mu] = [1 ...                   ]   with Ye columns y_i x_i
    const auto m = Eigen::Index(margin.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(P + m, P + m);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(P + m);
    A.topLeftCorner(P, P) = 2.0 * p.K;
    b.head(P) = rhs_w;
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::VectorXd col = p.y[margin[std::size_t(j)]] * p.X.col(margin[std::size_t(j)]);
      A.block(0, P + j, P, 1) = -col;
      A.block(P + j, 0, 1, P) = col.transpose();
      b[P + j] = 1.0;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(b);
    const Eigen::VectorXd w = sol.head(P);
    ++best.candidates;
    const double obj = p.primal(w);
    if (obj < best.objective) {
      best.objective = obj;
      best.w = w;
    }
  }
  return best;
}

// Exact rational arithmetic for small evaluation fixtures.
struct Rational {
  std::int64_t num = 0, den = 1;

  Rational() = default;
  Rational(std::int64_t n, std::int64_t d = 1) : num(n), den(d) { normalize(); }

  void normalize() {
    if (den < 0) {
      num = -num;
      den = -den;
    }
    const std::int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }
  friend Rational operator+(Rational a, Rational b) {
    return Rational(a.num * b.den + b.num * a.den, a.den * b.den);
  }
  friend Rational operator*(Rational a, Rational b) { return Rational(a.num * b.num, a.den * b.den); }
  friend Rational operator/(Rational a, Rational b) { return Rational(a.num * b.den, a.den * b.num); }
  friend bool operator<(Rational a, Rational b) { return a.num * b.den < b.num * a.den; }
  friend bool operator==(Rational a, Rational b) { return a.num == b.num && a.den == b.den; }
  double value() const { return double(num) / double(den); }
};

// All-points interpolated AP from a ranked list of match flags, each with a
// rational weight in [0, 1] (1 for a plain true positive, 0 for a false
// positive). Precision at rank r is (sum of weights up to r) / r; the curve
// is made monotone from the right and integrated over recall steps.
inline Rational weighted_ap(const std::vector<Rational>& ranked_weights, std::int64_t positives) {
  const std::size_t n = ranked_weights.size();
  std::vector<Rational> prec(n), rec(n);
  Rational tp(0);
  for (std::size_t r = 0; r < n; ++r) {
    tp = tp + ranked_weights[r];
    prec[r] = tp / Rational(std::int64_t(r + 1));
    rec[r] = tp / Rational(positives);
  }
  for (std::size_t r = n; r-- > 1;)
    if (prec[r - 1] < prec[r]) prec[r - 1] = prec[r];
  Rational ap(0), prev_rec(0);
  for (std::size_t r = 0; r < n; ++r) {
    if (prev_rec < rec[r]) ap = ap + (rec[r] + Rational(-prev_rec.num, prev_rec.den)) * prec[r];
    prev_rec = rec[r];
  }
  return ap;
}

}  // namespace oracle
