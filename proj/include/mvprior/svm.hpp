#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "mvprior/error.hpp"
#include "mvprior/layout.hpp"
#include "mvprior/regularizer.hpp"

namespace mvprior {

// A training window: rows x cols x cell_dim features. view >= 0 marks a
// positive of that view bin, view < 0 a negative.
struct LabeledWindow {
  Eigen::VectorXd features;
  int view = -1;
  double weight = 1.0;
  bool positive() const { return view >= 0; }
};

using LabeledWindowSet = std::vector<LabeledWindow>;

// One window placed into a single view block of the joint parameter vector,
// with 1.0 in that view's bias slot.
struct StackedExample {
  int view = 0;
  Eigen::VectorXd features;
  double y = 1.0;
  double weight = 1.0;

  Eigen::VectorXd dense(const TemplateLayout& layout) const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(Eigen::Index(layout.param_count()));
    const auto r = layout.view_range(view);
    x.segment(Eigen::Index(r.begin), Eigen::Index(r.size())) = features;
    if (layout.per_view_bias) x[Eigen::Index(layout.bias_index(view))] = 1.0;
    return x;
  }

  double dot(const TemplateLayout& layout, const Eigen::VectorXd& w) const {
    const auto r = layout.view_range(view);
    double s = w.segment(Eigen::Index(r.begin), Eigen::Index(r.size())).dot(features);
    if (layout.per_view_bias) s += w[Eigen::Index(layout.bias_index(view))];
    return s;
  }
};

struct TrainConfig {
  double C = 0.002;
  double tolerance = 1e-6;  // relative duality gap
  int max_passes = 5000;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(C > 0)) throw InvalidArgument("C must be > 0");
    if (!(tolerance > 0)) throw InvalidArgument("tolerance must be > 0");
    if (max_passes < 1) throw InvalidArgument("max_passes must be >= 1");
  }
};

struct PassLog {
  int pass = 0;
  double objective = 0;  // best primal objective so far
  double dual = 0;
  double gap = 0;        // relative duality gap after this pass
};

struct TrainResult {
  MultiViewModel model;
  double objective = 0;  // w^T K w + C sum hinge at the returned w
  double gap = 0;
  int passes = 0;
  bool converged = false;
  std::vector<PassLog> log;
};

// Positives go into their own view block with y = +1; each negative is
// replicated into every view block with y = -1.
inline std::vector<StackedExample> stack_examples(const LabeledWindowSet& windows,
                                                  const TemplateLayout& layout) {
  std::vector<StackedExample> out;
  for (const auto& w : windows) {
    if (std::size_t(w.features.size()) != layout.view_size())
      throw InvalidArgument("window has " + std::to_string(w.features.size()) +
                            " features, layout expects " + std::to_string(layout.view_size()));
    if (w.view >= layout.views) throw InvalidArgument("positive window view out of range");
    if (w.positive()) {
      out.push_back({w.view, w.features, 1.0, w.weight});
    } else {
      for (int v = 0; v < layout.views; ++v) out.push_back({v, w.features, -1.0, w.weight});
    }
  }
  return out;
}

// w^T K w + C sum_i weight_i max(0, 1 - y_i w^T x_i)
inline double svm_objective(const Eigen::VectorXd& w, const Eigen::MatrixXd& K,
                            const std::vector<StackedExample>& ex, const TemplateLayout& layout,
                            double C) {
  double loss = 0;
  for (const auto& e : ex) loss += e.weight * std::max(0.0, 1.0 - e.y * e.dot(layout, w));
  return w.dot(K * w) + C * loss;
}

inline void write_train_log(std::ostream& os, const std::vector<PassLog>& log) {
  os << "pass,objective,dual_objective,gap\n";
  os.precision(17);
  for (const auto& p : log)
    os << p.pass << ',' << p.objective << ',' << p.dual << ',' << p.gap << '\n';
}

namespace detail {

inline void require_both_classes(const std::vector<StackedExample>& ex) {
  bool pos = false, neg = false;
  for (const auto& e : ex) (e.y > 0 ? pos : neg) = true;
  if (!pos || !neg) throw InvalidArgument("training needs at least one positive and one negative");
}

inline Eigen::MatrixXd dense_examples(const std::vector<StackedExample>& ex,
                                      const TemplateLayout& layout) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(Eigen::Index(layout.param_count()),
                                            Eigen::Index(ex.size()));
  for (std::size_t i = 0; i < ex.size(); ++i) x.col(Eigen::Index(i)) = ex[i].dense(layout);
  return x;
}

// Both routes solve the dual of  1/2 w^T K w + sum_i (C_i / 2) xi_i
// (the objective halved), with 0 <= alpha_i <= C weight_i / 2, visiting
// coordinates in a fresh seeded permutation each pass.
class PassOrder {
 public:
  PassOrder(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }
  const std::vector<std::size_t>& next() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    return order_;
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
};

struct GapState {
  double best_primal = std::numeric_limits<double>::infinity();
  std::vector<PassLog> log;

  // Returns true when this pass produced a new best primal point.
  bool record(int pass, double primal_half, double dual_half) {
    const bool improved = primal_half < best_primal;
    if (improved) best_primal = primal_half;
    const double gap = (best_primal - dual_half) / std::max(std::abs(best_primal), 1e-300);
    log.push_back({pass, 2.0 * best_primal, 2.0 * dual_half, gap});
    return improved;
  }
  double gap() const { return log.empty() ? 1.0 : log.back().gap; }
};

}  // namespace detail

// Minimizes w^T K w + C sum hinge in the original parameter space through
// the kernelized dual: Q_ij = y_i y_j x_i^T K^{-1} x_j, w = K^{-1} sum a_i y_i x_i.
inline TrainResult train_direct(const std::vector<StackedExample>& ex, const Regularizer& reg,
                                const TemplateLayout& layout, const TrainConfig& cfg) {
  cfg.validate();
  if (!reg.pd_certified) throw NumericError("regularizer is not certified positive definite");
  if (reg.dim() != layout.param_count()) throw InvalidArgument("regularizer size != layout P");
  detail::require_both_classes(ex);
  const auto n = Eigen::Index(ex.size());

  const Eigen::MatrixXd x = detail::dense_examples(ex, layout);
  Eigen::LLT<Eigen::MatrixXd> llt(reg.K);
  if (llt.info() != Eigen::Success) throw NumericError("K is not positive definite");
  const Eigen::MatrixXd z = llt.solve(x);  // K^{-1} X
  Eigen::VectorXd y(n), upper(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = ex[std::size_t(i)].y;
    upper[i] = 0.5 * cfg.C * ex[std::size_t(i)].weight;
  }
  const Eigen::MatrixXd q = y.asDiagonal() * (x.transpose() * z) * y.asDiagonal();

  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n), best_alpha = alpha;
  Eigen::VectorXd grad = -Eigen::VectorXd::Ones(n);  // Q alpha - 1
  detail::PassOrder order(ex.size(), cfg.seed);
  detail::GapState state;
  TrainResult res;
  for (int pass = 1; pass <= cfg.max_passes; ++pass) {
    for (std::size_t ii : order.next()) {
      const auto i = Eigen::Index(ii);
      if (q(i, i) <= 0) continue;
      const double a = std::clamp(alpha[i] - grad[i] / q(i, i), 0.0, upper[i]);
      const double d = a - alpha[i];
      if (d != 0.0) {
        grad.noalias() += d * q.col(i);
        alpha[i] = a;
      }
    }
    // margins y_i w^T x_i = (Q alpha)_i = grad_i + 1
    const double quad = alpha.dot(grad + Eigen::VectorXd::Ones(n));
    const double primal = 0.5 * quad + upper.dot((-grad).cwiseMax(0.0));
    const double dual = alpha.sum() - 0.5 * quad;
    if (state.record(pass, primal, dual)) best_alpha = alpha;
    res.passes = pass;
    if (state.gap() <= cfg.tolerance) {
      res.converged = true;
      break;
    }
  }
  const Eigen::VectorXd w = z * best_alpha.cwiseProduct(y);
  res.model = MultiViewModel(layout, w);
  res.objective = 2.0 * state.best_primal;
  res.gap = state.gap();
  res.log = std::move(state.log);
  return res;
}

// Solver on already transformed features (columns of xt, one per example).
inline TrainResult train_on_transformed(const Eigen::MatrixXd& xt, const Eigen::VectorXd& y,
                                        const Eigen::VectorXd& weights, const Factorization& fac,
                                        const TemplateLayout& layout, const TrainConfig& cfg) {
  cfg.validate();
  if (fac.dim() != layout.param_count() || std::size_t(xt.rows()) != layout.param_count())
    throw InvalidArgument("transformed features do not match layout P");
  const Eigen::Index n = xt.cols();
  if (y.size() != n || weights.size() != n) throw InvalidArgument("label/weight count mismatch");
  if ((y.array() > 0).all() || (y.array() < 0).all())
    throw InvalidArgument("training needs at least one positive and one negative");

  const Eigen::VectorXd upper = 0.5 * cfg.C * weights;
  const Eigen::VectorXd diag = xt.colwise().squaredNorm().transpose();
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd wt = Eigen::VectorXd::Zero(xt.rows()), best_wt = wt;
  detail::PassOrder order(std::size_t(n), cfg.seed);
  detail::GapState state;
  TrainResult res;
  for (int pass = 1; pass <= cfg.max_passes; ++pass) {
    for (std::size_t ii : order.next()) {
      const auto i = Eigen::Index(ii);
      if (diag[i] <= 0) continue;
      const double g = y[i] * wt.dot(xt.col(i)) - 1.0;
      const double a = std::clamp(alpha[i] - g / diag[i], 0.0, upper[i]);
      const double d = a - alpha[i];
      if (d != 0.0) {
        wt.noalias() += (d * y[i]) * xt.col(i);
        alpha[i] = a;
      }
    }
    const Eigen::VectorXd margins = (xt.transpose() * wt).cwiseProduct(y);
    const double norm2 = wt.squaredNorm();
    const double primal =
        0.5 * norm2 + upper.dot((Eigen::VectorXd::Ones(n) - margins).cwiseMax(0.0));
    const double dual = alpha.sum() - 0.5 * norm2;
    if (state.record(pass, primal, dual)) best_wt = wt;
    res.passes = pass;
    if (state.gap() <= cfg.tolerance) {
      res.converged = true;
      break;
    }
  }
  res.model = MultiViewModel(layout, fac.transform_model_back(best_wt));
  res.objective = 2.0 * state.best_primal;
  res.gap = state.gap();
  res.log = std::move(state.log);
  return res;
}

// Transform features with U^{-T}, train a plain SVM on them, map the model
// back with U^{-1}.
inline TrainResult train_transformed(const std::vector<StackedExample>& ex,
                                     const Factorization& fac, const TemplateLayout& layout,
                                     const TrainConfig& cfg) {
  detail::require_both_classes(ex);
  const auto n = Eigen::Index(ex.size());
  Eigen::VectorXd y(n), wts(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = ex[std::size_t(i)].y;
    wts[i] = ex[std::size_t(i)].weight;
  }
  return train_on_transformed(fac.transform_features(detail::dense_examples(ex, layout)), y, wts,
                              fac, layout, cfg);
}

// N source models, each a plain SVM on an independent seeded draw (without
// replacement) of per_view_k positives per view plus all negatives.
// per_view_k <= 0 means every positive. `runs`, when given, receives each
// solver result including its pass log.
inline std::vector<MultiViewModel> bootstrap_sources(const LabeledWindowSet& data,
                                                     const TemplateLayout& layout, int count,
                                                     int per_view_k, std::uint64_t seed,
                                                     const TrainConfig& cfg,
                                                     std::vector<TrainResult>* runs = nullptr) {
  if (count < 1) throw InvalidArgument("source count must be >= 1");
  std::vector<std::vector<std::size_t>> by_view(std::size_t(layout.views));
  LabeledWindowSet negatives;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].positive()) {
      if (data[i].view >= layout.views) throw InvalidArgument("positive view out of range");
      by_view[std::size_t(data[i].view)].push_back(i);
    } else {
      negatives.push_back(data[i]);
    }
  }
  for (int v = 0; v < layout.views; ++v)
    if (by_view[std::size_t(v)].empty() ||
        (per_view_k > 0 && by_view[std::size_t(v)].size() < std::size_t(per_view_k)))
      throw InvalidArgument("insufficient positives for view " + std::to_string(v));

  const Factorization plain = Factorization::identity_of(layout.param_count());
  std::vector<MultiViewModel> out;
  for (int s = 0; s < count; ++s) {
    std::seed_seq sseq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(s)};
    std::mt19937_64 rng(sseq);
    LabeledWindowSet draw;
    for (auto idx : by_view) {
      std::shuffle(idx.begin(), idx.end(), rng);
      const std::size_t k = per_view_k > 0 ? std::size_t(per_view_k) : idx.size();
      for (std::size_t i = 0; i < k; ++i) draw.push_back(data[idx[i]]);
    }
    draw.insert(draw.end(), negatives.begin(), negatives.end());
    auto res = train_transformed(stack_examples(draw, layout), plain, layout, cfg);
    res.model.set_meta("source " + std::to_string(s));
    out.push_back(res.model);
    if (runs) runs->push_back(std::move(res));
  }
  return out;
}

}  // namespace mvprior
