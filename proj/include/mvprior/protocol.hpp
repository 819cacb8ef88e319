#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "mvprior/detect.hpp"
#include "mvprior/eval.hpp"
#include "mvprior/geometry.hpp"
#include "mvprior/prior.hpp"
#include "mvprior/regularizer.hpp"
#include "mvprior/svm.hpp"
#include "mvprior/synth.hpp"

namespace mvprior {

enum class PriorKind { none, sv, mv, dense };

inline const char* prior_kind_name(PriorKind k) {
  switch (k) {
    case PriorKind::none: return "none";
    case PriorKind::sv: return "sv";
    case PriorKind::mv: return "mv";
    case PriorKind::dense: return "dense";
  }
  return "?";
}

inline PriorKind parse_prior_kind(const std::string& s) {
  for (PriorKind k : {PriorKind::none, PriorKind::sv, PriorKind::mv, PriorKind::dense})
    if (s == prior_kind_name(k)) return k;
  throw InvalidArgument("unknown prior kind '" + s + "'");
}

struct PriorSpec {
  PriorKind kind = PriorKind::none;
  MaskSpec mask;

  // "dense", "dense-td2nd", ...
  std::string label() const {
    std::string s = prior_kind_name(kind);
    if (mask.variant != MaskVariant::none) s += std::string("-") + mask_name(mask.variant);
    return s;
  }
};

struct PriorOptions {
  MeanMode mean = MeanMode::first;
  double patch_radius = 0;  // <= 0: default_patch_radius()
  int k_cap = 4;
  FactorMethod sparse_factor = FactorMethod::eigen;
  FactorMethod dense_factor = FactorMethod::cholesky;
  RegularizerOptions reg;
};

// Builds the prior matrix of one kind from source models. Sparse kinds use
// the layout's grid relations (h, v, d1, d2, cell); mv adds cross-view pairs
// from ellipsoid back-projection.
inline SigmaMatrix build_prior(PriorKind kind, const std::vector<MultiViewModel>& sources,
                               const TemplateLayout& layout, const EllipsoidSpec& ellipsoid,
                               const CameraSpec& camera, const PriorOptions& opt) {
  if (kind == PriorKind::none) return SigmaMatrix::sparse(layout, SigmaKind::sv);
  if (kind == PriorKind::dense) return compute_dense_sigma(sources);
  std::vector<CellPairSet> sets;
  for (Relation r : {Relation::h, Relation::v, Relation::d1, Relation::d2, Relation::cell}) {
    auto ps = build_grid_pairs(layout, r);
    if (!ps.pairs.empty()) sets.push_back(std::move(ps));
  }
  if (kind == PriorKind::mv) {
    const double tau = opt.patch_radius > 0
                           ? opt.patch_radius
                           : default_patch_radius(layout, ellipsoid, camera, opt.k_cap);
    auto ps = build_mv_pairs(layout, ellipsoid, camera, tau);
    if (!ps.pairs.empty()) sets.push_back(std::move(ps));
  }
  std::vector<BlockCovariance> blocks;
  for (const auto& ps : sets) blocks.push_back(compute_block_covariance(sources, ps, opt.mean));
  SigmaMatrix s = assemble_sparse_sigma(layout, blocks, sets);
  s.set_sources(int(sources.size()));
  if (kind == PriorKind::mv) {
    // Keep the kind tag even when the layout yields no cross-view pairs.
    SigmaMatrix t = SigmaMatrix::sparse(layout, SigmaKind::mv);
    t.set_sources(s.sources());
    for (const auto& [key, b] : s.blocks()) t.add_block(key.first, key.second, b);
    return t;
  }
  return s;
}

enum class ProtocolKind { kshot, sparse_kshot };

struct DataSpec {
  int source_pos_per_view = 30;
  int source_negatives = 150;
  int target_pos_per_view = 10;  // pool from which k-shot subsets are taken
  int target_negatives = 150;
  int test_maps = 24;
  int instances_per_map = 4;
};

struct ProtocolSpec {
  ProtocolKind kind = ProtocolKind::kshot;
  std::vector<int> ks{1, 5, 10};
  std::vector<int> available_views;  // sparse_kshot: views with training data
  int sparse_k = 1;
  std::vector<PriorSpec> methods{{PriorKind::none, {}}, {PriorKind::dense, {}}};
  int sources = 5;
  int source_k = 15;
  int repetitions = 5;
  std::vector<double> iou{0.5};
  std::uint64_t seed = 1;
};

struct ResultRow {
  std::string method;
  int k = 0;
  int repetition = 0;
  double iou = 0.5;
  double ap = 0, vp = 0, ap_vp_d = 0, ap_vp_c = 0;
  double vp_withheld = 0;  // VP over TPs whose GT bin had no training data
  int true_positives = 0;
  int tp_withheld = 0;
};

struct ProtocolResult {
  std::vector<ResultRow> rows;
  // (method, k) -> confusion summed over repetitions at the first iou.
  std::map<std::pair<std::string, int>, Eigen::MatrixXi> confusion;
  std::vector<std::string> log;  // regularizer summaries
};

namespace detail {

// First k positives of each view (in sampling order) plus all negatives, so
// k-shot subsets are nested across k.
inline LabeledWindowSet take_per_view(const LabeledWindowSet& pool,
                                      const std::vector<int>& k_per_view) {
  LabeledWindowSet out;
  std::vector<int> taken(k_per_view.size(), 0);
  for (const auto& w : pool) {
    if (!w.positive()) continue;
    auto& t = taken[std::size_t(w.view)];
    if (t < k_per_view[std::size_t(w.view)]) {
      out.push_back(w);
      ++t;
    }
  }
  for (std::size_t v = 0; v < k_per_view.size(); ++v)
    if (taken[v] < k_per_view[v]) throw InvalidArgument("target pool too small for requested k");
  for (const auto& w : pool)
    if (!w.positive()) out.push_back(w);
  return out;
}

}  // namespace detail

// For each repetition: sample source/target/test splits, bootstrap source
// models, build every requested prior, train k-shot targets, detect on the
// test maps and evaluate.
inline ProtocolResult run_protocol(const ProtocolSpec& spec, const World& world,
                                   const DataSpec& data, const TrainConfig& trainer,
                                   const PriorOptions& popt,
                                   const std::function<void(const std::string&)>& progress = {}) {
  const TemplateLayout& layout = world.cfg.layout;
  const int V = layout.views;
  if (spec.repetitions < 1) throw InvalidArgument("repetitions must be >= 1");
  if (spec.methods.empty()) throw InvalidArgument("protocol needs at least one method");
  if (spec.iou.empty()) throw InvalidArgument("protocol needs at least one iou threshold");

  std::vector<std::vector<int>> k_settings;  // per-view counts for each k
  std::vector<int> k_labels;
  std::vector<int> withheld;
  if (spec.kind == ProtocolKind::kshot) {
    for (int k : spec.ks) {
      if (k < 1 || k > data.target_pos_per_view)
        throw InvalidArgument("k must be in [1, target_pos_per_view]");
      k_settings.emplace_back(std::size_t(V), k);
      k_labels.push_back(k);
    }
  } else {
    if (spec.available_views.empty()) throw InvalidArgument("sparse protocol needs data views");
    if (spec.sparse_k < 1 || spec.sparse_k > data.target_pos_per_view)
      throw InvalidArgument("sparse_k must be in [1, target_pos_per_view]");
    std::vector<int> counts(std::size_t(V), 0);
    for (int v : spec.available_views) {
      if (v < 0 || v >= V) throw InvalidArgument("available view out of range");
      counts[std::size_t(v)] = spec.sparse_k;
    }
    for (int v = 0; v < V; ++v)
      if (counts[std::size_t(v)] == 0) withheld.push_back(v);
    k_settings.push_back(counts);
    k_labels.push_back(spec.sparse_k);
  }
  if (spec.source_k > data.source_pos_per_view)
    throw InvalidArgument("source_k exceeds source_pos_per_view");

  ProtocolResult result;
  for (int rep = 0; rep < spec.repetitions; ++rep) {
    const std::uint64_t rs = mix_seed(spec.seed, std::uint64_t(rep));
    SplitSpec src_spec{std::vector<int>(std::size_t(V), data.source_pos_per_view),
                       data.source_negatives, 0, 0, 2};
    SplitSpec tgt_spec{std::vector<int>(std::size_t(V), data.target_pos_per_view),
                       data.target_negatives, 0, 0, 2};
    SplitSpec test_spec{std::vector<int>(std::size_t(V), 0), 0, data.test_maps,
                        data.instances_per_map, 2};
    const Split src = sample_dataset(world, Category::source, src_spec, mix_seed(rs, 11));
    const Split tgt = sample_dataset(world, Category::target, tgt_spec, mix_seed(rs, 12));
    const Split test = sample_dataset(world, Category::target, test_spec, mix_seed(rs, 13));

    TrainConfig src_cfg = trainer;
    src_cfg.seed = mix_seed(rs, 14);
    const auto sources =
        bootstrap_sources(src.windows, layout, spec.sources, spec.source_k, mix_seed(rs, 15), src_cfg);

    for (const PriorSpec& method : spec.methods) {
      MaskSpec mask = method.mask;
      if (mask.data_views.empty() && spec.kind == ProtocolKind::sparse_kshot)
        mask.data_views = spec.available_views;
      SigmaMatrix sigma = apply_mask(
          build_prior(method.kind, sources, layout, world.cfg.ellipsoid, world.camera, popt), mask);
      const Regularizer reg = build_regularizer(std::move(sigma), popt.reg);
      const FactorMethod fm =
          method.kind == PriorKind::dense ? popt.dense_factor : popt.sparse_factor;
      const Factorization fac = factorize(reg, fm);
      result.log.push_back("rep " + std::to_string(rep) + " " + method.label() +
                           ": lambda=" + std::to_string(reg.lambda) +
                           " e_max=" + std::to_string(reg.e_max) +
                           " halvings=" + std::to_string(reg.halvings) +
                           " cond=" + std::to_string(fac.condition()));
      if (progress) progress(result.log.back());

      // Negatives are shared by every k; transform them once.
      LabeledWindowSet negs;
      for (const auto& w : tgt.windows)
        if (!w.positive()) negs.push_back(w);
      const auto neg_ex = stack_examples(negs, layout);
      const Eigen::MatrixXd neg_t = fac.transform_features(detail::dense_examples(neg_ex, layout));

      for (std::size_t ki = 0; ki < k_settings.size(); ++ki) {
        LabeledWindowSet pos = detail::take_per_view(tgt.windows, k_settings[ki]);
        pos.erase(std::remove_if(pos.begin(), pos.end(),
                                 [](const LabeledWindow& w) { return !w.positive(); }),
                  pos.end());
        const auto pos_ex = stack_examples(pos, layout);
        const Eigen::MatrixXd pos_t =
            fac.transform_features(detail::dense_examples(pos_ex, layout));
        Eigen::MatrixXd xt(pos_t.rows(), pos_t.cols() + neg_t.cols());
        xt << pos_t, neg_t;
        Eigen::VectorXd y(xt.cols()), wts = Eigen::VectorXd::Ones(xt.cols());
        y.head(pos_t.cols()).setOnes();
        y.tail(neg_t.cols()).setConstant(-1.0);
        TrainConfig cfg = trainer;
        cfg.seed = mix_seed(rs, 16 + ki);
        const auto trained = train_on_transformed(xt, y, wts, fac, layout, cfg);

        std::vector<Detection> dets;
        for (const auto& map : test.maps) {
          auto d = detect(trained.model, map, -std::numeric_limits<double>::infinity(), 0.5);
          dets.insert(dets.end(), d.begin(), d.end());
        }
        for (std::size_t ii = 0; ii < spec.iou.size(); ++ii) {
          const EvalReport rep_eval = evaluate(dets, test.gts, spec.iou[ii], V);
          ResultRow row;
          row.method = method.label();
          row.k = k_labels[ki];
          row.repetition = rep;
          row.iou = spec.iou[ii];
          row.ap = rep_eval.ap;
          row.vp = rep_eval.vp;
          row.ap_vp_d = rep_eval.ap_vp_d;
          row.ap_vp_c = rep_eval.ap_vp_c;
          row.true_positives = rep_eval.true_positives;
          if (!withheld.empty()) {
            row.vp_withheld = view_accuracy_on(rep_eval.confusion, withheld);
            for (int b : withheld) row.tp_withheld += rep_eval.confusion.row(b).sum();
          }
          result.rows.push_back(row);
          if (ii == 0) {
            auto [it, fresh] = result.confusion.try_emplace({row.method, row.k}, rep_eval.confusion);
            if (!fresh) it->second += rep_eval.confusion;
          }
        }
      }
    }
  }
  return result;
}

struct SummaryRow {
  std::string method;
  int k = 0;
  double iou = 0;
  std::string measure;
  double mean = 0;
  double stddev = 0;
  int n = 0;
};

inline const std::vector<std::string>& measure_names() {
  static const std::vector<std::string> names{"ap", "vp", "ap_vp_d", "ap_vp_c", "vp_withheld"};
  return names;
}

inline double measure_of(const ResultRow& r, const std::string& m) {
  if (m == "ap") return r.ap;
  if (m == "vp") return r.vp;
  if (m == "ap_vp_d") return r.ap_vp_d;
  if (m == "ap_vp_c") return r.ap_vp_c;
  if (m == "vp_withheld") return r.vp_withheld;
  throw InvalidArgument("unknown measure '" + m + "'");
}

// Mean and sample standard deviation per (method, k, iou, measure), in a
// fixed sort order.
inline std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  std::map<std::tuple<std::string, int, double>, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) groups[{r.method, r.k, r.iou}].push_back(&r);
  std::vector<SummaryRow> out;
  for (const auto& [key, members] : groups)
    for (const auto& m : measure_names()) {
      SummaryRow s{std::get<0>(key), std::get<1>(key), std::get<2>(key), m, 0, 0,
                   int(members.size())};
      for (const auto* r : members) s.mean += measure_of(*r, m);
      s.mean /= s.n;
      double ss = 0;
      for (const auto* r : members) ss += std::pow(measure_of(*r, m) - s.mean, 2);
      s.stddev = s.n > 1 ? std::sqrt(ss / (s.n - 1)) : 0.0;
      out.push_back(s);
    }
  return out;
}

inline double summary_mean(const std::vector<SummaryRow>& s, const std::string& method, int k,
                           const std::string& measure, double iou = 0.5) {
  for (const auto& r : s)
    if (r.method == method && r.k == k && r.measure == measure && r.iou == iou) return r.mean;
  throw InvalidArgument("no summary row for " + method + " k=" + std::to_string(k));
}

inline void write_results_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  os.precision(17);
  os << "method,k,repetition,iou,ap,vp,ap_vp_d,ap_vp_c,vp_withheld,true_positives,tp_withheld\n";
  for (const auto& r : rows)
    os << r.method << ',' << r.k << ',' << r.repetition << ',' << r.iou << ',' << r.ap << ','
       << r.vp << ',' << r.ap_vp_d << ',' << r.ap_vp_c << ',' << r.vp_withheld << ','
       << r.true_positives << ',' << r.tp_withheld << '\n';
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os.precision(17);
  os << "method,k,iou,measure,mean,std,n\n";
  for (const auto& r : rows)
    os << r.method << ',' << r.k << ',' << r.iou << ',' << r.measure << ',' << r.mean << ','
       << r.stddev << ',' << r.n << '\n';
}

}  // namespace mvprior
