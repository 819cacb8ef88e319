#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "mvprior/detect.hpp"
#include "mvprior/error.hpp"
#include "mvprior/layout.hpp"

namespace mvprior {

struct GroundTruthBox {
  std::string image;
  BBox box;
  int view = 0;  // azimuth bin index; center = view * 360 / V degrees
  std::string category;
  bool difficult = false;
};

struct PRPoint {
  double recall = 0;
  double precision = 0;
  double score = 0;
};

// VP is viewpoint-bin accuracy over true positives. AP uses all-points
// interpolation. confusion(i, j) counts true positives with ground-truth bin
// i and predicted bin j.
struct EvalReport {
  double ap = 0;
  double vp = 0;
  double ap_vp_d = 0;
  double ap_vp_c = 0;
  double iou_threshold = 0.5;
  int positives = 0;  // non-difficult ground truth
  int true_positives = 0;
  int false_positives = 0;
  std::vector<PRPoint> pr;
  Eigen::MatrixXi confusion;
};

// Weight of a true positive whose predicted bin is off by the minimal cyclic
// angle between bin centers: (180 - angle) / 180.
inline double viewpoint_weight(int predicted, int truth, int views) {
  const double angle = cyclic_view_distance(predicted, truth, views) * (360.0 / views);
  return (180.0 - angle) / 180.0;
}

// Area under the all-points interpolated PR curve when the i-th ranked
// detection counts as `weights[i]` of a true positive (1 / 0 for plain AP).
inline double weighted_average_precision(const std::vector<double>& weights, int positives) {
  const std::size_t n = weights.size();
  std::vector<double> prec(n);
  double cum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cum += weights[i];
    prec[i] = cum / double(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0;
  for (std::size_t i = 0; i < n; ++i) ap += weights[i] * prec[i];
  return ap / positives;
}

// Greedy VOC-style matching in descending score order: each detection takes
// the highest-iou unmatched ground truth in its image with iou >= threshold;
// unmatched detections are false positives. Detections matched to a
// difficult box are ignored.
inline EvalReport evaluate(const std::vector<Detection>& dets,
                           const std::vector<GroundTruthBox>& gts, double iou_threshold,
                           int views) {
  if (views < 1) throw InvalidArgument("views must be >= 1");
  EvalReport rep;
  rep.iou_threshold = iou_threshold;
  rep.confusion = Eigen::MatrixXi::Zero(views, views);
  std::map<std::string, std::vector<std::size_t>> by_image;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gts[g].view < 0 || gts[g].view >= views)
      throw InvalidArgument("ground truth view bin out of range");
    by_image[gts[g].image].push_back(g);
    if (!gts[g].difficult) ++rep.positives;
  }
  if (rep.positives == 0) throw InvalidArgument("AP is undefined without ground truth");

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::vector<bool> used(gts.size(), false);
  std::vector<double> w_box, w_disc, w_cont;
  int vp_hits = 0;
  double matched = 0;
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    std::ptrdiff_t best = -1;
    double best_iou = iou_threshold;
    if (auto it = by_image.find(d.image); it != by_image.end())
      for (std::size_t g : it->second) {
        if (used[g]) continue;
        const double o = iou(d.box, gts[g].box);
        if (o >= best_iou && (best < 0 || o > best_iou)) {
          best = std::ptrdiff_t(g);
          best_iou = o;
        }
      }
    if (best >= 0 && gts[std::size_t(best)].difficult) continue;
    if (best < 0) {
      ++rep.false_positives;
      w_box.push_back(0);
      w_disc.push_back(0);
      w_cont.push_back(0);
    } else {
      const auto& g = gts[std::size_t(best)];
      used[std::size_t(best)] = true;
      ++rep.true_positives;
      if (d.view < 0 || d.view >= views) throw InvalidArgument("detection view out of range");
      ++rep.confusion(g.view, d.view);
      const bool same = d.view == g.view;
      vp_hits += same ? 1 : 0;
      w_box.push_back(1);
      matched += 1;
      w_disc.push_back(same ? 1 : 0);
      w_cont.push_back(viewpoint_weight(d.view, g.view, views));
    }
    rep.pr.push_back({matched / rep.positives, matched / double(w_box.size()), d.score});
  }
  rep.ap = weighted_average_precision(w_box, rep.positives);
  rep.ap_vp_d = weighted_average_precision(w_disc, rep.positives);
  rep.ap_vp_c = weighted_average_precision(w_cont, rep.positives);
  rep.vp = rep.true_positives > 0 ? double(vp_hits) / rep.true_positives : 0.0;
  return rep;
}

// Bin accuracy restricted to true positives whose ground truth lies in `bins`.
inline double view_accuracy_on(const Eigen::MatrixXi& confusion, const std::vector<int>& bins) {
  long hit = 0, total = 0;
  for (int b : bins) {
    hit += confusion(b, b);
    total += confusion.row(b).sum();
  }
  return total > 0 ? double(hit) / double(total) : 0.0;
}

}  // namespace mvprior
