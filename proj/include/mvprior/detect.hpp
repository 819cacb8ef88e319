#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "mvprior/error.hpp"
#include "mvprior/layout.hpp"

namespace mvprior {

// H x W grid of cells with cell_dim values each, row-major then channel.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int cell_dim = 0;
  int cell_size = 8;  // pixels per cell
  std::string image_id;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int h, int w, int l, std::string id, int cell = 8)
      : height(h), width(w), cell_dim(l), cell_size(cell), image_id(std::move(id)),
        data(std::size_t(h) * w * l, 0.0) {}

  double* cell(int y, int x) { return data.data() + (std::size_t(y) * width + x) * cell_dim; }
  const double* cell(int y, int x) const {
    return data.data() + (std::size_t(y) * width + x) * cell_dim;
  }

  // Window of rows x cols cells with top-left cell (y, x), in template order.
  Eigen::VectorXd window(int y, int x, int rows, int cols) const {
    Eigen::VectorXd out(Eigen::Index(rows) * cols * cell_dim);
    const std::size_t row_len = std::size_t(cols) * cell_dim;
    for (int r = 0; r < rows; ++r)
      std::copy_n(cell(y + r, x), row_len, out.data() + r * row_len);
    return out;
  }

  void paste(int y, int x, int rows, int cols, const Eigen::VectorXd& w) {
    const std::size_t row_len = std::size_t(cols) * cell_dim;
    for (int r = 0; r < rows; ++r) std::copy_n(w.data() + r * row_len, row_len, cell(y + r, x));
  }
};

struct BBox {
  double x = 0, y = 0, width = 0, height = 0;
  bool operator==(const BBox&) const = default;
};

inline double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x + a.width, b.x + b.width) - std::max(a.x, b.x);
  const double ih = std::min(a.y + a.height, b.y + b.height) - std::max(a.y, b.y);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.width * a.height + b.width * b.height - inter);
}

struct Detection {
  std::string image;
  BBox box;
  double score = 0;
  int view = 0;  // estimated azimuth bin
  int model_id = 0;
};

// Descending score, then x, y, view ascending.
inline bool detection_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.x != b.box.x) return a.box.x < b.box.x;
  if (a.box.y != b.box.y) return a.box.y < b.box.y;
  return a.view < b.view;
}

// Greedy NMS: keep the best remaining box, drop boxes (same image) with
// iou > threshold against it.
inline std::vector<Detection> nms(std::vector<Detection> dets, double threshold) {
  std::sort(dets.begin(), dets.end(), detection_order);
  std::vector<Detection> keep;
  std::vector<bool> dead(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dead[i]) continue;
    keep.push_back(dets[i]);
    for (std::size_t j = i + 1; j < dets.size(); ++j)
      if (!dead[j] && dets[j].image == dets[i].image && iou(dets[i].box, dets[j].box) > threshold)
        dead[j] = true;
  }
  return keep;
}

// Scores every placement with every view template (dot product + bias); a
// placement reports its best view. Placements scoring below the threshold
// are dropped before NMS.
inline std::vector<Detection> detect(const MultiViewModel& model, const FeatureMap& map,
                                     double score_threshold, double nms_iou = 0.5,
                                     int model_id = 0) {
  const TemplateLayout& l = model.layout();
  if (map.cell_dim != l.cell_dim) throw InvalidArgument("feature map cell_dim != model cell_dim");
  if (map.height < l.rows || map.width < l.cols)
    throw InvalidArgument("feature map smaller than template");
  const auto vs = Eigen::Index(l.view_size());
  Eigen::MatrixXd templates(l.views, vs);
  Eigen::VectorXd bias = Eigen::VectorXd::Zero(l.views);
  for (int v = 0; v < l.views; ++v) {
    const auto t = model.slice_view(v);
    templates.row(v) = t.weights.transpose();
    bias[v] = t.bias;
  }
  std::vector<Detection> raw;
  const double cs = map.cell_size;
  for (int y = 0; y + l.rows <= map.height; ++y)
    for (int x = 0; x + l.cols <= map.width; ++x) {
      const Eigen::VectorXd scores = templates * map.window(y, x, l.rows, l.cols) + bias;
      Eigen::Index best = 0;
      const double s = scores.maxCoeff(&best);
      if (s < score_threshold) continue;
      raw.push_back({map.image_id, {x * cs, y * cs, l.cols * cs, l.rows * cs}, s, int(best),
                     model_id});
    }
  return nms(std::move(raw), nms_iou);
}

// Pools a bank of per-model detections and runs one NMS over all of them.
inline std::vector<Detection> joint_nms(const std::vector<std::vector<Detection>>& bank,
                                        double nms_iou) {
  std::vector<Detection> pooled;
  for (const auto& d : bank) pooled.insert(pooled.end(), d.begin(), d.end());
  return nms(std::move(pooled), nms_iou);
}

}  // namespace mvprior
