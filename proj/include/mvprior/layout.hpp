#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <compare>
#include <cstddef>
#include <string>
#include <vector>

#include "mvprior/error.hpp"

namespace mvprior {

// One grid position inside one view template.
struct CellRef {
  int view = 0;
  int row = 0;
  int col = 0;
  auto operator<=>(const CellRef&) const = default;
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const IndexRange&) const = default;
};

// Shape of a multi-view model: V view templates of rows x cols cells, each
// cell holding cell_dim values. Views tile the azimuth circle uniformly, view
// v centered at v * 360 / V degrees.
//
// Flattened parameter order is view-major, then row, then column, then
// channel. When per_view_bias is set, V bias slots follow all appearance
// parameters (bias of view v at appearance_size() + v).
struct TemplateLayout {
  int views = 1;
  int rows = 1;
  int cols = 1;
  int cell_dim = 1;
  bool per_view_bias = true;

  TemplateLayout() = default;
  TemplateLayout(int v, int n, int m, int l, bool bias)
      : views(v), rows(n), cols(m), cell_dim(l), per_view_bias(bias) {
    validate();
  }

  void validate() const {
    if (views < 1 || rows < 1 || cols < 1 || cell_dim < 1)
      throw InvalidArgument("layout dimensions must all be >= 1");
  }

  std::size_t cells_per_view() const { return std::size_t(rows) * cols; }
  std::size_t cell_count() const { return cells_per_view() * views; }
  std::size_t view_size() const { return cells_per_view() * cell_dim; }
  std::size_t appearance_size() const { return view_size() * views; }
  std::size_t bias_count() const { return per_view_bias ? std::size_t(views) : 0; }
  std::size_t param_count() const { return appearance_size() + bias_count(); }

  double bin_spacing() const { return 360.0 / views; }
  double azimuth(int v) const { return v * bin_spacing(); }
  std::vector<double> azimuths() const {
    std::vector<double> out(views);
    for (int v = 0; v < views; ++v) out[v] = azimuth(v);
    return out;
  }

  bool contains(const CellRef& c) const {
    return c.view >= 0 && c.view < views && c.row >= 0 && c.row < rows && c.col >= 0 &&
           c.col < cols;
  }

  // Global cell id, same ordering as the parameter vector.
  std::size_t cell_id(const CellRef& c) const {
    if (!contains(c))
      throw IndexError("cell (" + std::to_string(c.view) + "," + std::to_string(c.row) + "," +
                       std::to_string(c.col) + ") outside layout");
    return (std::size_t(c.view) * rows + c.row) * cols + c.col;
  }

  CellRef cell_at(std::size_t id) const {
    if (id >= cell_count()) throw IndexError("cell id out of range");
    CellRef c;
    c.col = int(id % cols);
    id /= cols;
    c.row = int(id % rows);
    c.view = int(id / rows);
    return c;
  }

  IndexRange view_range(int v) const {
    if (v < 0 || v >= views) throw IndexError("view " + std::to_string(v) + " out of range");
    return {std::size_t(v) * view_size(), std::size_t(v + 1) * view_size()};
  }

  std::size_t bias_index(int v) const {
    if (!per_view_bias) throw IndexError("layout has no bias slots");
    if (v < 0 || v >= views) throw IndexError("view " + std::to_string(v) + " out of range");
    return appearance_size() + v;
  }

  bool is_bias_slot(std::size_t p) const { return p >= appearance_size() && p < param_count(); }

  // View owning parameter p (appearance or bias).
  int view_of_param(std::size_t p) const {
    if (p >= param_count()) throw IndexError("parameter index out of range");
    if (p < appearance_size()) return int(p / view_size());
    return int(p - appearance_size());
  }

  bool operator==(const TemplateLayout&) const = default;
};

inline IndexRange param_range(const TemplateLayout& layout, const CellRef& cell) {
  const std::size_t begin = layout.cell_id(cell) * layout.cell_dim;
  return {begin, begin + std::size_t(layout.cell_dim)};
}

// Minimal cyclic distance between two view bins.
inline int cyclic_view_distance(int a, int b, int views) {
  const int d = std::abs(a - b) % views;
  return std::min(d, views - d);
}

// One view template cut out of a model.
struct ViewTemplate {
  Eigen::VectorXd weights;  // rows*cols*cell_dim
  double bias = 0.0;
};

class MultiViewModel {
 public:
  MultiViewModel() = default;
  explicit MultiViewModel(TemplateLayout layout, std::string meta = {})
      : layout_(layout), params_(Eigen::VectorXd::Zero(Eigen::Index(layout.param_count()))),
        meta_(std::move(meta)) {}
  MultiViewModel(TemplateLayout layout, Eigen::VectorXd params, std::string meta = {})
      : layout_(layout), params_(std::move(params)), meta_(std::move(meta)) {
    if (std::size_t(params_.size()) != layout_.param_count())
      throw InvalidArgument("parameter vector length " + std::to_string(params_.size()) +
                            " does not match layout size " +
                            std::to_string(layout_.param_count()));
    if (!params_.allFinite()) throw InvalidArgument("model parameters must be finite");
  }

  const TemplateLayout& layout() const { return layout_; }
  const Eigen::VectorXd& params() const { return params_; }
  const std::string& meta() const { return meta_; }
  void set_meta(std::string m) { meta_ = std::move(m); }

  ViewTemplate slice_view(int v) const {
    const IndexRange r = layout_.view_range(v);
    ViewTemplate t;
    t.weights = params_.segment(Eigen::Index(r.begin), Eigen::Index(r.size()));
    t.bias = layout_.per_view_bias ? params_[Eigen::Index(layout_.bias_index(v))] : 0.0;
    return t;
  }

 private:
  TemplateLayout layout_;
  Eigen::VectorXd params_;
  std::string meta_;
};

inline ViewTemplate slice_view(const MultiViewModel& model, int v) { return model.slice_view(v); }

// Inverse of slice_view over all views.
inline MultiViewModel assemble_views(const TemplateLayout& layout,
                                     const std::vector<ViewTemplate>& views,
                                     std::string meta = {}) {
  if (views.size() != std::size_t(layout.views))
    throw InvalidArgument("expected one slice per view");
  Eigen::VectorXd p(static_cast<Eigen::Index>(layout.param_count()));
  for (int v = 0; v < layout.views; ++v) {
    const auto& t = views[std::size_t(v)];
    if (std::size_t(t.weights.size()) != layout.view_size())
      throw InvalidArgument("view slice has wrong size");
    const IndexRange r = layout.view_range(v);
    p.segment(Eigen::Index(r.begin), Eigen::Index(r.size())) = t.weights;
    if (layout.per_view_bias) p[Eigen::Index(layout.bias_index(v))] = t.bias;
  }
  return MultiViewModel(layout, std::move(p), std::move(meta));
}

}  // namespace mvprior
