#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mvprior/error.hpp"
#include "mvprior/layout.hpp"

namespace mvprior {

struct EllipsoidSpec {
  double a = 1.0;  // along the object's length (x)
  double b = 1.0;  // width (y)
  double c = 1.0;  // height (z, vertical)

  Eigen::Vector3d axes() const { return {a, b, c}; }
  double max_axis() const { return std::max({a, b, c}); }
  void validate() const {
    if (!(a > 0 && b > 0 && c > 0)) throw InvalidArgument("ellipsoid semi-axes must be > 0");
  }
  // (x/a)^2 + (y/b)^2 + (z/c)^2
  double implicit(const Eigen::Vector3d& p) const {
    return (p.array() / axes().array()).square().sum();
  }
};

// Fixed perspective camera on a viewing circle around the object. Azimuth
// comes from the layout's view bins.
struct CameraSpec {
  double elevation_deg = 10.0;
  double distance = 3.0;
  double focal = 1.0;

  void validate(const EllipsoidSpec& e) const {
    if (!(distance > e.max_axis()))
      throw InvalidArgument("camera distance must exceed the largest semi-axis");
    if (!(focal > 0)) throw InvalidArgument("focal length must be > 0");
  }
};

struct SurfaceHit {
  CellRef cell;
  Eigen::Vector3d point;
};

enum class Relation { h, v, d1, d2, cell, mv };

inline const char* relation_name(Relation r) {
  switch (r) {
    case Relation::h: return "h";
    case Relation::v: return "v";
    case Relation::d1: return "d1";
    case Relation::d2: return "d2";
    case Relation::cell: return "cell";
    case Relation::mv: return "mv";
  }
  return "?";
}

inline Relation parse_relation(const std::string& s) {
  for (Relation r : {Relation::h, Relation::v, Relation::d1, Relation::d2, Relation::cell,
                     Relation::mv})
    if (s == relation_name(r)) return r;
  throw InvalidArgument("unknown relation '" + s + "'");
}

using CellPair = std::pair<CellRef, CellRef>;

struct CellPairSet {
  Relation relation = Relation::cell;
  std::vector<CellPair> pairs;
};

namespace detail {

struct ViewCamera {
  Eigen::Vector3d center, right, up, forward;
  double focal = 1.0;

  Eigen::Matrix<double, 3, 4> projection() const {
    Eigen::Matrix3d r;
    r.row(0) = right.transpose();
    r.row(1) = up.transpose();
    r.row(2) = forward.transpose();
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = r;
    p.col(3) = -r * center;
    p.topRows<2>() *= focal;
    return p;
  }

  Eigen::Vector3d ray(double s, double t) const { return focal * forward + s * right + t * up; }
};

inline ViewCamera make_view_camera(const CameraSpec& cam, double azimuth_deg) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double az = azimuth_deg * kDeg, el = cam.elevation_deg * kDeg;
  ViewCamera vc;
  vc.center = cam.distance * Eigen::Vector3d(std::cos(el) * std::cos(az),
                                             std::cos(el) * std::sin(az), std::sin(el));
  vc.forward = -vc.center.normalized();
  vc.right = vc.forward.cross(Eigen::Vector3d::UnitZ()).normalized();
  vc.up = vc.right.cross(vc.forward);
  vc.focal = cam.focal;
  return vc;
}

struct Box2 {
  double s_min, s_max, t_min, t_max;
};

// Bounding box of the ellipsoid's image: the silhouette is the conic whose
// dual is P Q* P^T; tangent lines s = const and t = const bound it.
inline Box2 silhouette_box(const EllipsoidSpec& e, const ViewCamera& vc) {
  Eigen::Matrix4d dual = Eigen::Matrix4d::Zero();
  dual.diagonal() << e.a * e.a, e.b * e.b, e.c * e.c, -1.0;
  const auto p = vc.projection();
  const Eigen::Matrix3d conic = p * dual * p.transpose();
  auto roots = [&](int i) {
    // conic(i,i) - 2 x conic(i,2) + x^2 conic(2,2) = 0
    const double qa = conic(2, 2), qb = conic(i, 2), qc = conic(i, i);
    const double disc = qb * qb - qa * qc;
    if (!(disc > 0) || qa == 0) throw NumericError("degenerate silhouette");
    const double r = std::sqrt(disc);
    const double x0 = (qb - r) / qa, x1 = (qb + r) / qa;
    return std::pair{std::min(x0, x1), std::max(x0, x1)};
  };
  const auto [s0, s1] = roots(0);
  const auto [t0, t1] = roots(1);
  return {s0, s1, t0, t1};
}

// Nearest intersection of o + t d (t > 0) with the ellipsoid.
inline std::optional<Eigen::Vector3d> intersect(const EllipsoidSpec& e, const Eigen::Vector3d& o,
                                                const Eigen::Vector3d& d) {
  const Eigen::Vector3d inv = e.axes().cwiseInverse();
  const Eigen::Vector3d os = o.cwiseProduct(inv), ds = d.cwiseProduct(inv);
  const double qa = ds.squaredNorm(), qb = 2.0 * os.dot(ds), qc = os.squaredNorm() - 1.0;
  const double disc = qb * qb - 4.0 * qa * qc;
  if (disc < 0) return std::nullopt;
  const double t = (-qb - std::sqrt(disc)) / (2.0 * qa);
  if (!(t > 0)) return std::nullopt;
  // Project back onto the surface in normalized coordinates.
  const Eigen::Vector3d unit = (os + t * ds).normalized();
  return Eigen::Vector3d(unit.cwiseProduct(e.axes()));
}

}  // namespace detail

// Camera defaults: elevation 10 deg, distance 3x the largest semi-axis, and a
// focal length making the view-0 silhouette exactly `cols` units wide. Ray
// directions only depend on the silhouette-normalized grid, so focal length
// does not change any hit.
inline CameraSpec default_camera(const EllipsoidSpec& e, const TemplateLayout& layout) {
  e.validate();
  CameraSpec cam;
  cam.distance = 3.0 * e.max_axis();
  cam.focal = 1.0;
  const auto box = detail::silhouette_box(e, detail::make_view_camera(cam, layout.azimuth(0)));
  cam.focal = layout.cols / (box.s_max - box.s_min);
  return cam;
}

// Cast the ray through the cell center. The template grid spans the
// bounding box of the projected silhouette, row 0 at the top.
inline std::optional<SurfaceHit> backproject_cell(const TemplateLayout& layout,
                                                  const EllipsoidSpec& e, const CameraSpec& cam,
                                                  const CellRef& cell) {
  e.validate();
  cam.validate(e);
  if (!layout.contains(cell)) throw IndexError("cell outside layout");
  const auto vc = detail::make_view_camera(cam, layout.azimuth(cell.view));
  const auto box = detail::silhouette_box(e, vc);
  const double s = box.s_min + (cell.col + 0.5) * (box.s_max - box.s_min) / layout.cols;
  const double t = box.t_max - (cell.row + 0.5) * (box.t_max - box.t_min) / layout.rows;
  const auto p = detail::intersect(e, vc.center, vc.ray(s, t));
  if (!p) return std::nullopt;
  return SurfaceHit{cell, *p};
}

// Hits for every cell, indexed by global cell id.
inline std::vector<std::optional<SurfaceHit>> backproject_all(const TemplateLayout& layout,
                                                              const EllipsoidSpec& e,
                                                              const CameraSpec& cam) {
  std::vector<std::optional<SurfaceHit>> out(layout.cell_count());
  for (std::size_t id = 0; id < out.size(); ++id)
    out[id] = backproject_cell(layout, e, cam, layout.cell_at(id));
  return out;
}

namespace detail {

// Unordered pairs of cyclically adjacent views.
inline std::vector<std::pair<int, int>> adjacent_views(int views) {
  std::set<std::pair<int, int>> s;
  for (int v = 0; v < views; ++v) {
    const int u = (v + 1) % views;
    if (u != v) s.insert({std::min(u, v), std::max(u, v)});
  }
  return {s.begin(), s.end()};
}

}  // namespace detail

// Cross-view pairs between cells of adjacent views whose surface hits lie
// within `tau` of each other. Symmetric: both (j,k) and (k,j) are listed.
inline CellPairSet build_mv_pairs(const TemplateLayout& layout, const EllipsoidSpec& e,
                                  const CameraSpec& cam, double tau) {
  if (tau < 0) throw InvalidArgument("patch radius must be >= 0");
  const auto hits = backproject_all(layout, e, cam);
  CellPairSet out{Relation::mv, {}};
  const std::size_t per_view = layout.cells_per_view();
  for (auto [va, vb] : detail::adjacent_views(layout.views)) {
    for (std::size_t i = 0; i < per_view; ++i) {
      const auto& ha = hits[va * per_view + i];
      if (!ha) continue;
      for (std::size_t k = 0; k < per_view; ++k) {
        const auto& hb = hits[vb * per_view + k];
        if (!hb) continue;
        if ((ha->point - hb->point).norm() <= tau) {
          out.pairs.emplace_back(ha->cell, hb->cell);
          out.pairs.emplace_back(hb->cell, ha->cell);
        }
      }
    }
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  return out;
}

// Patch radius at which the median (cell, neighboring view) entry has
// `target_partners` partners, reduced if needed so no cell has more than
// `k_cap` partners in total.
inline double default_patch_radius(const TemplateLayout& layout, const EllipsoidSpec& e,
                                   const CameraSpec& cam, int k_cap = 4,
                                   int target_partners = 2) {
  if (k_cap < 1 || target_partners < 1) throw InvalidArgument("partner counts must be >= 1");
  const auto hits = backproject_all(layout, e, cam);
  const std::size_t per_view = layout.cells_per_view();
  std::vector<std::vector<double>> all(hits.size());
  std::vector<double> kth;
  for (std::size_t id = 0; id < hits.size(); ++id) {
    if (!hits[id]) continue;
    const int v = hits[id]->cell.view;
    std::set<int> nbrs;
    if (layout.views > 1) {
      nbrs.insert((v + 1) % layout.views);
      nbrs.insert((v + layout.views - 1) % layout.views);
    }
    for (int u : nbrs) {
      std::vector<double> d;
      for (std::size_t k = 0; k < per_view; ++k) {
        const auto& hb = hits[std::size_t(u) * per_view + k];
        if (hb) d.push_back((hits[id]->point - hb->point).norm());
      }
      std::sort(d.begin(), d.end());
      if (d.size() >= std::size_t(target_partners)) kth.push_back(d[std::size_t(target_partners) - 1]);
      all[id].insert(all[id].end(), d.begin(), d.end());
    }
  }
  if (kth.empty()) return 0.0;
  std::nth_element(kth.begin(), kth.begin() + std::ptrdiff_t(kth.size() / 2), kth.end());
  double tau = kth[kth.size() / 2];
  for (auto& d : all) {
    if (d.size() <= std::size_t(k_cap)) continue;
    std::sort(d.begin(), d.end());
    const double limit = d[std::size_t(k_cap)];
    if (limit <= tau) tau = std::nextafter(limit, 0.0);
  }
  return std::max(tau, 0.0);
}

// Within-view grid relations. d1 links (r,c) to (r+1,c-1), i.e. a cell to its
// neighbor on the anti-diagonal (the upper-right cell seen from below-left);
// d2 links (r,c) to (r+1,c+1). `cell` pairs each cell with itself.
inline CellPairSet build_grid_pairs(const TemplateLayout& layout, Relation rel) {
  if (rel == Relation::mv) throw InvalidArgument("mv is not a grid relation");
  CellPairSet out{rel, {}};
  int dr = 0, dc = 0;
  switch (rel) {
    case Relation::h: dc = 1; break;
    case Relation::v: dr = 1; break;
    case Relation::d1: dr = 1; dc = -1; break;
    case Relation::d2: dr = 1; dc = 1; break;
    default: break;
  }
  for (int v = 0; v < layout.views; ++v)
    for (int r = 0; r < layout.rows; ++r)
      for (int c = 0; c < layout.cols; ++c) {
        const CellRef a{v, r, c}, b{v, r + dr, c + dc};
        if (layout.contains(b)) out.pairs.emplace_back(a, b);
      }
  return out;
}

// Text dump: "# relation <tag>" then one "v,r,c v',r',c'" pair per line.
inline void write_pairs(std::ostream& os, const CellPairSet& set) {
  os << "# relation " << relation_name(set.relation) << '\n';
  for (const auto& [a, b] : set.pairs)
    os << a.view << ',' << a.row << ',' << a.col << ' ' << b.view << ',' << b.row << ','
       << b.col << '\n';
}

inline CellPairSet read_pairs(std::istream& is) {
  CellPairSet set;
  std::string line;
  auto parse_cell = [](const std::string& tok) {
    CellRef c;
    char c1 = 0, c2 = 0;
    std::istringstream ss(tok);
    if (!(ss >> c.view >> c1 >> c.row >> c2 >> c.col) || c1 != ',' || c2 != ',')
      throw FormatError("bad cell token '" + tok + "'");
    return c;
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string key, tag;
      if (ss >> key >> tag && key == "relation") set.relation = parse_relation(tag);
      continue;
    }
    std::istringstream ss(line);
    std::string ta, tb;
    if (!(ss >> ta >> tb)) throw FormatError("bad pair line '" + line + "'");
    set.pairs.emplace_back(parse_cell(ta), parse_cell(tb));
  }
  return set;
}

}  // namespace mvprior
