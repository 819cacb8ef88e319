#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mvprior/detect.hpp"
#include "mvprior/error.hpp"
#include "mvprior/eval.hpp"
#include "mvprior/geometry.hpp"
#include "mvprior/layout.hpp"
#include "mvprior/svm.hpp"

namespace mvprior {

// splitmix64 finalizer; derives independent stream seeds from (seed, tag).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Band-limited random vector field on R^3, restricted to the ellipsoid
// surface: f_l(p) = sum_k a_lk cos(omega_k . p + phi_k) with |omega_k| <=
// band. Frequencies are uniform in the ball of radius `band`, phases uniform,
// amplitudes Gaussian scaled so each channel has variance ~ scale^2.
struct SurfaceField {
  Eigen::MatrixXd freqs;   // K x 3
  Eigen::VectorXd phases;  // K
  Eigen::MatrixXd amps;    // L x K

  static SurfaceField sample(int cell_dim, int terms, double band, double scale,
                             std::mt19937_64& rng) {
    if (terms < 1) throw InvalidArgument("field needs at least one term");
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit;
    SurfaceField f;
    f.freqs.resize(terms, 3);
    f.phases.resize(terms);
    f.amps.resize(cell_dim, terms);
    for (int k = 0; k < terms; ++k) {
      Eigen::Vector3d dir(normal(rng), normal(rng), normal(rng));
      dir.normalize();
      f.freqs.row(k) = (band * std::cbrt(unit(rng))) * dir.transpose();
      f.phases[k] = 2.0 * std::numbers::pi * unit(rng);
    }
    const double a = scale * std::sqrt(2.0 / terms);
    for (int l = 0; l < cell_dim; ++l)
      for (int k = 0; k < terms; ++k) f.amps(l, k) = a * normal(rng);
    return f;
  }

  // wa * a + wb * b as one field.
  static SurfaceField blend(const SurfaceField& a, double wa, const SurfaceField& b, double wb) {
    SurfaceField f;
    const Eigen::Index ka = a.phases.size(), kb = b.phases.size();
    f.freqs.resize(ka + kb, 3);
    f.freqs << a.freqs, b.freqs;
    f.phases.resize(ka + kb);
    f.phases << a.phases, b.phases;
    f.amps.resize(a.amps.rows(), ka + kb);
    f.amps << wa * a.amps, wb * b.amps;
    return f;
  }

  Eigen::VectorXd operator()(const Eigen::Vector3d& p) const {
    return amps * (freqs * p + phases).array().cos().matrix();
  }

  // Bound on |f(p) - f(q)| / |p - q|.
  double lipschitz() const {
    const Eigen::VectorXd wn = freqs.rowwise().norm();
    return (amps.cwiseAbs() * wn).norm();
  }
};

enum class Category { target, source };

struct WorldConfig {
  TemplateLayout layout{8, 5, 6, 4, true};
  EllipsoidSpec ellipsoid{2.0, 0.9, 0.7};
  std::optional<CameraSpec> camera;  // default_camera() when unset
  double smoothness = 2.0;           // band limit of the surface field
  int field_terms = 64;
  double field_scale = 1.0;
  double sigma_view = 0.1;           // fixed per-view perturbation of GT templates
  double sigma_pos = 0.5;            // noise on positive samples
  double sigma_neg = 0.7;            // background / negative noise
  double relatedness = 0.9;          // source field = r * target + sqrt(1 - r^2) * fresh
  std::uint64_t seed = 1;

  void validate() const {
    layout.validate();
    ellipsoid.validate();
    if (camera) camera->validate(ellipsoid);
    if (smoothness < 0 || sigma_view < 0 || sigma_pos < 0 || sigma_neg < 0 || field_scale < 0)
      throw InvalidArgument("world noise levels and smoothness must be >= 0");
    if (relatedness < 0 || relatedness > 1) throw InvalidArgument("relatedness must be in [0,1]");
    if (field_terms < 1) throw InvalidArgument("field_terms must be >= 1");
  }
};

// Ground-truth templates of a target category and a related source category.
// Both are rendered from surface fields through the same camera rig, so
// cells of nearby views that see the same surface patch agree.
struct World {
  WorldConfig cfg;
  CameraSpec camera;
  SurfaceField target_field;
  SurfaceField source_field;
  MultiViewModel target_gt;
  MultiViewModel source_gt;
  std::vector<std::optional<SurfaceHit>> hits;

  const MultiViewModel& gt(Category c) const {
    return c == Category::target ? target_gt : source_gt;
  }
  const SurfaceField& field(Category c) const {
    return c == Category::target ? target_field : source_field;
  }
};

namespace detail {

inline MultiViewModel render_templates(const TemplateLayout& layout,
                                       const std::vector<std::optional<SurfaceHit>>& hits,
                                       const SurfaceField& field, double sigma_view,
                                       std::mt19937_64& rng, std::string meta) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd p = Eigen::VectorXd::Zero(Eigen::Index(layout.param_count()));
  const Eigen::Index L = layout.cell_dim;
  for (std::size_t id = 0; id < hits.size(); ++id) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(L);
    if (hits[id]) {
      v = field(hits[id]->point);
      for (Eigen::Index l = 0; l < L; ++l) v[l] += sigma_view * normal(rng);
    }
    p.segment(Eigen::Index(id) * L, L) = v;
  }
  return MultiViewModel(layout, std::move(p), std::move(meta));
}

}  // namespace detail

// Cells whose ray misses the ellipsoid keep the background mean (zero).
inline World generate_world(const WorldConfig& cfg) {
  cfg.validate();
  World w;
  w.cfg = cfg;
  w.camera = cfg.camera ? *cfg.camera : default_camera(cfg.ellipsoid, cfg.layout);
  w.hits = backproject_all(cfg.layout, cfg.ellipsoid, w.camera);
  std::mt19937_64 rng(mix_seed(cfg.seed, 1));
  const int L = cfg.layout.cell_dim;
  w.target_field = SurfaceField::sample(L, cfg.field_terms, cfg.smoothness, cfg.field_scale, rng);
  const SurfaceField fresh =
      SurfaceField::sample(L, cfg.field_terms, cfg.smoothness, cfg.field_scale, rng);
  w.source_field = SurfaceField::blend(w.target_field, cfg.relatedness, fresh,
                                       std::sqrt(1.0 - cfg.relatedness * cfg.relatedness));
  std::mt19937_64 view_rng(mix_seed(cfg.seed, 2));
  w.target_gt =
      detail::render_templates(cfg.layout, w.hits, w.target_field, cfg.sigma_view, view_rng, "target");
  w.source_gt =
      detail::render_templates(cfg.layout, w.hits, w.source_field, cfg.sigma_view, view_rng, "source");
  return w;
}

struct SplitSpec {
  std::vector<int> pos_per_view;  // one count per view
  int negatives = 0;
  int maps = 0;
  int instances_per_map = 4;
  int gap = 2;                    // background cells around each embedding slot
};

struct Split {
  LabeledWindowSet windows;
  std::vector<FeatureMap> maps;
  std::vector<GroundTruthBox> gts;
};

// Positives are GT view templates plus sigma_pos noise, negatives and map
// backgrounds are sigma_neg noise. Each map holds instances_per_map
// embedded instances on a jittered slot grid, views balanced across all bins.
inline Split sample_dataset(const World& world, Category cat, const SplitSpec& spec,
                            std::uint64_t seed) {
  const TemplateLayout& l = world.cfg.layout;
  if (spec.pos_per_view.size() != std::size_t(l.views))
    throw InvalidArgument("pos_per_view needs one entry per view");
  if (spec.negatives < 0 || spec.maps < 0 || spec.instances_per_map < 0 || spec.gap < 0 ||
      std::any_of(spec.pos_per_view.begin(), spec.pos_per_view.end(), [](int k) { return k < 0; }))
    throw InvalidArgument("split counts must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const MultiViewModel& gt = world.gt(cat);
  const double sp = world.cfg.sigma_pos, sn = world.cfg.sigma_neg;
  const auto vs = Eigen::Index(l.view_size());
  auto noise = [&](double sigma) {
    Eigen::VectorXd n(vs);
    for (Eigen::Index i = 0; i < vs; ++i) n[i] = sigma * normal(rng);
    return n;
  };
  auto instance = [&](int v) -> Eigen::VectorXd { return gt.slice_view(v).weights + noise(sp); };

  Split out;
  for (int v = 0; v < l.views; ++v)
    for (int i = 0; i < spec.pos_per_view[std::size_t(v)]; ++i)
      out.windows.push_back({instance(v), v, 1.0});
  for (int i = 0; i < spec.negatives; ++i) out.windows.push_back({noise(sn), -1, 1.0});

  if (spec.maps == 0 || spec.instances_per_map == 0) return out;
  const int per = spec.instances_per_map;
  const int slot_rows = int(std::ceil(std::sqrt(double(per))));
  const int slot_cols = (per + slot_rows - 1) / slot_rows;
  const int sh = l.rows + spec.gap, sw = l.cols + spec.gap;
  const int height = slot_rows * sh + spec.gap, width = slot_cols * sw + spec.gap;

  std::vector<int> views(std::size_t(spec.maps) * per);
  for (std::size_t i = 0; i < views.size(); ++i) views[i] = int(i % std::size_t(l.views));
  std::shuffle(views.begin(), views.end(), rng);

  std::uniform_int_distribution<int> jitter(-spec.gap / 2, spec.gap / 2);
  std::size_t next = 0;
  for (int m = 0; m < spec.maps; ++m) {
    FeatureMap map(height, width, l.cell_dim, "img" + std::to_string(m));
    for (double& x : map.data) x = sn * normal(rng);
    std::vector<int> slots(std::size_t(slot_rows) * slot_cols);
    for (std::size_t s = 0; s < slots.size(); ++s) slots[s] = int(s);
    std::shuffle(slots.begin(), slots.end(), rng);
    for (int i = 0; i < per; ++i) {
      const int slot = slots[std::size_t(i)];
      const int y = spec.gap + (slot / slot_cols) * sh + jitter(rng);
      const int x = spec.gap + (slot % slot_cols) * sw + jitter(rng);
      const int v = views[next++];
      map.paste(y, x, l.rows, l.cols, instance(v));
      const double cs = map.cell_size;
      out.gts.push_back({map.image_id, {x * cs, y * cs, l.cols * cs, l.rows * cs}, v,
                         cat == Category::target ? "target" : "source", false});
    }
    out.maps.push_back(std::move(map));
  }
  return out;
}

}  // namespace mvprior
