#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mvprior/binary_io.hpp"
#include "mvprior/error.hpp"
#include "mvprior/geometry.hpp"
#include "mvprior/layout.hpp"
#include "mvprior/model_io.hpp"

namespace mvprior {

// Which cells define the mean subtracted in a block cross-covariance: the
// first element of every pair (default) or both elements.
enum class MeanMode { first, both };

struct BlockCovariance {
  Relation relation = Relation::cell;
  Eigen::MatrixXd sigma;  // L x L
  std::size_t pair_count = 0;
  Eigen::VectorXd mean;   // L
};

// Cross-covariance of one relation, averaged over source models and pairs:
//   sigma = 1/(N |P|) sum_s sum_{(j,k)} (w_j - mean)(w_k - mean)^T
inline BlockCovariance compute_block_covariance(const std::vector<MultiViewModel>& sources,
                                                const CellPairSet& pairs,
                                                MeanMode mode = MeanMode::first) {
  if (sources.empty()) throw InvalidArgument("need at least one source model");
  if (pairs.pairs.empty()) throw InvalidArgument("empty pair set");
  const TemplateLayout& layout = sources.front().layout();
  for (const auto& s : sources)
    if (!(s.layout() == layout)) throw InvalidArgument("source models disagree on layout");
  const Eigen::Index L = layout.cell_dim;

  auto cell = [&](const MultiViewModel& m, const CellRef& c) {
    return m.params().segment(Eigen::Index(param_range(layout, c).begin), L);
  };

  BlockCovariance out;
  out.relation = pairs.relation;
  out.pair_count = pairs.pairs.size();
  out.mean = Eigen::VectorXd::Zero(L);
  double count = 0;
  for (const auto& s : sources)
    for (const auto& [j, k] : pairs.pairs) {
      out.mean += cell(s, j);
      count += 1;
      if (mode == MeanMode::both) {
        out.mean += cell(s, k);
        count += 1;
      }
    }
  out.mean /= count;

  out.sigma = Eigen::MatrixXd::Zero(L, L);
  for (const auto& s : sources)
    for (const auto& [j, k] : pairs.pairs)
      out.sigma.noalias() += (cell(s, j) - out.mean) * (cell(s, k) - out.mean).transpose();
  out.sigma /= double(sources.size() * pairs.pairs.size());
  return out;
}

enum class SigmaKind { sv, mv, dense };
enum class MaskVariant { none, td2nd, td2all, nb2all };

inline const char* sigma_kind_name(SigmaKind k) {
  switch (k) {
    case SigmaKind::sv: return "sv";
    case SigmaKind::mv: return "mv";
    case SigmaKind::dense: return "dense";
  }
  return "?";
}

inline const char* mask_name(MaskVariant m) {
  switch (m) {
    case MaskVariant::none: return "none";
    case MaskVariant::td2nd: return "td2nd";
    case MaskVariant::td2all: return "td2all";
    case MaskVariant::nb2all: return "nb2all";
  }
  return "?";
}

inline MaskVariant parse_mask(const std::string& s) {
  for (MaskVariant m : {MaskVariant::none, MaskVariant::td2nd, MaskVariant::td2all,
                        MaskVariant::nb2all})
    if (s == mask_name(m)) return m;
  throw InvalidArgument("unknown mask variant '" + s + "'");
}

// View-block sparsity pattern S applied elementwise to a prior. D is the set
// of views that have target training data.
struct MaskSpec {
  MaskVariant variant = MaskVariant::none;
  std::vector<int> data_views;

  void validate(int views) const {
    if ((variant == MaskVariant::td2nd || variant == MaskVariant::td2all) && data_views.empty())
      throw InvalidArgument(std::string("mask ") + mask_name(variant) + " needs data views");
    for (int v : data_views)
      if (v < 0 || v >= views) throw InvalidArgument("mask data view out of range");
  }

  bool keeps(int i, int j, int views) const {
    const bool di = std::find(data_views.begin(), data_views.end(), i) != data_views.end();
    const bool dj = std::find(data_views.begin(), data_views.end(), j) != data_views.end();
    switch (variant) {
      case MaskVariant::none: return true;
      case MaskVariant::td2nd: return i == j || (di && !dj) || (dj && !di);
      case MaskVariant::td2all: return i == j || di || dj;
      case MaskVariant::nb2all: return cyclic_view_distance(i, j, views) <= 1;
    }
    return true;
  }
};

using BlockKey = std::pair<std::size_t, std::size_t>;  // (cell id j, cell id k)

// P x P prior correlation matrix over a layout's parameters. Sparse kinds
// hold L x L blocks keyed by cell ids; the dense kind holds the full matrix.
// Bias rows and columns are always zero.
class SigmaMatrix {
 public:
  SigmaMatrix() = default;

  static SigmaMatrix sparse(const TemplateLayout& layout, SigmaKind kind) {
    SigmaMatrix s;
    s.layout_ = layout;
    s.kind_ = kind;
    return s;
  }

  static SigmaMatrix from_dense(const TemplateLayout& layout, Eigen::MatrixXd m, int sources) {
    const auto p = Eigen::Index(layout.param_count());
    if (m.rows() != p || m.cols() != p) throw InvalidArgument("dense sigma has wrong size");
    SigmaMatrix s;
    s.layout_ = layout;
    s.kind_ = SigmaKind::dense;
    s.sources_ = sources;
    s.dense_ = std::move(m);
    return s;
  }

  const TemplateLayout& layout() const { return layout_; }
  SigmaKind kind() const { return kind_; }
  bool is_dense() const { return kind_ == SigmaKind::dense; }
  int sources() const { return sources_; }
  const MaskSpec& mask() const { return mask_; }
  std::size_t dim() const { return layout_.param_count(); }
  const std::map<BlockKey, Eigen::MatrixXd>& blocks() const { return blocks_; }
  const Eigen::MatrixXd& dense() const { return dense_; }

  void set_mask(MaskSpec m) { mask_ = std::move(m); }
  void set_sources(int n) { sources_ = n; }

  void add_block(std::size_t j, std::size_t k, const Eigen::MatrixXd& b) {
    auto [it, inserted] = blocks_.try_emplace({j, k}, b);
    if (!inserted) it->second += b;
  }
  std::map<BlockKey, Eigen::MatrixXd>& mutable_blocks() { return blocks_; }
  Eigen::MatrixXd& mutable_dense() { return dense_; }

  Eigen::MatrixXd to_dense() const {
    if (is_dense()) return dense_;
    const auto p = Eigen::Index(dim());
    const Eigen::Index L = layout_.cell_dim;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(p, p);
    for (const auto& [key, b] : blocks_)
      m.block(Eigen::Index(key.first) * L, Eigen::Index(key.second) * L, L, L) += b;
    return m;
  }

  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const {
    if (is_dense()) return dense_ * x;
    const Eigen::Index L = layout_.cell_dim;
    Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size());
    for (const auto& [key, b] : blocks_)
      y.segment(Eigen::Index(key.first) * L, L).noalias() +=
          b * x.segment(Eigen::Index(key.second) * L, L);
    return y;
  }

  bool is_zero() const {
    if (is_dense()) return dense_.size() == 0 || dense_.isZero(0.0);
    return std::all_of(blocks_.begin(), blocks_.end(),
                       [](const auto& kv) { return kv.second.isZero(0.0); });
  }

 private:
  TemplateLayout layout_;
  SigmaKind kind_ = SigmaKind::sv;
  int sources_ = 0;
  MaskSpec mask_;
  std::map<BlockKey, Eigen::MatrixXd> blocks_;
  Eigen::MatrixXd dense_;
};

// Places each relation's block at every pair of the target layout satisfying
// it: (j,k) receives sigma_n and (k,j) its transpose. A pair listed in both
// orientations is placed once; self pairs fill the diagonal block once.
// Contributions from different relations to the same block are summed.
inline SigmaMatrix assemble_sparse_sigma(const TemplateLayout& layout,
                                         const std::vector<BlockCovariance>& blocks,
                                         const std::vector<CellPairSet>& pairsets) {
  bool has_mv = false;
  for (const auto& ps : pairsets) has_mv = has_mv || ps.relation == Relation::mv;
  SigmaMatrix out = SigmaMatrix::sparse(layout, has_mv ? SigmaKind::mv : SigmaKind::sv);
  const Eigen::Index L = layout.cell_dim;
  for (const auto& ps : pairsets) {
    auto it = std::find_if(blocks.begin(), blocks.end(),
                           [&](const BlockCovariance& b) { return b.relation == ps.relation; });
    if (it == blocks.end())
      throw InvalidArgument(std::string("no block computed for relation ") +
                            relation_name(ps.relation));
    if (it->sigma.rows() != L || it->sigma.cols() != L)
      throw InvalidArgument("block size does not match layout cell_dim");
    std::set<BlockKey> seen;
    for (const auto& [a, b] : ps.pairs) {
      const std::size_t j = layout.cell_id(a), k = layout.cell_id(b);
      if (!seen.insert({std::min(j, k), std::max(j, k)}).second) continue;
      if (j == k) {
        out.add_block(j, j, it->sigma);
      } else {
        out.add_block(j, k, it->sigma);
        out.add_block(k, j, it->sigma.transpose());
      }
    }
  }
  return out;
}

// Sources' parameter vectors with bias slots zeroed, one per column.
inline Eigen::MatrixXd appearance_matrix(const std::vector<MultiViewModel>& sources) {
  if (sources.empty()) throw InvalidArgument("need at least one source model");
  const TemplateLayout& layout = sources.front().layout();
  Eigen::MatrixXd w(static_cast<Eigen::Index>(layout.param_count()),
                    static_cast<Eigen::Index>(sources.size()));
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (!(sources[i].layout() == layout))
      throw InvalidArgument("source models disagree on layout");
    w.col(Eigen::Index(i)) = sources[i].params();
  }
  w.bottomRows(Eigen::Index(layout.bias_count())).setZero();
  return w;
}

// Dense prior: sigma = 1/N sum_i w_i w_i^T over source parameter vectors.
inline SigmaMatrix compute_dense_sigma(const std::vector<MultiViewModel>& sources) {
  const Eigen::MatrixXd w = appearance_matrix(sources);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(w.rows(), w.rows());
  s.selfadjointView<Eigen::Lower>().rankUpdate(w, 1.0 / double(sources.size()));
  s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
  return SigmaMatrix::from_dense(sources.front().layout(), std::move(s), int(sources.size()));
}

// Zeroes the view blocks (i,j) the mask rejects, then symmetrizes.
inline SigmaMatrix apply_mask(const SigmaMatrix& sigma, const MaskSpec& mask) {
  const TemplateLayout& layout = sigma.layout();
  mask.validate(layout.views);
  if (mask.variant == MaskVariant::none) return sigma;
  SigmaMatrix out = sigma;
  out.set_mask(mask);
  if (sigma.is_dense()) {
    auto& m = out.mutable_dense();
    for (int i = 0; i < layout.views; ++i)
      for (int j = 0; j < layout.views; ++j)
        if (!mask.keeps(i, j, layout.views)) {
          const auto ri = layout.view_range(i), rj = layout.view_range(j);
          m.block(Eigen::Index(ri.begin), Eigen::Index(rj.begin), Eigen::Index(ri.size()),
                  Eigen::Index(rj.size()))
              .setZero();
        }
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    m = sym;
    return out;
  }
  auto& blocks = out.mutable_blocks();
  for (auto it = blocks.begin(); it != blocks.end();) {
    const int vi = layout.cell_at(it->first.first).view;
    const int vj = layout.cell_at(it->first.second).view;
    it = mask.keeps(vi, vj, layout.views) ? std::next(it) : blocks.erase(it);
  }
  std::map<BlockKey, Eigen::MatrixXd> sym;
  for (const auto& [key, b] : blocks) {
    const auto rev = blocks.find({key.second, key.first});
    Eigen::MatrixXd other = rev == blocks.end() ? Eigen::MatrixXd::Zero(b.rows(), b.cols())
                                                : Eigen::MatrixXd(rev->second.transpose());
    sym.emplace(key, 0.5 * (b + other));
    if (rev == blocks.end()) sym.emplace(BlockKey{key.second, key.first}, 0.5 * b.transpose());
  }
  blocks = std::move(sym);
  return out;
}

// Count of eigenvalues above rel_tol * trace.
inline int numerical_rank(const SigmaMatrix& sigma, double rel_tol = 1e-9) {
  const Eigen::MatrixXd m = sigma.to_dense();
  const double tr = m.trace();
  if (tr <= 0) return 0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return int((es.eigenvalues().array() > rel_tol * tr).count());
}

// Prior file layout (little-endian):
//   8 bytes "MVPPRIOR", u32 version (1), u32 kind (0 sv, 1 mv, 2 dense),
//   layout header (as in model files), u64 P, u32 N sources,
//   u32 mask variant, u32 count + u32 data views,
//   u32 storage (0 dense P*P f64 row-major, 1 block list),
//   block list: u64 count, then per block u64 j, u64 k, L*L f64 row-major.
inline constexpr std::uint32_t kPriorFormatVersion = 1;
inline const io::Magic kPriorMagic = io::make_magic("MVPPRIOR");

inline void save_prior(const SigmaMatrix& sigma, const std::string& path) {
  io::Writer w(path);
  w.magic(kPriorMagic);
  w.integer(kPriorFormatVersion);
  w.integer(std::uint32_t(sigma.kind()));
  io::write_layout(w, sigma.layout());
  w.integer(std::uint64_t(sigma.dim()));
  w.integer(std::uint32_t(sigma.sources()));
  w.integer(std::uint32_t(sigma.mask().variant));
  w.integer(std::uint32_t(sigma.mask().data_views.size()));
  for (int v : sigma.mask().data_views) w.integer(std::uint32_t(v));
  if (sigma.is_dense()) {
    w.integer(std::uint32_t(0));
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm =
        sigma.dense();
    w.reals(rm.data(), std::size_t(rm.size()));
  } else {
    w.integer(std::uint32_t(1));
    w.integer(std::uint64_t(sigma.blocks().size()));
    for (const auto& [key, b] : sigma.blocks()) {
      w.integer(std::uint64_t(key.first));
      w.integer(std::uint64_t(key.second));
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = b;
      w.reals(rm.data(), std::size_t(rm.size()));
    }
  }
  w.close();
}

inline SigmaMatrix load_prior(const std::string& path) {
  io::Reader r(path);
  r.expect_magic(kPriorMagic);
  const auto version = r.integer<std::uint32_t>();
  if (version != kPriorFormatVersion)
    throw FormatError(path + ": unsupported prior format version " + std::to_string(version));
  const auto kind = r.integer<std::uint32_t>();
  if (kind > 2) throw FormatError(path + ": bad prior kind");
  const TemplateLayout layout = io::read_layout(r);
  const auto p = r.integer<std::uint64_t>();
  if (p != layout.param_count()) throw FormatError(path + ": P disagrees with layout");
  const auto n = r.integer<std::uint32_t>();
  MaskSpec mask;
  const auto mv = r.integer<std::uint32_t>();
  if (mv > 3) throw FormatError(path + ": bad mask variant");
  mask.variant = MaskVariant(mv);
  const auto nviews = r.integer<std::uint32_t>();
  if (nviews > std::uint32_t(layout.views)) throw FormatError(path + ": bad mask view count");
  for (std::uint32_t i = 0; i < nviews; ++i) mask.data_views.push_back(int(r.integer<std::uint32_t>()));
  const auto storage = r.integer<std::uint32_t>();
  SigmaMatrix out;
  if (storage == 0) {
    if (kind != 2) throw FormatError(path + ": dense storage for sparse kind");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
        static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    r.reals(rm.data(), std::size_t(rm.size()));
    out = SigmaMatrix::from_dense(layout, Eigen::MatrixXd(rm), int(n));
  } else if (storage == 1) {
    if (kind == 2) throw FormatError(path + ": block storage for dense kind");
    out = SigmaMatrix::sparse(layout, SigmaKind(kind));
    out.set_sources(int(n));
    const auto count = r.integer<std::uint64_t>();
    const Eigen::Index L = layout.cell_dim;
    if (count > layout.cell_count() * layout.cell_count())
      throw FormatError(path + ": block count out of range");
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto j = r.integer<std::uint64_t>(), k = r.integer<std::uint64_t>();
      if (j >= layout.cell_count() || k >= layout.cell_count())
        throw FormatError(path + ": block index out of range");
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(L, L);
      r.reals(rm.data(), std::size_t(rm.size()));
      out.add_block(std::size_t(j), std::size_t(k), Eigen::MatrixXd(rm));
    }
  } else {
    throw FormatError(path + ": bad storage tag");
  }
  r.expect_end();
  out.set_mask(std::move(mask));
  return out;
}

}  // namespace mvprior
