#include <gtest/gtest.h>

#include <map>

#include "mvprior/protocol.hpp"
#include "mvprior/synth.hpp"

using namespace mvprior;

namespace {

WorldConfig small_world() {
  WorldConfig cfg;
  cfg.layout = TemplateLayout(4, 3, 3, 3, true);
  cfg.seed = 5;
  return cfg;
}

DataSpec small_data() {
  DataSpec d;
  d.source_pos_per_view = 8;
  d.source_negatives = 30;
  d.target_pos_per_view = 8;
  d.target_negatives = 30;
  d.test_maps = 6;
  d.instances_per_map = 4;
  return d;
}

}  // namespace

TEST(SurfaceField, NearbySurfacePointsAgreeWithinLipschitzBound) {
  WorldConfig cfg;
  cfg.ellipsoid = EllipsoidSpec{};
  cfg.sigma_view = 0.0;
  const World w = generate_world(cfg);
  const auto& l = cfg.layout;
  const double tau = default_patch_radius(l, cfg.ellipsoid, w.camera);
  const auto pairs = build_mv_pairs(l, cfg.ellipsoid, w.camera, tau);
  ASSERT_FALSE(pairs.pairs.empty());
  const double bound = w.target_field.lipschitz() * tau;
  for (const auto& [a, b] : pairs.pairs) {
    const auto ra = param_range(l, a), rb = param_range(l, b);
    const Eigen::VectorXd da =
        w.target_gt.params().segment(Eigen::Index(ra.begin), Eigen::Index(ra.size()));
    const Eigen::VectorXd db =
        w.target_gt.params().segment(Eigen::Index(rb.begin), Eigen::Index(rb.size()));
    EXPECT_LE((da - db).norm(), bound + 1e-12);
  }
}

TEST(World, SameSeedSameWorld) {
  const World a = generate_world(small_world());
  const World b = generate_world(small_world());
  EXPECT_EQ(a.target_gt.params(), b.target_gt.params());
  EXPECT_EQ(a.source_gt.params(), b.source_gt.params());
  auto cfg = small_world();
  cfg.seed = 6;
  EXPECT_NE(generate_world(cfg).target_gt.params(), a.target_gt.params());
}

TEST(World, ZeroSmoothnessGivesIdenticalViews) {
  auto cfg = small_world();
  cfg.ellipsoid = EllipsoidSpec{};
  cfg.smoothness = 0.0;
  cfg.sigma_view = 0.0;
  const World w = generate_world(cfg);
  const auto v0 = w.target_gt.slice_view(0).weights;
  for (int v = 1; v < cfg.layout.views; ++v)
    EXPECT_LE((w.target_gt.slice_view(v).weights - v0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(World, RelatednessOneMakesSourceEqualTarget) {
  auto cfg = small_world();
  cfg.relatedness = 1.0;
  cfg.sigma_view = 0.0;
  const World w = generate_world(cfg);
  EXPECT_LE((w.source_gt.params() - w.target_gt.params()).cwiseAbs().maxCoeff(), 1e-12);
  cfg.relatedness = 0.5;
  const World u = generate_world(cfg);
  EXPECT_GT((u.source_gt.params() - u.target_gt.params()).norm(), 0.1);
}

TEST(World, MissedCellsAndBiasesAreZero) {
  WorldConfig cfg;
  const World w = generate_world(cfg);
  const auto& l = cfg.layout;
  EXPECT_TRUE(w.target_gt.params().tail(Eigen::Index(l.views)).isZero(0.0));
  for (std::size_t id = 0; id < w.hits.size(); ++id)
    if (!w.hits[id])
      EXPECT_TRUE(w.target_gt.params().segment(Eigen::Index(id) * l.cell_dim, l.cell_dim).isZero(0.0));
  EXPECT_THROW(
      [] {
        WorldConfig bad;
        bad.relatedness = 1.5;
        generate_world(bad);
      }(),
      InvalidArgument);
}

TEST(Dataset, CountsAndNoiseFreePositives) {
  auto cfg = small_world();
  cfg.sigma_pos = 0.0;
  const World w = generate_world(cfg);
  SplitSpec spec{{2, 0, 1, 3}, 5, 0, 0, 2};
  const Split s = sample_dataset(w, Category::target, spec, 9);
  std::map<int, int> per_view;
  for (const auto& win : s.windows) {
    ++per_view[win.view];
    if (win.positive())
      EXPECT_EQ(win.features, w.target_gt.slice_view(win.view).weights);
  }
  EXPECT_EQ(per_view[-1], 5);
  EXPECT_EQ(per_view[0], 2);
  EXPECT_EQ(per_view.count(1), 0u);
  EXPECT_EQ(per_view[3], 3);
  EXPECT_TRUE(s.maps.empty());
  EXPECT_THROW(sample_dataset(w, Category::target, SplitSpec{{1, 1}, 0, 0, 0, 2}, 1),
               InvalidArgument);
}

TEST(Dataset, TestMapsHoldOneBoxPerInstance) {
  const World w = generate_world(small_world());
  SplitSpec spec{{0, 0, 0, 0}, 0, 5, 4, 2};
  const Split s = sample_dataset(w, Category::target, spec, 3);
  ASSERT_EQ(s.maps.size(), 5u);
  ASSERT_EQ(s.gts.size(), 20u);
  std::map<int, int> per_view;
  for (const auto& g : s.gts) {
    ++per_view[g.view];
    const auto it = std::find_if(s.maps.begin(), s.maps.end(),
                                 [&](const FeatureMap& m) { return m.image_id == g.image; });
    ASSERT_NE(it, s.maps.end());
    EXPECT_GE(g.box.x, 0);
    EXPECT_GE(g.box.y, 0);
    EXPECT_LE(g.box.x + g.box.width, it->width * it->cell_size);
    EXPECT_LE(g.box.y + g.box.height, it->height * it->cell_size);
  }
  for (int v = 0; v < 4; ++v) EXPECT_EQ(per_view[v], 5);
  // Boxes within one map do not overlap.
  for (std::size_t i = 0; i < s.gts.size(); ++i)
    for (std::size_t j = i + 1; j < s.gts.size(); ++j)
      if (s.gts[i].image == s.gts[j].image) EXPECT_EQ(iou(s.gts[i].box, s.gts[j].box), 0.0);
}

TEST(Protocol, SmokeRunWithoutPrior) {
  const World w = generate_world(small_world());
  ProtocolSpec spec;
  spec.ks = {8};
  spec.methods = {PriorSpec{PriorKind::none, {}}};
  spec.repetitions = 1;
  spec.sources = 2;
  spec.source_k = 4;
  spec.iou = {0.5, 0.7};
  const auto res = run_protocol(spec, w, small_data(), TrainConfig{}, PriorOptions{});
  ASSERT_EQ(res.rows.size(), 2u);
  for (const auto& r : res.rows) {
    EXPECT_EQ(r.method, "none");
    EXPECT_EQ(r.k, 8);
    EXPECT_GE(r.ap, 0.0);
    EXPECT_LE(r.ap, 1.0);
    EXPECT_LE(r.ap_vp_d, r.ap_vp_c + 1e-15);
    EXPECT_LE(r.ap_vp_c, r.ap + 1e-15);
  }
  EXPECT_GT(res.rows[0].ap, 0.5);
  EXPECT_EQ(res.confusion.size(), 1u);
  EXPECT_EQ(res.confusion.at({"none", 8}).sum(), res.rows[0].true_positives);
}

TEST(Protocol, Reproducible) {
  const World w = generate_world(small_world());
  ProtocolSpec spec;
  spec.ks = {1, 4};
  spec.methods = {PriorSpec{PriorKind::none, {}}, PriorSpec{PriorKind::dense, {}}};
  spec.repetitions = 2;
  spec.sources = 3;
  spec.source_k = 4;
  const auto a = run_protocol(spec, w, small_data(), TrainConfig{}, PriorOptions{});
  const auto b = run_protocol(spec, w, small_data(), TrainConfig{}, PriorOptions{});
  std::ostringstream sa, sb;
  write_results_csv(sa, a.rows);
  write_results_csv(sb, b.rows);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(a.rows.size(), 2u * 2 * 2);
}

TEST(Protocol, MoreDataDoesNotHurtPlainSvm) {
  const World w = generate_world(small_world());
  ProtocolSpec spec;
  spec.ks = {1, 8};
  spec.methods = {PriorSpec{PriorKind::none, {}}};
  spec.repetitions = 3;
  spec.sources = 1;
  spec.source_k = 2;
  const auto s = summarize(run_protocol(spec, w, small_data(), TrainConfig{}, PriorOptions{}).rows);
  EXPECT_GE(summary_mean(s, "none", 8, "ap"), summary_mean(s, "none", 1, "ap"));
}

TEST(Protocol, SparseRunReportsWithheldViews) {
  const World w = generate_world(small_world());
  ProtocolSpec spec;
  spec.kind = ProtocolKind::sparse_kshot;
  spec.available_views = {0, 2};
  spec.sparse_k = 3;
  spec.methods = {PriorSpec{PriorKind::dense, {}}};
  spec.repetitions = 1;
  spec.sources = 3;
  spec.source_k = 4;
  const auto res = run_protocol(spec, w, small_data(), TrainConfig{}, PriorOptions{});
  ASSERT_EQ(res.rows.size(), 1u);
  const auto& conf = res.confusion.at({"dense", 3});
  EXPECT_EQ(res.rows[0].tp_withheld, conf.row(1).sum() + conf.row(3).sum());
  EXPECT_DOUBLE_EQ(res.rows[0].vp_withheld, view_accuracy_on(conf, {1, 3}));
  spec.available_views = {};
  EXPECT_THROW(run_protocol(spec, w, small_data(), TrainConfig{}, PriorOptions{}), InvalidArgument);
}

TEST(Protocol, SummaryStatistics) {
  std::vector<ResultRow> rows(3);
  for (int i = 0; i < 3; ++i) {
    rows[std::size_t(i)].method = "m";
    rows[std::size_t(i)].k = 1;
    rows[std::size_t(i)].ap = 0.1 * (i + 1);
  }
  const auto s = summarize(rows);
  EXPECT_NEAR(summary_mean(s, "m", 1, "ap"), 0.2, 1e-15);
  for (const auto& r : s)
    if (r.measure == "ap") EXPECT_NEAR(r.stddev, 0.1, 1e-15);
  EXPECT_THROW(summary_mean(s, "x", 1, "ap"), InvalidArgument);
}
