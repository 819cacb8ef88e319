#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"

using namespace mvprior;
using namespace mvprior::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "mvprior_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

// Runs the CLI binary and returns its exit status; stderr lands in `err`.
int run_cli(const std::string& args, const fs::path& err) {
  const std::string cmd =
      std::string(MVPRIOR_CLI_PATH) + " " + args + " >/dev/null 2>" + err.string();
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string small_config(const fs::path& out, const std::string& prior_kind = "dense") {
  return R"({
  "world": {"layout": {"views": 4, "rows": 3, "cols": 3, "cell_dim": 3}, "seed": 3},
  "data": {"source_pos_per_view": 6, "source_negatives": 20, "target_pos_per_view": 5,
           "target_negatives": 20, "test_maps": 4, "instances_per_map": 4},
  "prior": {"kind": ")" +
         prior_kind + R"(", "sources": 3, "source_k": 4},
  "target": {"k": 3},
  "protocol": {"ks": [1, 3], "repetitions": 1, "methods": ["none", "dense"]},
  "paths": {"out": ")" +
         out.string() + R"("}
})";
}

std::string config_error_path(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<none>";
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
  const auto a = parse_config_text("");
  const auto b = parse_config_text("{}");
  EXPECT_EQ(a.world.layout, WorldConfig{}.layout);
  EXPECT_EQ(a.world.layout.param_count(), 968u);
  EXPECT_EQ(a.trainer.C, 0.002);
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(parse_config(to_json(a)).out, a.out);
}

TEST(Config, ResolvedConfigReparses) {
  const auto cfg = parse_config_text(small_config("/tmp/x"));
  EXPECT_EQ(to_json(parse_config(to_json(cfg))), to_json(cfg));
  EXPECT_EQ(cfg.protocol.ks, (std::vector<int>{1, 3}));
  EXPECT_EQ(cfg.prior.sources, 3);
}

TEST(Config, DefaultKsClampToTargetPool) {
  const auto cfg = parse_config_text(R"({"data": {"target_pos_per_view": 5}})");
  EXPECT_EQ(cfg.protocol.ks, (std::vector<int>{1, 5}));
}

TEST(Config, ErrorsCarryTheFieldPath) {
  const std::vector<std::pair<std::string, std::string>> cases{
      {R"({"world": {"layout": {"views": 0}}})", "/world/layout/views"},
      {R"({"world": {"ellipsoid": {"a": -1}}})", "/world/ellipsoid/a"},
      {R"({"world": {"camera": {"distance": 0.5}}})", "/world/camera/distance"},
      {R"({"world": {"foo": 1}})", "/world/foo"},
      {R"({"world": {"relatedness": 2}})", "/world/relatedness"},
      {R"({"trainer": {"C": 0}})", "/trainer/C"},
      {R"({"trainer": {"C": "big"}})", "/trainer/C"},
      {R"({"prior": {"kind": "fancy"}})", "/prior/kind"},
      {R"({"prior": {"mask": "td2nd"}})", "/prior/data_views"},
      {R"({"prior": {"mask": "td2nd", "data_views": [0, 9]}})", "/prior/data_views/1"},
      {R"({"prior": {"mask": "td2nd", "data_views": [1, 1]}})", "/prior/data_views/1"},
      {R"({"prior": {"source_k": 1000}})", "/prior/source_k"},
      {R"({"target": {"k": 1000}})", "/target/k"},
      {R"({"eval": {"iou": [0.5, 1.5]}})", "/eval/iou/1"},
      {R"({"protocol": {"ks": [1, 0]}})", "/protocol/ks/1"},
      {R"({"protocol": {"methods": ["none", "bogus"]}})", "/protocol/methods/1"},
      {R"({"bogus": {}})", "/bogus"},
      {R"({"world": )", "/"},
  };
  for (const auto& [text, path] : cases) EXPECT_EQ(config_error_path(text), path) << text;
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Binary, ConfigAndFlagErrorsExitTwo) {
  const auto dir = scratch("exit_codes");
  spit(dir / "bad.json", R"({"trainer": {"C": -1}})");
  EXPECT_EQ(run_cli("gen-world -c " + (dir / "bad.json").string(), dir / "err.txt"), 2);
  EXPECT_NE(slurp(dir / "err.txt").find("/trainer/C"), std::string::npos);
  spit(dir / "td2nd.json", R"({"prior": {"mask": "td2nd"}})");
  EXPECT_EQ(run_cli("learn-prior -c " + (dir / "td2nd.json").string(), dir / "err.txt"), 2);
  EXPECT_NE(slurp(dir / "err.txt").find("/prior/data_views"), std::string::npos);
  EXPECT_EQ(run_cli("gen-world --no-such-flag", dir / "err.txt"), 2);
  EXPECT_EQ(run_cli("no-such-verb", dir / "err.txt"), 2);
  EXPECT_EQ(run_cli("", dir / "err.txt"), 2);
}

TEST(Binary, RefusesToOverwriteWithoutForce) {
  const auto dir = scratch("force");
  spit(dir / "cfg.json", small_config(dir / "run"));
  const std::string c = "-c " + (dir / "cfg.json").string();
  ASSERT_EQ(run_cli("gen-world " + c, dir / "err.txt"), 0);
  EXPECT_EQ(run_cli("gen-world " + c, dir / "err.txt"), 1);
  EXPECT_NE(slurp(dir / "err.txt").find("--force"), std::string::npos);
  EXPECT_EQ(run_cli("gen-world --force " + c, dir / "err.txt"), 0);
  // Missing inputs are runtime failures.
  EXPECT_EQ(run_cli("train-target " + c, dir / "err.txt"), 1);
}

TEST(Pipeline, EndToEndWithDensePrior) {
  const auto dir = scratch("pipeline");
  const fs::path out = dir / "run";
  spit(dir / "cfg.json", small_config(out));
  const std::string c = " -c " + (dir / "cfg.json").string();
  for (const char* verb : {"gen-world", "gen-data", "train-sources", "learn-prior", "train-target",
                           "eval", "report"})
    ASSERT_EQ(run_cli(verb + c, dir / "err.txt"), 0) << verb << ": " << slurp(dir / "err.txt");

  for (const char* f : {"world/target_gt.mvpm", "world/mv_pairs.txt", "world/manifest.json",
                        "data/manifest.json", "data/test/annotations.txt", "sources/source_2.mvpm",
                        "prior/prior.mvpp", "target/model.mvpm", "target/train_log.csv",
                        "eval/metrics.csv", "eval/pr.csv", "eval/confusion.csv",
                        "eval/detections.csv", "report/pr.svg", "report/confusion.svg"})
    EXPECT_TRUE(fs::exists(out / f)) << f;

  const json prior = json::parse(slurp(out / "prior/prior.json"));
  EXPECT_EQ(prior["storage"], "dense");
  EXPECT_LE(prior["rank"].get<int>(), 3);
  EXPECT_GE(prior["rank"].get<int>(), 1);

  const json reg = json::parse(slurp(out / "target/regularizer.json"));
  EXPECT_GT(reg["lambda"].get<double>(), 0.0);

  const auto metrics = slurp(out / "eval/metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')),
            "iou,ap,vp,ap_vp_d,ap_vp_c,positives,true_positives,false_positives");

  // Re-rendering yields byte-identical plots.
  const auto pr = slurp(out / "report/pr.svg");
  ASSERT_EQ(run_cli("report --force" + c, dir / "err.txt"), 0);
  EXPECT_EQ(slurp(out / "report/pr.svg"), pr);
}

TEST(Pipeline, RerunReproducesManifests) {
  const auto dir = scratch("manifests");
  spit(dir / "cfg.json", small_config(dir / "run"));
  const std::string c = " -c " + (dir / "cfg.json").string();
  ASSERT_EQ(run_cli("gen-world" + c, dir / "err.txt"), 0);
  ASSERT_EQ(run_cli("gen-data" + c, dir / "err.txt"), 0);
  const auto world = slurp(dir / "run/world/manifest.json");
  const auto data = slurp(dir / "run/data/manifest.json");
  ASSERT_EQ(run_cli("gen-world --force" + c, dir / "err.txt"), 0);
  ASSERT_EQ(run_cli("gen-data --force" + c, dir / "err.txt"), 0);
  EXPECT_EQ(slurp(dir / "run/world/manifest.json"), world);
  EXPECT_EQ(slurp(dir / "run/data/manifest.json"), data);
  EXPECT_NE(data.find("fnv1a64"), std::string::npos);
}

TEST(Pipeline, NoPriorMatchesPlainSvm) {
  const auto dir = scratch("none");
  const auto cfg = parse_config_text(small_config(dir / "run", "none"));
  cmd_gen_world(cfg, false);
  cmd_gen_data(cfg, false);
  cmd_train_target(cfg, false);
  const auto model = load_model((dir / "run/target/model.mvpm").string());

  const TemplateLayout& l = cfg.world.layout;
  const auto pool = load_windows((dir / "run/data/target/windows.bin").string());
  const auto windows = select_target(pool, cfg);
  std::size_t positives = 0;
  for (const auto& w : windows) positives += w.positive();
  EXPECT_EQ(positives, 3u * 4u);
  const Regularizer identity = build_regularizer(SigmaMatrix::sparse(l, SigmaKind::sv));
  EXPECT_EQ(identity.lambda, 0.0);
  TrainConfig tc = cfg.trainer;
  tc.seed = mix_seed(cfg.trainer.seed, 16);
  const auto plain = train_direct(stack_examples(windows, l), identity, l, tc);
  EXPECT_LE((model.params() - plain.model.params()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Pipeline, PerfectDetectorScoresOne) {
  const auto dir = scratch("perfect");
  auto cfg = parse_config_text(R"({"eval": {"iou": [0.5, 0.9], "score_threshold": 4.9}})");
  cfg.out = (dir / "run").string();
  // Two views, one 1x1 cell of width 1: view 0 likes +x, view 1 likes -x.
  const TemplateLayout l(2, 1, 1, 1, false);
  Eigen::VectorXd params(2);
  params << 1.0, -1.0;
  save_model(MultiViewModel(l, params, "hand"), (dir / "hand.mvpm").string());
  FeatureMap a(1, 5, 1, "a"), b(2, 3, 1, "b");
  a.data = {0, 5, 0, -5, 0};
  b.data = {0, 0, -5, 5, 0, 0};
  const std::vector<GroundTruthBox> gts{{"a", {8, 0, 8, 8}, 0, "car", false},
                                        {"a", {24, 0, 8, 8}, 1, "car", false},
                                        {"b", {16, 0, 8, 8}, 1, "car", false},
                                        {"b", {0, 8, 8, 8}, 0, "car", false}};
  save_split(dir / "run/data/test", {}, WindowShape{1, 1, 1}, {a, b}, gts);

  const auto reports = cmd_eval(cfg, {(dir / "hand.mvpm").string()}, false);
  ASSERT_EQ(reports.size(), 2u);
  for (const auto& r : reports) {
    EXPECT_EQ(r.positives, 4);
    EXPECT_EQ(r.true_positives, 4);
    EXPECT_EQ(r.false_positives, 0);
    EXPECT_EQ(r.ap, 1.0);
    EXPECT_EQ(r.vp, 1.0);
    EXPECT_EQ(r.ap_vp_d, 1.0);
    EXPECT_EQ(r.ap_vp_c, 1.0);
  }
  // A bank holding the same model twice changes nothing.
  const auto bank =
      cmd_eval(cfg, {(dir / "hand.mvpm").string(), (dir / "hand.mvpm").string()}, true);
  EXPECT_EQ(bank.front().ap, 1.0);
  EXPECT_EQ(bank.front().vp, 1.0);
}

TEST(Pipeline, ProtocolReportHasOneSeriesPerMethodPerPanel) {
  const auto dir = scratch("protocol");
  const auto cfg = parse_config_text(small_config(dir / "run"));
  const auto res = cmd_run_protocol(cfg, false);
  EXPECT_EQ(res.rows.size(), 2u * 2u * 1u * 1u);
  const auto files = cmd_report(cfg, false);
  EXPECT_NE(std::find(files.begin(), files.end(), "kshot.svg"), files.end());
  const auto svg = slurp(dir / "run/report/kshot.svg");
  auto count = [&](const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = svg.find(needle); pos != std::string::npos; pos = svg.find(needle, pos + 1))
      ++n;
    return n;
  };
  for (const char* m : {"ap", "vp"})
    for (const char* method : {"none", "dense"})
      EXPECT_EQ(count(std::string("data-measure=\"") + m + "\" data-method=\"" + method + "\""), 1u)
          << m << ' ' << method;
  EXPECT_TRUE(fs::exists(dir / "run/report/confusion_dense_k3.svg"));
  const auto again = cmd_report(cfg, true);
  EXPECT_EQ(again, files);
  EXPECT_EQ(slurp(dir / "run/report/kshot.svg"), svg);
}
