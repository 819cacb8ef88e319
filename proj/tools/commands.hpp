#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "experiment_config.hpp"
#include "report_svg.hpp"

// Pipeline commands behind the CLI verbs. Each writes into its own directory
// under the configured output root and refuses to overwrite unless forced.
namespace mvprior::cli {

namespace fs = std::filesystem;

struct Paths {
  fs::path root;
  fs::path world() const { return root / "world"; }
  fs::path data() const { return root / "data"; }
  fs::path split(const std::string& s) const { return data() / s; }
  fs::path sources() const { return root / "sources"; }
  fs::path prior() const { return root / "prior"; }
  fs::path target() const { return root / "target"; }
  fs::path eval() const { return root / "eval"; }
  fs::path report() const { return root / "report"; }
  fs::path protocol() const { return root / "protocol"; }
};

inline Paths paths_of(const ExperimentConfig& cfg) { return {fs::path(cfg.out)}; }

namespace detail {

// Empties (with force) or creates an output directory.
inline void prepare_output(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw Error(dir.string() + " already exists; pass --force to overwrite");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw FormatError("cannot write " + p.string());
  out << s;
  if (!out) throw FormatError("write to " + p.string() + " failed");
}

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

inline json manifest(const std::string& command, json seeds, const fs::path& dir,
                     const std::vector<std::string>& files) {
  json m;
  m["command"] = command;
  m["seeds"] = std::move(seeds);
  m["files"] = json::array();
  for (const auto& f : files)
    m["files"].push_back({{"path", f}, {"fnv1a64", hex64(io::fnv1a_file((dir / f).string()))}});
  return m;
}

inline void check_shape(const WindowShape& shape, const TemplateLayout& layout,
                        const fs::path& file) {
  if (shape.rows != layout.rows || shape.cols != layout.cols ||
      shape.cell_dim != layout.cell_dim)
    throw ConfigError("/world/layout", file.string() + " holds windows of a different shape");
}

inline void check_layout(const TemplateLayout& file_layout, const TemplateLayout& layout,
                         const fs::path& file) {
  if (!(file_layout == layout))
    throw ConfigError("/world/layout", file.string() + " was built for a different layout");
}

inline CameraSpec camera_of(const WorldConfig& w) {
  return w.camera ? *w.camera : default_camera(w.ellipsoid, w.layout);
}

inline SplitSpec split_spec(const TemplateLayout& l, int pos, int neg, int maps, int per_map) {
  return {std::vector<int>(std::size_t(l.views), pos), neg, maps, per_map, 2};
}

}  // namespace detail

using Progress = std::function<void(const std::string&)>;

inline void cmd_gen_world(const ExperimentConfig& cfg, bool force) {
  const Paths p = paths_of(cfg);
  detail::prepare_output(p.world(), force);
  const World world = generate_world(cfg.world);
  save_model(world.target_gt, (p.world() / "target_gt.mvpm").string());
  save_model(world.source_gt, (p.world() / "source_gt.mvpm").string());
  const double tau = default_patch_radius(cfg.world.layout, cfg.world.ellipsoid, world.camera,
                                          cfg.prior.options.k_cap);
  const double radius = cfg.prior.options.patch_radius > 0 ? cfg.prior.options.patch_radius : tau;
  {
    std::ofstream pairs(p.world() / "mv_pairs.txt");
    write_pairs(pairs, build_mv_pairs(cfg.world.layout, cfg.world.ellipsoid, world.camera, radius));
  }
  json info = {{"camera",
                {{"elevation_deg", world.camera.elevation_deg},
                 {"distance", world.camera.distance},
                 {"focal", world.camera.focal}}},
               {"patch_radius", radius},
               {"parameter_count", cfg.world.layout.param_count()}};
  detail::write_json(p.world() / "world.json", info);
  detail::write_json(p.world() / "config.json", to_json(cfg));
  const std::vector<std::string> files{"target_gt.mvpm", "source_gt.mvpm", "mv_pairs.txt",
                                       "world.json", "config.json"};
  detail::write_json(p.world() / "manifest.json",
                     detail::manifest("gen-world", {{"world", cfg.world.seed}}, p.world(), files));
}

inline void cmd_gen_data(const ExperimentConfig& cfg, bool force) {
  const Paths p = paths_of(cfg);
  detail::prepare_output(p.data(), force);
  const World world = generate_world(cfg.world);
  const TemplateLayout& l = cfg.world.layout;
  const DataSpec& d = cfg.data.counts;
  const WindowShape shape{l.rows, l.cols, l.cell_dim};
  const std::uint64_t s_src = mix_seed(cfg.data.seed, 11), s_tgt = mix_seed(cfg.data.seed, 12),
                      s_test = mix_seed(cfg.data.seed, 13);
  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const Split& split) {
    for (const auto& f : save_split(p.split(name), split.windows, shape, split.maps, split.gts))
      files.push_back(name + "/" + f);
  };
  emit("source", sample_dataset(world, Category::source,
                                detail::split_spec(l, d.source_pos_per_view, d.source_negatives, 0, 0),
                                s_src));
  emit("target", sample_dataset(world, Category::target,
                                detail::split_spec(l, d.target_pos_per_view, d.target_negatives, 0, 0),
                                s_tgt));
  emit("test", sample_dataset(world, Category::target,
                              detail::split_spec(l, 0, 0, d.test_maps, d.instances_per_map), s_test));
  detail::write_json(p.data() / "config.json", to_json(cfg));
  files.push_back("config.json");
  json seeds = {{"world", cfg.world.seed},
                {"data", cfg.data.seed},
                {"source", s_src},
                {"target", s_tgt},
                {"test", s_test}};
  detail::write_json(p.data() / "manifest.json",
                     detail::manifest("gen-data", seeds, p.data(), files));
}

inline void cmd_train_sources(const ExperimentConfig& cfg, bool force) {
  const Paths p = paths_of(cfg);
  const fs::path file = p.split("source") / "windows.bin";
  WindowShape shape;
  const auto windows = load_windows(file.string(), &shape);
  detail::check_shape(shape, cfg.world.layout, file);
  detail::prepare_output(p.sources(), force);
  TrainConfig tc = cfg.trainer;
  tc.seed = mix_seed(cfg.trainer.seed, 14);
  std::vector<TrainResult> runs;
  const auto models = bootstrap_sources(windows, cfg.world.layout, cfg.prior.sources,
                                        cfg.prior.source_k, mix_seed(cfg.trainer.seed, 15), tc,
                                        &runs);
  for (std::size_t i = 0; i < models.size(); ++i) {
    save_model(models[i], (p.sources() / ("source_" + std::to_string(i) + ".mvpm")).string());
    std::ofstream log(p.sources() / ("train_log_" + std::to_string(i) + ".csv"));
    write_train_log(log, runs[i].log);
  }
}

inline std::vector<MultiViewModel> load_sources(const ExperimentConfig& cfg) {
  const Paths p = paths_of(cfg);
  std::vector<MultiViewModel> out;
  for (int i = 0; i < cfg.prior.sources; ++i) {
    const fs::path f = p.sources() / ("source_" + std::to_string(i) + ".mvpm");
    out.push_back(load_model(f.string()));
    detail::check_layout(out.back().layout(), cfg.world.layout, f);
  }
  return out;
}

inline void cmd_learn_prior(const ExperimentConfig& cfg, bool force) {
  const Paths p = paths_of(cfg);
  const auto sources = load_sources(cfg);
  detail::prepare_output(p.prior(), force);
  const CameraSpec cam = detail::camera_of(cfg.world);
  SigmaMatrix sigma = apply_mask(build_prior(cfg.prior.kind, sources, cfg.world.layout,
                                             cfg.world.ellipsoid, cam, cfg.prior.options),
                                 cfg.prior.mask);
  save_prior(sigma, (p.prior() / "prior.mvpp").string());
  PriorSpec spec{cfg.prior.kind, cfg.prior.mask};
  json info = {{"label", spec.label()},
               {"kind", prior_kind_name(cfg.prior.kind)},
               {"storage", sigma_kind_name(sigma.kind())},
               {"mask", mask_name(cfg.prior.mask.variant)},
               {"data_views", cfg.prior.mask.data_views},
               {"sources", sources.size()},
               {"parameter_count", sigma.dim()},
               {"rank", numerical_rank(sigma)},
               {"blocks", sigma.blocks().size()}};
  detail::write_json(p.prior() / "prior.json", info);
}

// Target training windows: first k positives of each allowed view plus all
// negatives.
inline LabeledWindowSet select_target(const LabeledWindowSet& pool, const ExperimentConfig& cfg) {
  const int V = cfg.world.layout.views;
  std::vector<int> per_view(std::size_t(V), 0);
  for (const auto& w : pool)
    if (w.positive() && w.view < V) ++per_view[std::size_t(w.view)];
  std::vector<int> take(std::size_t(V), 0);
  for (int v = 0; v < V; ++v) {
    const bool allowed = cfg.target.views.empty() ||
                         std::find(cfg.target.views.begin(), cfg.target.views.end(), v) !=
                             cfg.target.views.end();
    if (allowed) take[std::size_t(v)] = cfg.target.k > 0 ? cfg.target.k : per_view[std::size_t(v)];
  }
  return mvprior::detail::take_per_view(pool, take);
}

inline void cmd_train_target(const ExperimentConfig& cfg, bool force) {
  const Paths p = paths_of(cfg);
  const TemplateLayout& layout = cfg.world.layout;
  const fs::path file = p.split("target") / "windows.bin";
  WindowShape shape;
  const auto pool = load_windows(file.string(), &shape);
  detail::check_shape(shape, layout, file);
  SigmaMatrix sigma = SigmaMatrix::sparse(layout, SigmaKind::sv);
  if (cfg.prior.kind != PriorKind::none) {
    const fs::path pf = p.prior() / "prior.mvpp";
    sigma = load_prior(pf.string());
    detail::check_layout(sigma.layout(), layout, pf);
  }
  const auto windows = select_target(pool, cfg);
  detail::prepare_output(p.target(), force);
  const Regularizer reg = build_regularizer(sigma, cfg.prior.options.reg);
  const FactorMethod fm = sigma.is_dense() ? cfg.prior.options.dense_factor
                                           : cfg.prior.options.sparse_factor;
  const Factorization fac = factorize(reg, fm);
  const auto ex = stack_examples(windows, layout);
  TrainConfig tc = cfg.trainer;
  tc.seed = mix_seed(cfg.trainer.seed, 16);
  TrainResult res = train_transformed(ex, fac, layout, tc);
  res.model.set_meta("target " + PriorSpec{cfg.prior.kind, cfg.prior.mask}.label());
  save_model(res.model, (p.target() / "model.mvpm").string());
  {
    std::ofstream log(p.target() / "train_log.csv");
    write_train_log(log, res.log);
  }
  json info = {{"prior", prior_kind_name(cfg.prior.kind)},
               {"lambda", reg.lambda},
               {"e_max", reg.e_max},
               {"halvings", reg.halvings},
               {"factorization", factor_method_name(fm)},
               {"condition", fac.condition()},
               {"objective", res.objective},
               {"gap", res.gap},
               {"passes", res.passes},
               {"converged", res.converged},
               {"examples", ex.size()}};
  detail::write_json(p.target() / "regularizer.json", info);
}

inline void write_metrics_csv(std::ostream& os, const std::vector<EvalReport>& reports) {
  os.precision(17);
  os << "iou,ap,vp,ap_vp_d,ap_vp_c,positives,true_positives,false_positives\n";
  for (const auto& r : reports)
    os << r.iou_threshold << ',' << r.ap << ',' << r.vp << ',' << r.ap_vp_d << ',' << r.ap_vp_c
       << ',' << r.positives << ',' << r.true_positives << ',' << r.false_positives << '\n';
}

inline void write_pr_csv(std::ostream& os, const std::vector<EvalReport>& reports) {
  os.precision(17);
  os << "iou,rank,score,recall,precision\n";
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.pr.size(); ++i)
      os << r.iou_threshold << ',' << i + 1 << ',' << r.pr[i].score << ',' << r.pr[i].recall << ','
         << r.pr[i].precision << '\n';
}

inline void write_confusion_csv(std::ostream& os, const std::vector<EvalReport>& reports) {
  os.precision(17);
  os << "iou,truth,predicted,count\n";
  for (const auto& r : reports)
    for (Eigen::Index t = 0; t < r.confusion.rows(); ++t)
      for (Eigen::Index q = 0; q < r.confusion.cols(); ++q)
        os << r.iou_threshold << ',' << t << ',' << q << ',' << r.confusion(t, q) << '\n';
}

inline void write_detections_csv(std::ostream& os, const std::vector<Detection>& dets) {
  os.precision(17);
  os << "image,x,y,width,height,score,view,model\n";
  for (const auto& d : dets)
    os << d.image << ',' << d.box.x << ',' << d.box.y << ',' << d.box.width << ','
       << d.box.height << ',' << d.score << ',' << d.view << ',' << d.model_id << '\n';
}

// Detects with every model (a bank when more than one), merges with joint
// NMS and evaluates at each configured iou threshold.
inline std::vector<EvalReport> cmd_eval(const ExperimentConfig& cfg,
                                        const std::vector<std::string>& model_files, bool force) {
  const Paths p = paths_of(cfg);
  std::vector<std::string> files = model_files;
  if (files.empty()) files.push_back((p.target() / "model.mvpm").string());
  std::vector<MultiViewModel> models;
  for (const auto& f : files) models.push_back(load_model(f));
  const SplitFiles test = load_split(p.split("test"));
  if (test.gts.empty()) throw Error("test split has no annotations");
  const int V = models.front().layout().views;
  for (const auto& m : models)
    if (m.layout().views != V) throw InvalidArgument("bank models disagree on view count");
  std::vector<std::vector<Detection>> bank(models.size());
  for (std::size_t i = 0; i < models.size(); ++i)
    for (const auto& map : test.maps) {
      auto d = detect(models[i], map, cfg.eval.score_threshold, cfg.eval.nms_iou, int(i));
      bank[i].insert(bank[i].end(), d.begin(), d.end());
    }
  const auto dets = models.size() == 1 ? bank.front() : joint_nms(bank, cfg.eval.nms_iou);
  std::vector<EvalReport> reports;
  for (double t : cfg.eval.iou) reports.push_back(evaluate(dets, test.gts, t, V));
  detail::prepare_output(p.eval(), force);
  std::ofstream m(p.eval() / "metrics.csv"), pr(p.eval() / "pr.csv"),
      cf(p.eval() / "confusion.csv"), dt(p.eval() / "detections.csv");
  write_metrics_csv(m, reports);
  write_pr_csv(pr, reports);
  write_confusion_csv(cf, reports);
  write_detections_csv(dt, dets);
  return reports;
}

// Renders whatever inputs exist: eval/pr.csv, eval/confusion.csv,
// protocol/summary.csv and protocol/confusion.csv. Returns the files written.
inline std::vector<std::string> cmd_report(const ExperimentConfig& cfg, bool force) {
  const Paths p = paths_of(cfg);
  struct Job {
    fs::path in;
    std::string out;
    std::function<std::string(const CsvTable&)> render;
  };
  const std::vector<Job> jobs{
      {p.eval() / "pr.csv", "pr.svg", render_pr_svg},
      {p.eval() / "confusion.csv", "confusion.svg",
       [](const CsvTable& t) { return render_confusion_svg(t, "Viewpoint confusion"); }},
      {p.protocol() / "summary.csv", "kshot.svg", render_kshot_svg},
  };
  std::vector<std::pair<std::string, std::string>> rendered;
  for (const auto& j : jobs)
    if (fs::exists(j.in)) rendered.emplace_back(j.out, j.render(read_csv(j.in.string())));
  const fs::path pc = p.protocol() / "confusion.csv";
  if (fs::exists(pc)) {
    const CsvTable t = read_csv(pc.string());
    std::map<std::string, CsvTable> by_key;
    for (const auto& row : t.rows) {
      const std::string key = row[t.column("method")] + "_k" + row[t.column("k")];
      auto& sub = by_key[key];
      if (sub.header.empty()) sub.header = {"iou", "truth", "predicted", "count"};
      sub.rows.push_back({"0", row[t.column("truth")], row[t.column("predicted")],
                          row[t.column("count")]});
    }
    for (const auto& [key, sub] : by_key)
      rendered.emplace_back("confusion_" + key + ".svg",
                            render_confusion_svg(sub, "Viewpoint confusion " + key));
  }
  if (rendered.empty()) throw Error("nothing to report: run eval or run-protocol first");
  detail::prepare_output(p.report(), force);
  std::vector<std::string> written;
  for (const auto& [name, text] : rendered) {
    detail::write_text(p.report() / name, text);
    written.push_back(name);
  }
  return written;
}

inline ProtocolResult cmd_run_protocol(const ExperimentConfig& cfg, bool force,
                                       const Progress& progress = {}) {
  const Paths p = paths_of(cfg);
  detail::prepare_output(p.protocol(), force);
  const World world = generate_world(cfg.world);
  ProtocolResult res =
      run_protocol(cfg.protocol, world, cfg.data.counts, cfg.trainer, cfg.prior.options, progress);
  {
    std::ofstream out(p.protocol() / "results.csv");
    write_results_csv(out, res.rows);
  }
  {
    std::ofstream out(p.protocol() / "summary.csv");
    write_summary_csv(out, summarize(res.rows));
  }
  {
    std::ofstream out(p.protocol() / "confusion.csv");
    out << "method,k,truth,predicted,count\n";
    for (const auto& [key, m] : res.confusion)
      for (Eigen::Index t = 0; t < m.rows(); ++t)
        for (Eigen::Index q = 0; q < m.cols(); ++q)
          out << key.first << ',' << key.second << ',' << t << ',' << q << ',' << m(t, q) << '\n';
  }
  {
    std::ofstream out(p.protocol() / "log.txt");
    for (const auto& line : res.log) out << line << '\n';
  }
  detail::write_json(p.protocol() / "config.json", to_json(cfg));
  return res;
}

}  // namespace mvprior::cli
