#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvprior/mvprior.hpp"

// Experiment configuration: one JSON document, every key optional. Unknown
// keys and wrongly typed or out-of-range values raise ConfigError carrying
// the JSON pointer of the offending field.
namespace mvprior::cli {

using json = nlohmann::json;

struct DataConfig {
  DataSpec counts;
  std::uint64_t seed = 1;
};

struct PriorConfig {
  PriorKind kind = PriorKind::dense;
  MaskSpec mask;
  int sources = 5;
  int source_k = 15;
  PriorOptions options;
};

struct TargetConfig {
  int k = 0;               // positives per view, 0 = all
  std::vector<int> views;  // views with training data, empty = all
};

struct EvalConfig {
  std::vector<double> iou{0.5, 0.7};
  double nms_iou = 0.5;
  double score_threshold = -std::numeric_limits<double>::infinity();
};

struct ExperimentConfig {
  WorldConfig world;
  DataConfig data;
  TrainConfig trainer;
  PriorConfig prior;
  TargetConfig target;
  EvalConfig eval;
  ProtocolSpec protocol;
  std::string out = "run";

  const TemplateLayout& layout() const { return world.layout; }
};

namespace detail {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "/" : path_, "expected an object");
  }
  std::string at(const std::string& key) const { return path_ + "/" + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& raw(const std::string& key) const { return j_.at(key); }

  void number(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    out = v.get<double>();
    if (!std::isfinite(out)) throw ConfigError(at(key), "must be finite");
  }
  template <typename Int>
  void integer(const std::string& key, Int& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number_integer()) throw ConfigError(at(key), "expected an integer");
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0) {
        out = Int(v.get<std::uint64_t>());
        return;
      }
      throw ConfigError(at(key), "must be >= 0");
    } else {
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<Int>::min() || x > std::numeric_limits<Int>::max())
        throw ConfigError(at(key), "out of range");
      out = Int(x);
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (!has(key)) return;
    if (!raw(key).is_boolean()) throw ConfigError(at(key), "expected true or false");
    out = raw(key).get<bool>();
  }
  void string(const std::string& key, std::string& out) {
    if (!has(key)) return;
    if (!raw(key).is_string()) throw ConfigError(at(key), "expected a string");
    out = raw(key).get<std::string>();
  }
  void int_list(const std::string& key, std::vector<int>& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array of integers");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_integer())
        throw ConfigError(at(key) + "/" + std::to_string(i), "expected an integer");
      out.push_back(v[i].get<int>());
    }
  }
  void number_list(const std::string& key, std::vector<double>& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array of numbers");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number())
        throw ConfigError(at(key) + "/" + std::to_string(i), "expected a number");
      out.push_back(v[i].get<double>());
    }
  }
  std::optional<Section> child(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return Section(raw(key), at(key));
  }
  // Call after every known key was consumed.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path, what);
}

template <typename F>
auto parse_enum(Section& s, const std::string& key, F&& parse) -> decltype(parse(std::string())) {
  std::string v;
  s.string(key, v);
  try {
    return parse(v);
  } catch (const InvalidArgument& e) {
    throw ConfigError(s.at(key), e.what());
  }
}

inline FactorMethod parse_factor(const std::string& s) {
  if (s == "cholesky") return FactorMethod::cholesky;
  if (s == "eigen") return FactorMethod::eigen;
  throw InvalidArgument("unknown factorization '" + s + "'");
}

inline PriorSpec parse_method(const std::string& label) {
  PriorSpec spec;
  const auto dash = label.find('-');
  spec.kind = parse_prior_kind(label.substr(0, dash));
  if (dash != std::string::npos) spec.mask.variant = parse_mask(label.substr(dash + 1));
  return spec;
}

inline void check_views(const std::vector<int>& views, int V, const std::string& path) {
  std::set<int> seen;
  for (std::size_t i = 0; i < views.size(); ++i) {
    require(views[i] >= 0 && views[i] < V, path + "/" + std::to_string(i),
            "view out of range [0, " + std::to_string(V) + ")");
    require(seen.insert(views[i]).second, path + "/" + std::to_string(i), "duplicate view");
  }
}

inline void parse_world(Section s, WorldConfig& w) {
  if (auto l = s.child("layout")) {
    l->integer("views", w.layout.views);
    l->integer("rows", w.layout.rows);
    l->integer("cols", w.layout.cols);
    l->integer("cell_dim", w.layout.cell_dim);
    l->boolean("per_view_bias", w.layout.per_view_bias);
    require(w.layout.views >= 1, l->at("views"), "must be >= 1");
    require(w.layout.rows >= 1, l->at("rows"), "must be >= 1");
    require(w.layout.cols >= 1, l->at("cols"), "must be >= 1");
    require(w.layout.cell_dim >= 1, l->at("cell_dim"), "must be >= 1");
    l->finish();
  }
  if (auto e = s.child("ellipsoid")) {
    auto axis = [&](const std::string& key, double& v) {
      e->number(key, v);
      require(v > 0, e->at(key), "semi-axis must be > 0");
    };
    axis("a", w.ellipsoid.a);
    axis("b", w.ellipsoid.b);
    axis("c", w.ellipsoid.c);
    e->finish();
  }
  if (auto c = s.child("camera")) {
    CameraSpec cam = default_camera(w.ellipsoid, w.layout);
    c->number("elevation_deg", cam.elevation_deg);
    c->number("distance", cam.distance);
    c->number("focal", cam.focal);
    require(cam.distance > w.ellipsoid.max_axis(), c->at("distance"),
            "must exceed the largest semi-axis");
    require(cam.focal > 0, c->at("focal"), "must be > 0");
    w.camera = cam;
    c->finish();
  }
  s.number("smoothness", w.smoothness);
  s.integer("field_terms", w.field_terms);
  s.number("field_scale", w.field_scale);
  s.number("sigma_view", w.sigma_view);
  s.number("sigma_pos", w.sigma_pos);
  s.number("sigma_neg", w.sigma_neg);
  s.number("relatedness", w.relatedness);
  s.integer("seed", w.seed);
  require(w.smoothness >= 0, s.at("smoothness"), "must be >= 0");
  require(w.field_terms >= 1, s.at("field_terms"), "must be >= 1");
  require(w.field_scale >= 0, s.at("field_scale"), "must be >= 0");
  require(w.sigma_view >= 0, s.at("sigma_view"), "must be >= 0");
  require(w.sigma_pos >= 0, s.at("sigma_pos"), "must be >= 0");
  require(w.sigma_neg >= 0, s.at("sigma_neg"), "must be >= 0");
  require(w.relatedness >= 0 && w.relatedness <= 1, s.at("relatedness"), "must be in [0, 1]");
  s.finish();
}

inline void parse_data(Section s, DataConfig& d) {
  auto count = [&](const std::string& key, int& v) {
    s.integer(key, v);
    require(v >= 0, s.at(key), "must be >= 0");
  };
  count("source_pos_per_view", d.counts.source_pos_per_view);
  count("source_negatives", d.counts.source_negatives);
  count("target_pos_per_view", d.counts.target_pos_per_view);
  count("target_negatives", d.counts.target_negatives);
  count("test_maps", d.counts.test_maps);
  count("instances_per_map", d.counts.instances_per_map);
  s.integer("seed", d.seed);
  s.finish();
}

inline void parse_trainer(Section s, TrainConfig& t) {
  s.number("C", t.C);
  s.number("tolerance", t.tolerance);
  s.integer("max_passes", t.max_passes);
  s.integer("seed", t.seed);
  require(t.C > 0, s.at("C"), "must be > 0");
  require(t.tolerance > 0, s.at("tolerance"), "must be > 0");
  require(t.max_passes >= 1, s.at("max_passes"), "must be >= 1");
  s.finish();
}

inline void parse_prior(Section s, PriorConfig& p, int V) {
  if (s.has("kind")) p.kind = parse_enum(s, "kind", parse_prior_kind);
  if (s.has("mask")) p.mask.variant = parse_enum(s, "mask", parse_mask);
  s.int_list("data_views", p.mask.data_views);
  check_views(p.mask.data_views, V, s.at("data_views"));
  s.integer("sources", p.sources);
  s.integer("source_k", p.source_k);
  require(p.sources >= 1, s.at("sources"), "must be >= 1");
  require(p.source_k >= 0, s.at("source_k"), "must be >= 0");
  if (s.has("mean")) {
    std::string m;
    s.string("mean", m);
    require(m == "first" || m == "both", s.at("mean"), "expected \"first\" or \"both\"");
    p.options.mean = m == "first" ? MeanMode::first : MeanMode::both;
  }
  s.number("patch_radius", p.options.patch_radius);
  s.integer("k_cap", p.options.k_cap);
  require(p.options.k_cap >= 1, s.at("k_cap"), "must be >= 1");
  if (s.has("sparse_factor")) p.options.sparse_factor = parse_enum(s, "sparse_factor", parse_factor);
  if (s.has("dense_factor")) p.options.dense_factor = parse_enum(s, "dense_factor", parse_factor);
  if (s.has("eig")) {
    std::string m;
    s.string("eig", m);
    require(m == "exact" || m == "power", s.at("eig"), "expected \"exact\" or \"power\"");
    p.options.reg.eig = m == "exact" ? EigMethod::exact : EigMethod::power;
  }
  s.number("lambda_factor", p.options.reg.lambda_factor);
  s.integer("max_halvings", p.options.reg.max_halvings);
  s.integer("max_dim", p.options.reg.max_dim);
  require(p.options.reg.lambda_factor > 0 && p.options.reg.lambda_factor < 1,
          s.at("lambda_factor"), "must be in (0, 1)");
  require(p.options.reg.max_halvings >= 0, s.at("max_halvings"), "must be >= 0");
  require(p.options.reg.max_dim >= 1 && p.options.reg.max_dim <= 20000, s.at("max_dim"),
          "must be in [1, 20000]");
  if ((p.mask.variant == MaskVariant::td2nd || p.mask.variant == MaskVariant::td2all) &&
      p.mask.data_views.empty())
    throw ConfigError(s.at("data_views"),
                      std::string("mask ") + mask_name(p.mask.variant) + " needs data views");
  s.finish();
}

inline void parse_target(Section s, TargetConfig& t, int V) {
  s.integer("k", t.k);
  require(t.k >= 0, s.at("k"), "must be >= 0");
  s.int_list("views", t.views);
  check_views(t.views, V, s.at("views"));
  s.finish();
}

inline void parse_eval(Section s, EvalConfig& e) {
  s.number_list("iou", e.iou);
  require(!e.iou.empty(), s.at("iou"), "needs at least one threshold");
  for (std::size_t i = 0; i < e.iou.size(); ++i)
    require(e.iou[i] > 0 && e.iou[i] <= 1, s.at("iou") + "/" + std::to_string(i),
            "must be in (0, 1]");
  s.number("nms_iou", e.nms_iou);
  require(e.nms_iou > 0 && e.nms_iou <= 1, s.at("nms_iou"), "must be in (0, 1]");
  if (s.has("score_threshold")) {
    if (s.raw("score_threshold").is_null())
      e.score_threshold = -std::numeric_limits<double>::infinity();
    else
      s.number("score_threshold", e.score_threshold);
  }
  s.finish();
}

inline void parse_protocol(Section s, ProtocolSpec& p, const PriorConfig& prior,
                           const DataConfig& data, int V) {
  if (s.has("kind")) {
    std::string k;
    s.string("kind", k);
    require(k == "kshot" || k == "sparse_kshot", s.at("kind"),
            "expected \"kshot\" or \"sparse_kshot\"");
    p.kind = k == "kshot" ? ProtocolKind::kshot : ProtocolKind::sparse_kshot;
  }
  // Default ks above the target pool size are dropped rather than rejected.
  const bool explicit_ks = s.has("ks");
  s.int_list("ks", p.ks);
  if (!explicit_ks) {
    std::erase_if(p.ks, [&](int k) { return k > data.counts.target_pos_per_view; });
    if (p.ks.empty() && data.counts.target_pos_per_view >= 1)
      p.ks.push_back(data.counts.target_pos_per_view);
  }
  for (std::size_t i = 0; i < p.ks.size(); ++i)
    require(p.ks[i] >= 1 && p.ks[i] <= data.counts.target_pos_per_view,
            s.at("ks") + "/" + std::to_string(i), "must be in [1, data.target_pos_per_view]");
  s.int_list("available_views", p.available_views);
  check_views(p.available_views, V, s.at("available_views"));
  s.integer("sparse_k", p.sparse_k);
  if (s.has("methods")) {
    const json& m = s.raw("methods");
    require(m.is_array() && !m.empty(), s.at("methods"), "expected a nonempty array of labels");
    p.methods.clear();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const std::string path = s.at("methods") + "/" + std::to_string(i);
      require(m[i].is_string(), path, "expected a label such as \"dense-td2nd\"");
      try {
        p.methods.push_back(parse_method(m[i].get<std::string>()));
      } catch (const InvalidArgument& e) {
        throw ConfigError(path, e.what());
      }
    }
  }
  s.integer("repetitions", p.repetitions);
  s.integer("seed", p.seed);
  s.number_list("iou", p.iou);
  require(p.repetitions >= 1, s.at("repetitions"), "must be >= 1");
  require(!p.iou.empty(), s.at("iou"), "needs at least one threshold");
  for (std::size_t i = 0; i < p.iou.size(); ++i)
    require(p.iou[i] > 0 && p.iou[i] <= 1, s.at("iou") + "/" + std::to_string(i),
            "must be in (0, 1]");
  if (p.kind == ProtocolKind::kshot) {
    require(!p.ks.empty(), s.at("ks"), "needs at least one k");
  } else {
    require(!p.available_views.empty(), s.at("available_views"),
            "sparse protocol needs at least one view with data");
    require(p.sparse_k >= 1 && p.sparse_k <= data.counts.target_pos_per_view, s.at("sparse_k"),
            "must be in [1, data.target_pos_per_view]");
  }
  for (std::size_t i = 0; i < p.methods.size(); ++i) {
    auto& m = p.methods[i];
    if (m.mask.data_views.empty()) m.mask.data_views = prior.mask.data_views;
    if ((m.mask.variant == MaskVariant::td2nd || m.mask.variant == MaskVariant::td2all) &&
        m.mask.data_views.empty() && p.kind == ProtocolKind::kshot)
      throw ConfigError(s.at("methods") + "/" + std::to_string(i),
                        "mask needs prior.data_views in the k-shot protocol");
  }
  s.finish();
}

}  // namespace detail

// Parses a config document. `doc` may be null or an empty object.
inline ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig cfg;
  if (doc.is_null()) return cfg;
  detail::Section root(doc, "");
  if (auto w = root.child("world")) detail::parse_world(*w, cfg.world);
  const int V = cfg.world.layout.views;
  if (auto d = root.child("data")) detail::parse_data(*d, cfg.data);
  if (auto t = root.child("trainer")) detail::parse_trainer(*t, cfg.trainer);
  if (auto p = root.child("prior")) detail::parse_prior(*p, cfg.prior, V);
  if (auto t = root.child("target")) detail::parse_target(*t, cfg.target, V);
  if (auto e = root.child("eval")) detail::parse_eval(*e, cfg.eval);
  // Protocol defaults follow the prior section.
  cfg.protocol.sources = cfg.prior.sources;
  cfg.protocol.source_k = cfg.prior.source_k;
  if (auto p = root.child("protocol")) {
    detail::parse_protocol(*p, cfg.protocol, cfg.prior, cfg.data, V);
  } else {
    detail::parse_protocol(detail::Section(json::object(), "/protocol"), cfg.protocol, cfg.prior,
                           cfg.data, V);
  }
  if (auto paths = root.child("paths")) {
    paths->string("out", cfg.out);
    detail::require(!cfg.out.empty(), paths->at("out"), "must not be empty");
    paths->finish();
  }
  root.finish();
  detail::require(cfg.prior.source_k <= cfg.data.counts.source_pos_per_view, "/prior/source_k",
                  "exceeds data.source_pos_per_view");
  detail::require(cfg.target.k <= cfg.data.counts.target_pos_per_view, "/target/k",
                  "exceeds data.target_pos_per_view");
  try {
    cfg.world.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("/world", e.what());
  }
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return parse_config(json());
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("/", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("/", "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline json layout_json(const TemplateLayout& l) {
  return {{"views", l.views}, {"rows", l.rows}, {"cols", l.cols}, {"cell_dim", l.cell_dim},
          {"per_view_bias", l.per_view_bias}};
}

// Fully resolved config, re-parseable by parse_config.
inline json to_json(const ExperimentConfig& c) {
  json j;
  const WorldConfig& w = c.world;
  j["world"] = {{"layout", layout_json(w.layout)},
                {"ellipsoid", {{"a", w.ellipsoid.a}, {"b", w.ellipsoid.b}, {"c", w.ellipsoid.c}}},
                {"smoothness", w.smoothness},
                {"field_terms", w.field_terms},
                {"field_scale", w.field_scale},
                {"sigma_view", w.sigma_view},
                {"sigma_pos", w.sigma_pos},
                {"sigma_neg", w.sigma_neg},
                {"relatedness", w.relatedness},
                {"seed", w.seed}};
  if (w.camera)
    j["world"]["camera"] = {{"elevation_deg", w.camera->elevation_deg},
                            {"distance", w.camera->distance},
                            {"focal", w.camera->focal}};
  const DataSpec& d = c.data.counts;
  j["data"] = {{"source_pos_per_view", d.source_pos_per_view},
               {"source_negatives", d.source_negatives},
               {"target_pos_per_view", d.target_pos_per_view},
               {"target_negatives", d.target_negatives},
               {"test_maps", d.test_maps},
               {"instances_per_map", d.instances_per_map},
               {"seed", c.data.seed}};
  j["trainer"] = {{"C", c.trainer.C},
                  {"tolerance", c.trainer.tolerance},
                  {"max_passes", c.trainer.max_passes},
                  {"seed", c.trainer.seed}};
  const PriorOptions& o = c.prior.options;
  j["prior"] = {{"kind", prior_kind_name(c.prior.kind)},
                {"mask", mask_name(c.prior.mask.variant)},
                {"data_views", c.prior.mask.data_views},
                {"sources", c.prior.sources},
                {"source_k", c.prior.source_k},
                {"mean", o.mean == MeanMode::first ? "first" : "both"},
                {"patch_radius", o.patch_radius},
                {"k_cap", o.k_cap},
                {"sparse_factor", factor_method_name(o.sparse_factor)},
                {"dense_factor", factor_method_name(o.dense_factor)},
                {"eig", o.reg.eig == EigMethod::exact ? "exact" : "power"},
                {"lambda_factor", o.reg.lambda_factor},
                {"max_halvings", o.reg.max_halvings},
                {"max_dim", o.reg.max_dim}};
  j["target"] = {{"k", c.target.k}, {"views", c.target.views}};
  j["eval"] = {{"iou", c.eval.iou}, {"nms_iou", c.eval.nms_iou}};
  j["eval"]["score_threshold"] =
      std::isfinite(c.eval.score_threshold) ? json(c.eval.score_threshold) : json(nullptr);
  std::vector<std::string> methods;
  for (const auto& m : c.protocol.methods) methods.push_back(m.label());
  j["protocol"] = {{"kind", c.protocol.kind == ProtocolKind::kshot ? "kshot" : "sparse_kshot"},
                   {"ks", c.protocol.ks},
                   {"available_views", c.protocol.available_views},
                   {"sparse_k", c.protocol.sparse_k},
                   {"methods", methods},
                   {"repetitions", c.protocol.repetitions},
                   {"iou", c.protocol.iou},
                   {"seed", c.protocol.seed}};
  j["paths"] = {{"out", c.out}};
  return j;
}

}  // namespace mvprior::cli
