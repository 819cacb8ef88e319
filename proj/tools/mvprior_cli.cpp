#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.hpp"

// Exit codes: 0 success, 1 runtime failure, 2 configuration error.
namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

mvprior::cli::ExperimentConfig resolve(const std::string& config_path, const std::string& out) {
  auto cfg = config_path.empty() ? mvprior::cli::parse_config(nullptr)
                                 : mvprior::cli::load_config(config_path);
  if (!out.empty()) cfg.out = out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace mvprior::cli;
  CLI::App app{"Multi-view template training with learned priors"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  bool force = false;
  std::vector<std::string> models;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON experiment config (defaults when omitted)");
    sub->add_option("-o,--out", out_dir, "output root, overrides paths.out");
    sub->add_flag("-f,--force", force, "overwrite existing outputs");
  };

  auto* gen_world = app.add_subcommand("gen-world", "write ground-truth templates and mv pairs");
  auto* gen_data = app.add_subcommand("gen-data", "sample source, target and test splits");
  auto* train_sources = app.add_subcommand("train-sources", "bootstrap source models");
  auto* learn_prior = app.add_subcommand("learn-prior", "build the prior matrix from sources");
  auto* train_target = app.add_subcommand("train-target", "train the target model");
  auto* eval = app.add_subcommand("eval", "detect on the test split and score");
  auto* report = app.add_subcommand("report", "render SVG plots from CSV results");
  auto* run_protocol = app.add_subcommand("run-protocol", "run a k-shot or sparse protocol");
  for (auto* sub : {gen_world, gen_data, train_sources, learn_prior, train_target, eval, report,
                    run_protocol})
    add_common(sub);
  eval->add_option("-m,--model", models, "model file; repeat for a detector bank");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    const auto cfg = resolve(config_path, out_dir);
    if (*gen_world) {
      cmd_gen_world(cfg, force);
    } else if (*gen_data) {
      cmd_gen_data(cfg, force);
    } else if (*train_sources) {
      cmd_train_sources(cfg, force);
    } else if (*learn_prior) {
      cmd_learn_prior(cfg, force);
    } else if (*train_target) {
      cmd_train_target(cfg, force);
    } else if (*eval) {
      for (const auto& r : cmd_eval(cfg, models, force))
        std::cout << "iou " << r.iou_threshold << ": AP " << r.ap << " VP " << r.vp
                  << " AP+VP-D " << r.ap_vp_d << " AP+VP-C " << r.ap_vp_c << '\n';
    } else if (*report) {
      for (const auto& f : cmd_report(cfg, force)) std::cout << f << '\n';
    } else if (*run_protocol) {
      const auto res = cmd_run_protocol(cfg, force, [](const std::string& s) {
        std::cerr << s << '\n';
      });
      for (const auto& s : mvprior::summarize(res.rows))
        if (s.measure == "ap" || s.measure == "vp")
          std::cout << s.method << " k=" << s.k << " iou=" << s.iou << ' ' << s.measure << ' '
                    << s.mean << " +- " << s.stddev << '\n';
    }
  } catch (const mvprior::ConfigError& e) {
    std::cerr << "config error at " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
