// Command-line front end: train-source, certify, adapt, evaluate, pipeline,
// verify-cert. Exit codes: 0 ok, 1 other failure, 2 configuration error,
// 3 certification refused, 4 safety invariant breached.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "safeadapt/config.hpp"
#include "safeadapt/errors.hpp"
#include "safeadapt/pipeline.hpp"

namespace {

using namespace safeadapt;

struct Common {
  std::string config;
  std::string seeds;
  std::string out;
  bool desk_scale = false;
  unsigned jobs = 1;
  bool force = false;
};

void add_common(CLI::App* sub, Common& c, bool config_required) {
  auto* opt = sub->add_option("--config", c.config, "experiment config (JSON)");
  if (config_required) opt->required();
  sub->add_option("--seeds", c.seeds, "seed list, e.g. 0..9 or 0,3,7 (overrides the config)");
  sub->add_option("--out", c.out, "output root (overrides the config)");
  sub->add_flag("--desk-scale", c.desk_scale, "apply the config's desk_scale budget patch");
  sub->add_option("--jobs", c.jobs, "seeds run in parallel")->check(CLI::PositiveNumber);
  sub->add_flag("--force", c.force, "rerun stages even when their outputs are current");
}

config::ExperimentConfig load(const Common& c) {
  config::ExperimentConfig cfg = config::load_config(c.config, c.desk_scale);
  if (!c.seeds.empty()) cfg.seeds = config::parse_seed_list(c.seeds);
  if (!c.out.empty()) cfg.out_dir = c.out;
  return cfg;
}

int report(const pipeline::RunSummary& s) {
  for (const auto& p : s.problems) std::cerr << "problem: " << p << '\n';
  return s.exit_code;
}

int run(const Common& c, const pipeline::Plan& plan, std::optional<std::string> checkpoint = std::nullopt) {
  const config::ExperimentConfig cfg = load(c);
  pipeline::Options opts;
  opts.jobs = c.jobs;
  opts.force = c.force;
  if (checkpoint) opts.checkpoint = *checkpoint;
  return report(pipeline::run_plan(cfg, plan, opts));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified safe adaptation of grid-world policies"};
  app.require_subcommand(1);

  Common common;
  std::string mode = "safe";
  std::string checkpoint;
  std::string cert_file;
  std::string dataset_file;
  std::size_t samples = 1000;
  std::uint64_t verify_seed = 0;

  auto* train = app.add_subcommand("train-source", "train, finetune and export source policies");
  add_common(train, common, true);

  auto* certify = app.add_subcommand("certify", "certify a parameter box around each source policy");
  add_common(certify, common, true);
  certify->add_option("--checkpoint", checkpoint, "certify this actor instead of the trained one");

  auto* adapt = app.add_subcommand("adapt", "adapt source policies to the downstream task");
  add_common(adapt, common, true);
  adapt->add_option("--mode", mode, "safe, unsafe or ewc")->check(CLI::IsMember({"safe", "unsafe", "ewc"}));

  auto* evaluate = app.add_subcommand("evaluate", "evaluate every method on both tasks and aggregate");
  add_common(evaluate, common, true);

  auto* pipe = app.add_subcommand("pipeline", "train, certify, adapt (all modes) and evaluate");
  add_common(pipe, common, true);

  auto* verify = app.add_subcommand("verify-cert", "re-verify certificates from scratch");
  add_common(verify, common, false);
  verify->add_option("--cert", cert_file, "certificate file (with --dataset)");
  verify->add_option("--dataset", dataset_file, "safety dataset file");
  verify->add_option("--samples", samples, "box samples checked for greedy safety");
  verify->add_option("--sample-seed", verify_seed, "seed for the box samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : pipeline::kConfigError;
  }

  try {
    pipeline::Plan plan;
    if (*train) {
      plan.train = true;
      return run(common, plan);
    }
    if (*certify) {
      plan.certify = true;
      return run(common, plan, checkpoint.empty() ? std::nullopt : std::optional<std::string>(checkpoint));
    }
    if (*adapt) {
      plan.adapt = {adapt::mode_from_string(mode)};
      return run(common, plan);
    }
    if (*evaluate) {
      plan.evaluate = true;
      return run(common, plan);
    }
    if (*pipe) {
      plan.train = plan.certify = plan.evaluate = true;
      plan.adapt = {adapt::Mode::Safe, adapt::Mode::Unsafe, adapt::Mode::Ewc};
      return run(common, plan);
    }
    if (*verify) {
      std::vector<std::pair<std::filesystem::path, std::filesystem::path>> jobs;
      if (!cert_file.empty()) {
        if (dataset_file.empty()) throw ConfigError("--cert needs --dataset");
        jobs.emplace_back(cert_file, dataset_file);
      } else {
        if (common.config.empty()) throw ConfigError("verify-cert needs --config or --cert");
        const config::ExperimentConfig cfg = load(common);
        for (const auto& l : cfg.layouts) {
          for (std::uint64_t s : cfg.seeds) {
            const auto dir = cfg.experiment_dir(l) / std::to_string(s);
            jobs.emplace_back(dir / "certify" / "certificate.json", dir / "train" / "dataset.json");
          }
        }
      }
      int code = pipeline::kOk;
      for (const auto& [c, d] : jobs) {
        if (!std::filesystem::exists(c)) {
          std::cerr << c.string() << ": no certificate\n";
          code = std::max(code, static_cast<int>(pipeline::kRefused));
          continue;
        }
        const auto rep = pipeline::verify_certificate_file(c, d, samples, verify_seed);
        std::printf("%s: %s lower bound %.6f threshold %.6f hard rate %.3f, %zu/%zu samples violated%s%s\n",
                    c.string().c_str(), rep.passed ? "PASS" : "FAIL", rep.global_lb, rep.delta_star,
                    rep.hard_cert_rate, rep.sample_violations, rep.samples, rep.failing_state.empty() ? "" : ", at ",
                    rep.failing_state.c_str());
        if (!rep.passed) code = pipeline::kBreach;
      }
      return code;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return pipeline::kConfigError;
  } catch (const CertificationRefused& e) {
    std::cerr << "certification refused: " << e.what() << '\n';
    return pipeline::kRefused;
  } catch (const InvariantBreach& e) {
    std::cerr << "invariant breach: " << e.what() << '\n';
    return pipeline::kBreach;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pipeline::kFailure;
  }
  return pipeline::kFailure;
}
