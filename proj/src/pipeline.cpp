#include "safeadapt/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "safeadapt/errors.hpp"
#include "safeadapt/rng.hpp"

namespace safeadapt::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Train: return "train";
    case Stage::Certify: return "certify";
    case Stage::AdaptSafe: return "adapt_safe";
    case Stage::AdaptUnsafe: return "adapt_unsafe";
    case Stage::AdaptEwc: return "adapt_ewc";
    case Stage::Evaluate: return "evaluate";
  }
  return "?";
}

Stage adapt_stage(adapt::Mode m) {
  switch (m) {
    case adapt::Mode::Safe: return Stage::AdaptSafe;
    case adapt::Mode::Unsafe: return Stage::AdaptUnsafe;
    case adapt::Mode::Ewc: return Stage::AdaptEwc;
  }
  return Stage::AdaptUnsafe;
}

int exit_code_for_status(const std::string& status) {
  if (status == "ok") return kOk;
  if (status == "refused" || status == "source_unsafe") return kRefused;
  if (status == "invariant_breach" || status == "verification_failed") return kBreach;
  if (status.rfind("missing_", 0) == 0) return kConfigError;
  return kFailure;
}

json to_json(const StageRecord& r) {
  return {{"stage", r.stage}, {"status", r.status}, {"message", r.message}, {"key", r.key}, {"outputs", r.outputs}};
}

StageRecord stage_record_from_json(const json& j) {
  try {
    StageRecord r;
    r.stage = j.at("stage").get<std::string>();
    r.status = j.at("status").get<std::string>();
    r.message = j.value("message", std::string());
    r.key = j.at("key").get<std::string>();
    r.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed stage record: ") + e.what());
  }
}

namespace {

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << text;
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

int severity(int code) {
  switch (code) {
    case kOk: return 0;
    case kRefused: return 1;
    case kFailure: return 2;
    case kConfigError: return 2;
    case kBreach: return 3;
  }
  return 2;
}

}  // namespace

std::string file_checksum(const fs::path& path) { return hex(fnv1a64(read_bytes(path))); }

void write_json_file(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(1) + "\n"); }

json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_bytes(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

std::vector<metrics::MetricRow> failed_rows(const config::ExperimentConfig& cfg, const config::LayoutRef& layout,
                                            std::uint64_t seed, const std::string& status) {
  std::vector<metrics::MetricRow> rows;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (metrics::Method m :
       {metrics::Method::Source, metrics::Method::UnsafeAdapt, metrics::Method::EWC, metrics::Method::SafeAdapt}) {
    for (int task : {1, 2}) {
      metrics::MetricRow r;
      r.env = std::string(envs::to_string(cfg.kind));
      r.layout = layout.name;
      r.seed = seed;
      r.method = m;
      r.task = task;
      r.phi_sc = r.phi_traj = r.total_reward = r.success_rate = nan;
      r.status = status;
      rows.push_back(r);
    }
  }
  return rows;
}

SeedRun::SeedRun(const config::ExperimentConfig& cfg, const config::LayoutRef& layout, std::uint64_t seed,
                 const Options& opts)
    : cfg_(cfg), layout_(layout), seed_(seed), opts_(opts), dir_(cfg.experiment_dir(layout) / std::to_string(seed)) {}

fs::path SeedRun::stage_dir(Stage s) const { return dir_ / to_string(s); }

void SeedRun::log(const std::string& msg) const {
  const std::string line = layout_.name + " seed " + std::to_string(seed_) + ": " + msg;
  if (opts_.log) opts_.log(line);
}

std::optional<StageRecord> SeedRun::record(Stage s) const {
  const fs::path p = stage_dir(s) / "stage.json";
  if (!fs::exists(p)) return std::nullopt;
  try {
    return stage_record_from_json(read_json_file(p));
  } catch (const ConfigError&) {
    return std::nullopt;
  }
}

std::optional<StageRecord> SeedRun::current(Stage s, const std::string& key) const {
  if (opts_.force) return std::nullopt;
  auto r = record(s);
  if (!r || r->key != key) return std::nullopt;
  for (const auto& [file, sum] : r->outputs) {
    const fs::path p = stage_dir(s) / file;
    if (!fs::exists(p) || file_checksum(p) != sum) return std::nullopt;
  }
  return r;
}

std::string SeedRun::upstream_key(Stage s, std::initializer_list<Stage> deps, const json& settings) const {
  json k = {{"stage", to_string(s)}, {"seed", seed_}, {"layout", layout_.name}, {"settings", settings}};
  if (!layout_.task1.empty()) {
    k["layout_files"] = {file_checksum(layout_.task1), file_checksum(layout_.task2)};
  }
  for (Stage d : deps) {
    const auto r = record(d);
    k["deps"][to_string(d)] = r ? json{{"status", r->status}, {"outputs", r->outputs}} : json(nullptr);
  }
  return hex(fnv1a64(k.dump()));
}

StageRecord SeedRun::finish(Stage s, const std::string& key, const std::string& status, const std::string& message,
                            const std::vector<std::string>& files) {
  StageRecord r;
  r.stage = to_string(s);
  r.status = status;
  r.message = message;
  r.key = key;
  for (const auto& f : files) r.outputs[f] = file_checksum(stage_dir(s) / f);
  write_json_file(stage_dir(s) / "stage.json", to_json(r));
  log(r.stage + " " + status + (message.empty() ? "" : ": " + message));
  return r;
}

namespace {

// Upstream stage did not succeed: report without running or writing.
StageRecord skipped(Stage s, const std::optional<StageRecord>& up, Stage upstream) {
  StageRecord r;
  r.stage = to_string(s);
  r.status = up ? up->status : "missing_" + to_string(upstream);
  r.message = to_string(upstream) + (up ? " finished with status " + up->status : " has not run");
  return r;
}

// Maps library errors to stage statuses; configuration errors propagate.
template <class Fn>
StageRecord guarded(Fn&& body, const std::function<StageRecord(const std::string&, const std::string&)>& fail) {
  try {
    return body();
  } catch (const CertificationRefused& e) {
    return fail("refused", e.what());
  } catch (const InvariantBreach& e) {
    return fail("invariant_breach", e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    return fail("failed", e.what());
  }
}

void write_solver_trace(const fs::path& path, const std::vector<rashomon::SolverTraceRow>& trace) {
  std::ostringstream out;
  out << "iteration,smooth_margin,lambda,mean_log_alpha,checkpoint,exact_lb,hard_rate,accepted\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%d,%.17g,%.17g,%d\n", r.iteration, r.smooth_margin, r.lambda,
                  r.mean_log_alpha, r.checkpoint ? 1 : 0, r.exact_lb, r.hard_rate, r.accepted ? 1 : 0);
    out << buf;
  }
  write_text_atomic(path, out.str());
}

json train_settings(const config::ExperimentConfig& cfg) {
  return {{"hidden", cfg.hidden},
          {"activation", nn::to_string(cfg.activation)},
          {"ppo", ppo::to_json(cfg.source_ppo)},
          {"finetune", ppo::to_json(cfg.finetune)},
          {"rashomon", rashomon::to_json(cfg.rashomon)}};
}

}  // namespace

StageRecord SeedRun::train() {
  const Stage st = Stage::Train;
  const std::string key = upstream_key(st, {}, train_settings(cfg_));
  if (auto r = current(st, key)) return *r;
  const fs::path d = stage_dir(st);
  fs::remove_all(d);
  fs::create_directories(d);
  log("train: source PPO");
  return guarded(
      [&] {
        const envs::Env env1 = layout_.env(1);
        const nn::MlpSpec spec = cfg_.actor_spec(env1);
        ppo::SourceResult src = ppo::train_source(env1, spec, cfg_.source_ppo, seed_);
        write_json_file(d / "source_actor.json", nn::to_json(src.ac.actor));
        write_json_file(d / "critic.json", nn::to_json(src.ac.critic));
        ppo::write_log_csv((d / "train_log.csv").string(), src.run.log);

        const envs::SafetyDataset ds = envs::build_safety_dataset(env1);
        write_json_file(d / "dataset.json", envs::to_json(ds));

        log("train: safety finetuning on " + std::to_string(ds.size()) + " states");
        Rng rng = Rng::stream(seed_, "finetune");
        const ppo::FinetuneResult ft =
            ppo::safety_finetune(src.ac.actor, ds, &env1, cfg_.finetune, cfg_.rashomon, rng);
        write_json_file(d / "actor.json", nn::to_json(ft.actor));
        const json summary = {
            {"steps", src.run.steps},
            {"early_stopped", src.run.early_stopped},
            {"source_task1_reward", metrics::episode_metrics(src.ac.actor, env1, 1).total_reward},
            {"finetuned_task1_reward", metrics::episode_metrics(ft.actor, env1, 1).total_reward},
            {"phi_sc", metrics::critical_state_safety_rate(ft.actor, ds)},
            {"epochs", ft.epochs},
            {"reached", ft.reached},
            {"beta", ft.beta},
            {"loss", ft.loss}};
        write_json_file(d / "finetune.json", summary);
        const std::vector<std::string> files{"source_actor.json", "critic.json", "train_log.csv",
                                             "dataset.json",      "actor.json",  "finetune.json"};
        if (!ft.reached) {
          return finish(st, key, "source_unsafe",
                        "finetuning did not reach a safe greedy policy with a valid inverse temperature", files);
        }
        return finish(st, key, "ok", "", files);
      },
      [&](const std::string& status, const std::string& msg) { return finish(st, key, status, msg, {}); });
}

StageRecord SeedRun::certify() {
  const Stage st = Stage::Certify;
  const auto up = record(Stage::Train);
  if (!up || up->status != "ok") return skipped(st, up, Stage::Train);
  const fs::path d = stage_dir(st);
  const fs::path checkpoint =
      opts_.checkpoint ? fs::absolute(*opts_.checkpoint) : fs::absolute(stage_dir(Stage::Train) / "actor.json");
  const json settings = {{"rashomon", rashomon::to_json(cfg_.rashomon)},
                         {"verify_samples", cfg_.verify_samples},
                         {"checkpoint", opts_.checkpoint ? file_checksum(checkpoint) : std::string()}};
  const std::string key = upstream_key(st, {Stage::Train}, settings);
  if (auto r = current(st, key)) return *r;
  fs::remove_all(d);
  fs::create_directories(d);
  return guarded(
      [&] {
        const envs::Env env1 = layout_.env(1);
        const nn::ParamVector actor = nn::params_from_json(read_json_file(checkpoint));
        const envs::SafetyDataset ds =
            envs::safety_dataset_from_json(read_json_file(stage_dir(Stage::Train) / "dataset.json"));
        log("certify: " + std::to_string(actor.size()) + " parameters, " + std::to_string(ds.size()) + " states");
        rashomon::CertifyResult cr;
        try {
          cr = rashomon::max_lid(actor, ds, cfg_.rashomon,
                                 [&](std::size_t i) { return env1.describe(ds.entries[i].state); });
        } catch (const CertificationRefused& e) {
          write_json_file(d / "refusal.json",
                          {{"status", "refused"}, {"reason", e.what()}, {"failing_state", e.failing_state()}});
          return finish(st, key, "refused", std::string(e.what()) + " (" + e.failing_state() + ")",
                        {"refusal.json"});
        }
        cr.cert.center_checkpoint = fs::relative(checkpoint, fs::absolute(d)).generic_string();
        write_json_file(d / "certificate.json", rashomon::to_json(cr.cert));
        write_solver_trace(d / "solver_trace.csv", cr.trace);

        json bounds = json::array();
        for (std::size_t i = 0; i < ds.size(); ++i) {
          json b = ibp::to_json(cr.cert.per_state[i]);
          b["state"] = env1.describe(ds.entries[i].state);
          b["state_key"] = env1.state_key_json(ds.entries[i].state);
          std::vector<bool> mask;
          for (std::size_t a = 0; a < ds.num_actions; ++a) mask.push_back(ds.entries[i].safe_mask.contains(a));
          b["safe_mask"] = mask;
          b["margin"] = cr.cert.per_state[i].surrogate_lb - cr.cert.delta_star;
          bounds.push_back(std::move(b));
        }
        write_json_file(d / "bounds.json",
                        {{"beta", cr.cert.beta}, {"delta_star", cr.cert.delta_star}, {"states", bounds}});

        Rng vr = Rng::stream(seed_, "verify");
        const rashomon::VerificationReport rep = rashomon::verify_certificate(
            cr.cert, ds, static_cast<std::size_t>(cfg_.verify_samples), vr, cfg_.rashomon.hard_threshold);
        write_json_file(d / "verification.json", rashomon::to_json(rep));
        const std::vector<std::string> files{"certificate.json", "solver_trace.csv", "bounds.json",
                                             "verification.json"};
        if (!rep.passed) return finish(st, key, "verification_failed", rep.failing_state, files);
        char msg[128];
        std::snprintf(msg, sizeof msg, "lower bound %.6f > %.6f at beta %.4g", cr.cert.global_lb, cr.cert.delta_star,
                      cr.cert.beta);
        return finish(st, key, "ok", msg, files);
      },
      [&](const std::string& status, const std::string& msg) { return finish(st, key, status, msg, {}); });
}

StageRecord SeedRun::adapt(adapt::Mode mode) {
  const Stage st = adapt_stage(mode);
  const auto up = record(Stage::Train);
  if (!up || up->status != "ok") return skipped(st, up, Stage::Train);
  std::vector<Stage> deps{Stage::Train};
  if (mode == adapt::Mode::Safe) {
    const auto cert = record(Stage::Certify);
    if (!cert || cert->status != "ok") {
      StageRecord r = skipped(st, cert, Stage::Certify);
      r.message = "safe adaptation needs a verified certificate; " + r.message;
      return r;
    }
  }
  const adapt::AdaptConfig& acfg = cfg_.adapt.at(mode);
  const std::string key = mode == adapt::Mode::Safe
                              ? upstream_key(st, {Stage::Train, Stage::Certify}, adapt::to_json(acfg))
                              : upstream_key(st, {Stage::Train}, adapt::to_json(acfg));
  if (auto r = current(st, key)) return *r;
  const fs::path d = stage_dir(st);
  fs::remove_all(d);
  fs::create_directories(d);
  log(to_string(st) + ": downstream PPO");
  return guarded(
      [&] {
        const fs::path td = stage_dir(Stage::Train);
        const envs::Env env1 = layout_.env(1);
        const envs::Env env2 = layout_.env(2);
        const envs::SafetyDataset ds = envs::safety_dataset_from_json(read_json_file(td / "dataset.json"));
        ppo::ActorCritic ac{nn::params_from_json(read_json_file(td / "actor.json")),
                            nn::params_from_json(read_json_file(td / "critic.json"))};
        std::vector<std::string> files;
        adapt::AdaptResult res;
        if (mode == adapt::Mode::Safe) {
          const fs::path cd = stage_dir(Stage::Certify);
          const json cj = read_json_file(cd / "certificate.json");
          ac.actor = nn::params_from_json(read_json_file(cd / cj.at("center_checkpoint").get<std::string>()));
          const rashomon::Certificate cert = rashomon::certificate_from_json(cj, ac.actor);
          res = adapt::adapt_safe(ac, cert, env2, acfg, seed_, ds);
        } else if (mode == adapt::Mode::Unsafe) {
          res = adapt::adapt_unsafe(ac, env2, acfg, seed_, &ds);
        } else {
          const adapt::FisherDiag f =
              adapt::fisher_diag(ac.actor, env1, envs::enumerate_states(env1), acfg.fisher_cap, seed_);
          write_json_file(d / "fisher.json", adapt::to_json(f));
          files.push_back("fisher.json");
          res = adapt::adapt_ewc(ac, f, env2, acfg, seed_, &ds);
        }
        write_json_file(d / "actor.json", nn::to_json(res.ac.actor));
        write_json_file(d / "critic.json", nn::to_json(res.ac.critic));
        adapt::write_log_csv((d / "log.csv").string(), res.log);
        bool contained = true;
        double min_phi = 1.0;
        for (const auto& r : res.log) {
          contained = contained && r.contained;
          min_phi = std::min(min_phi, r.phi_sc_task1);
        }
        write_json_file(d / "summary.json", {{"mode", adapt::to_string(mode)},
                                             {"steps", res.steps},
                                             {"early_stopped", res.early_stopped},
                                             {"contained_every_update", mode == adapt::Mode::Safe && contained},
                                             {"min_phi_sc_task1", min_phi},
                                             {"task2_reward", metrics::episode_metrics(res.ac.actor, env2, 1).total_reward}});
        files.insert(files.end(), {"actor.json", "critic.json", "log.csv", "summary.json"});
        return finish(st, key, "ok", "", files);
      },
      [&](const std::string& status, const std::string& msg) { return finish(st, key, status, msg, {}); });
}

StageRecord SeedRun::evaluate() {
  const Stage st = Stage::Evaluate;
  const json settings = {{"episodes", cfg_.eval_episodes}};
  const std::string key = upstream_key(
      st, {Stage::Train, Stage::Certify, Stage::AdaptSafe, Stage::AdaptUnsafe, Stage::AdaptEwc}, settings);
  if (auto r = current(st, key)) return *r;
  const fs::path d = stage_dir(st);
  fs::remove_all(d);
  fs::create_directories(d);
  return guarded(
      [&] {
        const auto train = record(Stage::Train);
        std::vector<metrics::MetricRow> rows;
        if (!train || train->status != "ok") {
          rows = failed_rows(cfg_, layout_, seed_, train ? train->status : "missing_train");
        } else {
          const auto cert = record(Stage::Certify);
          const bool certified = cert && cert->status == "ok";
          const envs::Env env1 = layout_.env(1);
          const envs::Env env2 = layout_.env(2);
          const envs::SafetyDataset ds1 =
              envs::safety_dataset_from_json(read_json_file(stage_dir(Stage::Train) / "dataset.json"));
          std::optional<envs::SafetyDataset> ds2;
          try {
            ds2 = envs::build_safety_dataset(env2);
          } catch (const InvalidArgument& e) {
            log(std::string("evaluate: no Task-2 safety dataset: ") + e.what());
          }
          struct Source {
            metrics::Method method;
            Stage stage;
          };
          for (const Source& s : {Source{metrics::Method::Source, Stage::Train},
                                  Source{metrics::Method::UnsafeAdapt, Stage::AdaptUnsafe},
                                  Source{metrics::Method::EWC, Stage::AdaptEwc},
                                  Source{metrics::Method::SafeAdapt, Stage::AdaptSafe}}) {
            const auto rec = record(s.stage);
            std::vector<metrics::MetricRow> mrows;
            const std::string status = rec ? rec->status : "missing_" + to_string(s.stage);
            if (status != "ok") {
              log("evaluate: " + metrics::to_string(s.method) + " unavailable (" + status + ")");
              for (auto& r : failed_rows(cfg_, layout_, seed_, status)) {
                if (r.method == s.method) rows.push_back(r);
              }
              continue;
            }
            const nn::ParamVector actor = nn::params_from_json(read_json_file(stage_dir(s.stage) / "actor.json"));
            for (int task : {1, 2}) {
              const envs::Env& env = task == 1 ? env1 : env2;
              metrics::MetricRow r;
              r.env = std::string(envs::to_string(cfg_.kind));
              r.layout = layout_.name;
              r.seed = seed_;
              r.method = s.method;
              r.task = task;
              const envs::SafetyDataset* ds = task == 1 ? &ds1 : (ds2 ? &*ds2 : nullptr);
              r.phi_sc = ds != nullptr && !ds->empty() ? metrics::critical_state_safety_rate(actor, *ds)
                                                       : std::numeric_limits<double>::quiet_NaN();
              r.phi_traj = metrics::trajectory_safety_rate(actor, env, cfg_.eval_episodes);
              const metrics::EpisodeMetrics em = metrics::episode_metrics(actor, env, cfg_.eval_episodes);
              r.total_reward = em.total_reward;
              r.success_rate = em.success_rate;
              r.provably_safe =
                  certified && (s.method == metrics::Method::Source || s.method == metrics::Method::SafeAdapt);
              r.status = "ok";
              rows.push_back(r);
            }
          }
        }
        metrics::sort_rows(rows);
        metrics::write_csv(d / "rows.csv", rows);
        return finish(st, key, "ok", "", {"rows.csv"});
      },
      [&](const std::string& status, const std::string& msg) { return finish(st, key, status, msg, {}); });
}

std::vector<metrics::MetricRow> SeedRun::rows() const {
  const auto r = record(Stage::Evaluate);
  if (!r || r->status != "ok") return failed_rows(cfg_, layout_, seed_, r ? r->status : "missing_evaluate");
  return metrics::read_csv(stage_dir(Stage::Evaluate) / "rows.csv");
}

RunSummary run_plan(const config::ExperimentConfig& cfg, const Plan& plan, const Options& in_opts) {
  Options opts = in_opts;
  std::mutex log_mutex;
  if (!opts.log) {
    opts.log = [&log_mutex](const std::string& line) {
      std::lock_guard<std::mutex> lock(log_mutex);
      std::cerr << line << '\n';
    };
  }

  struct Unit {
    const config::LayoutRef* layout;
    std::uint64_t seed;
  };
  std::vector<Unit> units;
  for (const auto& l : cfg.layouts) {
    fs::create_directories(cfg.experiment_dir(l));
    write_json_file(cfg.experiment_dir(l) / "config.json", cfg.resolved);
    for (std::uint64_t s : cfg.seeds) units.push_back({&l, s});
  }

  RunSummary summary;
  std::mutex summary_mutex;
  const auto note = [&](const Unit& u, const StageRecord& r) {
    if (r.status == "ok") return;
    std::lock_guard<std::mutex> lock(summary_mutex);
    const int code = exit_code_for_status(r.status);
    if (severity(code) > severity(summary.exit_code)) summary.exit_code = code;
    summary.problems.push_back(u.layout->name + " seed " + std::to_string(u.seed) + " " + r.stage + ": " + r.status +
                               (r.message.empty() ? "" : " (" + r.message + ")"));
  };

  std::atomic<std::size_t> next{0};
  std::exception_ptr config_failure;
  const auto worker = [&] {
    for (std::size_t i = next++; i < units.size(); i = next++) {
      const Unit& u = units[i];
      try {
        SeedRun run(cfg, *u.layout, u.seed, opts);
        if (plan.train) note(u, run.train());
        if (plan.certify) note(u, run.certify());
        for (adapt::Mode m : plan.adapt) note(u, run.adapt(m));
        if (plan.evaluate) note(u, run.evaluate());
      } catch (...) {
        std::lock_guard<std::mutex> lock(summary_mutex);
        if (!config_failure) config_failure = std::current_exception();
      }
    }
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(opts.jobs, static_cast<unsigned>(units.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (config_failure) std::rethrow_exception(config_failure);

  if (plan.evaluate) {
    for (const auto& l : cfg.layouts) {
      std::vector<metrics::MetricRow> rows;
      for (std::uint64_t s : cfg.seeds) {
        const SeedRun run(cfg, l, s, opts);
        const auto r = run.rows();
        rows.insert(rows.end(), r.begin(), r.end());
      }
      metrics::sort_rows(rows);
      const fs::path dir = cfg.experiment_dir(l);
      metrics::write_csv(dir / "results.csv", rows);
      write_json_file(dir / "aggregate.json", metrics::aggregate(rows));
    }
  }
  std::sort(summary.problems.begin(), summary.problems.end());
  return summary;
}

rashomon::VerificationReport verify_certificate_file(const fs::path& cert_path, const fs::path& dataset_path,
                                                     std::size_t samples, std::uint64_t seed) {
  const json cj = read_json_file(cert_path);
  const std::string center = cj.value("center_checkpoint", std::string());
  if (center.empty()) throw ConfigError("certificate names no centre checkpoint");
  fs::path cp(center);
  if (cp.is_relative()) cp = cert_path.parent_path() / cp;
  const rashomon::Certificate cert = rashomon::certificate_from_json(cj, nn::params_from_json(read_json_file(cp)));
  const envs::SafetyDataset ds = envs::safety_dataset_from_json(read_json_file(dataset_path));
  if (ds.empty()) throw ConfigError("dataset " + dataset_path.string() + " is empty");
  if (cert.box.center.spec.input_dim != ds.entries.front().encoding.size()) {
    throw ConfigError("certificate network and dataset encodings differ in size");
  }
  Rng rng = Rng::stream(seed, "verify");
  return rashomon::verify_certificate(cert, ds, samples, rng);
}

}  // namespace safeadapt::pipeline
