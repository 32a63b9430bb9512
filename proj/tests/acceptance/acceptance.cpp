// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// The pipeline criteria run the shipped configs at desk scale under --out;
// by default every stage is recomputed so the reported runtimes are real.

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "safeadapt/config.hpp"
#include "safeadapt/kernels.hpp"
#include "safeadapt/metrics.hpp"
#include "safeadapt/pipeline.hpp"

#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace safeadapt;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

int failures = 0;

void report(const std::string& id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %s %s: %s\n", pass ? "PASS" : "FAIL", id.c_str(), name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

// ---------------------------------------------------------------------------
// Pipeline runs and what they left on disk.

struct Experiment {
  config::ExperimentConfig cfg;
  pipeline::RunSummary summary;
  double seconds = 0.0;
};

Experiment run_experiment(const std::string& file, const fs::path& out, bool resume,
                          const std::function<void(config::ExperimentConfig&)>& adjust = {}) {
  Experiment e;
  e.cfg = config::load_config(fs::path(SAFEADAPT_SOURCE_DIR) / "configs" / file, true);
  e.cfg.out_dir = out;
  if (adjust) adjust(e.cfg);
  pipeline::Plan plan;
  plan.train = plan.certify = plan.evaluate = true;
  plan.adapt = {adapt::Mode::Safe, adapt::Mode::Unsafe, adapt::Mode::Ewc};
  pipeline::Options opts;
  opts.force = !resume;
  opts.log = [&](const std::string& m) { std::fprintf(stderr, "[%s] %s\n", e.cfg.name.c_str(), m.c_str()); };
  const auto t0 = Clock::now();
  e.summary = pipeline::run_plan(e.cfg, plan, opts);
  e.seconds = seconds_since(t0);
  for (const auto& p : e.summary.problems) std::fprintf(stderr, "[%s] problem: %s\n", e.cfg.name.c_str(), p.c_str());
  return e;
}

struct SeedFacts {
  std::uint64_t seed = 0;
  std::string layout;
  bool cert_present = false;
  bool cert_verified = false;     // fresh re-verification with 1000 box samples
  std::size_t sample_violations = 0;
  double cert_margin = 0.0;       // global_lb - delta_star
  std::size_t safe_log_rows = 0;
  std::size_t safe_log_below_one = 0;
  bool rows_ok = false;
  double safe_phi1 = NAN, unsafe_phi1 = NAN, ewc_phi1 = NAN;
  double safe_success2 = NAN, unsafe_success2 = NAN, ewc_success2 = NAN;
  double safe_reward2 = NAN;
};

// phi_sc_task1 is the last column of the adaptation log.
void read_safe_log(const fs::path& path, SeedFacts& f) {
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line)) return;
  while (std::getline(in, line)) {
    const double phi = std::stod(line.substr(line.rfind(',') + 1));
    ++f.safe_log_rows;
    if (!(phi == 1.0)) ++f.safe_log_below_one;
  }
}

std::vector<SeedFacts> collect(const Experiment& e, std::uint64_t verify_seed) {
  std::vector<SeedFacts> out;
  for (const auto& layout : e.cfg.layouts) {
    const fs::path exp_dir = e.cfg.experiment_dir(layout);
    std::vector<metrics::MetricRow> rows;
    if (fs::exists(exp_dir / "results.csv")) rows = metrics::read_csv(exp_dir / "results.csv");
    for (std::uint64_t seed : e.cfg.seeds) {
      SeedFacts f;
      f.seed = seed;
      f.layout = layout.name;
      const fs::path dir = exp_dir / std::to_string(seed);
      const fs::path cert = dir / "certify" / "certificate.json";
      f.cert_present = fs::exists(cert);
      if (f.cert_present) {
        const auto rep = pipeline::verify_certificate_file(cert, dir / "train" / "dataset.json", 1000,
                                                           verify_seed + seed);
        f.cert_verified = rep.passed && rep.samples == 1000;
        f.sample_violations = rep.sample_violations;
        const auto j = pipeline::read_json_file(cert);
        f.cert_margin = j.at("global_lb").get<double>() - j.at("delta_star").get<double>();
      }
      if (fs::exists(dir / "adapt_safe" / "log.csv")) read_safe_log(dir / "adapt_safe" / "log.csv", f);
      std::size_t found = 0;
      for (const auto& r : rows) {
        if (r.seed != seed || r.status != "ok") continue;
        ++found;
        const bool t1 = r.task == 1;
        switch (r.method) {
          case metrics::Method::SafeAdapt:
            (t1 ? f.safe_phi1 : f.safe_success2) = t1 ? r.phi_sc : r.success_rate;
            if (!t1) f.safe_reward2 = r.total_reward;
            break;
          case metrics::Method::UnsafeAdapt:
            (t1 ? f.unsafe_phi1 : f.unsafe_success2) = t1 ? r.phi_sc : r.success_rate;
            break;
          case metrics::Method::EWC:
            (t1 ? f.ewc_phi1 : f.ewc_success2) = t1 ? r.phi_sc : r.success_rate;
            break;
          default:
            break;
        }
      }
      f.rows_ok = found == 8;
      out.push_back(f);
    }
  }
  return out;
}

template <class Pred>
std::size_t count_if(const std::vector<SeedFacts>& v, Pred p) {
  std::size_t n = 0;
  for (const auto& f : v) n += p(f) ? 1 : 0;
  return n;
}

bool at_least_two_thirds(std::size_t k, std::size_t n) { return n > 0 && 3 * k >= 2 * n; }

// Certificates verify with 1000 fresh samples, the strict margin holds, and
// every logged SafeAdapt update kept Task-1 safety at exactly 1.
bool guarantee_holds(const std::vector<SeedFacts>& facts, std::string& detail) {
  std::size_t certs = 0, verified = 0, margin = 0, rows = 0, below = 0, final_one = 0, complete = 0;
  for (const auto& f : facts) {
    complete += f.rows_ok;
    certs += f.cert_present;
    verified += f.cert_verified && f.sample_violations == 0;
    margin += f.cert_present && f.cert_margin >= 1e-9;
    rows += f.safe_log_rows;
    below += f.safe_log_below_one;
    final_one += f.safe_phi1 == 1.0;
  }
  const std::size_t n = facts.size();
  detail = fmt("%zu/%zu seeds evaluated, %zu/%zu certificates, %zu verified with 0/1000 violations, %zu with margin >= 1e-9; "
               "%zu SafeAdapt checkpoints, %zu below 1.0; final Task-1 phi_sc = 1 on %zu/%zu",
               complete, n, certs, n, verified, margin, rows, below, final_one, n);
  return complete == n && certs == n && verified == n && margin == n && rows > 0 && below == 0 && final_one == n;
}

std::string per_seed(const std::vector<SeedFacts>& facts, double SeedFacts::*field) {
  std::string s;
  for (const auto& f : facts) s += fmt("%s%.3g", s.empty() ? "" : " ", f.*field);
  return "[" + s + "]";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string out = "acceptance_runs";
  bool resume = false;
  bool skip_pipelines = false;
  app.add_option("--out", out, "directory for pipeline runs");
  app.add_flag("--resume", resume, "reuse completed pipeline stages (runtimes then cover only new work)");
  app.add_flag("--skip-pipelines", skip_pipelines, "run only the numerical criteria");
  CLI11_PARSE(app, argc, argv);

  std::printf("kernels: %s\n", std::string(kernels::active().name).c_str());

  // 1. Threshold rules of the safe-mass surrogate on exact policies.
  {
    const auto t0 = Clock::now();
    const auto r = testsupport::fuzz_surrogate(100000, 20240601);
    const double s = seconds_since(t0);
    report("1", "surrogate soundness", r.tested == 100000 && r.sound_violations == 0 && r.unsafety_violations == 0 && s < 10,
           fmt("%zu policies, %zu sound-side and %zu unsafe-side violations, %zu/%zu ambiguous (safe/unsafe), %.2f s",
               r.tested, r.sound_violations, r.unsafety_violations, r.ambiguous_safe, r.ambiguous_unsafe, s));
  }

  // 2. Policies whose surrogate rises while the hard rule flips.
  {
    bool ok = true;
    std::string d;
    for (const auto& p : testsupport::kNonMonotonePolicies) {
      const auto o = testsupport::evaluate_policy(p);
      ok = ok && std::abs(o.surrogate - p.surrogate) <= 1e-12 && o.hard == p.hard;
      d += fmt("%s(%.15f, %d) ", p.name, o.surrogate, o.hard ? 1 : 0);
    }
    report("2", "non-monotone counterexamples", ok, d + "expected (0.60, 1) (0.61, 0) (0.62, 1)");
  }

  // 3. Interval bounds against sampled parameters.
  {
    const auto t0 = Clock::now();
    const auto r = testsupport::ibp_soundness(50, 10000, 77);
    const double s = seconds_since(t0);
    report("3", "IBP soundness",
           r.samples == 500000 && r.logit_violations == 0 && r.surrogate_violations == 0 && r.hard_violations == 0 &&
               s < 60,
           fmt("%zu configs x %zu samples, %zu logit, %zu surrogate, %zu hard violations (%zu hard-certified), "
               "worst excess %.3g, %.2f s",
               r.configs, r.samples / std::max<std::size_t>(r.configs, 1), r.logit_violations,
               r.surrogate_violations, r.hard_violations, r.hard_certified_configs, r.worst_logit_excess, s));
  }

  // 4. Closed-form optimum of the one-parameter problem.
  {
    const auto t0 = Clock::now();
    testsupport::ToyProblem toy(2.0, 0.6);
    const auto sol = rashomon::solve_max_lid(toy, 0.6, rashomon::RashomonConfig{});
    const double s = seconds_since(t0);
    const double expected = 2.0 - std::log(1.5);
    const double got = sol ? sol->alpha[0] : NAN;
    report("4", "closed-form max-LID oracle", sol && std::abs(got - expected) < 1e-2 && s < 5,
           fmt("alpha %.6f, expected %.6f, error %.2g, %.3f s", got, expected, std::abs(got - expected), s));
  }

  // 9. Gradient checks (numerical; run before the long pipelines).
  {
    const auto net = testsupport::network_gradient_check(20, 2024);
    const auto box = testsupport::alpha_gradient_check(50, 99);
    report("9", "gradient checks", net.compared > 0 && net.max_rel < 1e-5 && box.compared > 0 && box.max_rel < 1e-4,
           fmt("network max rel %.3g over %zu components; alpha subgradient max rel %.3g over %zu smooth "
               "components (%zu kinks skipped)",
               net.max_rel, net.compared, box.max_rel, box.compared, box.skipped));
  }

  if (skip_pipelines) {
    std::printf("pipeline criteria skipped\n");
    return failures == 0 ? 0 : 1;
  }

  const fs::path root(out);
  bool breach = false;
  std::string breach_detail;
  const auto note_breach = [&](const Experiment& e) {
    bool hit = e.summary.exit_code == pipeline::kBreach;
    for (const auto& p : e.summary.problems) hit = hit || p.find("invariant_breach") != std::string::npos;
    breach = breach || hit;
    breach_detail += fmt("%s exit %d; ", e.cfg.name.c_str(), e.summary.exit_code);
  };

  // 5-7. Frozen Lake standard map.
  {
    const Experiment e = run_experiment("frozenlake_standard_4x4.json", root, resume);
    note_breach(e);
    const auto facts = collect(e, 1000);
    const std::size_t n = facts.size();
    std::string d;
    const bool g = guarantee_holds(facts, d);
    report("5", "certified safety at scale (Frozen Lake)", g && n == 3 && e.seconds < 1800,
           d + fmt(", %zu seeds, exit %d, %.0f s", n, e.summary.exit_code, e.seconds));

    const std::size_t s2 = count_if(facts, [](const SeedFacts& f) { return f.safe_success2 == 1.0; });
    const std::size_t u2 = count_if(facts, [](const SeedFacts& f) { return f.unsafe_success2 == 1.0; });
    const std::size_t e2 = count_if(facts, [](const SeedFacts& f) { return f.ewc_success2 == 1.0; });
    report("6", "downstream plasticity (Frozen Lake)",
           at_least_two_thirds(s2, n) && at_least_two_thirds(u2, n) && at_least_two_thirds(e2, n),
           fmt("Task-2 success 1.0 on %zu/%zu (SafeAdapt), %zu/%zu (UnsafeAdapt), %zu/%zu (EWC)", s2, n, u2, n, e2,
               n));

    const std::size_t forgot = count_if(facts, [](const SeedFacts& f) { return f.unsafe_phi1 < 1.0; });
    report("7", "forgetting contrast (Frozen Lake)", at_least_two_thirds(forgot, n),
           fmt("UnsafeAdapt Task-1 phi_sc %s, below 1.0 on %zu/%zu; EWC %s; SafeAdapt %s",
               per_seed(facts, &SeedFacts::unsafe_phi1).c_str(), forgot, n,
               per_seed(facts, &SeedFacts::ewc_phi1).c_str(), per_seed(facts, &SeedFacts::safe_phi1).c_str()));
  }

  // 10. Poisoned Apple.
  {
    const Experiment e = run_experiment("poisoned_apple_simple_5x5.json", root, resume);
    note_breach(e);
    const auto facts = collect(e, 2000);
    const std::size_t n = facts.size();
    std::string d;
    const bool g = guarantee_holds(facts, d);
    const std::size_t s2 = count_if(facts, [](const SeedFacts& f) { return f.safe_success2 == 1.0; });
    report("10", "Poisoned Apple pipeline", g && n == 3 && at_least_two_thirds(s2, n) && e.seconds < 1800,
           d + fmt("; SafeAdapt Task-2 success 1.0 on %zu/%zu, Task-2 reward %s (reported only); exit %d, %.0f s", s2,
                   n, per_seed(facts, &SeedFacts::safe_reward2).c_str(), e.summary.exit_code, e.seconds));
  }

  // Diagonal layouts: the SafeAdapt guarantee on the 4x4 and 6x6 maps.
  {
    const Experiment e = run_experiment("frozenlake_diagonal_sweep.json", root, resume, [](config::ExperimentConfig& c) {
      std::vector<config::LayoutRef> keep;
      for (const auto& l : c.layouts) {
        if (l.name == "diagonal_4x4" || l.name == "diagonal_6x6") keep.push_back(l);
      }
      c.layouts = keep;
    });
    note_breach(e);
    const auto facts = collect(e, 3000);
    std::string d;
    const bool g = guarantee_holds(facts, d);
    report("sweep", "diagonal 4x4 and 6x6 SafeAdapt phi_sc", g && e.cfg.layouts.size() == 2,
           d + fmt("; SafeAdapt Task-1 phi_sc %s, exit %d, %.0f s", per_seed(facts, &SeedFacts::safe_phi1).c_str(),
                   e.summary.exit_code, e.seconds));
  }

  // 8. No containment or safety breach anywhere above.
  report("8", "projection containment", !breach, breach_detail + "no invariant_breach stage");

  std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASS" : "SOME FAILED", failures);
  return failures == 0 ? 0 : 1;
}
