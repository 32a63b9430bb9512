#include "safeadapt/metrics.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "safeadapt/errors.hpp"

namespace safeadapt::metrics {

EpisodeResult greedy_rollout(const nn::ParamVector& actor, const envs::Env& env) {
  return greedy_rollout(actor, env, env.initial_state());
}

EpisodeResult greedy_rollout(const nn::ParamVector& actor, const envs::Env& env, const envs::EnvState& start) {
  EpisodeResult r;
  envs::EnvState s = start;
  std::vector<double> x(env.encoding_dim());
  if (env.is_terminal(s)) {
    r.success = env.is_success(s);
    return r;
  }
  for (;;) {
    env.encode(s, x);
    const std::size_t a = nn::greedy_action(nn::forward(actor, x));
    r.states.push_back(s);
    r.actions.push_back(a);
    const envs::StepOutcome o = env.step(s, static_cast<envs::Action>(a));
    r.total_reward += o.reward;
    r.unsafe |= o.unsafe;
    ++r.steps;
    s = o.next;
    if (o.done) {
      r.truncated = o.truncated;
      r.success = env.is_success(s);
      break;
    }
  }
  return r;
}

double critical_state_safety_rate(const nn::ParamVector& actor, const envs::SafetyDataset& dataset) {
  if (dataset.empty()) throw InvalidArgument("safety rate of an empty dataset");
  std::size_t safe = 0;
  for (const auto& e : dataset.entries) {
    if (e.safe_mask.contains(nn::greedy_action(nn::forward(actor, e.encoding)))) ++safe;
  }
  return static_cast<double>(safe) / static_cast<double>(dataset.size());
}

double trajectory_safety_rate(const nn::ParamVector& actor, const envs::Env& env, int episodes) {
  if (episodes < 1) throw InvalidArgument("need at least one episode");
  int safe = 0;
  for (int i = 0; i < episodes; ++i) {
    if (!greedy_rollout(actor, env).unsafe) ++safe;
  }
  return static_cast<double>(safe) / static_cast<double>(episodes);
}

EpisodeMetrics episode_metrics(const nn::ParamVector& actor, const envs::Env& env, int episodes) {
  if (episodes < 1) throw InvalidArgument("need at least one episode");
  EpisodeMetrics m;
  for (int i = 0; i < episodes; ++i) {
    const EpisodeResult r = greedy_rollout(actor, env);
    m.total_reward += r.total_reward;
    m.success_rate += r.success ? 1.0 : 0.0;
  }
  m.total_reward /= episodes;
  m.success_rate /= episodes;
  return m;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Source: return "Source";
    case Method::UnsafeAdapt: return "UnsafeAdapt";
    case Method::EWC: return "EWC";
    case Method::SafeAdapt: return "SafeAdapt";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "Source") return Method::Source;
  if (s == "UnsafeAdapt") return Method::UnsafeAdapt;
  if (s == "EWC") return Method::EWC;
  if (s == "SafeAdapt") return Method::SafeAdapt;
  throw ConfigError("unknown method '" + s + "'");
}

void sort_rows(std::vector<MetricRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
    return std::tie(a.seed, a.method, a.task) < std::tie(b.seed, b.method, b.task);
  });
}

namespace {

constexpr const char* kHeader =
    "env,layout,seed,method,task,phi_sc,phi_traj,total_reward,success_rate,provably_safe,status";

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << kHeader << '\n';
  for (const auto& r : rows) {
    out << r.env << ',' << r.layout << ',' << r.seed << ',' << to_string(r.method) << ',' << r.task << ','
        << fmt(r.phi_sc) << ',' << fmt(r.phi_traj) << ',' << fmt(r.total_reward) << ',' << fmt(r.success_rate)
        << ',' << (r.provably_safe ? 1 : 0) << ',' << r.status << '\n';
  }
}

std::vector<MetricRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kHeader) throw ConfigError("unexpected results header in " + path.string());
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split(line);
    if (c.size() != 11) throw ConfigError("malformed results row: " + line);
    MetricRow r;
    r.env = c[0];
    r.layout = c[1];
    r.seed = std::stoull(c[2]);
    r.method = method_from_string(c[3]);
    r.task = std::stoi(c[4]);
    r.phi_sc = std::strtod(c[5].c_str(), nullptr);
    r.phi_traj = std::strtod(c[6].c_str(), nullptr);
    r.total_reward = std::strtod(c[7].c_str(), nullptr);
    r.success_rate = std::strtod(c[8].c_str(), nullptr);
    r.provably_safe = c[9] == "1";
    r.status = c[10];
    rows.push_back(std::move(r));
  }
  return rows;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

nlohmann::json aggregate(const std::vector<MetricRow>& rows) {
  std::map<std::tuple<Method, int, std::string, std::string>, std::vector<const MetricRow*>> groups;
  for (const auto& r : rows) {
    if (r.status == "ok") groups[{r.method, r.task, r.env, r.layout}].push_back(&r);
  }
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [key, members] : groups) {
    const auto stat = [&](double MetricRow::*field) {
      std::vector<double> v;
      for (const MetricRow* r : members) v.push_back(r->*field);
      const Summary s = summarize(v);
      return nlohmann::json{{"mean", s.mean}, {"std", s.std}};
    };
    out.push_back({{"env", std::get<2>(key)},
                   {"layout", std::get<3>(key)},
                   {"method", to_string(std::get<0>(key))},
                   {"task", std::get<1>(key)},
                   {"n", members.size()},
                   {"phi_sc", stat(&MetricRow::phi_sc)},
                   {"phi_traj", stat(&MetricRow::phi_traj)},
                   {"total_reward", stat(&MetricRow::total_reward)},
                   {"success_rate", stat(&MetricRow::success_rate)}});
  }
  return out;
}

}  // namespace safeadapt::metrics
