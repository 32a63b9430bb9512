#include "safeadapt/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "safeadapt/errors.hpp"

namespace safeadapt::config {

envs::Env LayoutRef::env(int task) const {
  if (task1.empty()) return envs::make_env(name, task);
  return envs::make_env(task == 1 ? task1 : task2, task);
}

nn::MlpSpec ExperimentConfig::actor_spec(const envs::Env& env) const {
  nn::MlpSpec s{env.encoding_dim(), hidden, env.num_actions(), activation};
  s.validate();
  return s;
}

std::filesystem::path ExperimentConfig::experiment_dir(const LayoutRef& layout) const {
  if (layouts.size() == 1) return out_dir / name;
  return out_dir / (name + "_" + layout.name);
}

namespace {

using nlohmann::json;

// Keys a section may hold: those its serialiser writes for the defaults.
void check_keys(const json& j, const json& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

const json& section(const json& doc, const char* key) {
  static const json empty = json::object();
  return doc.contains(key) ? doc.at(key) : empty;
}

LayoutRef parse_layout(const json& j) {
  LayoutRef ref;
  if (j.is_string()) {
    ref.name = j.get<std::string>();
  } else if (j.is_object()) {
    check_keys(j, {{"name", 0}, {"task1", 0}, {"task2", 0}}, "layout entry");
    ref.task1 = j.at("task1").get<std::string>();
    ref.task2 = j.at("task2").get<std::string>();
    ref.name = j.contains("name") ? j.at("name").get<std::string>()
                                  : std::filesystem::path(ref.task1).stem().string();
  } else {
    throw ConfigError("layout entries are names or {task1, task2} objects");
  }
  return ref;
}

}  // namespace

ExperimentConfig parse_config(const json& input, bool desk_scale) {
  if (!input.is_object()) throw ConfigError("config must be a JSON object");
  json doc = input;
  if (desk_scale) {
    if (!doc.contains("desk_scale")) throw ConfigError("config has no desk_scale section");
    json patch = doc.at("desk_scale");
    doc.erase("desk_scale");
    doc.merge_patch(patch);
  } else {
    doc.erase("desk_scale");
  }

  ExperimentConfig c;
  c.desk_scale = desk_scale;
  try {
    check_keys(doc,
               {{"name", 0}, {"layouts", 0}, {"network", 0}, {"source", 0}, {"rashomon", 0}, {"adapt", 0},
                {"evaluation", 0}, {"seeds", 0}, {"out", 0}},
               "config");
    c.name = doc.at("name").get<std::string>();
    if (c.name.empty() || c.name.find('/') != std::string::npos) throw ConfigError("config.name must be a plain word");

    const json& layouts = doc.at("layouts");
    if (!layouts.is_array() || layouts.empty()) throw ConfigError("config.layouts must be a nonempty array");
    for (const auto& l : layouts) c.layouts.push_back(parse_layout(l));
    std::set<std::string> names;
    for (std::size_t i = 0; i < c.layouts.size(); ++i) {
      if (!names.insert(c.layouts[i].name).second) throw ConfigError("duplicate layout " + c.layouts[i].name);
      // Loads both tasks now so a missing layout fails before any work.
      const envs::Env e1 = c.layouts[i].env(1);
      const envs::Env e2 = c.layouts[i].env(2);
      if (e1.kind() != e2.kind() || e1.encoding_dim() != e2.encoding_dim()) {
        throw ConfigError("layout " + c.layouts[i].name + ": tasks differ in kind or size");
      }
      if (i == 0) c.kind = e1.kind();
      if (e1.kind() != c.kind) throw ConfigError("all layouts of an experiment must share one environment family");
    }

    const json& net = section(doc, "network");
    check_keys(net, {{"hidden", 0}, {"activation", 0}}, "network");
    if (net.contains("hidden")) c.hidden = net.at("hidden").get<std::vector<std::size_t>>();
    if (net.contains("activation")) c.activation = nn::activation_from_string(net.at("activation").get<std::string>());
    if (c.hidden.empty()) throw ConfigError("network.hidden needs at least one layer");
    for (std::size_t h : c.hidden) {
      if (h == 0) throw ConfigError("network.hidden widths must be positive");
    }

    const json& src = section(doc, "source");
    check_keys(src, {{"ppo", 0}, {"finetune", 0}}, "source");
    if (c.kind == envs::EnvKind::PoisonedApple) {
      c.source_ppo.max_timesteps = 20000;
      c.source_ppo.n_epochs = 6;
      c.source_ppo.early_stop = false;
      c.finetune.mode = ppo::FinetuneMode::MultiLabel;
      c.finetune.lr = 2e-3;
      c.finetune.max_epochs = 2000;
      c.finetune.batch_size = 64;
      c.finetune.stop_at_target = false;
    }
    if (src.contains("ppo")) {
      check_keys(src.at("ppo"), ppo::to_json(ppo::PpoConfig{}), "source.ppo");
      c.source_ppo = ppo::ppo_config_from_json(src.at("ppo"), c.source_ppo);
    }
    if (src.contains("finetune")) {
      check_keys(src.at("finetune"), ppo::to_json(ppo::FinetuneConfig{}), "source.finetune");
      c.finetune = ppo::finetune_config_from_json(src.at("finetune"), c.finetune);
    }

    if (c.kind == envs::EnvKind::PoisonedApple) c.rashomon.n_iters = 20000;
    const json& rc = section(doc, "rashomon");
    check_keys(rc, rashomon::to_json(rashomon::RashomonConfig{}), "rashomon");
    c.rashomon = rashomon::rashomon_config_from_json(rc, c.rashomon);

    const json& ad = section(doc, "adapt");
    check_keys(ad, {{"common", 0}, {"safe", 0}, {"unsafe", 0}, {"ewc", 0}}, "adapt");
    const json allowed_adapt = adapt::to_json(adapt::AdaptConfig{});
    for (adapt::Mode m : {adapt::Mode::Safe, adapt::Mode::Unsafe, adapt::Mode::Ewc}) {
      adapt::AdaptConfig a = adapt::AdaptConfig::defaults(c.kind, m);
      const std::string key = adapt::to_string(m);
      for (const char* part : {"common", key.c_str()}) {
        if (!ad.contains(part)) continue;
        const json& j = ad.at(part);
        check_keys(j, allowed_adapt, std::string("adapt.") + part);
        if (j.contains("mode")) throw ConfigError(std::string("adapt.") + part + ": the mode comes from the section");
        if (j.contains("ppo")) check_keys(j.at("ppo"), ppo::to_json(ppo::PpoConfig{}), std::string("adapt.") + part + ".ppo");
        a = adapt::adapt_config_from_json(j, a);
      }
      c.adapt[m] = a;
    }

    const json& ev = section(doc, "evaluation");
    check_keys(ev, {{"episodes", 0}, {"verify_samples", 0}}, "evaluation");
    c.eval_episodes = ev.value("episodes", c.eval_episodes);
    c.verify_samples = ev.value("verify_samples", c.verify_samples);
    if (c.eval_episodes < 1) throw ConfigError("evaluation.episodes must be >= 1");
    if (c.verify_samples < 0) throw ConfigError("evaluation.verify_samples must be >= 0");

    if (doc.contains("seeds")) {
      const json& s = doc.at("seeds");
      c.seeds = s.is_string() ? parse_seed_list(s.get<std::string>()) : s.get<std::vector<std::uint64_t>>();
    }
    if (c.seeds.empty()) throw ConfigError("seed list must be nonempty");
    if (doc.contains("out")) c.out_dir = doc.at("out").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.resolved = doc;
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, bool desk_scale) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(doc, desk_scale);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  const auto number = [&](const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("bad seed list '" + text + "'");
    }
    return static_cast<std::uint64_t>(std::stoull(s));
  };
  std::vector<std::uint64_t> out;
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const std::uint64_t lo = number(text.substr(0, dots));
    const std::uint64_t hi = number(text.substr(dots + 2));
    if (hi < lo || hi - lo > 100000) throw ConfigError("bad seed range '" + text + "'");
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    return out;
  }
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(number(part));
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

}  // namespace safeadapt::config
