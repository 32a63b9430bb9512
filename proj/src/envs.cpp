#include "safeadapt/envs.hpp"

#include <algorithm>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "safeadapt/errors.hpp"

namespace safeadapt::envs {
namespace {

struct BuiltinLayout {
  const char* family;
  const char* name;
  int task;
  const char* text;
};

constexpr BuiltinLayout kBuiltinLayouts[] = {
#include "safeadapt/builtin_layouts.inc"
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool is_frozen_lake_char(char c) { return c == 'S' || c == 'F' || c == 'H' || c == 'G'; }
bool is_poisoned_apple_char(char c) { return c == '.' || c == 's' || c == 'p' || c == 'A'; }

CellKind cell_from_char(char c) {
  switch (c) {
    case 'S': return CellKind::Start;
    case 'F': return CellKind::Frozen;
    case 'H': return CellKind::Hole;
    case 'G': return CellKind::Goal;
    case '.': return CellKind::Empty;
    case 's': return CellKind::SafeApple;
    case 'p': return CellKind::PoisonedApple;
    case 'A': return CellKind::AgentStart;
    default: break;
  }
  throw ConfigError(std::string("invalid layout character '") + c + "'");
}

char char_from_cell(CellKind k) {
  switch (k) {
    case CellKind::Start: return 'S';
    case CellKind::Frozen: return 'F';
    case CellKind::Hole: return 'H';
    case CellKind::Goal: return 'G';
    case CellKind::Empty: return '.';
    case CellKind::SafeApple: return 's';
    case CellKind::PoisonedApple: return 'p';
    case CellKind::AgentStart: return 'A';
  }
  return '?';
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open layout file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string_view to_string(Action a) {
  switch (a) {
    case Action::Left: return "Left";
    case Action::Down: return "Down";
    case Action::Right: return "Right";
    case Action::Up: return "Up";
  }
  return "?";
}

std::string_view to_string(EnvKind k) {
  return k == EnvKind::FrozenLake ? "frozenlake" : "poisoned_apple";
}

GridLayout GridLayout::parse(std::string_view text, std::string name) {
  GridLayout layout;
  layout.name = std::move(name);
  bool saw_fl = false;
  bool saw_pa = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty()) continue;
    if (layout.cols == 0) {
      layout.cols = static_cast<int>(line.size());
    } else if (static_cast<int>(line.size()) != layout.cols) {
      throw ConfigError("layout '" + layout.name + "': ragged rows");
    }
    for (char c : line) {
      saw_fl |= is_frozen_lake_char(c);
      saw_pa |= is_poisoned_apple_char(c);
      layout.cells.push_back(cell_from_char(c));
    }
    ++layout.rows;
  }
  if (layout.rows == 0) throw ConfigError("layout '" + layout.name + "' is empty");
  if (saw_fl && saw_pa) {
    throw ConfigError("layout '" + layout.name + "' mixes Frozen Lake and Poisoned Apple cells");
  }
  layout.kind = saw_fl ? EnvKind::FrozenLake : EnvKind::PoisonedApple;

  const auto count = [&](CellKind k) { return std::count(layout.cells.begin(), layout.cells.end(), k); };
  if (layout.kind == EnvKind::FrozenLake) {
    if (count(CellKind::Start) != 1) throw ConfigError("layout '" + layout.name + "' needs exactly one S");
    if (count(CellKind::Goal) != 1) throw ConfigError("layout '" + layout.name + "' needs exactly one G");
  } else {
    if (count(CellKind::AgentStart) != 1) {
      throw ConfigError("layout '" + layout.name + "' needs exactly one A");
    }
    if (layout.num_cells() > 64) {
      throw ConfigError("layout '" + layout.name + "': Poisoned Apple grids are limited to 64 cells");
    }
  }
  return layout;
}

int GridLayout::start_cell() const {
  for (int i = 0; i < num_cells(); ++i) {
    if (at(i) == CellKind::Start || at(i) == CellKind::AgentStart) return i;
  }
  return 0;
}

std::string GridLayout::to_text() const {
  std::string out;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out.push_back(char_from_cell(at(r * cols + c)));
    out.push_back('\n');
  }
  return out;
}

EnvOptions EnvOptions::defaults(EnvKind kind) {
  if (kind == EnvKind::FrozenLake) return {100, 0.0};
  return {200, 0.01};
}

Env::Env(GridLayout layout, int task, EnvOptions options)
    : layout_(std::move(layout)), task_(task), options_(options) {
  if (task_ != 1 && task_ != 2) throw ConfigError("task id must be 1 or 2");
  if (options_.step_limit <= 0) throw ConfigError("step limit must be positive");
  for (int i = 0; i < layout_.num_cells(); ++i) {
    if (layout_.at(i) == CellKind::SafeApple) safe_apples_ |= (std::uint64_t{1} << i);
    if (layout_.at(i) == CellKind::PoisonedApple) poisoned_apples_ |= (std::uint64_t{1} << i);
  }
  initial_.cell = layout_.start_cell();
  initial_.task = task_;
  initial_.apples = safe_apples_ | poisoned_apples_;
  initial_.steps = 0;
}

std::string Env::name() const { return layout_.name + "/task" + std::to_string(task_); }

std::size_t Env::encoding_dim() const {
  const auto cells = static_cast<std::size_t>(layout_.num_cells());
  return kind() == EnvKind::FrozenLake ? cells + 2 : cells;
}

int Env::move(int cell, Action a) const {
  int r = cell / layout_.cols;
  int c = cell % layout_.cols;
  switch (a) {
    case Action::Left: c = std::max(c - 1, 0); break;
    case Action::Down: r = std::min(r + 1, layout_.rows - 1); break;
    case Action::Right: c = std::min(c + 1, layout_.cols - 1); break;
    case Action::Up: r = std::max(r - 1, 0); break;
  }
  return r * layout_.cols + c;
}

bool Env::cell_unsafe(int cell, std::uint64_t apples) const {
  if (kind() == EnvKind::FrozenLake) return layout_.at(cell) == CellKind::Hole;
  return ((poisoned_apples_ & apples) >> cell) & 1u;
}

bool Env::is_terminal(const EnvState& s) const {
  if (s.steps >= options_.step_limit) return true;
  if (kind() == EnvKind::FrozenLake) {
    const CellKind k = layout_.at(s.cell);
    return k == CellKind::Hole || k == CellKind::Goal;
  }
  return (s.apples & safe_apples_) == 0;
}

bool Env::is_success(const EnvState& s) const {
  if (kind() == EnvKind::FrozenLake) return layout_.at(s.cell) == CellKind::Goal;
  return (s.apples & safe_apples_) == 0;
}

StepOutcome Env::step(const EnvState& s, Action a) const {
  if (static_cast<std::size_t>(a) >= kNumActions) throw InvalidArgument("action out of range");
  if (is_terminal(s)) throw InvalidArgument("step() called on terminal state " + describe(s));
  StepOutcome out;
  out.next = s;
  out.next.cell = move(s.cell, a);
  out.next.steps = s.steps + 1;
  out.unsafe = cell_unsafe(out.next.cell, s.apples);

  if (kind() == EnvKind::FrozenLake) {
    const CellKind k = layout_.at(out.next.cell);
    out.reward = (k == CellKind::Goal) ? 1.0 : 0.0;
    out.done = (k == CellKind::Goal || k == CellKind::Hole);
  } else {
    const std::uint64_t bit = std::uint64_t{1} << out.next.cell;
    if (s.apples & bit) {
      out.reward += (safe_apples_ & bit) ? 1.0 : -1.0;
      out.next.apples &= ~bit;
    }
    out.reward -= options_.step_penalty;
    out.done = (out.next.apples & safe_apples_) == 0;
  }
  if (!out.done && out.next.steps >= options_.step_limit) {
    out.done = true;
    out.truncated = true;
  }
  return out;
}

bool Env::unsafety_label(const EnvState& s, Action a) const {
  return cell_unsafe(move(s.cell, a), s.apples);
}

ActionSet Env::safe_action_set(const EnvState& s) const {
  ActionSet safe;
  for (std::size_t a = 0; a < kNumActions; ++a) {
    if (!unsafety_label(s, static_cast<Action>(a))) safe.insert(a);
  }
  return safe;
}

void Env::encode(const EnvState& s, std::span<double> out) const {
  if (out.size() != encoding_dim()) throw DimensionError("encoding buffer has wrong size");
  std::fill(out.begin(), out.end(), 0.0);
  if (kind() == EnvKind::FrozenLake) {
    out[static_cast<std::size_t>(s.cell)] = 1.0;
    out[static_cast<std::size_t>(layout_.num_cells() + s.task - 1)] = 1.0;
    return;
  }
  for (int i = 0; i < layout_.num_cells(); ++i) {
    const std::uint64_t bit = std::uint64_t{1} << i;
    if (s.apples & bit) out[static_cast<std::size_t>(i)] = (safe_apples_ & bit) ? 2.0 : 3.0;
  }
  out[static_cast<std::size_t>(s.cell)] = 1.0;
}

std::vector<double> Env::encode(const EnvState& s) const {
  std::vector<double> out(encoding_dim());
  encode(s, out);
  return out;
}

nlohmann::json Env::state_key_json(const EnvState& s) const {
  return {{"cell", s.cell},
          {"row", s.cell / layout_.cols},
          {"col", s.cell % layout_.cols},
          {"task", s.task},
          {"apples", s.apples}};
}

std::string Env::describe(const EnvState& s) const {
  std::ostringstream ss;
  ss << "(" << s.cell / layout_.cols << "," << s.cell % layout_.cols << ") task" << s.task;
  if (kind() == EnvKind::PoisonedApple) ss << " apples=0x" << std::hex << s.apples;
  return ss.str();
}

std::vector<std::string> builtin_layout_names() {
  std::vector<std::string> names;
  for (const auto& b : kBuiltinLayouts) {
    if (std::find(names.begin(), names.end(), b.name) == names.end()) names.emplace_back(b.name);
  }
  return names;
}

bool is_builtin_layout(std::string_view name) {
  return std::any_of(std::begin(kBuiltinLayouts), std::end(kBuiltinLayouts),
                     [&](const BuiltinLayout& b) { return name == b.name; });
}

Env make_env(std::string_view name, int task, const EnvOptions& options) {
  if (task != 1 && task != 2) throw ConfigError("task id must be 1 or 2");
  for (const auto& b : kBuiltinLayouts) {
    if (name == b.name && task == b.task) return Env(GridLayout::parse(b.text, b.name), task, options);
  }
  if (is_builtin_layout(name)) {
    throw ConfigError("layout '" + std::string(name) + "' has no task " + std::to_string(task));
  }
  const std::filesystem::path path(name);
  if (!std::filesystem::is_regular_file(path)) {
    throw ConfigError("unknown layout '" + std::string(name) + "'");
  }
  return Env(GridLayout::parse(read_file(path), path.stem().string()), task, options);
}

Env make_env(std::string_view name, int task) {
  for (const auto& b : kBuiltinLayouts) {
    if (name == b.name && task == b.task) {
      GridLayout layout = GridLayout::parse(b.text, b.name);
      const EnvOptions options = EnvOptions::defaults(layout.kind);
      return Env(std::move(layout), task, options);
    }
  }
  if (is_builtin_layout(name)) {
    throw ConfigError("layout '" + std::string(name) + "' has no task " + std::to_string(task));
  }
  const std::filesystem::path path(name);
  if (!std::filesystem::is_regular_file(path)) {
    throw ConfigError("unknown layout '" + std::string(name) + "'");
  }
  GridLayout layout = GridLayout::parse(read_file(path), path.stem().string());
  const EnvOptions options = EnvOptions::defaults(layout.kind);
  return Env(std::move(layout), task, options);
}

std::vector<EnvState> enumerate_states(const Env& env, std::size_t cap) {
  std::map<StateKey, EnvState> seen;
  std::deque<EnvState> frontier;
  EnvState start = env.initial_state();
  start.steps = 0;
  seen.emplace(start.key(), start);
  frontier.push_back(start);
  while (!frontier.empty()) {
    const EnvState s = frontier.front();
    frontier.pop_front();
    if (env.is_terminal(s)) continue;
    for (std::size_t a = 0; a < kNumActions; ++a) {
      EnvState next = env.step(s, static_cast<Action>(a)).next;
      next.steps = 0;
      if (seen.emplace(next.key(), next).second) {
        if (seen.size() > cap) {
          throw InvalidArgument("state enumeration exceeded cap of " + std::to_string(cap));
        }
        frontier.push_back(next);
      }
    }
  }
  std::vector<EnvState> out;
  out.reserve(seen.size());
  for (const auto& [key, s] : seen) out.push_back(s);
  return out;
}

std::size_t SafetyDataset::max_safe_actions() const {
  std::size_t m = 0;
  for (const auto& e : entries) m = std::max(m, e.safe_mask.count());
  return m;
}

SafetyDataset build_safety_dataset(const Env& env) {
  SafetyDataset d;
  d.env_name = env.layout().name;
  d.task = env.task();
  d.num_actions = env.num_actions();
  const ActionSet all = ActionSet::full(env.num_actions());
  for (const EnvState& s : enumerate_states(env)) {
    if (env.is_terminal(s)) continue;
    const ActionSet safe = env.safe_action_set(s);
    if (safe.empty()) {
      throw InvalidArgument("state " + env.describe(s) + " has no safe action");
    }
    if (safe == all) continue;
    d.entries.push_back({s, env.encode(s), safe});
  }
  return d;
}

nlohmann::json to_json(const SafetyDataset& d) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : d.entries) {
    std::vector<bool> mask(d.num_actions);
    for (std::size_t a = 0; a < d.num_actions; ++a) mask[a] = e.safe_mask.contains(a);
    entries.push_back({{"state_key", {{"cell", e.state.cell}, {"task", e.state.task}, {"apples", e.state.apples}}},
                       {"encoding", e.encoding},
                       {"safe_mask", mask}});
  }
  return {{"env", d.env_name}, {"task", d.task}, {"entries", std::move(entries)}};
}

SafetyDataset safety_dataset_from_json(const nlohmann::json& j) {
  try {
    SafetyDataset d;
    d.env_name = j.at("env").get<std::string>();
    d.task = j.at("task").get<int>();
    d.num_actions = 0;
    for (const auto& e : j.at("entries")) {
      SafetyEntry entry;
      const auto& key = e.at("state_key");
      entry.state.cell = key.at("cell").get<int>();
      entry.state.task = key.at("task").get<int>();
      entry.state.apples = key.at("apples").get<std::uint64_t>();
      entry.encoding = e.at("encoding").get<std::vector<double>>();
      const auto mask = e.at("safe_mask").get<std::vector<bool>>();
      if (d.num_actions == 0) d.num_actions = mask.size();
      if (mask.size() != d.num_actions) throw ConfigError("inconsistent safe_mask widths");
      for (std::size_t a = 0; a < mask.size(); ++a) {
        if (mask[a]) entry.safe_mask.insert(a);
      }
      if (entry.safe_mask.empty() || entry.safe_mask.count() == mask.size()) {
        throw ConfigError("dataset entry is not safety-critical");
      }
      if (!d.entries.empty() && entry.encoding.size() != d.entries.front().encoding.size()) {
        throw ConfigError("inconsistent encoding widths");
      }
      d.entries.push_back(std::move(entry));
    }
    if (d.num_actions == 0) d.num_actions = kNumActions;
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed safety dataset: ") + e.what());
  }
}

}  // namespace safeadapt::envs
