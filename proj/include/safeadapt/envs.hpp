#pragma once

// Deterministic grid-world MDPs: Frozen Lake (position + task id) and
// Poisoned Apple (agent position + remaining apples). Environments are
// immutable; step() maps a state to its successor.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "safeadapt/action_set.hpp"

namespace safeadapt::envs {

inline constexpr std::size_t kNumActions = 4;

/// Action ordering follows Discrete(4): Left, Down, Right, Up.
enum class Action : std::uint8_t { Left = 0, Down = 1, Right = 2, Up = 3 };

std::string_view to_string(Action a);

enum class EnvKind { FrozenLake, PoisonedApple };

std::string_view to_string(EnvKind k);

enum class CellKind : std::uint8_t {
  // Frozen Lake
  Start,
  Frozen,
  Hole,
  Goal,
  // Poisoned Apple
  Empty,
  SafeApple,
  PoisonedApple,
  AgentStart,
};

struct GridLayout {
  std::string name;
  EnvKind kind = EnvKind::FrozenLake;
  int rows = 0;
  int cols = 0;
  std::vector<CellKind> cells;  // row-major

  /// Parses rows of S/F/H/G (Frozen Lake) or ./s/p/A (Poisoned Apple).
  /// Blank lines and surrounding whitespace are ignored.
  static GridLayout parse(std::string_view text, std::string name);

  int num_cells() const { return rows * cols; }
  int start_cell() const;
  CellKind at(int cell) const { return cells[static_cast<std::size_t>(cell)]; }
  std::string to_text() const;
};

/// Key used for deduplication and ordering: (cell, task, apple mask).
struct StateKey {
  int cell = 0;
  int task = 1;
  std::uint64_t apples = 0;

  friend auto operator<=>(const StateKey&, const StateKey&) = default;
};

struct EnvState {
  int cell = 0;
  int task = 1;
  std::uint64_t apples = 0;  // remaining apples, bit i = cell i (Poisoned Apple only)
  int steps = 0;

  StateKey key() const { return {cell, task, apples}; }
  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct StepOutcome {
  EnvState next;
  double reward = 0.0;
  bool done = false;
  bool unsafe = false;     // next state is in the unsafe region
  bool truncated = false;  // done only because of the step limit
};

struct EnvOptions {
  int step_limit = 100;
  double step_penalty = 0.0;

  static EnvOptions defaults(EnvKind kind);
};

class Env {
 public:
  Env(GridLayout layout, int task, EnvOptions options);
  Env(GridLayout layout, int task) : Env(layout, task, EnvOptions::defaults(layout.kind)) {}

  const GridLayout& layout() const { return layout_; }
  EnvKind kind() const { return layout_.kind; }
  int task() const { return task_; }
  const EnvOptions& options() const { return options_; }
  std::size_t num_actions() const { return kNumActions; }

  /// "<layout name>/task<k>"
  std::string name() const;

  std::size_t encoding_dim() const;
  EnvState initial_state() const { return initial_; }

  /// Goal/hole reached, no safe apples left, or step limit hit.
  bool is_terminal(const EnvState& s) const;
  /// Frozen Lake: at the goal. Poisoned Apple: every safe apple collected.
  bool is_success(const EnvState& s) const;

  StepOutcome step(const EnvState& s, Action a) const;

  /// True iff the (deterministic) successor lies in the unsafe region.
  bool unsafety_label(const EnvState& s, Action a) const;
  ActionSet safe_action_set(const EnvState& s) const;

  std::vector<double> encode(const EnvState& s) const;
  void encode(const EnvState& s, std::span<double> out) const;

  nlohmann::json state_key_json(const EnvState& s) const;
  std::string describe(const EnvState& s) const;

 private:
  int move(int cell, Action a) const;
  bool cell_unsafe(int cell, std::uint64_t apples) const;
  std::uint64_t safe_apple_mask() const { return safe_apples_; }

  GridLayout layout_;
  int task_;
  EnvOptions options_;
  EnvState initial_;
  std::uint64_t safe_apples_ = 0;
  std::uint64_t poisoned_apples_ = 0;
};

/// Built-in layout names: standard_4x4, diagonal_4x4, diagonal_6x6,
/// diagonal_8x8 (Frozen Lake); simple_5x5 (Poisoned Apple). Any other name is
/// treated as a path to a layout file.
Env make_env(std::string_view name, int task);
Env make_env(std::string_view name, int task, const EnvOptions& options);

std::vector<std::string> builtin_layout_names();
bool is_builtin_layout(std::string_view name);

/// BFS from the initial state; step counters are ignored for deduplication.
/// Terminal states are included but not expanded. Sorted by (cell, task,
/// apple mask).
std::vector<EnvState> enumerate_states(const Env& env, std::size_t cap = 1'000'000);

struct SafetyEntry {
  EnvState state;
  std::vector<double> encoding;
  ActionSet safe_mask;
};

/// All reachable safety-critical states paired with their safe actions.
struct SafetyDataset {
  std::string env_name;
  int task = 1;
  std::size_t num_actions = kNumActions;
  std::vector<SafetyEntry> entries;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
  /// max over entries of |safe set|
  std::size_t max_safe_actions() const;
  std::size_t input_dim() const { return entries.empty() ? 0 : entries.front().encoding.size(); }
};

/// Throws InvalidArgument naming the state when some reachable state has no
/// safe action.
SafetyDataset build_safety_dataset(const Env& env);

nlohmann::json to_json(const SafetyDataset& d);
SafetyDataset safety_dataset_from_json(const nlohmann::json& j);

}  // namespace safeadapt::envs
