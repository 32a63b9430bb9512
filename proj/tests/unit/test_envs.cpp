#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "doctest.h"

#include "safeadapt/envs.hpp"
#include "safeadapt/errors.hpp"

using namespace safeadapt;
using namespace safeadapt::envs;

namespace {

EnvState at_cell(const Env& env, int r, int c) {
  EnvState s = env.initial_state();
  s.cell = r * env.layout().cols + c;
  return s;
}

Env from_text(const std::string& text, int task = 1) { return Env(GridLayout::parse(text, "inline"), task); }

// Plain re-statement of the grid rules: the successor cell of (r, c) under a.
std::pair<int, int> oracle_move(int rows, int cols, int r, int c, int a) {
  switch (a) {
    case 0: return {r, c > 0 ? c - 1 : c};
    case 1: return {r + 1 < rows ? r + 1 : r, c};
    case 2: return {r, c + 1 < cols ? c + 1 : c};
    default: return {r > 0 ? r - 1 : r, c};
  }
}

}  // namespace

TEST_CASE("make_env builds the built-in layouts") {
  const Env fl = make_env("standard_4x4", 1);
  CHECK(fl.kind() == EnvKind::FrozenLake);
  CHECK(fl.layout().num_cells() == 16);
  CHECK(fl.encoding_dim() == 18);
  CHECK(fl.num_actions() == 4);

  const Env pa = make_env("simple_5x5", 1);
  CHECK(pa.kind() == EnvKind::PoisonedApple);
  CHECK(pa.encoding_dim() == 25);

  for (const auto& name : {"diagonal_4x4", "diagonal_6x6", "diagonal_8x8"}) {
    for (int task : {1, 2}) CHECK_NOTHROW(make_env(name, task));
  }
  CHECK_THROWS_AS(make_env("no_such_map", 1), ConfigError);
  CHECK_THROWS_AS(make_env("standard_4x4", 3), ConfigError);
}

TEST_CASE("layout parsing rejects malformed grids") {
  CHECK_THROWS_AS(GridLayout::parse("SFF\nFG\n", "ragged"), ConfigError);
  CHECK_THROWS_AS(GridLayout::parse("SFX\nFFG\n", "bad"), ConfigError);
  CHECK_THROWS_AS(GridLayout::parse("FFF\nFFG\n", "nostart"), ConfigError);
  CHECK_THROWS_AS(GridLayout::parse("SGF\nFFG\n", "twogoals"), ConfigError);
  CHECK_THROWS_AS(GridLayout::parse("S.\nFG\n", "mixed"), ConfigError);
  CHECK_THROWS_AS(GridLayout::parse("", "empty"), ConfigError);
  const GridLayout g = GridLayout::parse("  SFFF\n\nFHFH\nFFFH\nHFFG  \n", "ws");
  CHECK(g.rows == 4);
  CHECK(g.to_text() == "SFFF\nFHFH\nFFFH\nHFFG\n");
}

TEST_CASE("layout files load by path") {
  const auto path = std::filesystem::temp_directory_path() / "safeadapt_test_layout.txt";
  {
    std::ofstream out(path);
    out << "SH\nFG\n";
  }
  const Env env = make_env(path.string(), 1);
  CHECK(env.layout().rows == 2);
  CHECK(env.encoding_dim() == 6);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(make_env(path.string(), 1), ConfigError);
}

TEST_CASE("Frozen Lake transitions on the standard map") {
  const Env env = make_env("standard_4x4", 1);
  const auto down = env.step(at_cell(env, 0, 1), Action::Down);
  CHECK(down.next.cell == 5);
  CHECK(down.reward == 0.0);
  CHECK(down.done);
  CHECK(down.unsafe);

  const auto up = env.step(at_cell(env, 0, 0), Action::Up);
  CHECK(up.next.cell == 0);
  CHECK(up.reward == 0.0);
  CHECK_FALSE(up.done);
  CHECK_FALSE(up.unsafe);

  const auto goal = env.step(at_cell(env, 3, 2), Action::Right);
  CHECK(goal.reward == 1.0);
  CHECK(goal.done);
  CHECK_FALSE(goal.unsafe);

  CHECK_THROWS_AS(env.step(at_cell(env, 1, 1), Action::Left), InvalidArgument);
}

TEST_CASE("Frozen Lake truncates at the step limit without reward") {
  const Env env(GridLayout::parse("SFF\nFFG\n", "tiny"), 1, EnvOptions{3, 0.0});
  EnvState s = env.initial_state();
  StepOutcome o;
  for (int i = 0; i < 3; ++i) o = env.step(s = (i == 0 ? s : o.next), Action::Up);
  CHECK(o.done);
  CHECK(o.truncated);
  CHECK(o.reward == 0.0);
}

TEST_CASE("Poisoned Apple rewards and apple bookkeeping") {
  const Env env = from_text(".....\n.....\n.As..\n.p...\n.....\n");
  const EnvState s0 = env.initial_state();
  const double pen = env.options().step_penalty;
  CHECK(pen == doctest::Approx(0.01));
  CHECK(env.options().step_limit == 200);

  const auto safe = env.step(s0, Action::Right);
  CHECK(safe.reward == doctest::Approx(1.0 - pen).epsilon(1e-15));
  CHECK_FALSE(safe.unsafe);
  CHECK((safe.next.apples >> 12 & 1u) == 0);  // apple at (2,2) removed
  CHECK(safe.done);                            // the only safe apple

  const auto poison = env.step(s0, Action::Down);
  CHECK(poison.unsafe);
  CHECK_FALSE(poison.done);
  CHECK(poison.reward == doctest::Approx(-1.0 - pen).epsilon(1e-15));
  CHECK(env.unsafety_label(s0, Action::Down));
  // Once eaten the cell is harmless.
  CHECK_FALSE(env.unsafety_label(poison.next, Action::Up));
  const auto back = env.step(poison.next, Action::Up);
  const auto again = env.step(back.next, Action::Down);
  CHECK_FALSE(again.unsafe);
}

TEST_CASE("encodings") {
  const Env fl = make_env("standard_4x4", 2);
  const auto x = fl.encode(at_cell(fl, 2, 1));
  double sum = 0.0;
  for (double v : x) sum += v;
  CHECK(sum == 2.0);
  CHECK(x[9] == 1.0);
  CHECK(x[16] == 0.0);
  CHECK(x[17] == 1.0);

  const Env pa = make_env("simple_5x5", 1);
  const auto y = pa.encode(pa.initial_state());
  std::map<double, int> counts;
  for (double v : y) counts[v]++;
  CHECK(counts[1.0] == 1);
  CHECK(counts[2.0] == 2);
  CHECK(counts[3.0] == 2);
  CHECK(counts[0.0] == 20);
}

TEST_CASE("step determinism and label consistency over every enumerated state") {
  for (const auto& [name, task] : std::vector<std::pair<std::string, int>>{
           {"standard_4x4", 1}, {"standard_4x4", 2}, {"simple_5x5", 1}, {"simple_5x5", 2}, {"diagonal_6x6", 1}}) {
    const Env env = make_env(name, task);
    for (const EnvState& s : enumerate_states(env)) {
      if (env.is_terminal(s)) continue;
      for (std::size_t a = 0; a < 4; ++a) {
        const auto o1 = env.step(s, static_cast<Action>(a));
        const auto o2 = env.step(s, static_cast<Action>(a));
        CHECK(o1.next == o2.next);
        CHECK(o1.reward == o2.reward);
        CHECK(o1.done == o2.done);
        CHECK(env.unsafety_label(s, static_cast<Action>(a)) == o1.unsafe);
        if (env.kind() == EnvKind::FrozenLake && o1.unsafe) CHECK(o1.done);
      }
    }
  }
}

TEST_CASE("safe action sets") {
  const Env g = from_text("SFF\nFFH\nFHG\n");
  CHECK(g.safe_action_set(at_cell(g, 1, 1)).bits() == 0b1001);  // Left, Up
  const Env open = from_text("SFF\nFFF\nFFG\n");
  CHECK(open.safe_action_set(at_cell(open, 1, 1)) == ActionSet::full(4));
  const Env three = from_text("SHF\nHFH\nFHG\n");
  // (0,2): Left -> hole, Down -> hole, Right/Up stay put -> safe.
  CHECK(three.safe_action_set(at_cell(three, 0, 2)).bits() == 0b1100);
  const Env single = from_text("SHF\nHFH\nFFG\n");
  CHECK(single.safe_action_set(at_cell(single, 1, 1)).bits() == 0b0010);  // only Down
  const Env boxed = from_text("SFFFF\nFFHFF\nFHFHF\nFFHFF\nFFFFG\n");
  CHECK(boxed.safe_action_set(at_cell(boxed, 2, 2)).empty());
}

TEST_CASE("safety dataset of the standard map matches an exhaustive oracle") {
  const Env env = make_env("standard_4x4", 1);
  const SafetyDataset d = build_safety_dataset(env);
  const std::string map = "SFFFFHFHFFFHHFFG";

  // Oracle: BFS over cells from (0,0), never leaving holes or the goal.
  std::set<int> reach{0};
  std::vector<int> queue{0};
  while (!queue.empty()) {
    const int c = queue.back();
    queue.pop_back();
    if (map[c] == 'H' || map[c] == 'G') continue;
    for (int a = 0; a < 4; ++a) {
      const auto [r, cc] = oracle_move(4, 4, c / 4, c % 4, a);
      if (reach.insert(r * 4 + cc).second) queue.push_back(r * 4 + cc);
    }
  }
  std::map<int, unsigned> expected;
  for (int c : reach) {
    if (map[c] == 'H' || map[c] == 'G') continue;
    unsigned safe = 0;
    for (int a = 0; a < 4; ++a) {
      const auto [r, cc] = oracle_move(4, 4, c / 4, c % 4, a);
      if (map[r * 4 + cc] != 'H') safe |= 1u << a;
    }
    if (safe != 0xF) expected[c] = safe;
  }
  REQUIRE(d.size() == expected.size());
  std::set<int> cells;
  for (const auto& e : d.entries) {
    CHECK(expected.at(e.state.cell) == e.safe_mask.bits());
    CHECK(e.safe_mask.count() >= 1);
    CHECK(e.safe_mask.count() <= 3);
    CHECK(cells.insert(e.state.cell).second);
  }
  CHECK(expected.at(1) == 0b1101);  // (0,1): everything except Down
  CHECK(d.max_safe_actions() == 3);
}

TEST_CASE("safety dataset edge cases") {
  CHECK(build_safety_dataset(from_text("SFF\nFFF\nFFG\n")).empty());
  // Start cell walled in by holes: no safe action anywhere.
  CHECK_THROWS_AS(build_safety_dataset(from_text("FHF\nHSH\nFHG\n")), InvalidArgument);
  // A walled-in cell the agent never reaches is not an error.
  CHECK_NOTHROW(build_safety_dataset(from_text("SFFFF\nFFHFF\nFHFHF\nFFHFF\nFFFFG\n")));
  CHECK_THROWS_AS(build_safety_dataset(from_text("..p..\n.pAp.\n..p..\n....s\n")), InvalidArgument);
}

TEST_CASE("state enumeration") {
  const Env fl = make_env("standard_4x4", 1);
  const auto states = enumerate_states(fl);
  CHECK(states.size() <= 16);
  for (std::size_t i = 1; i < states.size(); ++i) CHECK(states[i - 1].key() < states[i].key());

  const Env pa = make_env("simple_5x5", 1);
  const auto ps = enumerate_states(pa);
  CHECK(ps.size() <= 25 * 16);
  // Every state holds only apples the layout placed.
  const std::uint64_t initial = pa.initial_state().apples;
  for (const auto& s : ps) CHECK((s.apples & ~initial) == 0);

  const Env one(GridLayout::parse("A\n", "one"), 1);
  CHECK(enumerate_states(one).size() == 1);
  CHECK_THROWS_AS(enumerate_states(pa, 10), InvalidArgument);
}

TEST_CASE("safety dataset JSON round trip") {
  const Env env = make_env("simple_5x5", 1);
  const SafetyDataset d = build_safety_dataset(env);
  REQUIRE_FALSE(d.empty());
  const SafetyDataset back = safety_dataset_from_json(to_json(d));
  REQUIRE(back.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(back.entries[i].state.key() == d.entries[i].state.key());
    CHECK(back.entries[i].encoding == d.entries[i].encoding);
    CHECK(back.entries[i].safe_mask == d.entries[i].safe_mask);
  }
  auto bad = to_json(d);
  bad["entries"][0]["safe_mask"] = {true, true, true, true};
  CHECK_THROWS_AS(safety_dataset_from_json(bad), ConfigError);
}
