#include <doctest.h>

#include <algorithm>
#include <deque>
#include <sstream>
#include <unordered_map>

#include "latplan/common/error.hpp"
#include "latplan/common/rng.hpp"
#include "latplan/domains.hpp"
#include "latplan/strips.hpp"

using namespace latplan;
using namespace latplan::strips;

namespace {

GroundAction example_action() {
  // (0011 -> 0101)
  return {"action-0011-0101", {2, 3}, {0, 1}, {1}, {2}};
}

// LightsOut n x n as STRIPS: one action per (cell, value pattern of the
// pressed plus), since a toggle is not expressible with a single action.
std::vector<GroundAction> lights_out_actions(int n) {
  std::vector<GroundAction> out;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      std::vector<int> cells{r * n + c};
      if (r > 0) cells.push_back((r - 1) * n + c);
      if (r + 1 < n) cells.push_back((r + 1) * n + c);
      if (c > 0) cells.push_back(r * n + c - 1);
      if (c + 1 < n) cells.push_back(r * n + c + 1);
      for (int v = 0; v < (1 << cells.size()); ++v) {
        GroundAction a;
        a.name = "press-" + std::to_string(r) + "-" + std::to_string(c) + "-" + std::to_string(v);
        for (std::size_t k = 0; k < cells.size(); ++k) {
          if ((v >> k) & 1) {
            a.pos.push_back(cells[k]);
            a.del.push_back(cells[k]);
          } else {
            a.neg.push_back(cells[k]);
            a.add.push_back(cells[k]);
          }
        }
        a.pos = normalized(a.pos);
        a.neg = normalized(a.neg);
        a.add = normalized(a.add);
        a.del = normalized(a.del);
        out.push_back(a);
      }
    }
  }
  return out;
}

// Hanoi with propositions on(d, t) = d * towers + t.
std::vector<GroundAction> hanoi_actions(int disks, int towers) {
  std::vector<GroundAction> out;
  for (int d = 0; d < disks; ++d) {
    for (int from = 0; from < towers; ++from) {
      for (int to = 0; to < towers; ++to) {
        if (from == to) continue;
        GroundAction a;
        a.name = "move-" + std::to_string(d) + "-" + std::to_string(from) + "-" + std::to_string(to);
        a.pos = {d * towers + from};
        for (int s = 0; s < d; ++s) {
          a.neg.push_back(s * towers + from);
          a.neg.push_back(s * towers + to);
        }
        a.neg = normalized(a.neg);
        a.add = {d * towers + to};
        a.del = {d * towers + from};
        out.push_back(a);
      }
    }
  }
  return out;
}

State hanoi_state(const domains::Config& c, int towers) {
  State s(static_cast<int>(c.size()) * towers);
  for (std::size_t d = 0; d < c.size(); ++d) s.set(static_cast<int>(d) * towers + c[d]);
  return s;
}

GroundAction random_action(Rng& rng, int F, const std::string& name) {
  GroundAction a;
  a.name = name;
  for (int f = 0; f < F; ++f) {
    switch (rng.below(3)) {
      case 0: a.pos.push_back(f); break;
      case 1: a.neg.push_back(f); break;
      default: break;
    }
    switch (rng.below(3)) {
      case 0: a.add.push_back(f); break;
      case 1: a.del.push_back(f); break;
      default: break;
    }
  }
  return a;
}

}  // namespace

TEST_CASE("applicability and progression of the 0011 -> 0101 action") {
  const State s = State::from_string("0011");
  const GroundAction a = example_action();
  CHECK(is_applicable(s, a));
  CHECK(progress(s, a).to_string() == "0101");
  CHECK(is_applicable(s, GroundAction{"noop", {}, {}, {}, {}}));
  CHECK_FALSE(is_applicable(s, GroundAction{"needs-z0", {0}, {}, {}, {}}));
  CHECK_THROWS_AS(progress(State::from_string("1111"), a), SimulationError);
  CHECK(progress(s, GroundAction{"noop", {}, {}, {}, {}}) == s);
}

TEST_CASE("progress is idempotent when its effects already hold") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    GroundAction a = random_action(rng, 10, "a");
    a.pos.clear();
    a.neg.clear();
    State s(10);
    for (int f = 0; f < 10; ++f) s.set(f, rng.below(2));
    for (int f : a.add) s.set(f, true);
    for (int f : a.del) s.set(f, false);
    CHECK(progress(s, a) == s);
  }
}

TEST_CASE("complete-state regression inverts progression") {
  // per-bit table: precondition in {pos, neg, prevail} x effect in {add, del, none}
  const int F = 3;
  int checked = 0;
  for (int code = 0; code < 729; ++code) {
    GroundAction a{"a", {}, {}, {}, {}};
    Props prevail;
    int rest = code;
    for (int f = 0; f < F; ++f) {
      const int pre = rest % 3;
      const int eff = (rest / 3) % 3;
      rest /= 9;
      if (pre == 0) a.pos.push_back(f);
      if (pre == 1) a.neg.push_back(f);
      if (pre == 2) prevail.push_back(f);
      if (eff == 0) a.add.push_back(f);
      if (eff == 1) a.del.push_back(f);
    }
    for (int tv = 0; tv < 8; ++tv) {
      State t(F);
      for (int f = 0; f < F; ++f) t.set(f, (tv >> f) & 1);
      const State s = regress_complete(t, a, prevail);
      if (!is_applicable(s, a)) continue;
      if (progress(s, a) != t) continue;  // t is not a consistent post-state of a
      ++checked;
      // consistent t: the predecessor is unique and maps back onto t
      CHECK(progress(regress_complete(t, a, prevail), a) == t);
    }
  }
  CHECK(checked > 0);

  // the "+ + p=1" row: pos and add on a bit whose successor value is 1
  GroundAction plus{"p", {0}, {}, {0}, {}};
  CHECK(regress_complete(State::from_string("1"), plus, {}).to_string() == "1");
  // all-prevail action is the identity
  const State t = State::from_string("101101");
  CHECK(regress_complete(t, GroundAction{"id", {}, {}, {}, {}}, {0, 1, 2, 3, 4, 5}) == t);
  CHECK_THROWS_AS(regress_complete(t, GroundAction{"id", {}, {}, {}, {}}, {0, 1}), ConfigError);
}

TEST_CASE("regression inverse relation at F = 12") {
  Rng rng(17);
  for (int i = 0; i < 500; ++i) {
    const int F = 12;
    GroundAction a{"a", {}, {}, {}, {}};
    Props prevail;
    State s(F);
    for (int f = 0; f < F; ++f) {
      const auto pre = rng.below(3);
      const bool v = pre == 0 ? true : pre == 1 ? false : rng.below(2) == 1;
      s.set(f, v);
      if (pre == 0) a.pos.push_back(f);
      if (pre == 1) a.neg.push_back(f);
      if (pre == 2) prevail.push_back(f);
      const auto eff = rng.below(3);
      // prevail bits keep their value
      if (pre != 2 && eff == 0) a.add.push_back(f);
      if (pre != 2 && eff == 1) a.del.push_back(f);
    }
    const State t = progress(s, a);
    CHECK(regress_complete(t, a, prevail) == s);
  }
}

TEST_CASE("goal count is zero exactly on goal states") {
  PlanningProblem p{4, {}, State::from_string("0000"), {1, 3}, {0}};
  for (int v = 0; v < 16; ++v) {
    State s(4);
    for (int f = 0; f < 4; ++f) s.set(f, (v >> f) & 1);
    const bool entails = s.get(1) && s.get(3) && !s.get(0);
    CHECK((goal_count(s, p) == 0) == entails);
    CHECK(satisfies_goal(s, p) == entails);
  }
}

TEST_CASE("astar trivial cases") {
  PlanningProblem same{3, {}, State::from_string("010"), {1}, {0, 2}};
  auto r = astar(same, Heuristic::blind);
  CHECK(r.status == SearchStatus::solved);
  CHECK(r.plan.empty());
  PlanningProblem cut{2, {}, State::from_string("00"), {0}, {}};
  CHECK(astar(cut, Heuristic::blind).status == SearchStatus::exhausted);
  CHECK(astar(cut, Heuristic::goal_count).status == SearchStatus::exhausted);
}

TEST_CASE("blind astar matches breadth-first distances on LightsOut and Hanoi") {
  Rng rng(42);
  {
    domains::DomainSpec spec;
    auto dom = domains::make_domain(spec);
    const auto actions = lights_out_actions(3);
    for (int i = 0; i < 50; ++i) {
      const auto c = dom->sample_state(rng);
      PlanningProblem p{9, actions, State::from_bits(c), {}, {0, 1, 2, 3, 4, 5, 6, 7, 8}};
      const auto r = astar(p, Heuristic::blind);
      REQUIRE(r.status == SearchStatus::solved);
      CHECK(static_cast<int>(r.plan.size()) == domains::bfs_distance(*dom, c, dom->goal()));
      const auto trace = simulate(r.plan, p.init, p.actions);
      CHECK(satisfies_goal(trace.back(), p));
      const auto gc = astar(p, Heuristic::goal_count);
      CHECK(gc.status == SearchStatus::solved);
      CHECK(satisfies_goal(simulate(gc.plan, p.init, p.actions).back(), p));
    }
  }
  {
    domains::DomainSpec spec;
    spec.kind = domains::DomainKind::hanoi;
    auto dom = domains::make_domain(spec);
    const auto actions = hanoi_actions(3, 3);
    const State goal = hanoi_state(dom->goal(), 3);
    for (int i = 0; i < 50; ++i) {
      const auto c = dom->sample_state(rng);
      PlanningProblem p{9, actions, hanoi_state(c, 3), goal.props(), {}};
      for (int f = 0; f < 9; ++f) {
        if (!goal.get(f)) p.goal_neg.push_back(f);
      }
      const auto r = astar(p, Heuristic::blind);
      REQUIRE(r.status == SearchStatus::solved);
      CHECK(static_cast<int>(r.plan.size()) == domains::bfs_distance(*dom, c, dom->goal()));
    }
  }
}

TEST_CASE("astar ties prefer lower h then earlier generation") {
  // two one-step plans; both reach the goal, the first listed wins
  PlanningProblem p{2, {{"first", {}, {}, {0}, {}}, {"second", {}, {}, {0, 1}, {}}}, State(2), {0}, {}};
  auto r = astar(p, Heuristic::blind);
  REQUIRE(r.plan.size() == 1);
  CHECK(r.plan[0] == 0);
  auto again = astar(p, Heuristic::blind);
  CHECK(again.plan == r.plan);
}

TEST_CASE("astar respects its expansion budget") {
  const auto actions = lights_out_actions(3);
  PlanningProblem p{9, actions, State::from_string("111111111"), {}, {0, 1, 2, 3, 4, 5, 6, 7, 8}};
  SearchLimits tight;
  tight.max_expansions = 3;
  const auto r = astar(p, Heuristic::blind, tight);
  CHECK(r.status == SearchStatus::timeout);
  CHECK(r.expansions == 3);
}

TEST_CASE("simulate reports the failing step") {
  const auto a = example_action();
  const std::vector<GroundAction> acts{a, {"back", {1}, {2}, {2}, {1}}};
  const State s = State::from_string("0011");
  CHECK(simulate({}, s, acts) == std::vector<State>{s});
  const auto trace = simulate({0}, s, acts);
  REQUIRE(trace.size() == 2);
  CHECK(trace[1].to_string() == "0101");
  CHECK(simulate({0, 1}, s, acts).back().to_string() == "0011");
  try {
    simulate({0, 1, 1}, s, acts);
    FAIL("expected a simulation error");
  } catch (const SimulationError& e) {
    CHECK(e.step() == 2);
    CHECK(std::string(e.what()).find("(z1)") != std::string::npos);
  }
}

TEST_CASE("PDDL emission of the example action") {
  Domain d{"latent", 4, {example_action()}};
  const std::string text = emit_domain(d);
  CHECK(text.find("(:action action-0011-0101") != std::string::npos);
  CHECK(text.find(":precondition (and (not (z0)) (not (z1)) (z2) (z3))") != std::string::npos);
  CHECK(text.find(":effect (and (z1) (not (z2)))") != std::string::npos);
  CHECK(text.find("(:requirements :strips :negative-preconditions)") != std::string::npos);
  const Domain back = parse_domain(text);
  CHECK(back.F == 4);
  REQUIRE(back.actions.size() == 1);
  CHECK(back.actions[0] == example_action());
  Problem prob{"p", "latent", State::from_string("0011"), {1, 3}, {0, 2}};
  const Problem pb = parse_problem(emit_problem(prob), 4);
  CHECK(pb.init == prob.init);
  CHECK(pb.goal_pos == prob.goal_pos);
  CHECK(pb.goal_neg == prob.goal_neg);
  const auto plan = astar(make_problem(back, pb), Heuristic::blind);
  REQUIRE(plan.status == SearchStatus::solved);
  CHECK(simulate(plan.plan, pb.init, back.actions).back().to_string() == "0101");
}

TEST_CASE("parser accepts the plural keywords") {
  const std::string text = R"((define (domain latent)
  (:requirements :strips :negative-preconditions)
  (:predicates (z0) (z1) (z2) (z3))
  (:action action-0011-0101
    :parameters ()
    :preconditions (and (not (z0)) (not (z1)) (z2) (z3))
    :effects       (and (z1) (not (z2)))))
)";
  const Domain d = parse_domain(text);
  REQUIRE(d.actions.size() == 1);
  CHECK(d.actions[0] == example_action());
}

TEST_CASE("empty domain is valid PDDL") {
  Domain d{"latent", 3, {}};
  const auto text = emit_domain(d);
  const Domain back = parse_domain(text);
  CHECK(back.F == 3);
  CHECK(back.actions.empty());
  CHECK(emit_domain(back) == text);
}

TEST_CASE("round-trip fuzz: emit, parse, emit is a fixpoint") {
  Rng rng(99);
  for (int i = 0; i < 100; ++i) {
    const int F = 1 + static_cast<int>(rng.below(40));
    Domain d{"fuzz", F, {}};
    const int n = static_cast<int>(rng.below(12));
    for (int k = 0; k < n; ++k) d.actions.push_back(random_action(rng, F, "a" + std::to_string(k)));
    const std::string once = emit_domain(d);
    const Domain back = parse_domain(once);
    CHECK(back.actions == d.actions);
    CHECK(emit_domain(back) == once);

    Problem p{"inst", "fuzz", State(F), {}, {}};
    for (int f = 0; f < F; ++f) {
      p.init.set(f, rng.below(2));
      const auto g = rng.below(3);
      if (g == 0) p.goal_pos.push_back(f);
      if (g == 1) p.goal_neg.push_back(f);
    }
    const std::string ptext = emit_problem(p);
    CHECK(emit_problem(parse_problem(ptext, F)) == ptext);
  }
}

TEST_CASE("parse errors carry line and column") {
  auto error_at = [](const std::string& text) -> std::pair<std::size_t, std::size_t> {
    try {
      parse_domain(text);
    } catch (const ParseError& e) {
      return {e.line(), e.column()};
    }
    return {0, 0};
  };
  CHECK(error_at("(define (domain d)\n  (:predicates (z0))\n  (:action a :precondition (and (q)) :effect (and)))") ==
        std::pair<std::size_t, std::size_t>{3, 34});
  CHECK(error_at("(define (domain d)\n  (:predicates (z0)") == std::pair<std::size_t, std::size_t>{2, 3});
  CHECK(error_at("(define (domain d))\n)") == std::pair<std::size_t, std::size_t>{2, 1});
  CHECK(error_at("(define (domain d)\n (:predicates (z0))\n (:action a :effect (and (z0) (not (z0)))))").first == 3);
  CHECK(error_at("") == std::pair<std::size_t, std::size_t>{1, 1});
  CHECK_THROWS_AS(parse_problem("(define (problem p) (:domain d) (:init (z5)) (:goal (and)))", 3), ParseError);
}

TEST_CASE("plan files") {
  std::ostringstream out;
  write_plan(out, {"a0", "a1"});
  CHECK(out.str() == "(a0)\n(a1)\n");
  std::istringstream in("(a0)\n\n; cost = 2 (unit cost)\na1\n");
  CHECK(read_plan(in) == std::vector<std::string>{"a0", "a1"});
  const std::vector<GroundAction> acts{{"a0", {}, {}, {}, {}}, {"a1", {}, {}, {}, {}}};
  CHECK(resolve_plan({"a1", "a0"}, acts) == std::vector<int>{1, 0});
  CHECK_THROWS_AS(resolve_plan({"zz"}, acts), ConfigError);
}

TEST_CASE("structures reject inconsistent actions") {
  CHECK_THROWS_AS(GroundAction({"bad", {0}, {0}, {}, {}}).validate(2), ConfigError);
  CHECK_THROWS_AS(GroundAction({"bad", {}, {}, {1}, {1}}).validate(2), ConfigError);
  CHECK_THROWS_AS(GroundAction({"bad", {5}, {}, {}, {}}).validate(2), ConfigError);
  CHECK_THROWS_AS(GroundAction({"1bad", {}, {}, {}, {}}).validate(2), ConfigError);
}
