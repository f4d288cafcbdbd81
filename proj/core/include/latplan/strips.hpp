#pragma once

// Grounded propositional STRIPS: states, actions, progression, complete-state
// regression, plan simulation, A* search and PDDL text I/O.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace latplan::strips {

/// Fixed-width bit vector. Proposition f is bit f; the string form lists z0
/// first ("0011" has z2 and z3 true).
class State {
 public:
  State() = default;
  explicit State(int width) : width_(width), words_(static_cast<std::size_t>((width + 63) / 64), 0) {}

  static State from_string(const std::string& bits);
  static State from_bits(const std::vector<int>& bits);

  int width() const { return width_; }
  bool get(int f) const { return (words_[f >> 6] >> (f & 63)) & 1U; }
  void set(int f, bool v = true) {
    const std::uint64_t m = std::uint64_t{1} << (f & 63);
    words_[f >> 6] = v ? (words_[f >> 6] | m) : (words_[f >> 6] & ~m);
  }
  int count() const;

  const std::vector<std::uint64_t>& words() const { return words_; }
  std::vector<std::uint64_t>& words() { return words_; }

  std::string to_string() const;
  std::vector<int> to_bits() const;
  /// Indices of the true propositions.
  std::vector<int> props() const;

  bool operator==(const State&) const = default;

 private:
  int width_ = 0;
  std::vector<std::uint64_t> words_;
};

struct StateHash {
  std::size_t operator()(const State& s) const noexcept;
};

/// Sorted, duplicate-free proposition indices.
using Props = std::vector<int>;

/// Sorts and removes duplicates.
Props normalized(Props p);

struct GroundAction {
  std::string name;
  Props pos;
  Props neg;
  Props add;
  Props del;

  /// Throws ConfigError if an index is outside [0, F), pos/neg or add/del
  /// overlap, or the name is not a PDDL identifier.
  void validate(int F) const;
  bool operator==(const GroundAction&) const = default;
};

struct PlanningProblem {
  int F = 0;
  std::vector<GroundAction> actions;
  State init;
  Props goal_pos;
  Props goal_neg;

  void validate() const;
};

bool is_applicable(const State& s, const GroundAction& a);

/// (s \ del) ∪ add. Throws SimulationError (step 0) if `a` is not applicable.
State progress(const State& s, const GroundAction& a);

/// Predecessor of `t` under an action whose every bit is in pos, neg or
/// `prevail`: bit f is 1 on pos, 0 on neg, t_f on prevail. Throws
/// ConfigError naming the first unclassified bit.
State regress_complete(const State& t, const GroundAction& a, const Props& prevail);

bool satisfies_goal(const State& s, const PlanningProblem& p);

enum class Heuristic { blind, goal_count };

std::string to_string(Heuristic h);
Heuristic heuristic_from_string(const std::string& s);

/// Number of goal literals `s` violates. Inadmissible when one action can
/// fix several literals.
int goal_count(const State& s, const PlanningProblem& p);

struct SearchLimits {
  std::int64_t max_expansions = 1'000'000;
  double max_seconds = 0.0;  ///< 0 disables the wall-clock budget
};

enum class SearchStatus { solved, exhausted, timeout };

std::string to_string(SearchStatus s);

struct SearchResult {
  SearchStatus status = SearchStatus::exhausted;
  std::vector<int> plan;  ///< action indices
  std::int64_t expansions = 0;
  std::int64_t generated = 0;
  double seconds = 0.0;
};

/// A* with unit costs. Ties on f go to lower h, then to the earlier
/// generated node. Blind search returns a shortest plan.
SearchResult astar(const PlanningProblem& p, Heuristic h, const SearchLimits& limits = {});

/// States visited by `plan` starting at `init` (plan.size() + 1 entries).
/// Throws SimulationError at the first inapplicable step, naming the step
/// index and the violated literals.
std::vector<State> simulate(const std::vector<int>& plan, const State& init, const std::vector<GroundAction>& actions);

/// Maps action names to indices. Throws ConfigError on an unknown name.
std::vector<int> resolve_plan(const std::vector<std::string>& names, const std::vector<GroundAction>& actions);

// ---- PDDL ----

struct Domain {
  std::string name = "latent";
  int F = 0;
  std::vector<GroundAction> actions;
};

struct Problem {
  std::string name = "instance";
  std::string domain = "latent";
  State init;
  Props goal_pos;
  Props goal_neg;
};

std::string emit_domain(const Domain& d);
std::string emit_problem(const Problem& p);

/// Accepts both ":precondition"/":effect" and ":preconditions"/":effects".
/// Throws ParseError with the line and column of the offending token.
Domain parse_domain(const std::string& text);
/// `F` comes from the domain's predicate list.
Problem parse_problem(const std::string& text, int F);

PlanningProblem make_problem(const Domain& d, const Problem& p);

/// One "(name)" per line.
void write_plan(std::ostream& out, const std::vector<std::string>& names);
/// Reads one action per line, with or without parentheses; blank lines and
/// ';' comments are skipped.
std::vector<std::string> read_plan(std::istream& in);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace latplan::strips
