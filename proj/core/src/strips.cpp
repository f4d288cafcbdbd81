#include "latplan/strips.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <chrono>
#include <fstream>
#include <istream>
#include <ostream>
#include <queue>
#include <sstream>
#include <unordered_map>

#include "latplan/common/error.hpp"

namespace latplan::strips {

// ---- State ----

State State::from_string(const std::string& bits) {
  State s(static_cast<int>(bits.size()));
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] != '0' && bits[i] != '1') throw ConfigError("state string must contain only 0 and 1");
    s.set(static_cast<int>(i), bits[i] == '1');
  }
  return s;
}

State State::from_bits(const std::vector<int>& bits) {
  State s(static_cast<int>(bits.size()));
  for (std::size_t i = 0; i < bits.size(); ++i) s.set(static_cast<int>(i), bits[i] != 0);
  return s;
}

int State::count() const {
  int n = 0;
  for (auto w : words_) n += std::popcount(w);
  return n;
}

std::string State::to_string() const {
  std::string out(static_cast<std::size_t>(width_), '0');
  for (int f = 0; f < width_; ++f) out[f] = get(f) ? '1' : '0';
  return out;
}

std::vector<int> State::to_bits() const {
  std::vector<int> out(static_cast<std::size_t>(width_));
  for (int f = 0; f < width_; ++f) out[f] = get(f);
  return out;
}

std::vector<int> State::props() const {
  std::vector<int> out;
  for (int f = 0; f < width_; ++f) {
    if (get(f)) out.push_back(f);
  }
  return out;
}

std::size_t StateHash::operator()(const State& s) const noexcept {
  std::uint64_t h = 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint64_t>(s.width());
  for (auto w : s.words()) {
    h ^= w + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    h *= 0xBF58476D1CE4E5B9ULL;
  }
  return static_cast<std::size_t>(h ^ (h >> 31));
}

Props normalized(Props p) {
  std::sort(p.begin(), p.end());
  p.erase(std::unique(p.begin(), p.end()), p.end());
  return p;
}

namespace {

bool is_identifier(const std::string& s) {
  if (s.empty() || !std::isalpha(static_cast<unsigned char>(s[0]))) return false;
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'; });
}

bool intersects(const Props& a, const Props& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) return true;
    a[i] < b[j] ? ++i : ++j;
  }
  return false;
}

void check_props(const Props& p, int F, const std::string& what) {
  if (!std::is_sorted(p.begin(), p.end()) || std::adjacent_find(p.begin(), p.end()) != p.end()) {
    throw ConfigError(what + " must be sorted and duplicate-free");
  }
  for (int f : p) {
    if (f < 0 || f >= F) throw ConfigError(what + " has proposition z" + std::to_string(f) + " outside [0, F)");
  }
}

std::string literal(int f, bool positive) {
  return positive ? "(z" + std::to_string(f) + ")" : "(not (z" + std::to_string(f) + "))";
}

// Literals of pos/neg merged in index order.
std::string conjunction(const Props& pos, const Props& neg) {
  std::vector<std::pair<int, bool>> lits;
  for (int f : pos) lits.emplace_back(f, true);
  for (int f : neg) lits.emplace_back(f, false);
  std::sort(lits.begin(), lits.end());
  std::string out = "(and";
  for (const auto& [f, positive] : lits) out += " " + literal(f, positive);
  return out + ")";
}

}  // namespace

void GroundAction::validate(int F) const {
  if (!is_identifier(name)) throw ConfigError("action name '" + name + "' is not a PDDL identifier");
  check_props(pos, F, "action " + name + " pos");
  check_props(neg, F, "action " + name + " neg");
  check_props(add, F, "action " + name + " add");
  check_props(del, F, "action " + name + " del");
  if (intersects(pos, neg)) throw ConfigError("action " + name + " requires a literal and its negation");
  if (intersects(add, del)) throw ConfigError("action " + name + " adds and deletes the same proposition");
}

void PlanningProblem::validate() const {
  if (F <= 0) throw ConfigError("planning problem: F must be positive");
  if (init.width() != F) throw ConfigError("planning problem: init width differs from F");
  for (const auto& a : actions) a.validate(F);
  check_props(goal_pos, F, "goal pos");
  check_props(goal_neg, F, "goal neg");
  if (intersects(goal_pos, goal_neg)) throw ConfigError("planning problem: contradictory goal");
}

// ---- semantics ----

bool is_applicable(const State& s, const GroundAction& a) {
  for (int f : a.pos) {
    if (f >= s.width() || !s.get(f)) return false;
  }
  for (int f : a.neg) {
    if (f >= s.width() || s.get(f)) return false;
  }
  return true;
}

State progress(const State& s, const GroundAction& a) {
  if (!is_applicable(s, a)) throw SimulationError("action " + a.name + " is not applicable", 0);
  State t = s;
  for (int f : a.del) t.set(f, false);
  for (int f : a.add) t.set(f, true);
  return t;
}

State regress_complete(const State& t, const GroundAction& a, const Props& prevail) {
  State s(t.width());
  std::vector<char> covered(static_cast<std::size_t>(t.width()), 0);
  for (int f : a.pos) s.set(f, true), covered[f] = 1;
  for (int f : a.neg) covered[f] = 1;
  for (int f : prevail) {
    if (f < 0 || f >= t.width()) throw ConfigError("prevail index out of range");
    s.set(f, t.get(f));
    covered[f] = 1;
  }
  for (int f = 0; f < t.width(); ++f) {
    if (!covered[f]) {
      throw ConfigError("action " + a.name + " leaves z" + std::to_string(f) +
                        " unclassified; complete-state regression needs pos, neg or prevail for every bit");
    }
  }
  return s;
}

bool satisfies_goal(const State& s, const PlanningProblem& p) { return goal_count(s, p) == 0; }

std::string to_string(Heuristic h) { return h == Heuristic::blind ? "blind" : "goal_count"; }

Heuristic heuristic_from_string(const std::string& s) {
  if (s == "blind") return Heuristic::blind;
  if (s == "goal_count" || s == "goalcount" || s == "gc") return Heuristic::goal_count;
  throw ConfigError("unknown heuristic '" + s + "'");
}

int goal_count(const State& s, const PlanningProblem& p) {
  int n = 0;
  for (int f : p.goal_pos) n += !s.get(f);
  for (int f : p.goal_neg) n += s.get(f);
  return n;
}

std::string to_string(SearchStatus s) {
  switch (s) {
    case SearchStatus::solved: return "solved";
    case SearchStatus::exhausted: return "exhausted";
    case SearchStatus::timeout: return "timeout";
  }
  return "?";
}

// ---- search ----

namespace {

struct CompiledAction {
  std::vector<std::uint64_t> pos, neg, add, del;
};

std::vector<std::uint64_t> mask(const Props& p, std::size_t words) {
  std::vector<std::uint64_t> m(words, 0);
  for (int f : p) m[f >> 6] |= std::uint64_t{1} << (f & 63);
  return m;
}

struct Node {
  State state;
  int parent;
  int action;
  int g;
};

struct OpenEntry {
  int f;
  int h;
  std::int64_t order;
  int node;
  bool operator>(const OpenEntry& o) const {
    if (f != o.f) return f > o.f;
    if (h != o.h) return h > o.h;
    return order > o.order;
  }
};

}  // namespace

SearchResult astar(const PlanningProblem& p, Heuristic heuristic, const SearchLimits& limits) {
  p.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t W = p.init.words().size();
  std::vector<CompiledAction> acts;
  acts.reserve(p.actions.size());
  for (const auto& a : p.actions) acts.push_back({mask(a.pos, W), mask(a.neg, W), mask(a.add, W), mask(a.del, W)});
  auto h_of = [&](const State& s) { return heuristic == Heuristic::blind ? 0 : goal_count(s, p); };

  SearchResult result;
  std::vector<Node> nodes;
  std::unordered_map<State, int, StateHash> best_g;
  std::priority_queue<OpenEntry, std::vector<OpenEntry>, std::greater<>> open;
  std::int64_t order = 0;
  nodes.push_back({p.init, -1, -1, 0});
  best_g.emplace(p.init, 0);
  open.push({h_of(p.init), h_of(p.init), order++, 0});
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  while (!open.empty()) {
    const OpenEntry e = open.top();
    open.pop();
    const int g = nodes[e.node].g;
    if (best_g[nodes[e.node].state] < g) continue;  // stale entry
    if (goal_count(nodes[e.node].state, p) == 0) {
      for (int n = e.node; nodes[n].parent >= 0; n = nodes[n].parent) result.plan.push_back(nodes[n].action);
      std::reverse(result.plan.begin(), result.plan.end());
      result.status = SearchStatus::solved;
      result.seconds = elapsed();
      return result;
    }
    if (result.expansions >= limits.max_expansions ||
        (limits.max_seconds > 0 && (result.expansions & 255) == 0 && elapsed() > limits.max_seconds)) {
      result.status = SearchStatus::timeout;
      result.seconds = elapsed();
      return result;
    }
    ++result.expansions;
    for (std::size_t ai = 0; ai < acts.size(); ++ai) {
      const auto& a = acts[ai];
      const auto& sw = nodes[e.node].state.words();
      bool ok = true;
      for (std::size_t w = 0; w < W && ok; ++w) ok = (sw[w] & a.pos[w]) == a.pos[w] && (sw[w] & a.neg[w]) == 0;
      if (!ok) continue;
      State next = nodes[e.node].state;
      for (std::size_t w = 0; w < W; ++w) next.words()[w] = (next.words()[w] & ~a.del[w]) | a.add[w];
      ++result.generated;
      auto [it, inserted] = best_g.try_emplace(next, g + 1);
      if (!inserted) {
        if (it->second <= g + 1) continue;
        it->second = g + 1;  // reopened through a cheaper path
      }
      const int h = h_of(next);
      nodes.push_back({std::move(next), e.node, static_cast<int>(ai), g + 1});
      open.push({g + 1 + h, h, order++, static_cast<int>(nodes.size() - 1)});
    }
  }
  result.status = SearchStatus::exhausted;
  result.seconds = elapsed();
  return result;
}

std::vector<State> simulate(const std::vector<int>& plan, const State& init, const std::vector<GroundAction>& actions) {
  std::vector<State> trace{init};
  for (std::size_t k = 0; k < plan.size(); ++k) {
    if (plan[k] < 0 || plan[k] >= static_cast<int>(actions.size())) {
      throw SimulationError("step " + std::to_string(k) + ": unknown action index " + std::to_string(plan[k]), k);
    }
    const auto& a = actions[plan[k]];
    const State& s = trace.back();
    std::string violated;
    for (int f : a.pos) {
      if (!s.get(f)) violated += " " + literal(f, true);
    }
    for (int f : a.neg) {
      if (s.get(f)) violated += " " + literal(f, false);
    }
    if (!violated.empty()) {
      throw SimulationError("step " + std::to_string(k) + ": action " + a.name + " violates" + violated, k);
    }
    State t = s;
    for (int f : a.del) t.set(f, false);
    for (int f : a.add) t.set(f, true);
    trace.push_back(std::move(t));
  }
  return trace;
}

std::vector<int> resolve_plan(const std::vector<std::string>& names, const std::vector<GroundAction>& actions) {
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < actions.size(); ++i) index.emplace(actions[i].name, static_cast<int>(i));
  std::vector<int> plan;
  for (const auto& n : names) {
    auto it = index.find(n);
    if (it == index.end()) throw ConfigError("plan uses unknown action '" + n + "'");
    plan.push_back(it->second);
  }
  return plan;
}

// ---- PDDL emission ----

std::string emit_domain(const Domain& d) {
  if (!is_identifier(d.name)) throw ConfigError("domain name '" + d.name + "' is not a PDDL identifier");
  for (const auto& a : d.actions) a.validate(d.F);
  std::ostringstream out;
  out << "(define (domain " << d.name << ")\n";
  out << "  (:requirements :strips :negative-preconditions)\n";
  out << "  (:predicates";
  for (int f = 0; f < d.F; ++f) out << " (z" << f << ")";
  out << ")\n";
  for (const auto& a : d.actions) {
    out << "  (:action " << a.name << "\n";
    out << "    :parameters ()\n";
    out << "    :precondition " << conjunction(a.pos, a.neg) << "\n";
    out << "    :effect " << conjunction(a.add, a.del) << ")\n";
  }
  out << ")\n";
  return out.str();
}

std::string emit_problem(const Problem& p) {
  if (!is_identifier(p.name) || !is_identifier(p.domain)) throw ConfigError("problem names must be PDDL identifiers");
  check_props(p.goal_pos, p.init.width(), "goal pos");
  check_props(p.goal_neg, p.init.width(), "goal neg");
  std::ostringstream out;
  out << "(define (problem " << p.name << ")\n";
  out << "  (:domain " << p.domain << ")\n";
  out << "  (:init";
  for (int f : p.init.props()) out << " (z" << f << ")";
  out << ")\n";
  out << "  (:goal " << conjunction(p.goal_pos, p.goal_neg) << "))\n";
  return out.str();
}

// ---- PDDL parsing ----

namespace {

struct Sexp {
  bool is_list = false;
  std::string atom;
  std::string key;  ///< lower-cased atom, for keyword matching
  std::vector<Sexp> items;
  std::size_t line = 1;
  std::size_t column = 1;
};

class Reader {
 public:
  explicit Reader(const std::string& text) : text_(text) {}

  Sexp read_top() {
    skip();
    if (pos_ >= text_.size()) throw ParseError("empty input", line_, col_);
    Sexp s = read();
    skip();
    if (pos_ < text_.size()) throw ParseError("unexpected text after the closing parenthesis", line_, col_);
    return s;
  }

 private:
  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip() {
    while (pos_ < text_.size()) {
      if (text_[pos_] == ';') {
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(text_[pos_]))) {
        advance();
      } else {
        break;
      }
    }
  }

  Sexp read() {
    skip();
    if (pos_ >= text_.size()) throw ParseError("unexpected end of input", line_, col_);
    Sexp s;
    s.line = line_;
    s.column = col_;
    const char c = text_[pos_];
    if (c == ')') throw ParseError("unexpected ')'", line_, col_);
    if (c == '(') {
      s.is_list = true;
      advance();
      for (;;) {
        skip();
        if (pos_ >= text_.size()) throw ParseError("unclosed '('", s.line, s.column);
        if (text_[pos_] == ')') {
          advance();
          return s;
        }
        s.items.push_back(read());
      }
    }
    while (pos_ < text_.size()) {
      const char d = text_[pos_];
      if (d == '(' || d == ')' || d == ';' || std::isspace(static_cast<unsigned char>(d))) break;
      s.atom.push_back(d);
      s.key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(d))));
      advance();
    }
    return s;
  }

  const std::string& text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

[[noreturn]] void fail(const Sexp& at, const std::string& what) { throw ParseError(what, at.line, at.column); }

bool is_atom(const Sexp& s, const char* a) { return !s.is_list && s.key == a; }

const Sexp& expect_list(const Sexp& s, const std::string& what) {
  if (!s.is_list) fail(s, "expected " + what);
  return s;
}

std::string expect_name(const Sexp& s) {
  if (s.is_list || s.atom.empty() || s.atom[0] == ':') fail(s, "expected a name");
  return s.atom;
}

int prop_index(const Sexp& s, int F) {
  if (!s.is_list || s.items.size() != 1 || s.items[0].is_list) fail(s, "expected a proposition (zN)");
  const std::string& a = s.items[0].key;
  if (a.size() < 2 || a[0] != 'z' || !std::all_of(a.begin() + 1, a.end(), ::isdigit) || a.size() > 10) {
    fail(s.items[0], "unknown proposition '" + a + "'");
  }
  const long v = std::stol(a.substr(1));
  if (F >= 0 && v >= F) fail(s.items[0], "proposition '" + a + "' outside the declared predicates");
  return static_cast<int>(v);
}

// A literal or an (and ...) of literals into pos/neg.
void parse_conjunction(const Sexp& s, int F, Props& pos, Props& neg) {
  expect_list(s, "a conjunction");
  auto one = [&](const Sexp& lit) {
    if (lit.is_list && !lit.items.empty() && is_atom(lit.items[0], "not")) {
      if (lit.items.size() != 2) fail(lit, "malformed negation");
      neg.push_back(prop_index(lit.items[1], F));
    } else {
      pos.push_back(prop_index(lit, F));
    }
  };
  if (!s.items.empty() && is_atom(s.items[0], "and")) {
    for (std::size_t i = 1; i < s.items.size(); ++i) one(s.items[i]);
  } else if (s.items.empty()) {
    // "()" is an empty conjunction
  } else {
    one(s);
  }
  pos = normalized(pos);
  neg = normalized(neg);
}

// Checks "(define (<kind> name) ...)" and returns the name.
std::string parse_header(const Sexp& root, const char* kind) {
  if (!root.is_list || root.items.size() < 2 || !is_atom(root.items[0], "define")) fail(root, "expected (define ...)");
  const Sexp& head = root.items[1];
  if (!head.is_list || head.items.size() != 2 || !is_atom(head.items[0], kind)) {
    fail(head, std::string("expected (") + kind + " name)");
  }
  return expect_name(head.items[1]);
}

}  // namespace

Domain parse_domain(const std::string& text) {
  const Sexp root = Reader(text).read_top();
  Domain d;
  d.name = parse_header(root, "domain");
  bool have_predicates = false;
  std::vector<const Sexp*> action_blocks;
  for (std::size_t i = 2; i < root.items.size(); ++i) {
    const Sexp& sec = expect_list(root.items[i], "a domain section");
    if (sec.items.empty() || sec.items[0].is_list) fail(sec, "expected a section keyword");
    const std::string& key = sec.items[0].key;
    if (key == ":requirements") {
      for (std::size_t k = 1; k < sec.items.size(); ++k) {
        const auto& r = sec.items[k];
        if (r.is_list || (r.key != ":strips" && r.key != ":negative-preconditions")) {
          fail(r, "unsupported requirement '" + r.atom + "'");
        }
      }
    } else if (key == ":predicates") {
      have_predicates = true;
      std::vector<int> seen;
      for (std::size_t k = 1; k < sec.items.size(); ++k) seen.push_back(prop_index(sec.items[k], -1));
      std::sort(seen.begin(), seen.end());
      for (std::size_t k = 0; k < seen.size(); ++k) {
        if (seen[k] != static_cast<int>(k)) fail(sec, "predicates must be exactly z0 .. z(F-1)");
      }
      d.F = static_cast<int>(seen.size());
    } else if (key == ":action") {
      action_blocks.push_back(&sec);
    } else {
      fail(sec.items[0], "unsupported domain section '" + key + "'");
    }
  }
  if (!have_predicates && !action_blocks.empty()) fail(root, "actions without a :predicates section");
  for (const Sexp* block : action_blocks) {
    const Sexp& sec = *block;
    if (sec.items.size() < 2) fail(sec, "action without a name");
    GroundAction a;
    a.name = expect_name(sec.items[1]);
    for (std::size_t k = 2; k < sec.items.size(); k += 2) {
      const Sexp& key = sec.items[k];
      if (key.is_list || key.key.empty() || key.key[0] != ':') fail(key, "expected an action keyword");
      if (k + 1 >= sec.items.size()) fail(key, "keyword without a value");
      const Sexp& val = sec.items[k + 1];
      if (key.key == ":parameters") {
        if (!val.is_list || !val.items.empty()) fail(val, "grounded actions take no parameters");
      } else if (key.key == ":precondition" || key.key == ":preconditions") {
        parse_conjunction(val, d.F, a.pos, a.neg);
      } else if (key.key == ":effect" || key.key == ":effects") {
        parse_conjunction(val, d.F, a.add, a.del);
      } else {
        fail(key, "unsupported action keyword '" + key.atom + "'");
      }
    }
    try {
      a.validate(d.F);
    } catch (const ConfigError& e) {
      fail(sec, e.what());
    }
    d.actions.push_back(std::move(a));
  }
  return d;
}

Problem parse_problem(const std::string& text, int F) {
  const Sexp root = Reader(text).read_top();
  Problem p;
  p.name = parse_header(root, "problem");
  p.init = State(F);
  bool have_goal = false;
  for (std::size_t i = 2; i < root.items.size(); ++i) {
    const Sexp& sec = expect_list(root.items[i], "a problem section");
    if (sec.items.empty() || sec.items[0].is_list) fail(sec, "expected a section keyword");
    const std::string& key = sec.items[0].key;
    if (key == ":domain") {
      if (sec.items.size() != 2) fail(sec, "malformed :domain");
      p.domain = expect_name(sec.items[1]);
    } else if (key == ":objects") {
      if (sec.items.size() != 1) fail(sec, "grounded problems take no objects");
    } else if (key == ":init") {
      for (std::size_t k = 1; k < sec.items.size(); ++k) p.init.set(prop_index(sec.items[k], F));
    } else if (key == ":goal") {
      if (sec.items.size() != 2) fail(sec, "malformed :goal");
      parse_conjunction(sec.items[1], F, p.goal_pos, p.goal_neg);
      if (intersects(p.goal_pos, p.goal_neg)) fail(sec, "contradictory goal");
      have_goal = true;
    } else {
      fail(sec.items[0], "unsupported problem section '" + key + "'");
    }
  }
  if (!have_goal) fail(root, "problem without a :goal");
  return p;
}

PlanningProblem make_problem(const Domain& d, const Problem& p) {
  if (p.init.width() != d.F) throw ConfigError("problem and domain disagree on the number of propositions");
  PlanningProblem out{d.F, d.actions, p.init, p.goal_pos, p.goal_neg};
  out.validate();
  return out;
}

void write_plan(std::ostream& out, const std::vector<std::string>& names) {
  for (const auto& n : names) out << "(" << n << ")\n";
}

std::vector<std::string> read_plan(std::istream& in) {
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    const auto semi = line.find(';');
    if (semi != std::string::npos) line.resize(semi);
    std::string tok;
    for (char c : line) {
      if (c == '(' || c == ')' || std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(c);
    }
    if (!tok.empty()) names.push_back(tok);
  }
  return names;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

}  // namespace latplan::strips
