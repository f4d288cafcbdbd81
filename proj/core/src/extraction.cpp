#include "latplan/extraction.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <set>

#include "latplan/common/error.hpp"

namespace latplan::extraction {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::ama1: return "ama1";
    case Provenance::ama2_successor: return "ama2_successor";
    case Provenance::ama3_adhoc: return "ama3_adhoc";
    case Provenance::ama4_regression: return "ama4_regression";
  }
  return "?";
}

namespace {

std::vector<int> row_bits(const Matrix& m, Eigen::Index r) {
  std::vector<int> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) out[c] = m(r, c) >= 0.5 ? 1 : 0;
  return out;
}

bool contains(const Props& p, int f) { return std::binary_search(p.begin(), p.end(), f); }

void erase(Props& p, int f) {
  auto it = std::lower_bound(p.begin(), p.end(), f);
  if (it != p.end() && *it == f) p.erase(it);
}

void insert(Props& p, int f) {
  auto it = std::lower_bound(p.begin(), p.end(), f);
  if (it == p.end() || *it != f) p.insert(it, f);
}

Props set_union(const Props& a, const Props& b) {
  Props out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<int> progress_bits(const std::vector<int>& z, const Props& add, const Props& del) {
  std::vector<int> out = z;
  for (int f : del) out[f] = 0;
  for (int f : add) out[f] = 1;
  return out;
}

bool applicable_bits(const std::vector<int>& z, const Props& pos, const Props& neg) {
  return std::all_of(pos.begin(), pos.end(), [&](int f) { return z[f] == 1; }) &&
         std::all_of(neg.begin(), neg.end(), [&](int f) { return z[f] == 0; });
}

}  // namespace

strips::GroundAction ExtractedAction::to_ground() const {
  return {name, strips::normalized(pos), strips::normalized(neg), strips::normalized(add), strips::normalized(del)};
}

std::string ama1_name(const std::vector<int>& z0, const std::vector<int>& z1) {
  std::string name = "action-";
  for (int b : z0) name.push_back(b ? '1' : '0');
  name.push_back('-');
  for (int b : z1) name.push_back(b ? '1' : '0');
  return name;
}

std::vector<strips::GroundAction> ama1_translate(const Matrix& z0, const Matrix& z1) {
  if (z0.rows() != z1.rows() || z0.cols() != z1.cols()) throw ConfigError("ama1_translate: pair shapes differ");
  std::vector<strips::GroundAction> out;
  std::set<std::pair<std::vector<int>, std::vector<int>>> seen;
  for (Eigen::Index r = 0; r < z0.rows(); ++r) {
    auto a = row_bits(z0, r);
    auto b = row_bits(z1, r);
    if (!seen.emplace(a, b).second) continue;
    strips::GroundAction act;
    act.name = ama1_name(a, b);
    for (int f = 0; f < static_cast<int>(a.size()); ++f) {
      (a[f] ? act.pos : act.neg).push_back(f);
      if (!a[f] && b[f]) act.add.push_back(f);
      if (a[f] && !b[f]) act.del.push_back(f);
    }
    out.push_back(std::move(act));
  }
  return out;
}

BitClasses classify_bits(const nn::BackToLogit& btl, int label) {
  const int F = btl.F();
  const auto out0 = btl.eval_bits(std::vector<int>(F, 0), label);
  const auto out1 = btl.eval_bits(std::vector<int>(F, 1), label);
  BitClasses c;
  for (int f = 0; f < F; ++f) {
    if (out0[f] && out1[f]) c.on.push_back(f);
    else if (!out0[f] && !out1[f]) c.off.push_back(f);
    else if (out0[f] && !out1[f]) c.flip.push_back(f);
    else c.copy.push_back(f);
  }
  return c;
}

ExtractedAction extract_effects(const nn::BackToLogit& apply, int label) {
  const auto c = classify_bits(apply, label);
  ExtractedAction a;
  a.label = label;
  a.name = "a" + std::to_string(label);
  a.add = c.on;
  a.del = c.off;
  a.xor_effect = c.flip;
  return a;
}

void extract_preconditions_adhoc(const std::vector<std::vector<int>>& z0_rows, ExtractedAction& action) {
  if (z0_rows.empty()) throw ConfigError("extract_preconditions_adhoc: no transitions for a" + std::to_string(action.label));
  const std::size_t F = z0_rows.front().size();
  action.pos.clear();
  action.neg.clear();
  action.prevail.clear();
  for (std::size_t f = 0; f < F; ++f) {
    const bool all1 = std::all_of(z0_rows.begin(), z0_rows.end(), [&](const auto& z) { return z[f] == 1; });
    const bool all0 = std::all_of(z0_rows.begin(), z0_rows.end(), [&](const auto& z) { return z[f] == 0; });
    if (all1) action.pos.push_back(static_cast<int>(f));
    if (all0) action.neg.push_back(static_cast<int>(f));
  }
  action.provenance = Provenance::ama3_adhoc;
}

void extract_preconditions_regression(const nn::BackToLogit& regress, ExtractedAction& action) {
  const auto c = classify_bits(regress, action.label);
  action.pos = c.on;
  action.neg = c.off;
  action.xor_precondition = c.flip;
  action.prevail = c.copy;
  action.provenance = Provenance::ama4_regression;
}

PreValueCounts count_pre_values(const std::vector<std::vector<int>>& z0_rows, int F) {
  PreValueCounts c{std::vector<int>(static_cast<std::size_t>(F), 0), std::vector<int>(static_cast<std::size_t>(F), 0)};
  for (const auto& z : z0_rows) {
    for (int f = 0; f < F; ++f) (z[f] ? c.ones : c.zeros)[f]++;
  }
  return c;
}

ExtractedAction reconcile_prevail(const ExtractedAction& action, const PreValueCounts& observed,
                                  std::vector<ReconcileNote>* notes) {
  ExtractedAction out = action;
  auto note = [&](int f, const char* how) {
    if (notes) notes->push_back({action.label, f, how});
  };
  for (int f : action.prevail) {
    const bool is_add = contains(action.add, f);
    const bool is_del = contains(action.del, f);
    if (!is_add && !is_del) continue;
    const int zeros = f < static_cast<int>(observed.zeros.size()) ? observed.zeros[f] : 0;
    const int ones = f < static_cast<int>(observed.ones.size()) ? observed.ones[f] : 0;
    if (zeros > 0 && ones > 0) {
      erase(is_add ? out.add : out.del, f);
      note(f, "dropped-effect");
      continue;
    }
    erase(out.prevail, f);
    if (is_add) {
      // all observed pre-values 0: the bit flips 0 -> 1; otherwise it was already 1
      const bool flips = zeros > 0;
      insert(flips ? out.neg : out.pos, f);
      note(f, flips ? "neg" : "pos");
    } else {
      const bool flips = ones > 0;
      insert(flips ? out.pos : out.neg, f);
      note(f, flips ? "pos" : "neg");
    }
  }
  return out;
}

std::vector<ExtractedAction> compile_xor(const std::vector<ExtractedAction>& actions, int max_xor_bits) {
  std::vector<ExtractedAction> out;
  for (const auto& a : actions) {
    const Props bits = set_union(a.xor_effect, a.xor_precondition);
    const int k = static_cast<int>(bits.size());
    if (k > max_xor_bits) {
      throw ConfigError("compile_xor: action " + a.name + " has " + std::to_string(k) + " XOR bits (limit " +
                        std::to_string(max_xor_bits) + ", " + std::to_string(k) + " bits would need 2^" +
                        std::to_string(k) + " variants)");
    }
    if (k == 0) {
      out.push_back(a);
      continue;
    }
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << k); ++mask) {
      ExtractedAction v = a;
      v.xor_effect.clear();
      v.xor_precondition.clear();
      v.name = a.name + "-x";
      for (int i = 0; i < k; ++i) {
        const int f = bits[i];
        const bool pre = (mask >> i) & 1;
        erase(v.pos, f);
        erase(v.neg, f);
        erase(v.prevail, f);
        erase(v.add, f);
        erase(v.del, f);
        insert(pre ? v.pos : v.neg, f);
        insert(pre ? v.del : v.add, f);
        v.name.push_back(pre ? '1' : '0');
      }
      out.push_back(std::move(v));
    }
  }
  return out;
}

std::vector<int> prune_unused(const std::vector<int>& labels, int A) {
  std::vector<char> used(static_cast<std::size_t>(A), 0);
  for (int l : labels) {
    if (l < 0 || l >= A) throw ConfigError("prune_unused: label " + std::to_string(l) + " outside [0, A)");
    used[l] = 1;
  }
  std::vector<int> out;
  for (int l = 0; l < A; ++l) {
    if (used[l]) out.push_back(l);
  }
  return out;
}

void write_report(std::ostream& out, const Report& r) {
  out << "model\tF\tA\tA1\tA2\txor_actions\txor_bits\ttransitions\teffect_fidelity\txor_free_fidelity\tapplicable"
         "\texact\n";
  out << r.model << '\t' << r.F << '\t' << r.A << '\t' << r.used << '\t' << r.compiled << '\t' << r.xor_actions << '\t'
      << r.total_xor_bits << '\t' << r.transitions << '\t' << r.effect_fidelity() << '\t' << r.xor_free_fidelity()
      << '\t' << r.applicable << '\t' << r.exact << '\n';
  out << "\nlabel\ttransitions\txor_effect_bits\txor_precondition_bits\tvariants\treconciled\tdropped_effects\n";
  for (const auto& a : r.actions) {
    out << a.label << '\t' << a.transitions << '\t' << a.xor_effect_bits << '\t' << a.xor_precondition_bits << '\t'
        << a.variants << '\t' << a.reconciled << '\t' << a.dropped_effects << '\n';
  }
  if (!r.notes.empty()) {
    out << "\nlabel\tbit\tresolution\n";
    for (const auto& n : r.notes) out << n.label << '\t' << n.bit << '\t' << n.resolution << '\n';
  }
}

LatentTransitions encode_transitions(models::StateAutoencoder& model, const Matrix& x0, const Matrix& x1) {
  if (x0.rows() != x1.rows()) throw ConfigError("encode_transitions: pair counts differ");
  LatentTransitions out;
  auto* csae = dynamic_cast<models::CubeSpaceAE*>(&model);
  const Eigen::Index batch = 256;
  for (Eigen::Index start = 0; start < x0.rows(); start += batch) {
    const Eigen::Index n = std::min(batch, x0.rows() - start);
    const Matrix b0 = x0.middleRows(start, n);
    const Matrix b1 = x1.middleRows(start, n);
    const Matrix z0 = model.encode_bits(b0);
    const Matrix z1 = model.encode_bits(b1);
    for (Eigen::Index r = 0; r < n; ++r) {
      out.z0.push_back(row_bits(z0, r));
      out.z1.push_back(row_bits(z1, r));
    }
    if (csae) {
      for (int l : csae->action_labels(b0, b1)) out.labels.push_back(l);
    }
  }
  return out;
}

ExtractedDomain generate_domain(models::CubeSpaceAE& model, const LatentTransitions& data, const Options& options) {
  const int F = model.config().latent.F;
  const int A = model.config().latent.A;
  if (data.labels.size() != data.z0.size()) throw ConfigError("generate_domain: transitions are not labelled");
  const bool bidirectional = model.bidirectional();

  ExtractedDomain result;
  Report& report = result.report;
  report.model = models::to_string(model.kind());
  report.F = F;
  report.A = A;

  std::map<int, std::vector<std::vector<int>>> by_label;
  for (std::size_t i = 0; i < data.labels.size(); ++i) by_label[data.labels[i]].push_back(data.z0[i]);
  const auto used = prune_unused(data.labels, A);
  report.used = static_cast<int>(used.size());

  std::vector<ExtractedAction> extracted;
  std::map<int, std::size_t> report_index;
  for (int label : used) {
    ExtractedAction a = extract_effects(model.apply_btl(), label);
    ActionReport ar;
    ar.label = label;
    ar.transitions = static_cast<int>(by_label[label].size());
    if (bidirectional) {
      extract_preconditions_regression(*model.regress_btl(), a);
      std::vector<ReconcileNote> notes;
      a = reconcile_prevail(a, count_pre_values(by_label[label], F), &notes);
      for (const auto& n : notes) {
        if (n.resolution == "dropped-effect") ++ar.dropped_effects;
        else ++ar.reconciled;
      }
      report.notes.insert(report.notes.end(), notes.begin(), notes.end());
    } else {
      extract_preconditions_adhoc(by_label[label], a);
    }
    ar.xor_effect_bits = static_cast<int>(a.xor_effect.size());
    ar.xor_precondition_bits = static_cast<int>(a.xor_precondition.size());
    const int k = static_cast<int>(set_union(a.xor_effect, a.xor_precondition).size());
    ar.variants = 1 << std::min(k, 30);
    if (k > 0) ++report.xor_actions;
    report.total_xor_bits += ar.xor_effect_bits + ar.xor_precondition_bits;
    report_index[label] = report.actions.size();
    report.actions.push_back(ar);
    extracted.push_back(std::move(a));
  }

  // xor bits per label, to pick the variant matching a pre-state
  std::map<int, Props> xor_bits;
  for (const auto& a : extracted) xor_bits[a.label] = set_union(a.xor_effect, a.xor_precondition);

  result.actions = compile_xor(extracted, options.max_xor_bits);
  report.compiled = static_cast<int>(result.actions.size());
  result.domain.name = "latent";
  result.domain.F = F;
  std::map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < result.actions.size(); ++i) {
    result.domain.actions.push_back(result.actions[i].to_ground());
    by_name[result.actions[i].name] = i;
  }

  for (std::size_t i = 0; i < data.z0.size(); ++i) {
    const int label = data.labels[i];
    const auto& z0 = data.z0[i];
    std::string name = "a" + std::to_string(label);
    const auto& xb = xor_bits[label];
    if (!xb.empty()) {
      name += "-x";
      for (int f : xb) name.push_back(z0[f] ? '1' : '0');
    }
    const auto& act = result.actions[by_name.at(name)];
    const auto predicted = model.apply_btl().eval_bits(z0, label);
    const auto progressed = progress_bits(z0, act.add, act.del);
    ++report.transitions;
    if (progressed == predicted) ++report.effect_matches;
    if (xb.empty()) {
      ++report.xor_free_transitions;
      if (progressed == predicted) ++report.xor_free_matches;
    }
    if (applicable_bits(z0, act.pos, act.neg)) {
      ++report.applicable;
      if (progressed == data.z1[i]) ++report.exact;
    }
  }
  return result;
}

namespace {

ExtractedDomain from_ground(std::vector<strips::GroundAction> actions, int F, Provenance provenance,
                            const std::string& model) {
  ExtractedDomain result;
  result.domain.name = "latent";
  result.domain.F = F;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    ExtractedAction e;
    e.label = static_cast<int>(i);
    e.name = actions[i].name;
    e.pos = actions[i].pos;
    e.neg = actions[i].neg;
    e.add = actions[i].add;
    e.del = actions[i].del;
    e.provenance = provenance;
    result.actions.push_back(std::move(e));
  }
  result.domain.actions = std::move(actions);
  result.report.model = model;
  result.report.F = F;
  result.report.compiled = static_cast<int>(result.domain.actions.size());
  return result;
}

Matrix to_matrix(const std::vector<std::vector<int>>& rows, int F) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), F);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int f = 0; f < F; ++f) m(static_cast<Eigen::Index>(r), f) = rows[r][f];
  }
  return m;
}

// Counts transitions whose (z0, z1) is realised by an action of the domain.
void sweep_exact(ExtractedDomain& d, const LatentTransitions& data) {
  std::map<std::vector<int>, std::vector<std::size_t>> by_pre;
  for (std::size_t i = 0; i < d.actions.size(); ++i) {
    std::vector<int> z(static_cast<std::size_t>(d.domain.F), 0);
    for (int f : d.actions[i].pos) z[f] = 1;
    by_pre[z].push_back(i);
  }
  for (std::size_t i = 0; i < data.z0.size(); ++i) {
    ++d.report.transitions;
    bool applicable = false, exact = false;
    auto it = by_pre.find(data.z0[i]);
    if (it != by_pre.end()) {
      for (std::size_t k : it->second) {
        const auto& a = d.actions[k];
        if (!applicable_bits(data.z0[i], a.pos, a.neg)) continue;
        applicable = true;
        if (progress_bits(data.z0[i], a.add, a.del) == data.z1[i]) exact = true;
      }
    }
    d.report.applicable += applicable;
    d.report.exact += exact;
    d.report.effect_matches += exact;
  }
}

}  // namespace

ExtractedDomain generate_domain_ama1(const LatentTransitions& data) {
  if (data.z0.empty()) throw ConfigError("generate_domain_ama1: no transitions");
  const int F = static_cast<int>(data.z0.front().size());
  auto result = from_ground(ama1_translate(to_matrix(data.z0, F), to_matrix(data.z1, F)), F, Provenance::ama1, "sae");
  result.report.used = result.report.compiled;
  sweep_exact(result, data);
  return result;
}

ExtractedDomain generate_domain_ama2(models::ActionAutoencoder& aae, const LatentTransitions& data) {
  if (data.z0.empty()) throw ConfigError("generate_domain_ama2: no transitions");
  const int F = static_cast<int>(data.z0.front().size());
  const int A = aae.config().latent.A;
  const Matrix z0 = to_matrix(data.z0, F);
  const Matrix z1 = to_matrix(data.z1, F);
  const auto labels = aae.action_labels(z0, z1);
  const auto used = prune_unused(labels, A);
  std::set<std::vector<int>> distinct(data.z0.begin(), data.z0.end());
  std::vector<std::vector<int>> states(distinct.begin(), distinct.end());
  Matrix pre(static_cast<Eigen::Index>(states.size() * used.size()), F);
  std::vector<int> pair_labels;
  Eigen::Index row = 0;
  for (const auto& s : states) {
    for (int l : used) {
      for (int f = 0; f < F; ++f) pre(row, f) = s[f];
      pair_labels.push_back(l);
      ++row;
    }
  }
  const Matrix post = aae.successors(pre, pair_labels);
  auto result = from_ground(ama1_translate(pre, post), F, Provenance::ama2_successor, "aae");
  result.report.A = A;
  result.report.used = static_cast<int>(used.size());
  sweep_exact(result, data);
  return result;
}

strips::Problem generate_problem(models::StateAutoencoder& model, const Normalization& norm,
                                 const std::vector<double>& init_image, const std::vector<double>& goal_image,
                                 const std::string& name) {
  const int D = model.config().image.size();
  if (static_cast<int>(init_image.size()) != D || static_cast<int>(goal_image.size()) != D) {
    throw ConfigError("generate_problem: image has " + std::to_string(init_image.size()) + " values, the model expects " +
                      std::to_string(D));
  }
  Matrix raw(2, D);
  raw.row(0) = Eigen::Map<const ad::RowVector>(init_image.data(), D);
  raw.row(1) = Eigen::Map<const ad::RowVector>(goal_image.data(), D);
  const Matrix z = model.encode_bits(norm.apply(raw));
  strips::Problem p;
  p.name = name;
  p.init = strips::State::from_bits(row_bits(z, 0));
  const auto goal = row_bits(z, 1);
  for (int f = 0; f < static_cast<int>(goal.size()); ++f) (goal[f] ? p.goal_pos : p.goal_neg).push_back(f);
  return p;
}

}  // namespace latplan::extraction
