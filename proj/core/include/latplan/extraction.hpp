#pragma once

// Turns trained models into grounded STRIPS: per-transition actions, effect
// and precondition extraction from Back-to-Logit blocks, prevail
// reconciliation, XOR compilation and label pruning.

#include <iosfwd>
#include <string>
#include <vector>

#include "latplan/common/normalization.hpp"
#include "latplan/models.hpp"
#include "latplan/strips.hpp"

namespace latplan::extraction {

using ad::Matrix;
using strips::Props;

enum class Provenance { ama1, ama2_successor, ama3_adhoc, ama4_regression };

std::string to_string(Provenance p);

struct ExtractedAction {
  int label = 0;
  Props add;
  Props del;
  Props pos;
  Props neg;
  Props prevail;
  Props xor_effect;        ///< bits both added and deleted
  Props xor_precondition;  ///< bits whose predecessor value is the negation of the successor value
  Provenance provenance = Provenance::ama3_adhoc;
  std::string name;        ///< PDDL action name

  strips::GroundAction to_ground() const;
};

/// One action per distinct (z0, z1) row pair in first-seen order, with the
/// full z0 as precondition and the bit differences as effects.
std::vector<strips::GroundAction> ama1_translate(const Matrix& z0, const Matrix& z1);

/// Name used for the per-transition actions, e.g. "action-0011-0101".
std::string ama1_name(const std::vector<int>& z0, const std::vector<int>& z1);

struct BitClasses {
  Props on;    ///< output 1 for both inputs
  Props off;   ///< output 0 for both inputs
  Props flip;  ///< output is the negated input
  Props copy;  ///< output equals the input
};

/// Classifies every bit of a Back-to-Logit block for one label by feeding
/// the all-zero and all-one vectors.
BitClasses classify_bits(const nn::BackToLogit& btl, int label);

/// add/del/xor_effect from the apply block.
ExtractedAction extract_effects(const nn::BackToLogit& apply, int label);

/// pos = bits constantly 1 over `z0_rows`, neg = bits constantly 0. Throws
/// ConfigError on an empty set.
void extract_preconditions_adhoc(const std::vector<std::vector<int>>& z0_rows, ExtractedAction& action);

/// pos/neg/prevail/xor_precondition from the regress block.
void extract_preconditions_regression(const nn::BackToLogit& regress, ExtractedAction& action);

/// Per-bit counts of the pre-values observed for one label.
struct PreValueCounts {
  std::vector<int> zeros;
  std::vector<int> ones;
};

PreValueCounts count_pre_values(const std::vector<std::vector<int>>& z0_rows, int F);

struct ReconcileNote {
  int label;
  int bit;
  std::string resolution;  ///< "pos", "neg" or "dropped-effect"
};

/// A prevail bit that also carries an add (delete) effect becomes a
/// precondition: negative (positive) when every observed pre-value differs
/// from the effect's value, positive (negative) when every observed
/// pre-value already equals it or nothing was observed. When both values
/// were observed the effect is dropped and the bit stays prevail; such cases
/// are appended to `notes` as model defects.
ExtractedAction reconcile_prevail(const ExtractedAction& action, const PreValueCounts& observed,
                                  std::vector<ReconcileNote>* notes = nullptr);

/// Splits every action with k distinct XOR bits (effect or precondition;
/// a bit in both counts once) into 2^k variants that fix each bit's
/// pre-value v: precondition pos (v=1) or neg (v=0) and effect del (v=1) or
/// add (v=0). Throws ConfigError when k > max_xor_bits.
std::vector<ExtractedAction> compile_xor(const std::vector<ExtractedAction>& actions, int max_xor_bits = 20);

/// Labels chosen at least once, ascending.
std::vector<int> prune_unused(const std::vector<int>& labels, int A);

struct Options {
  int max_xor_bits = 20;
  double fidelity_threshold = 0.99;
};

struct ActionReport {
  int label = 0;
  int transitions = 0;
  int xor_effect_bits = 0;
  int xor_precondition_bits = 0;
  int variants = 0;
  int reconciled = 0;
  int dropped_effects = 0;
};

struct Report {
  std::string model;
  int F = 0;
  int A = 0;           ///< label capacity
  int used = 0;        ///< labels surviving pruning
  int compiled = 0;    ///< actions after XOR compilation
  int xor_actions = 0; ///< actions with at least one XOR bit before compilation
  int total_xor_bits = 0;
  int transitions = 0;
  int effect_matches = 0;         ///< progress(z0) equals the model's own successor
  int xor_free_transitions = 0;   ///< transitions whose label had no XOR bit
  int xor_free_matches = 0;
  int applicable = 0;             ///< assigned variant applicable at z0
  int exact = 0;                  ///< applicable and progresses z0 to the encoded z1
  std::vector<ActionReport> actions;
  std::vector<ReconcileNote> notes;

  double effect_fidelity() const { return transitions ? static_cast<double>(effect_matches) / transitions : 1.0; }
  double xor_free_fidelity() const {
    return xor_free_transitions ? static_cast<double>(xor_free_matches) / xor_free_transitions : 1.0;
  }
};

void write_report(std::ostream& out, const Report& report);

struct ExtractedDomain {
  strips::Domain domain;
  std::vector<ExtractedAction> actions;  ///< compiled, aligned with domain.actions
  Report report;
};

/// Encoded transitions of a normalized dataset, with the action labels
/// assigned by the model.
struct LatentTransitions {
  std::vector<std::vector<int>> z0;
  std::vector<std::vector<int>> z1;
  std::vector<int> labels;
};

/// Encodes pairs with the state encoder and labels them with the action head
/// (CSAE/BiCSAE) or leaves labels empty (SAE).
LatentTransitions encode_transitions(models::StateAutoencoder& model, const Matrix& x0, const Matrix& x1);

/// Prune, extract, reconcile, compile and emit for a CSAE or BiCSAE, then
/// sweep the transitions for fidelity.
ExtractedDomain generate_domain(models::CubeSpaceAE& model, const LatentTransitions& data, const Options& options = {});

/// Per-transition actions of an SAE (AMA1).
ExtractedDomain generate_domain_ama1(const LatentTransitions& data);

/// AMA2: ground actions from the AAE's predicted successors of every
/// observed state under every used label.
ExtractedDomain generate_domain_ama2(models::ActionAutoencoder& aae, const LatentTransitions& data);

/// Encodes raw [0, 1] images (normalized with the training statistics) and
/// emits the init as the full state and the goal as a complete conjunction.
/// Throws ConfigError on an image shape mismatch.
strips::Problem generate_problem(models::StateAutoencoder& model, const Normalization& norm,
                                 const std::vector<double>& init_image, const std::vector<double>& goal_image,
                                 const std::string& name = "instance");

}  // namespace latplan::extraction
