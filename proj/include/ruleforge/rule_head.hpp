#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ruleforge/concept_bank.hpp"
#include "ruleforge/decoder.hpp"
#include "ruleforge/json_io.hpp"
#include "ruleforge/logic.hpp"

namespace ruleforge {

// y = V r + b.
struct Classifier {
  Mat weight;  // |A| x R
  Mat bias;    // 1 x |A|

  Classifier() = default;
  Classifier(std::size_t actions, std::size_t rule_width)
      : weight(actions, rule_width), bias(1, actions) {}
  std::size_t num_actions() const { return weight.rows; }
  std::vector<NamedTensor> tensors();
};

std::vector<double> classify(std::span<const double> r, const Classifier& c);
// Softmax cross-entropy at `label`; grad is d loss / d logits.
LossGrad task_loss(std::span<const double> logits, std::size_t label);
// Accumulates dV, db into grad (when non-null) and returns d r.
std::vector<double> classify_backward(std::span<const double> d_logits,
                                      std::span<const double> r, const Classifier& c,
                                      Classifier* grad);

// ---- expressions ----------------------------------------------------------------

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  enum class Kind { True, False, Literal, And, Or };
  Kind kind = Kind::True;
  std::size_t concept_id = 0;  // Literal only
  bool negated = false;        // Literal only
  std::vector<ExprPtr> children;
  std::string key;  // canonical prefix rendering by concept id, used for ordering

  bool is_constant() const { return kind == Kind::True || kind == Kind::False; }
};

ExprPtr make_const(bool value);
ExprPtr make_literal(std::size_t concept_id, bool negated);
// Flattens nested same-operator children, drops identities, absorbs
// annihilators, dedups and orders children (literals by concept id first).
// One remaining child collapses to that child; none yields the vacuous constant.
ExprPtr make_node(Expr::Kind op, std::vector<ExprPtr> children);

bool evaluate(const Expr& e, std::span<const std::uint8_t> c_bar);
std::string render_infix(const Expr& e, const ConceptVocabulary& vocab);
// "(and leg_squat (not arm_swing))", "true", "false".
std::string render_prefix(const Expr& e, const ConceptVocabulary& vocab);
ExprPtr parse_prefix(std::string_view text, const ConceptVocabulary& vocab);

// ---- rule sets ------------------------------------------------------------------

struct RuleSource {
  std::size_t layer = 0;  // 0 for raw predicates, l >= 1 for logic layers
  std::size_t node = 0;
  std::string kind;       // predicate | and | or
};

struct Rule {
  std::size_t id = 0;  // position in r
  ExprPtr expr;
  RuleSource source;
};

struct RuleTerm {
  std::size_t rule_id = 0;
  double weight = 0.0;
};

struct ActionTerms {
  std::string name;
  std::vector<RuleTerm> terms;  // sorted by |weight| descending, then rule id
};

struct RuleSet {
  std::vector<Rule> rules;
  std::vector<ActionTerms> actions;
};

std::string rule_name(std::size_t id);  // "r12"

// Builds one expression per slot of r from the binarized switchboards. When
// `classifier` is given, per-action terms list every nonzero weight.
RuleSet extract_rules(const LogicNetwork& net, const ConceptVocabulary& vocab,
                      const Classifier* classifier = nullptr,
                      const std::vector<std::string>& action_names = {});

Json ruleset_to_json(const RuleSet& rs, const ConceptVocabulary& vocab);
RuleSet ruleset_from_json(const Json& j, const ConceptVocabulary& vocab);

struct Explanation {
  std::size_t rule_id;
  double weight;
  std::string expression;
};

// Top rules by |V[action, j]| (ties by rule id); top_k clamps to R.
std::vector<Explanation> explain_action(const RuleSet& rs, const ConceptVocabulary& vocab,
                                        std::size_t action, std::size_t top_k);
// "Jump <- 0.82*r1 + 0.45*r3 - 0.31*r7"
std::string render_explanation(const std::string& action,
                               const std::vector<Explanation>& terms);

struct InstanceReport {
  struct ConceptScore {
    std::size_t id;
    std::string name;
    double activation;
  };
  std::vector<ConceptScore> concepts;  // by activation descending, ties by id
  std::vector<RuleTerm> fired;         // r_j = 1 with V[pred, j]
  double bias = 0.0;
  std::size_t predicted = 0;
  std::size_t label = 0;
};

InstanceReport explain_instance(std::span<const double> c_hat, std::span<const double> rules,
                                std::span<const double> logits, std::size_t label,
                                const Classifier& classifier, const ConceptVocabulary& vocab);
Json instance_report_to_json(const InstanceReport& r);
InstanceReport instance_report_from_json(const Json& j);

}  // namespace ruleforge
