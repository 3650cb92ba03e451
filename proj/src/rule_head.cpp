#include "ruleforge/rule_head.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>

#include "ruleforge/errors.hpp"

namespace ruleforge {

std::vector<NamedTensor> Classifier::tensors() {
  return {{"classifier.weight", &weight}, {"classifier.bias", &bias}};
}

std::vector<double> classify(std::span<const double> r, const Classifier& c) {
  if (r.size() != c.weight.cols)
    throw ValidationError("classify: rule width " + std::to_string(r.size()) + ", expected " +
                          std::to_string(c.weight.cols));
  std::vector<double> y(c.weight.rows);
  for (std::size_t a = 0; a < y.size(); ++a) {
    // r is mostly 0/1; skipping zeros keeps the discrete path cheap.
    const double* w = c.weight.v.data() + a * c.weight.cols;
    double s = c.bias.v[a];
    for (std::size_t j = 0; j < r.size(); ++j)
      if (r[j] != 0.0) s += w[j] * r[j];
    y[a] = s;
  }
  return y;
}

LossGrad task_loss(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw ValidationError("task_loss: label out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  LossGrad out;
  out.loss = -(logits[label] - mx - std::log(z));
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = std::exp(logits[i] - mx) / z;
  out.grad[label] -= 1.0;
  return out;
}

std::vector<double> classify_backward(std::span<const double> d_logits,
                                      std::span<const double> r, const Classifier& c,
                                      Classifier* grad) {
  const std::size_t R = c.weight.cols;
  std::vector<double> dr(R, 0.0);
  for (std::size_t a = 0; a < c.weight.rows; ++a) {
    const double g = d_logits[a];
    if (g == 0.0) continue;
    const double* w = c.weight.v.data() + a * R;
    for (std::size_t j = 0; j < R; ++j) dr[j] += g * w[j];
    if (grad) {
      double* dw = grad->weight.v.data() + a * R;
      for (std::size_t j = 0; j < R; ++j) dw[j] += g * r[j];
      grad->bias.v[a] += g;
    }
  }
  return dr;
}

// ---- expressions ----------------------------------------------------------------

namespace {

std::string literal_key(std::size_t id, bool neg) {
  return (neg ? "~" : "") + std::to_string(id);
}

bool child_less(const ExprPtr& a, const ExprPtr& b) {
  const bool la = a->kind == Expr::Kind::Literal, lb = b->kind == Expr::Kind::Literal;
  if (la != lb) return la;
  if (la) return std::pair(a->concept_id, a->negated) < std::pair(b->concept_id, b->negated);
  return a->key < b->key;
}

}  // namespace

ExprPtr make_const(bool value) {
  static const ExprPtr t = [] {
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::True;
    e->key = "true";
    return e;
  }();
  static const ExprPtr f = [] {
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::False;
    e->key = "false";
    return e;
  }();
  return value ? t : f;
}

ExprPtr make_literal(std::size_t concept_id, bool negated) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::Literal;
  e->concept_id = concept_id;
  e->negated = negated;
  e->key = literal_key(concept_id, negated);
  return e;
}

ExprPtr make_node(Expr::Kind op, std::vector<ExprPtr> children) {
  if (op != Expr::Kind::And && op != Expr::Kind::Or)
    throw ValidationError("make_node: operator must be and/or");
  const bool is_and = op == Expr::Kind::And;
  const Expr::Kind identity = is_and ? Expr::Kind::True : Expr::Kind::False;
  std::vector<ExprPtr> flat;
  for (auto& c : children) {
    if (c->kind == identity) continue;
    if (c->is_constant()) return make_const(!is_and);  // annihilator
    if (c->kind == op)
      flat.insert(flat.end(), c->children.begin(), c->children.end());
    else
      flat.push_back(c);
  }
  std::sort(flat.begin(), flat.end(), child_less);
  flat.erase(std::unique(flat.begin(), flat.end(),
                         [](const ExprPtr& a, const ExprPtr& b) { return a->key == b->key; }),
             flat.end());
  if (flat.empty()) return make_const(is_and);
  if (flat.size() == 1) return flat.front();
  auto e = std::make_shared<Expr>();
  e->kind = op;
  e->key = is_and ? "(and" : "(or";
  for (const auto& c : flat) e->key += " " + c->key;
  e->key += ")";
  e->children = std::move(flat);
  return e;
}

bool evaluate(const Expr& e, std::span<const std::uint8_t> c_bar) {
  switch (e.kind) {
    case Expr::Kind::True: return true;
    case Expr::Kind::False: return false;
    case Expr::Kind::Literal: return (c_bar[e.concept_id] != 0) != e.negated;
    case Expr::Kind::And:
      for (const auto& c : e.children)
        if (!evaluate(*c, c_bar)) return false;
      return true;
    case Expr::Kind::Or:
      for (const auto& c : e.children)
        if (evaluate(*c, c_bar)) return true;
      return false;
  }
  return false;
}

std::string render_infix(const Expr& e, const ConceptVocabulary& vocab) {
  switch (e.kind) {
    case Expr::Kind::True: return "true";
    case Expr::Kind::False: return "false";
    case Expr::Kind::Literal:
      return (e.negated ? "¬" : "") + vocab[e.concept_id].name;
    default: break;
  }
  const char* op = e.kind == Expr::Kind::And ? " ∧ " : " ∨ ";
  std::string s;
  for (std::size_t i = 0; i < e.children.size(); ++i) {
    if (i) s += op;
    const auto& c = *e.children[i];
    const bool wrap = c.kind == Expr::Kind::And || c.kind == Expr::Kind::Or;
    s += wrap ? "(" + render_infix(c, vocab) + ")" : render_infix(c, vocab);
  }
  return s;
}

std::string render_prefix(const Expr& e, const ConceptVocabulary& vocab) {
  switch (e.kind) {
    case Expr::Kind::True: return "true";
    case Expr::Kind::False: return "false";
    case Expr::Kind::Literal:
      return e.negated ? "(not " + vocab[e.concept_id].name + ")" : vocab[e.concept_id].name;
    default: break;
  }
  std::string s = e.kind == Expr::Kind::And ? "(and" : "(or";
  for (const auto& c : e.children) s += " " + render_prefix(*c, vocab);
  return s + ")";
}

namespace {

class PrefixParser {
 public:
  PrefixParser(std::string_view text, const ConceptVocabulary& vocab) : s_(text), vocab_(vocab) {}

  ExprPtr parse_all() {
    ExprPtr e = parse();
    skip_ws();
    if (pos_ != s_.size()) fail("trailing input");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError("rule expression: " + what + " at offset " + std::to_string(pos_));
  }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  std::string atom() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != '(' && s_[pos_] != ')' &&
           !std::isspace(static_cast<unsigned char>(s_[pos_])))
      ++pos_;
    if (pos_ == start) fail("expected a token");
    return std::string(s_.substr(start, pos_ - start));
  }
  void expect(char c) {
    skip_ws();
    if (pos_ >= s_.size() || s_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  ExprPtr parse() {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == '(') {
      ++pos_;
      const std::string op = atom();
      if (op == "not") {
        const std::string name = atom();
        expect(')');
        return make_literal(vocab_.index_of(name), true);
      }
      Expr::Kind kind;
      if (op == "and")
        kind = Expr::Kind::And;
      else if (op == "or")
        kind = Expr::Kind::Or;
      else
        fail("unknown operator '" + op + "'");
      std::vector<ExprPtr> children;
      for (;;) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ')') break;
        children.push_back(parse());
      }
      expect(')');
      return make_node(kind, std::move(children));
    }
    const std::string name = atom();
    if (name == "true") return make_const(true);
    if (name == "false") return make_const(false);
    return make_literal(vocab_.index_of(name), false);
  }

  std::string_view s_;
  const ConceptVocabulary& vocab_;
  std::size_t pos_ = 0;
};

}  // namespace

ExprPtr parse_prefix(std::string_view text, const ConceptVocabulary& vocab) {
  return PrefixParser(text, vocab).parse_all();
}

// ---- rule sets ------------------------------------------------------------------

std::string rule_name(std::size_t id) { return "r" + std::to_string(id); }

namespace {

std::size_t parse_rule_name(const std::string& s) {
  if (s.size() < 2 || s[0] != 'r') throw ValidationError("bad rule id '" + s + "'");
  try {
    return std::stoul(s.substr(1));
  } catch (const std::exception&) {
    throw ValidationError("bad rule id '" + s + "'");
  }
}

void sort_terms(std::vector<RuleTerm>& terms) {
  std::stable_sort(terms.begin(), terms.end(), [](const RuleTerm& a, const RuleTerm& b) {
    const double fa = std::abs(a.weight), fb = std::abs(b.weight);
    if (fa != fb) return fa > fb;
    return a.rule_id < b.rule_id;
  });
}

}  // namespace

RuleSet extract_rules(const LogicNetwork& net, const ConceptVocabulary& vocab,
                      const Classifier* classifier, const std::vector<std::string>& action_names) {
  if (vocab.size() != net.num_concepts())
    throw ValidationError("extract_rules: vocabulary size differs from network");
  const std::size_t C = net.num_concepts();
  const bool skip = net.config().skip;

  std::vector<ExprPtr> preds;
  for (std::size_t i = 0; i < C; ++i) preds.push_back(make_literal(i, false));
  if (net.config().negation)
    for (std::size_t i = 0; i < C; ++i) preds.push_back(make_literal(i, true));

  RuleSet rs;
  auto add_rule = [&](ExprPtr e, std::size_t layer, std::size_t node, const char* kind) {
    rs.rules.push_back({rs.rules.size(), std::move(e), {layer, node, kind}});
  };
  if (skip)
    for (std::size_t i = 0; i < preds.size(); ++i) add_rule(preds[i], 0, i, "predicate");

  std::vector<ExprPtr> input = preds;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    const std::size_t n = layer.and_w.rows, m = layer.and_w.cols;
    std::vector<ExprPtr> out(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<ExprPtr> a, b;
      for (std::size_t j = 0; j < m; ++j) {
        if (layer.and_w(i, j) > kBinarizeThreshold) a.push_back(input[j]);
        if (layer.or_w(i, j) > kBinarizeThreshold) b.push_back(input[j]);
      }
      out[i] = make_node(Expr::Kind::And, std::move(a));
      out[n + i] = make_node(Expr::Kind::Or, std::move(b));
    }
    if (skip || l + 1 == net.layers.size()) {
      for (std::size_t i = 0; i < n; ++i) add_rule(out[i], l + 1, i, "and");
      for (std::size_t i = 0; i < n; ++i) add_rule(out[n + i], l + 1, i, "or");
    }
    input = out;
    if (skip) input.insert(input.end(), preds.begin(), preds.end());
  }

  if (classifier) {
    if (classifier->weight.cols != rs.rules.size())
      throw ValidationError("extract_rules: classifier width differs from rule count");
    for (std::size_t a = 0; a < classifier->num_actions(); ++a) {
      ActionTerms at;
      at.name = a < action_names.size() ? action_names[a] : "action_" + std::to_string(a);
      for (std::size_t j = 0; j < rs.rules.size(); ++j)
        if (const double w = classifier->weight(a, j); w != 0.0) at.terms.push_back({j, w});
      sort_terms(at.terms);
      rs.actions.push_back(std::move(at));
    }
  }
  return rs;
}

Json ruleset_to_json(const RuleSet& rs, const ConceptVocabulary& vocab) {
  Json rules = Json::array();
  for (const auto& r : rs.rules) {
    rules.push_back({{"id", rule_name(r.id)},
                     {"expr", render_prefix(*r.expr, vocab)},
                     {"source",
                      {{"layer", r.source.layer}, {"node", r.source.node}, {"kind", r.source.kind}}},
                     {"constant", r.expr->is_constant()}});
  }
  Json actions = Json::array();
  for (const auto& a : rs.actions) {
    Json terms = Json::array();
    for (const auto& t : a.terms) terms.push_back({{"rule_id", rule_name(t.rule_id)}, {"weight", t.weight}});
    actions.push_back({{"name", a.name}, {"terms", terms}});
  }
  return {{"schema_version", 1}, {"rules", rules}, {"actions", actions}};
}

RuleSet ruleset_from_json(const Json& j, const ConceptVocabulary& vocab) {
  try {
    if (j.at("schema_version").get<int>() != 1)
      throw ValidationError("rules: unsupported schema_version");
    RuleSet rs;
    for (const auto& r : j.at("rules")) {
      Rule rule;
      rule.id = parse_rule_name(r.at("id").get<std::string>());
      rule.expr = parse_prefix(r.at("expr").get<std::string>(), vocab);
      const auto& s = r.at("source");
      rule.source = {s.at("layer").get<std::size_t>(), s.at("node").get<std::size_t>(),
                     s.at("kind").get<std::string>()};
      rs.rules.push_back(std::move(rule));
    }
    for (const auto& a : j.at("actions")) {
      ActionTerms at;
      at.name = a.at("name").get<std::string>();
      for (const auto& t : a.at("terms"))
        at.terms.push_back({parse_rule_name(t.at("rule_id").get<std::string>()),
                            t.at("weight").get<double>()});
      rs.actions.push_back(std::move(at));
    }
    return rs;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("rules: ") + e.what());
  }
}

std::vector<Explanation> explain_action(const RuleSet& rs, const ConceptVocabulary& vocab,
                                        std::size_t action, std::size_t top_k) {
  if (action >= rs.actions.size()) throw ValidationError("explain: action out of range");
  std::vector<RuleTerm> terms = rs.actions[action].terms;
  sort_terms(terms);
  top_k = std::min({top_k, rs.rules.size(), terms.size()});
  std::vector<Explanation> out;
  for (std::size_t k = 0; k < top_k; ++k) {
    const auto& t = terms[k];
    out.push_back({t.rule_id, t.weight, render_infix(*rs.rules.at(t.rule_id).expr, vocab)});
  }
  return out;
}

std::string render_explanation(const std::string& action, const std::vector<Explanation>& terms) {
  std::string s = action + " ←";
  char buf[64];
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double w = terms[i].weight;
    const char* sign = w < 0 ? (i ? " − " : " −") : (i ? " + " : " ");
    std::snprintf(buf, sizeof buf, "%.2f·", std::abs(w));
    s += sign;
    s += buf + rule_name(terms[i].rule_id);
  }
  if (terms.empty()) s += " 0";
  return s;
}

InstanceReport explain_instance(std::span<const double> c_hat, std::span<const double> rules,
                                std::span<const double> logits, std::size_t label,
                                const Classifier& classifier, const ConceptVocabulary& vocab) {
  InstanceReport rep;
  for (std::size_t i = 0; i < c_hat.size(); ++i) rep.concepts.push_back({i, vocab[i].name, c_hat[i]});
  std::stable_sort(rep.concepts.begin(), rep.concepts.end(),
                   [](const auto& a, const auto& b) { return a.activation > b.activation; });
  rep.predicted = static_cast<std::size_t>(
      std::max_element(logits.begin(), logits.end()) - logits.begin());
  rep.label = label;
  rep.bias = classifier.bias.v[rep.predicted];
  for (std::size_t j = 0; j < rules.size(); ++j)
    if (rules[j] > 0.5) rep.fired.push_back({j, classifier.weight(rep.predicted, j)});
  return rep;
}

Json instance_report_to_json(const InstanceReport& r) {
  Json concepts = Json::array();
  for (const auto& c : r.concepts)
    concepts.push_back({{"id", c.id}, {"name", c.name}, {"activation", c.activation}});
  Json fired = Json::array();
  for (const auto& t : r.fired) fired.push_back({{"rule_id", rule_name(t.rule_id)}, {"weight", t.weight}});
  return {{"predicted", r.predicted}, {"label", r.label}, {"bias", r.bias},
          {"concepts", concepts}, {"fired_rules", fired}};
}

InstanceReport instance_report_from_json(const Json& j) {
  try {
    InstanceReport r;
    r.predicted = j.at("predicted").get<std::size_t>();
    r.label = j.at("label").get<std::size_t>();
    r.bias = j.at("bias").get<double>();
    for (const auto& c : j.at("concepts"))
      r.concepts.push_back({c.at("id").get<std::size_t>(), c.at("name").get<std::string>(),
                            c.at("activation").get<double>()});
    for (const auto& t : j.at("fired_rules"))
      r.fired.push_back({parse_rule_name(t.at("rule_id").get<std::string>()),
                         t.at("weight").get<double>()});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("report: ") + e.what());
  }
}

}  // namespace ruleforge
