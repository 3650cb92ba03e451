#include <algorithm>
#include <cmath>

#include "ruleforge/concept_bank.hpp"
#include "ruleforge/errors.hpp"
#include "ruleforge/rng.hpp"

namespace ruleforge {

namespace {

struct Entry {
  const char* name;
  Category category;
  Part part;
};

using C = Category;
using P = Part;

// Spatial names per part, in vocabulary order.
const std::vector<Entry>& ntu74_entries() {
  static const std::vector<Entry> entries = {
      {"head_nod", C::Spatial, P::Head},        {"head_shake", C::Spatial, P::Head},
      {"head_tilt", C::Spatial, P::Head},       {"head_turn", C::Spatial, P::Head},
      {"head_lower", C::Spatial, P::Head},      {"head_static", C::Spatial, P::Head},
      {"hand_grasp", C::Spatial, P::Hand},      {"hand_release", C::Spatial, P::Hand},
      {"hand_wave", C::Spatial, P::Hand},       {"hand_lift_to_face", C::Spatial, P::Hand},
      {"hand_rub", C::Spatial, P::Hand},        {"hand_point", C::Spatial, P::Hand},
      {"hand_clap", C::Spatial, P::Hand},       {"hand_write", C::Spatial, P::Hand},
      {"hand_hold", C::Spatial, P::Hand},       {"hand_push", C::Spatial, P::Hand},
      {"hand_static", C::Spatial, P::Hand},     {"arm_raise", C::Spatial, P::Arm},
      {"arm_lower", C::Spatial, P::Arm},        {"arm_swing", C::Spatial, P::Arm},
      {"arm_extend", C::Spatial, P::Arm},       {"arm_bend", C::Spatial, P::Arm},
      {"arm_cross", C::Spatial, P::Arm},        {"arm_reach", C::Spatial, P::Arm},
      {"arm_throw", C::Spatial, P::Arm},        {"arm_rotate", C::Spatial, P::Arm},
      {"arm_hug", C::Spatial, P::Arm},          {"arm_static", C::Spatial, P::Arm},
      {"hip_bend", C::Spatial, P::Hip},         {"hip_extend", C::Spatial, P::Hip},
      {"hip_rotate", C::Spatial, P::Hip},       {"hip_sit", C::Spatial, P::Hip},
      {"hip_rise", C::Spatial, P::Hip},         {"hip_sway", C::Spatial, P::Hip},
      {"hip_lean", C::Spatial, P::Hip},         {"hip_static", C::Spatial, P::Hip},
      {"leg_walk", C::Spatial, P::Leg},         {"leg_squat", C::Spatial, P::Leg},
      {"leg_jump", C::Spatial, P::Leg},         {"leg_kick", C::Spatial, P::Leg},
      {"leg_lift", C::Spatial, P::Leg},         {"leg_bend", C::Spatial, P::Leg},
      {"leg_stand", C::Spatial, P::Leg},        {"leg_cross", C::Spatial, P::Leg},
      {"leg_static", C::Spatial, P::Leg},       {"foot_step", C::Spatial, P::Foot},
      {"foot_stomp", C::Spatial, P::Foot},      {"foot_tiptoe", C::Spatial, P::Foot},
      {"foot_hop", C::Spatial, P::Foot},        {"foot_slide", C::Spatial, P::Foot},
      {"foot_lift", C::Spatial, P::Foot},       {"foot_static", C::Spatial, P::Foot},
      // direction
      {"motion_upward", C::Temporal, P::None},  {"motion_downward", C::Temporal, P::None},
      {"motion_forward", C::Temporal, P::None}, {"motion_backward", C::Temporal, P::None},
      {"motion_lateral", C::Temporal, P::None}, {"converging", C::Temporal, P::None},
      {"diverging", C::Temporal, P::None},
      // sequence
      {"hands_first", C::Temporal, P::None},    {"legs_first", C::Temporal, P::None},
      {"body_first", C::Temporal, P::None},     {"simultaneous", C::Temporal, P::None},
      {"alternating", C::Temporal, P::None},    {"repetitive", C::Temporal, P::None},
      // dynamics
      {"speed_slow", C::Temporal, P::None},     {"speed_fast", C::Temporal, P::None},
      {"accelerating", C::Temporal, P::None},   {"decelerating", C::Temporal, P::None},
      {"rhythm_regular", C::Temporal, P::None}, {"duration_brief", C::Temporal, P::None},
      {"duration_sustained", C::Temporal, P::None},
      {"motion_smooth", C::Temporal, P::None},
      {"two_person_contact", C::Interaction, P::None},
  };
  return entries;
}

ConceptVocabulary from_entries(const std::vector<Entry>& entries,
                               const std::vector<std::string>& skip = {}) {
  std::vector<Concept> cs;
  for (const auto& e : entries) {
    if (std::find(skip.begin(), skip.end(), e.name) != skip.end()) continue;
    cs.push_back({cs.size(), e.name, e.category, e.part});
  }
  return ConceptVocabulary(std::move(cs));
}

}  // namespace

ConceptVocabulary ntu74_vocabulary() { return from_entries(ntu74_entries()); }

ConceptVocabulary desk67_vocabulary() {
  return from_entries(ntu74_entries(), {"hip_lean", "motion_lateral", "body_first", "repetitive",
                                        "accelerating", "decelerating", "motion_smooth"});
}

ConceptVocabulary fixture_vocabulary(std::string_view name) {
  if (name == "ntu74") return ntu74_vocabulary();
  if (name == "desk67") return desk67_vocabulary();
  throw ValidationError("unknown fixture '" + std::string(name) + "' (expected ntu74 or desk67)");
}

RecordFile ntu74_records() {
  RecordFile f;
  f.actions = {"DrinkWater", "BrushTeeth",  "WearGlasses", "TakeOffGlasses", "Jump",
               "StandUp",    "SitDown",     "Standing",    "Walking",        "HandWaving",
               "KickSomething", "Clapping", "ShakingHands"};
  f.records = {
      {"DrinkWater", {"hand_grasp", "hand_lift_to_face", "arm_bend", "head_tilt", "motion_upward",
                      "duration_brief"}},
      {"BrushTeeth", {"hand_grasp", "hand_lift_to_face", "hand_rub", "arm_bend", "rhythm_regular",
                      "duration_sustained"}},
      {"WearGlasses", {"hand_grasp", "hand_lift_to_face", "arm_raise", "motion_forward",
                       "converging"}},
      {"TakeOffGlasses", {"hand_grasp", "hand_lift_to_face", "arm_raise", "motion_backward",
                          "diverging"}},
      {"Jump", {"leg_squat", "leg_jump", "foot_hop", "arm_swing", "motion_upward", "speed_fast",
                "legs_first"}},
      {"StandUp", {"hip_rise", "leg_stand", "motion_upward", "body_first", "duration_brief"}},
      {"SitDown", {"hip_sit", "leg_bend", "motion_downward", "body_first", "duration_brief"}},
      {"Standing", {"leg_stand", "foot_static", "hip_static", "duration_sustained"}},
      {"Walking", {"leg_walk", "foot_step", "arm_swing", "alternating", "motion_forward",
                   "rhythm_regular"}},
      {"HandWaving", {"hand_wave", "arm_raise", "repetitive", "motion_lateral"}},
      {"KickSomething", {"leg_kick", "foot_lift", "motion_forward", "speed_fast",
                         "duration_brief"}},
      {"Clapping", {"hand_clap", "arm_extend", "converging", "repetitive", "rhythm_regular"}},
      {"ShakingHands", {"hand_grasp", "arm_extend", "rhythm_regular", "two_person_contact"}},
  };
  return f;
}

ConceptVocabulary planted_vocabulary(std::size_t num_concepts) {
  if (num_concepts < 8) throw ValidationError("planted vocabulary needs >= 8 concepts");
  const std::size_t temporal =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.35 * num_concepts)));
  const std::size_t spatial = num_concepts - temporal - 1;

  const auto& all = ntu74_entries();
  std::vector<std::vector<std::string>> by_part(kBodyParts.size());
  std::vector<std::string> temporal_names;
  for (const auto& e : all) {
    if (e.category == Category::Spatial)
      by_part[static_cast<int>(e.part)].push_back(e.name);
    else if (e.category == Category::Temporal)
      temporal_names.push_back(e.name);
  }

  std::vector<std::size_t> per_part(kBodyParts.size(), 0);
  for (std::size_t i = 0; i < spatial; ++i) ++per_part[i % kBodyParts.size()];

  std::vector<Concept> cs;
  for (std::size_t p = 0; p < kBodyParts.size(); ++p)
    for (std::size_t k = 0; k < per_part[p]; ++k) {
      std::string name = k < by_part[p].size()
                             ? by_part[p][k]
                             : std::string(to_string(kBodyParts[p])) + "_" + std::to_string(k);
      cs.push_back({cs.size(), name, Category::Spatial, kBodyParts[p]});
    }
  for (std::size_t k = 0; k < temporal; ++k) {
    std::string name =
        k < temporal_names.size() ? temporal_names[k] : "temporal_" + std::to_string(k);
    cs.push_back({cs.size(), name, Category::Temporal, Part::None});
  }
  cs.push_back({cs.size(), "two_person_contact", Category::Interaction, Part::None});
  return ConceptVocabulary(std::move(cs));
}

AssociationMatrix planted_matrix(const ConceptVocabulary& vocab, std::size_t num_actions,
                                 double density, std::size_t min_distance,
                                 std::uint64_t seed) {
  if (num_actions < 1) throw ValidationError("planted matrix needs >= 1 action");
  if (!(density > 0.0 && density < 1.0))
    throw ValidationError("planted matrix density must lie in (0, 1)");
  auto rng = make_rng(seed, "planted_matrix");
  AssociationMatrix m;
  for (const auto& c : vocab.concepts()) m.concepts.push_back(c.name);
  constexpr int kMaxTries = 100000;
  for (std::size_t a = 0; a < num_actions; ++a) {
    m.actions.push_back("action_" + std::to_string(a));
    int tries = 0;
    for (;; ++tries) {
      if (tries >= kMaxTries)
        throw ValidationError("planted matrix: cannot reach min signature distance " +
                              std::to_string(min_distance));
      std::vector<std::uint8_t> row(vocab.size());
      std::size_t active = 0;
      for (auto& x : row) {
        x = uniform01(rng) < density ? 1 : 0;
        active += x;
      }
      if (active == 0) continue;
      bool ok = true;
      for (const auto& prev : m.rows) {
        std::size_t d = 0;
        for (std::size_t i = 0; i < row.size(); ++i) d += prev[i] != row[i];
        if (d < min_distance) {
          ok = false;
          break;
        }
      }
      if (ok) {
        m.rows.push_back(std::move(row));
        break;
      }
    }
  }
  m.validate();
  return m;
}

}  // namespace ruleforge
