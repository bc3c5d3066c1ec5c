// Copyright 2026 The cflab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cflab/counterfactuals.hpp"

#include <algorithm>
#include <array>
#include <set>

namespace cflab {

namespace {

constexpr std::array<std::string_view, kNumEditKinds> kEditKindNames = {"attribute", "object",
                                                                        "relation", "location"};

template <typename Enum>
Enum draw_other(Enum current, std::size_t count, Prng& rng) {
  // Uniform over the count - 1 values different from current.
  std::size_t pick = rng.uniform_index(count - 1);
  if (pick >= static_cast<std::size_t>(current)) ++pick;
  return static_cast<Enum>(pick);
}

std::vector<Relation> relation_rewrites(const Relation& r) {
  auto with = [&](Predicate p) { return Relation{r.subject, p, r.object}; };
  constexpr std::array kFree{Predicate::kLeftOf, Predicate::kRightOf, Predicate::kAbove,
                             Predicate::kBelow, Predicate::kChasing};
  switch (r.predicate) {
    case Predicate::kLeftOf:
    case Predicate::kRightOf:
    case Predicate::kAbove:
    case Predicate::kBelow:
    case Predicate::kChasing: {
      std::vector<Relation> out;
      for (Predicate p : kFree) {
        if (p != r.predicate) out.push_back(with(p));
      }
      return out;
    }
    case Predicate::kHolding: return {with(Predicate::kDropping)};
    case Predicate::kDropping: return {with(Predicate::kHolding)};
    case Predicate::kKicking: return {with(Predicate::kMissing), with(Predicate::kNotKicking)};
    case Predicate::kMissing: return {with(Predicate::kKicking)};
    case Predicate::kNotKicking: return {with(Predicate::kKicking)};
  }
  return {};
}

}  // namespace

std::string_view name_of(EditKind kind) {
  return kEditKindNames.at(static_cast<std::size_t>(kind));
}

EditKind parse_edit_kind(std::string_view name) {
  for (std::size_t i = 0; i < kNumEditKinds; ++i) {
    if (kEditKindNames[i] == name) return static_cast<EditKind>(i);
  }
  throw Error(ErrorKind::kFormat, "unknown edit kind '" + std::string(name) + "'");
}

std::string_view name_of(PairMode mode) { return mode == PairMode::kJoint ? "joint" : "text-only"; }

PairMode parse_pair_mode(std::string_view name) {
  if (name == "joint") return PairMode::kJoint;
  if (name == "text-only") return PairMode::kTextOnly;
  throw Error(ErrorKind::kFormat, "unknown pair mode '" + std::string(name) + "'");
}

bool admits_edit(const Scene& scene, EditKind kind) {
  switch (kind) {
    case EditKind::kAttribute: return !scene.objects.empty();
    case EditKind::kObjectCategory:
      return !scene.objects.empty() && scene.objects.size() < kNumCategories;
    case EditKind::kRelation: return !scene.relations.empty();
    case EditKind::kLocation: return !scene.objects.empty() && scene.objects.size() < kNumCells;
  }
  return false;
}

Scene apply_attribute_edit(const Scene& scene, AttributeSlot slot, Prng& rng) {
  if (scene.objects.empty()) throw Error(ErrorKind::kNoLegalEdit, "scene has no objects");
  Scene out = scene;
  Object& o = out.objects[rng.uniform_index(out.objects.size())];
  switch (slot) {
    case AttributeSlot::kColor: o.color = draw_other(o.color, kNumColors, rng); break;
    case AttributeSlot::kSize: o.size = draw_other(o.size, kNumSizes, rng); break;
    case AttributeSlot::kState: o.state = draw_other(o.state, kNumStates, rng); break;
  }
  return out;
}

Scene apply_edit(const Scene& scene, EditKind kind, Prng& rng) {
  if (!admits_edit(scene, kind)) {
    throw Error(ErrorKind::kNoLegalEdit,
                "scene admits no " + std::string(name_of(kind)) + " edit");
  }
  switch (kind) {
    case EditKind::kAttribute:
      return apply_attribute_edit(scene, static_cast<AttributeSlot>(rng.uniform_index(3)), rng);

    case EditKind::kObjectCategory: {
      Scene out = scene;
      Object& o = out.objects[rng.uniform_index(out.objects.size())];
      std::vector<Category> absent;
      for (std::size_t c = 0; c < kNumCategories; ++c) {
        auto cat = static_cast<Category>(c);
        bool present = std::any_of(scene.objects.begin(), scene.objects.end(),
                                   [&](const Object& x) { return x.category == cat; });
        if (!present) absent.push_back(cat);
      }
      o.category = absent[rng.uniform_index(absent.size())];
      return out;
    }

    case EditKind::kRelation: {
      Scene out = scene;
      const std::size_t r = rng.uniform_index(out.relations.size());
      const auto rewrites = relation_rewrites(out.relations[r]);
      out.relations[r] = rewrites[rng.uniform_index(rewrites.size())];
      return out;
    }

    case EditKind::kLocation: {
      Scene out = scene;
      Object& o = out.objects[rng.uniform_index(out.objects.size())];
      std::vector<Cell> free;
      for (int r = 0; r < static_cast<int>(kGridSide); ++r) {
        for (int c = 0; c < static_cast<int>(kGridSide); ++c) {
          Cell cell{r, c};
          bool taken = std::any_of(scene.objects.begin(), scene.objects.end(),
                                   [&](const Object& x) { return x.cell == cell; });
          if (!taken) free.push_back(cell);
        }
      }
      o.cell = free[rng.uniform_index(free.size())];
      return out;
    }
  }
  throw Error(ErrorKind::kNoLegalEdit, "unknown edit kind");
}

std::vector<Scene> enumerate_edits(const Scene& scene, EditKind kind) {
  std::vector<Scene> out;
  if (!admits_edit(scene, kind)) return out;
  auto each_object = [&](auto&& mutate) {
    for (std::size_t i = 0; i < scene.objects.size(); ++i) mutate(i);
  };
  switch (kind) {
    case EditKind::kAttribute:
      each_object([&](std::size_t i) {
        for (std::size_t v = 0; v < kNumColors; ++v) {
          Scene e = scene;
          e.objects[i].color = static_cast<Color>(v);
          if (e.objects[i].color != scene.objects[i].color) out.push_back(std::move(e));
        }
        for (std::size_t v = 0; v < kNumSizes; ++v) {
          Scene e = scene;
          e.objects[i].size = static_cast<Size>(v);
          if (e.objects[i].size != scene.objects[i].size) out.push_back(std::move(e));
        }
        for (std::size_t v = 0; v < kNumStates; ++v) {
          Scene e = scene;
          e.objects[i].state = static_cast<State>(v);
          if (e.objects[i].state != scene.objects[i].state) out.push_back(std::move(e));
        }
      });
      break;
    case EditKind::kObjectCategory:
      each_object([&](std::size_t i) {
        for (std::size_t c = 0; c < kNumCategories; ++c) {
          Scene e = scene;
          e.objects[i].category = static_cast<Category>(c);
          if (is_valid(e) && e.objects[i].category != scene.objects[i].category) {
            out.push_back(std::move(e));
          }
        }
      });
      break;
    case EditKind::kRelation:
      for (std::size_t r = 0; r < scene.relations.size(); ++r) {
        for (const Relation& rw : relation_rewrites(scene.relations[r])) {
          Scene e = scene;
          e.relations[r] = rw;
          out.push_back(std::move(e));
        }
      }
      break;
    case EditKind::kLocation:
      each_object([&](std::size_t i) {
        for (std::size_t cell = 0; cell < kNumCells; ++cell) {
          Scene e = scene;
          e.objects[i].cell = {static_cast<int>(cell / kGridSide),
                               static_cast<int>(cell % kGridSide)};
          if (is_valid(e) && !(e.objects[i].cell == scene.objects[i].cell)) {
            out.push_back(std::move(e));
          }
        }
      });
      break;
  }
  return out;
}

KindMix KindMix::only(EditKind kind) {
  KindMix mix;
  mix.weights.fill(0.0);
  mix.weights[static_cast<std::size_t>(kind)] = 1.0;
  return mix;
}

KindMix KindMix::without(EditKind kind) const {
  KindMix mix = *this;
  mix.weights[static_cast<std::size_t>(kind)] = 0.0;
  return mix;
}

EditKind KindMix::draw(const Scene& scene, Prng& rng) const {
  std::array<double, kNumEditKinds> legal{};
  double total = 0.0;
  for (std::size_t k = 0; k < kNumEditKinds; ++k) {
    if (weights[k] > 0.0 && admits_edit(scene, kAllEditKinds[k])) {
      legal[k] = weights[k];
      total += weights[k];
    }
  }
  if (total <= 0.0) {
    throw Error(ErrorKind::kNoLegalEdit, "no edit kind in the mix applies to this scene");
  }
  double u = rng.uniform() * total;
  std::size_t last = 0;
  for (std::size_t k = 0; k < kNumEditKinds; ++k) {
    if (legal[k] <= 0.0) continue;
    last = k;
    if (u < legal[k]) return kAllEditKinds[k];
    u -= legal[k];
  }
  return kAllEditKinds[last];
}

CompletePair make_complete_pair(const Scene& scene, EditKind kind, Prng& rng, double sigma) {
  Scene edited = apply_edit(scene, kind, rng);
  ImageTextPair pair{render_image(edited, rng, sigma), render_caption(edited)};
  return {kind, std::move(edited), std::move(pair)};
}

EditedImage make_edited_image(const Scene& scene, EditKind kind, Prng& rng, double sigma) {
  Scene edited = apply_edit(scene, kind, rng);
  Vector image = render_image(edited, rng, sigma);
  return {kind, std::move(edited), std::move(image)};
}

CounterfactualUnit render_unit(const Scene& anchor,
                               const std::vector<std::pair<EditKind, Scene>>& complete,
                               const std::vector<std::pair<EditKind, Scene>>& edited,
                               std::uint64_t render_seed, double sigma, PairMode mode) {
  CounterfactualUnit unit;
  unit.anchor_scene = anchor;
  unit.render_seed = render_seed;
  unit.sigma = sigma;
  unit.mode = mode;
  Prng rng(render_seed);
  unit.anchor = {render_image(anchor, rng, sigma), render_caption(anchor)};
  for (const auto& [kind, scene] : complete) {
    Vector image = mode == PairMode::kJoint ? render_image(scene, rng, sigma) : unit.anchor.image;
    unit.complete.push_back({kind, scene, {std::move(image), render_caption(scene)}});
  }
  for (const auto& [kind, scene] : edited) {
    unit.edited.push_back({kind, scene, render_image(scene, rng, sigma)});
  }
  return unit;
}

CounterfactualUnit assemble_unit(const Scene& scene, const UnitSpec& spec, Prng& rng) {
  if (spec.num_complete + spec.num_edited == 0) {
    throw Error(ErrorKind::kEmptyCounterfactuals, "a unit needs K + J >= 1");
  }
  validate(scene);
  std::set<Scene> seen{canonical(scene)};
  // Unused distinct edits per kind; a kind leaves the mix once exhausted.
  std::array<std::set<Scene>, kNumEditKinds> unused;
  for (std::size_t k = 0; k < kNumEditKinds; ++k) {
    for (const Scene& e : enumerate_edits(scene, kAllEditKinds[k])) unused[k].insert(canonical(e));
  }
  auto draw_slot = [&]() {
    KindMix mix = spec.kind_mix;
    for (std::size_t k = 0; k < kNumEditKinds; ++k) {
      if (unused[k].empty()) mix.weights[k] = 0.0;
    }
    const EditKind kind = mix.draw(scene, rng);
    auto& pool = unused[static_cast<std::size_t>(kind)];
    for (int attempt = 0; attempt < kDuplicateRetryBudget; ++attempt) {
      Scene edited = apply_edit(scene, kind, rng);
      Scene key = canonical(edited);
      if (seen.insert(key).second) {
        pool.erase(key);
        return std::make_pair(kind, std::move(edited));
      }
    }
    throw Error(ErrorKind::kNoLegalEdit,
                "no new distinct edit after " + std::to_string(kDuplicateRetryBudget) + " draws");
  };
  std::vector<std::pair<EditKind, Scene>> complete, edited;
  for (std::size_t k = 0; k < spec.num_complete; ++k) complete.push_back(draw_slot());
  for (std::size_t j = 0; j < spec.num_edited; ++j) edited.push_back(draw_slot());
  return render_unit(scene, complete, edited, rng.next_u64(), spec.sigma, spec.mode);
}

nlohmann::ordered_json unit_to_json(const CounterfactualUnit& unit) {
  auto edits = [](const auto& list) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& e : list) {
      nlohmann::ordered_json je;
      je["kind"] = name_of(e.kind);
      je["scene"] = scene_to_json(e.scene);
      arr.push_back(std::move(je));
    }
    return arr;
  };
  nlohmann::ordered_json j;
  j["render_seed"] = unit.render_seed;
  j["sigma"] = unit.sigma;
  j["mode"] = name_of(unit.mode);
  j["anchor"] = scene_to_json(unit.anchor_scene);
  j["complete"] = edits(unit.complete);
  j["edited"] = edits(unit.edited);
  return j;
}

CounterfactualUnit unit_from_json(const nlohmann::json& j) {
  try {
    const Scene anchor = scene_from_json(j.at("anchor"));
    auto edits = [&](const nlohmann::json& arr) {
      std::vector<std::pair<EditKind, Scene>> out;
      for (const auto& je : arr) {
        Scene s = scene_from_json(je.at("scene"));
        if (fact_diff(anchor, s) != 1) {
          throw Error(ErrorKind::kFormat, "stored counterfactual is not a single-fact edit");
        }
        out.emplace_back(parse_edit_kind(je.at("kind").get<std::string>()), std::move(s));
      }
      return out;
    };
    return render_unit(anchor, edits(j.at("complete")), edits(j.at("edited")),
                       j.at("render_seed").get<std::uint64_t>(), j.at("sigma").get<double>(),
                       parse_pair_mode(j.at("mode").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("malformed unit record: ") + e.what());
  }
}

}  // namespace cflab
