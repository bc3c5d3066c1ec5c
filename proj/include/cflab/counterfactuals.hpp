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

// Symbolic counterfactual generation: single-fact scene edits and the
// training unit built from them (an anchor pair, K jointly edited
// image-caption pairs and J edited images that keep the anchor caption).

#ifndef CFLAB_COUNTERFACTUALS_HPP_
#define CFLAB_COUNTERFACTUALS_HPP_

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "cflab/numerics.hpp"
#include "cflab/world.hpp"
#include "json.hpp"

namespace cflab {

enum class EditKind { kAttribute, kObjectCategory, kRelation, kLocation };
inline constexpr std::size_t kNumEditKinds = 4;
inline constexpr std::array<EditKind, kNumEditKinds> kAllEditKinds = {
    EditKind::kAttribute, EditKind::kObjectCategory, EditKind::kRelation, EditKind::kLocation};

enum class AttributeSlot { kColor, kSize, kState };

std::string_view name_of(EditKind kind);
EditKind parse_edit_kind(std::string_view name);

/// True when the scene has at least one single-fact edit of this kind.
bool admits_edit(const Scene& scene, EditKind kind);

/// Changes exactly one fact of the scene; the new value is uniform over the
/// legal alternatives. Relation edits rewrite one predicate:
///   left-of, right-of, above, below, chasing -> any other of these five
///   kicking -> missing | not-kicking, missing -> kicking,
///   not-kicking -> kicking, holding <-> dropping (causal flip pairs)
/// Throws ErrorKind::kNoLegalEdit when the scene admits no edit of the kind.
Scene apply_edit(const Scene& scene, EditKind kind, Prng& rng);

/// Every distinct single-fact edit of the kind (empty when none is legal).
std::vector<Scene> enumerate_edits(const Scene& scene, EditKind kind);

/// Attribute edit restricted to one slot.
Scene apply_attribute_edit(const Scene& scene, AttributeSlot slot, Prng& rng);

/// Relative weights over edit kinds. Draws are restricted to the kinds the
/// scene admits, renormalized.
struct KindMix {
  std::array<double, kNumEditKinds> weights{1.0, 1.0, 1.0, 1.0};

  static KindMix uniform() { return {}; }
  static KindMix only(EditKind kind);
  KindMix without(EditKind kind) const;
  double weight(EditKind kind) const { return weights[static_cast<std::size_t>(kind)]; }

  /// Throws ErrorKind::kNoLegalEdit if no positive-weight kind is legal.
  EditKind draw(const Scene& scene, Prng& rng) const;

  bool operator==(const KindMix&) const = default;
};

/// How the complete counterfactual pairs are rendered. kTextOnly pairs the
/// anchor image with the edited caption.
enum class PairMode { kJoint, kTextOnly };

std::string_view name_of(PairMode mode);
PairMode parse_pair_mode(std::string_view name);

struct ImageTextPair {
  Vector image;
  Vector caption;
};

struct CompletePair {
  EditKind kind;
  Scene scene;
  ImageTextPair pair;
};

struct EditedImage {
  EditKind kind;
  Scene scene;
  Vector image;
};

CompletePair make_complete_pair(const Scene& scene, EditKind kind, Prng& rng, double sigma);
EditedImage make_edited_image(const Scene& scene, EditKind kind, Prng& rng, double sigma);

struct UnitSpec {
  std::size_t num_complete = 4;  // K
  std::size_t num_edited = 4;    // J
  KindMix kind_mix;
  double sigma = kDefaultImageNoise;
  PairMode mode = PairMode::kJoint;
};

struct CounterfactualUnit {
  Scene anchor_scene;
  ImageTextPair anchor;
  std::vector<CompletePair> complete;
  std::vector<EditedImage> edited;
  // All images of the unit are rendered from one stream seeded here, in the
  // order anchor, complete pairs, edited images.
  std::uint64_t render_seed = 0;
  double sigma = kDefaultImageNoise;
  PairMode mode = PairMode::kJoint;
};

inline constexpr int kDuplicateRetryBudget = 100;

/// Draws K + J distinct single-fact edits of the anchor scene and renders
/// them. Each slot draws its kind from the mix restricted to kinds with an
/// unused edit left, then redraws duplicates (or the anchor itself) of that
/// kind; after 100 failed draws for one slot the call throws
/// ErrorKind::kNoLegalEdit.
CounterfactualUnit assemble_unit(const Scene& scene, const UnitSpec& spec, Prng& rng);

/// Re-renders a unit from its symbolic content. Used by assemble_unit and by
/// the dataset reader, so a stored unit round-trips exactly.
CounterfactualUnit render_unit(const Scene& anchor,
                               const std::vector<std::pair<EditKind, Scene>>& complete,
                               const std::vector<std::pair<EditKind, Scene>>& edited,
                               std::uint64_t render_seed, double sigma, PairMode mode);

/// Symbolic record (scenes, edit kinds, render seed); features are not stored.
nlohmann::ordered_json unit_to_json(const CounterfactualUnit& unit);
CounterfactualUnit unit_from_json(const nlohmann::json& j);

}  // namespace cflab

#endif  // CFLAB_COUNTERFACTUALS_HPP_
