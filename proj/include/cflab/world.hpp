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

// Closed synthetic scene universe and its two deterministic renderings.
//
// A scene holds 1-3 objects on a 3x3 grid and up to two relations between
// them. The "image" of a scene is a multi-hot fact vector (plus optional
// Gaussian noise) and its "caption" is the token-count vector of a templated
// sentence. Both are pure functions of the scene (and noise seed).

#ifndef CFLAB_WORLD_HPP_
#define CFLAB_WORLD_HPP_

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cflab/numerics.hpp"
#include "json.hpp"

namespace cflab {

enum class Category { kDog, kCat, kBall, kCar, kTree, kPerson };
enum class Color { kRed, kGreen, kBlue, kYellow };
enum class Size { kSmall, kLarge };
enum class State { kStanding, kLying, kRunning, kStill };
enum class Predicate {
  kLeftOf,
  kRightOf,
  kAbove,
  kBelow,
  kChasing,
  kHolding,
  kKicking,
  kMissing,
  kDropping,
  kNotKicking,
};

inline constexpr std::size_t kNumCategories = 6;
inline constexpr std::size_t kNumColors = 4;
inline constexpr std::size_t kNumSizes = 2;
inline constexpr std::size_t kNumStates = 4;
inline constexpr std::size_t kNumPredicates = 10;
inline constexpr std::size_t kGridSide = 3;
inline constexpr std::size_t kNumCells = kGridSide * kGridSide;
inline constexpr std::size_t kMaxObjects = 3;
inline constexpr std::size_t kMaxRelations = 2;

// Image fact layout. Unary facts bind an attribute to the object's category;
// binary facts are predicate x subject-category x object-category.
inline constexpr std::size_t kColorFactsOffset = 0;
inline constexpr std::size_t kSizeFactsOffset = kColorFactsOffset + kNumCategories * kNumColors;
inline constexpr std::size_t kStateFactsOffset = kSizeFactsOffset + kNumCategories * kNumSizes;
inline constexpr std::size_t kCellFactsOffset = kStateFactsOffset + kNumCategories * kNumStates;
inline constexpr std::size_t kRelationFactsOffset = kCellFactsOffset + kNumCategories * kNumCells;
inline constexpr std::size_t kImageDim =
    kRelationFactsOffset + kNumPredicates * kNumCategories * kNumCategories;
static_assert(kImageDim == 474);

inline constexpr double kDefaultImageNoise = 0.05;

std::string_view name_of(Category c);
std::string_view name_of(Color c);
std::string_view name_of(Size s);
std::string_view name_of(State s);
std::string_view name_of(Predicate p);

Category parse_category(std::string_view name);
Color parse_color(std::string_view name);
Size parse_size(std::string_view name);
State parse_state(std::string_view name);
Predicate parse_predicate(std::string_view name);

struct Cell {
  int row = 0;
  int col = 0;
  std::size_t index() const { return static_cast<std::size_t>(row) * kGridSide + col; }
  auto operator<=>(const Cell&) const = default;
};

struct Object {
  Category category = Category::kDog;
  Color color = Color::kRed;
  Size size = Size::kSmall;
  State state = State::kStanding;
  Cell cell;
  auto operator<=>(const Object&) const = default;
};

struct Relation {
  std::size_t subject = 0;
  Predicate predicate = Predicate::kLeftOf;
  std::size_t object = 1;
  auto operator<=>(const Relation&) const = default;
};

/// Objects carry pairwise-distinct categories and cells; relations connect
/// distinct objects and no two relations share an (unordered) object pair.
struct Scene {
  std::vector<Object> objects;
  std::vector<Relation> relations;
  auto operator<=>(const Scene&) const = default;
};

/// Empty optional when valid, otherwise the first violated invariant.
std::optional<std::string> scene_violation(const Scene& scene);
inline bool is_valid(const Scene& scene) { return !scene_violation(scene).has_value(); }
/// Throws ErrorKind::kInvalidScene.
void validate(const Scene& scene);

/// Objects sorted by category with relations remapped and sorted. Two scenes
/// describe the same world iff their canonical forms are equal.
Scene canonical(const Scene& scene);

/// Number of differing facts between two scenes with aligned object indices.
/// Facts: each object's category, color, size, state and cell, and each
/// relation slot. Object or relation count changes count once per slot.
std::size_t fact_diff(const Scene& a, const Scene& b);

/// Upper bounds for sampled scenes; at most kMaxObjects and kMaxRelations.
struct SceneCaps {
  std::size_t max_objects = kMaxObjects;
  std::size_t max_relations = kMaxRelations;
  bool operator==(const SceneCaps&) const = default;
};

/// Throws ErrorKind::kInvalidConfig outside 1..kMaxObjects, 0..kMaxRelations.
void validate(const SceneCaps& caps);

/// Draws a scene uniformly over all valid configurations within the caps: the object count n
/// is drawn with weight equal to the number of valid scenes with n objects,
/// the relation count r likewise given n, and everything else uniformly
/// (categories and cells without replacement). Three-object scenes with two
/// relations dominate.
Scene sample_scene(Prng& rng, const SceneCaps& caps = {});

/// Token <-> index map over every enumeration word and the template words.
class Vocabulary {
 public:
  Vocabulary();
  static const Vocabulary& standard();

  std::size_t size() const { return words_.size(); }
  std::size_t index(std::string_view word) const;
  const std::string& word(std::size_t i) const { return words_.at(i); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

std::string cell_token(const Cell& cell);

/// "a {size} {color} {category} {state} at {cell}" per object followed by
/// "{subject-category} {predicate} {object-category}" per relation.
std::vector<std::string> caption_tokens(const Scene& scene);
std::string caption_text(const Scene& scene);
Vector render_caption(const Scene& scene, const Vocabulary& vocab = Vocabulary::standard());

/// Token counts of the category prompt "a {category}".
Vector render_category_prompt(Category category,
                              const Vocabulary& vocab = Vocabulary::standard());

std::size_t color_fact(Category c, Color color);
std::size_t size_fact(Category c, Size size);
std::size_t state_fact(Category c, State state);
std::size_t cell_fact(Category c, const Cell& cell);
std::size_t relation_fact(Predicate p, Category subject, Category object);

/// Noise-free multi-hot fact vector of length kImageDim.
Vector fact_vector(const Scene& scene);

/// Indicator of every fact slot that mentions the category.
Vector category_fact_mask(Category category);

/// fact_vector plus i.i.d. N(0, sigma^2) per coordinate. sigma == 0 draws
/// nothing from rng.
Vector render_image(const Scene& scene, Prng& rng, double sigma);

nlohmann::ordered_json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);

}  // namespace cflab

#endif  // CFLAB_WORLD_HPP_
