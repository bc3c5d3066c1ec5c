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

#include "cflab/world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace cflab {

namespace {

constexpr std::array<std::string_view, kNumCategories> kCategoryNames = {
    "dog", "cat", "ball", "car", "tree", "person"};
constexpr std::array<std::string_view, kNumColors> kColorNames = {"red", "green", "blue",
                                                                  "yellow"};
constexpr std::array<std::string_view, kNumSizes> kSizeNames = {"small", "large"};
constexpr std::array<std::string_view, kNumStates> kStateNames = {"standing", "lying", "running",
                                                                  "still"};
constexpr std::array<std::string_view, kNumPredicates> kPredicateNames = {
    "left-of", "right-of", "above",   "below",    "chasing",
    "holding", "kicking",  "missing", "dropping", "not-kicking"};
constexpr std::array<std::string_view, 2> kTemplateWords = {"a", "at"};

template <typename Enum, std::size_t N>
Enum parse_enum(const std::array<std::string_view, N>& names, std::string_view name,
                const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == name) return static_cast<Enum>(i);
  }
  throw Error(ErrorKind::kFormat, std::string("unknown ") + what + " '" + std::string(name) + "'");
}

template <typename Enum>
std::size_t idx(Enum e) {
  return static_cast<std::size_t>(e);
}

}  // namespace

std::string_view name_of(Category c) { return kCategoryNames.at(idx(c)); }
std::string_view name_of(Color c) { return kColorNames.at(idx(c)); }
std::string_view name_of(Size s) { return kSizeNames.at(idx(s)); }
std::string_view name_of(State s) { return kStateNames.at(idx(s)); }
std::string_view name_of(Predicate p) { return kPredicateNames.at(idx(p)); }

Category parse_category(std::string_view n) {
  return parse_enum<Category>(kCategoryNames, n, "category");
}
Color parse_color(std::string_view n) { return parse_enum<Color>(kColorNames, n, "color"); }
Size parse_size(std::string_view n) { return parse_enum<Size>(kSizeNames, n, "size"); }
State parse_state(std::string_view n) { return parse_enum<State>(kStateNames, n, "state"); }
Predicate parse_predicate(std::string_view n) {
  return parse_enum<Predicate>(kPredicateNames, n, "predicate");
}

std::optional<std::string> scene_violation(const Scene& scene) {
  const std::size_t n = scene.objects.size();
  if (n < 1 || n > kMaxObjects) return "object count " + std::to_string(n) + " outside [1, 3]";
  if (scene.relations.size() > kMaxRelations) return "more than 2 relations";
  std::set<Category> categories;
  std::set<std::size_t> cells;
  for (const Object& o : scene.objects) {
    if (idx(o.category) >= kNumCategories || idx(o.color) >= kNumColors ||
        idx(o.size) >= kNumSizes || idx(o.state) >= kNumStates) {
      return "object field outside its enumeration";
    }
    if (o.cell.row < 0 || o.cell.row >= static_cast<int>(kGridSide) || o.cell.col < 0 ||
        o.cell.col >= static_cast<int>(kGridSide)) {
      return "cell outside the 3x3 grid";
    }
    if (!categories.insert(o.category).second) return "duplicate category";
    if (!cells.insert(o.cell.index()).second) return "two objects share a cell";
  }
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (const Relation& r : scene.relations) {
    if (r.subject >= n || r.object >= n) return "relation endpoint out of range";
    if (r.subject == r.object) return "relation endpoints coincide";
    if (idx(r.predicate) >= kNumPredicates) return "predicate outside its enumeration";
    if (!pairs.insert(std::minmax(r.subject, r.object)).second) {
      return "two relations share an object pair";
    }
  }
  return std::nullopt;
}

void validate(const Scene& scene) {
  if (auto why = scene_violation(scene)) throw Error(ErrorKind::kInvalidScene, *why);
}

Scene canonical(const Scene& scene) {
  std::vector<std::size_t> order(scene.objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scene.objects[a] < scene.objects[b];
  });
  std::vector<std::size_t> remap(order.size());
  Scene out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    remap[order[i]] = i;
    out.objects.push_back(scene.objects[order[i]]);
  }
  for (const Relation& r : scene.relations) {
    out.relations.push_back({remap[r.subject], r.predicate, remap[r.object]});
  }
  std::sort(out.relations.begin(), out.relations.end());
  return out;
}

std::size_t fact_diff(const Scene& a, const Scene& b) {
  std::size_t diff = 0;
  const std::size_t shared = std::min(a.objects.size(), b.objects.size());
  for (std::size_t i = 0; i < shared; ++i) {
    const Object& x = a.objects[i];
    const Object& y = b.objects[i];
    diff += (x.category != y.category) + (x.color != y.color) + (x.size != y.size) +
            (x.state != y.state) + (x.cell != y.cell);
  }
  diff += std::max(a.objects.size(), b.objects.size()) - shared;
  const std::size_t shared_rel = std::min(a.relations.size(), b.relations.size());
  for (std::size_t i = 0; i < shared_rel; ++i) diff += (a.relations[i] != b.relations[i]);
  diff += std::max(a.relations.size(), b.relations.size()) - shared_rel;
  return diff;
}

namespace {

double choose(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    r = r * static_cast<double>(n - i) / static_cast<double>(i + 1);
  }
  return r;
}

// Oriented relation choices for one unordered pair.
constexpr double kRelationChoices = 2.0 * kNumPredicates;

double relation_weight(std::size_t pairs, std::size_t r) {
  return choose(pairs, r) * std::pow(kRelationChoices, static_cast<double>(r));
}

std::size_t draw_weighted(const std::vector<double>& weights, Prng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

}  // namespace

void validate(const SceneCaps& caps) {
  if (caps.max_objects < 1 || caps.max_objects > kMaxObjects) {
    throw Error(ErrorKind::kInvalidConfig, "world.max_objects must lie in 1.." +
                                               std::to_string(kMaxObjects));
  }
  if (caps.max_relations > kMaxRelations) {
    throw Error(ErrorKind::kInvalidConfig, "world.max_relations must lie in 0.." +
                                               std::to_string(kMaxRelations));
  }
}

Scene sample_scene(Prng& rng, const SceneCaps& caps) {
  validate(caps);
  const double attrs = static_cast<double>(kNumColors * kNumSizes * kNumStates);
  std::vector<double> by_count;
  for (std::size_t n = 1; n <= caps.max_objects; ++n) {
    const std::size_t pairs = n * (n - 1) / 2;
    double relations = 0.0;
    for (std::size_t r = 0; r <= std::min(caps.max_relations, pairs); ++r) {
      relations += relation_weight(pairs, r);
    }
    // Categories are distinguishable, so cells are assigned in order.
    const double placements = choose(kNumCells, n) * std::tgamma(static_cast<double>(n) + 1.0);
    by_count.push_back(choose(kNumCategories, n) * std::pow(attrs, static_cast<double>(n)) *
                       placements * relations);
  }
  const std::size_t n = 1 + draw_weighted(by_count, rng);

  Scene scene;
  std::vector<std::size_t> categories(kNumCategories);
  std::iota(categories.begin(), categories.end(), 0);
  rng.shuffle(categories);
  std::vector<std::size_t> cells(kNumCells);
  std::iota(cells.begin(), cells.end(), 0);
  rng.shuffle(cells);

  for (std::size_t i = 0; i < n; ++i) {
    Object o;
    o.category = static_cast<Category>(categories[i]);
    o.color = static_cast<Color>(rng.uniform_index(kNumColors));
    o.size = static_cast<Size>(rng.uniform_index(kNumSizes));
    o.state = static_cast<State>(rng.uniform_index(kNumStates));
    o.cell = {static_cast<int>(cells[i] / kGridSide), static_cast<int>(cells[i] % kGridSide)};
    scene.objects.push_back(o);
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  std::vector<double> by_relations;
  for (std::size_t r = 0; r <= std::min(caps.max_relations, pairs.size()); ++r) {
    by_relations.push_back(relation_weight(pairs.size(), r));
  }
  const std::size_t n_rel = draw_weighted(by_relations, rng);
  rng.shuffle(pairs);
  for (std::size_t r = 0; r < n_rel; ++r) {
    auto [s, o] = pairs[r];
    if (rng.uniform_index(2) == 1) std::swap(s, o);
    scene.relations.push_back({s, static_cast<Predicate>(rng.uniform_index(kNumPredicates)), o});
  }
  return scene;
}

std::string cell_token(const Cell& cell) {
  return "r" + std::to_string(cell.row) + "c" + std::to_string(cell.col);
}

Vocabulary::Vocabulary() {
  std::vector<std::string> all;
  auto add = [&](const auto& names) {
    for (std::string_view w : names) all.emplace_back(w);
  };
  add(kCategoryNames);
  add(kColorNames);
  add(kSizeNames);
  add(kStateNames);
  add(kPredicateNames);
  add(kTemplateWords);
  for (int r = 0; r < static_cast<int>(kGridSide); ++r) {
    for (int c = 0; c < static_cast<int>(kGridSide); ++c) all.push_back(cell_token({r, c}));
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  words_ = std::move(all);
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab;
  return vocab;
}

std::size_t Vocabulary::index(std::string_view word) const {
  auto it = index_.find(word);
  if (it == index_.end()) {
    throw Error(ErrorKind::kFormat, "word '" + std::string(word) + "' not in vocabulary");
  }
  return it->second;
}

std::vector<std::string> caption_tokens(const Scene& scene) {
  std::vector<std::string> tokens;
  for (const Object& o : scene.objects) {
    tokens.emplace_back("a");
    tokens.emplace_back(name_of(o.size));
    tokens.emplace_back(name_of(o.color));
    tokens.emplace_back(name_of(o.category));
    tokens.emplace_back(name_of(o.state));
    tokens.emplace_back("at");
    tokens.push_back(cell_token(o.cell));
  }
  for (const Relation& r : scene.relations) {
    tokens.emplace_back(name_of(scene.objects.at(r.subject).category));
    tokens.emplace_back(name_of(r.predicate));
    tokens.emplace_back(name_of(scene.objects.at(r.object).category));
  }
  return tokens;
}

std::string caption_text(const Scene& scene) {
  std::ostringstream out;
  const auto tokens = caption_tokens(scene);
  for (std::size_t i = 0; i < tokens.size(); ++i) out << (i ? " " : "") << tokens[i];
  return out.str();
}

Vector render_caption(const Scene& scene, const Vocabulary& vocab) {
  Vector counts(vocab.size(), 0.0);
  for (const std::string& t : caption_tokens(scene)) counts[vocab.index(t)] += 1.0;
  return counts;
}

Vector render_category_prompt(Category category, const Vocabulary& vocab) {
  Vector counts(vocab.size(), 0.0);
  counts[vocab.index("a")] += 1.0;
  counts[vocab.index(name_of(category))] += 1.0;
  return counts;
}

std::size_t color_fact(Category c, Color color) {
  return kColorFactsOffset + idx(c) * kNumColors + idx(color);
}
std::size_t size_fact(Category c, Size size) {
  return kSizeFactsOffset + idx(c) * kNumSizes + idx(size);
}
std::size_t state_fact(Category c, State state) {
  return kStateFactsOffset + idx(c) * kNumStates + idx(state);
}
std::size_t cell_fact(Category c, const Cell& cell) {
  return kCellFactsOffset + idx(c) * kNumCells + cell.index();
}
std::size_t relation_fact(Predicate p, Category subject, Category object) {
  return kRelationFactsOffset + (idx(p) * kNumCategories + idx(subject)) * kNumCategories +
         idx(object);
}

Vector fact_vector(const Scene& scene) {
  Vector facts(kImageDim, 0.0);
  for (const Object& o : scene.objects) {
    facts[color_fact(o.category, o.color)] += 1.0;
    facts[size_fact(o.category, o.size)] += 1.0;
    facts[state_fact(o.category, o.state)] += 1.0;
    facts[cell_fact(o.category, o.cell)] += 1.0;
  }
  for (const Relation& r : scene.relations) {
    facts[relation_fact(r.predicate, scene.objects.at(r.subject).category,
                        scene.objects.at(r.object).category)] += 1.0;
  }
  return facts;
}

Vector category_fact_mask(Category category) {
  Vector mask(kImageDim, 0.0);
  for (std::size_t k = 0; k < kNumColors; ++k) mask[color_fact(category, Color(k))] = 1.0;
  for (std::size_t k = 0; k < kNumSizes; ++k) mask[size_fact(category, Size(k))] = 1.0;
  for (std::size_t k = 0; k < kNumStates; ++k) mask[state_fact(category, State(k))] = 1.0;
  for (int r = 0; r < static_cast<int>(kGridSide); ++r) {
    for (int c = 0; c < static_cast<int>(kGridSide); ++c) mask[cell_fact(category, {r, c})] = 1.0;
  }
  for (std::size_t p = 0; p < kNumPredicates; ++p) {
    for (std::size_t other = 0; other < kNumCategories; ++other) {
      mask[relation_fact(Predicate(p), category, Category(other))] = 1.0;
      mask[relation_fact(Predicate(p), Category(other), category)] = 1.0;
    }
  }
  return mask;
}

Vector render_image(const Scene& scene, Prng& rng, double sigma) {
  if (sigma < 0.0) throw Error(ErrorKind::kInvalidConfig, "image noise sigma must be >= 0");
  Vector image = fact_vector(scene);
  if (sigma > 0.0) {
    for (double& x : image) x += sigma * rng.normal();
  }
  return image;
}

nlohmann::ordered_json scene_to_json(const Scene& scene) {
  nlohmann::ordered_json objects = nlohmann::ordered_json::array();
  for (const Object& o : scene.objects) {
    nlohmann::ordered_json jo;
    jo["category"] = name_of(o.category);
    jo["color"] = name_of(o.color);
    jo["size"] = name_of(o.size);
    jo["state"] = name_of(o.state);
    jo["cell"] = {o.cell.row, o.cell.col};
    objects.push_back(std::move(jo));
  }
  nlohmann::ordered_json relations = nlohmann::ordered_json::array();
  for (const Relation& r : scene.relations) {
    nlohmann::ordered_json jr;
    jr["s"] = r.subject;
    jr["p"] = name_of(r.predicate);
    jr["o"] = r.object;
    relations.push_back(std::move(jr));
  }
  nlohmann::ordered_json j;
  j["objects"] = std::move(objects);
  j["relations"] = std::move(relations);
  return j;
}

Scene scene_from_json(const nlohmann::json& j) {
  Scene scene;
  try {
    for (const auto& jo : j.at("objects")) {
      Object o;
      o.category = parse_category(jo.at("category").get<std::string>());
      o.color = parse_color(jo.at("color").get<std::string>());
      o.size = parse_size(jo.at("size").get<std::string>());
      o.state = parse_state(jo.at("state").get<std::string>());
      const auto& cell = jo.at("cell");
      if (!cell.is_array() || cell.size() != 2) {
        throw Error(ErrorKind::kFormat, "cell must be a [row, col] pair");
      }
      o.cell = {cell[0].get<int>(), cell[1].get<int>()};
      scene.objects.push_back(o);
    }
    for (const auto& jr : j.at("relations")) {
      scene.relations.push_back({jr.at("s").get<std::size_t>(),
                                 parse_predicate(jr.at("p").get<std::string>()),
                                 jr.at("o").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("malformed scene record: ") + e.what());
  }
  validate(scene);
  return scene;
}

}  // namespace cflab
