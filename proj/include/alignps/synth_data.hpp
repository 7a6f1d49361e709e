// Synthetic person-search scenes: identity-consistent rendered persons,
// query/gallery splits, and the on-disk dataset format.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "alignps/geometry.hpp"
#include "alignps/image.hpp"

namespace alignps {

// Identity label for annotated-but-unidentified persons.
constexpr int kUnlabeled = -1;

struct IdentitySpec {
  int id = 0;
  std::array<double, 3> torso_color{};
  std::array<double, 3> legs_color{};
  int pattern = 0;          // 0 plain, 1 horizontal stripes, 2 vertical stripes, 3 checker
  double pattern_period = 0.25;  // in person-local units, so it scales with the person
  double aspect = 0.45;          // box width / height
};

struct PersonAnn {
  BoxF box;
  int identity = kUnlabeled;  // >= 0 or kUnlabeled
};

struct SceneSample {
  std::string scene_id;
  ImageU8 image;
  std::vector<PersonAnn> persons;
};

struct Query {
  std::string scene_id;
  BoxF box;
  int identity = 0;
  std::vector<std::string> gallery;  // scene ids, query scene excluded
};

struct SearchSplit {
  std::vector<SceneSample> train;
  std::vector<Query> queries;
  int gallery_size = 0;

  int scene_index(const std::string& scene_id) const;
};

struct GeneratorConfig {
  int n_scenes = 200;
  int n_ids = 25;
  int persons_min = 2;
  int persons_max = 5;
  double scale_jitter = 0.3;
  double illum_jitter = 0.1;
  double unlabeled_fraction = 0.2;
  int image_h = 128;
  int image_w = 128;
  double base_person_height = 0.4;  // fraction of image height
  double max_overlap_iou = 0.3;
  int gallery_size = 20;
  int queries_per_id = 3;
  uint64_t seed = 0;
};

// Deterministic in cfg.seed. Guarantees every labeled identity appears in at
// least two distinct scenes; throws std::runtime_error when persons cannot be
// packed into the image or the identity coverage is infeasible.
SearchSplit generate_dataset(const GeneratorConfig& cfg);
SearchSplit generate_dataset(int n_scenes, int n_ids, int persons_min, int persons_max,
                             double scale_jitter, uint64_t seed);

IdentitySpec identity_spec(const GeneratorConfig& cfg, int id);
ImageU8 render_person_crop(const IdentitySpec& spec, int width, int height, double illum = 1.0);

// Layout: <dir>/images/<scene_id>.png, <dir>/annotations.jsonl, <dir>/split.json
void save_dataset(const SearchSplit& split, const std::string& dir);
SearchSplit load_dataset(const std::string& dir);

// Invariant checks; throw std::runtime_error with a description on failure.
void validate_scene(const SceneSample& scene);
void validate_split(const SearchSplit& split);

// SHA-256 over the annotation, split and image files (order-independent of
// directory listing; file set and contents only).
std::string dataset_content_hash(const std::string& dir);

}  // namespace alignps
