#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <json.hpp>
#include <map>
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "alignps/synth_data.hpp"

using namespace alignps;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("alignps_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double pearson(const ImageU8& a, const ImageU8& b) {
  REQUIRE(a.rgb.size() == b.rgb.size());
  const size_t n = a.rgb.size();
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += a.rgb[i];
    mb += b.rgb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < n; ++i) {
    sab += (a.rgb[i] - ma) * (b.rgb[i] - mb);
    saa += (a.rgb[i] - ma) * (a.rgb[i] - ma);
    sbb += (b.rgb[i] - mb) * (b.rgb[i] - mb);
  }
  return sab / std::max(std::sqrt(saa * sbb), 1e-9);
}

ImageU8 crop_resize(const ImageU8& img, const BoxF& box, int w, int h) {
  ImageU8 out = ImageU8::filled(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sy = static_cast<int>(box.y1 + (y + 0.5) / h * box.height());
      const int sx = static_cast<int>(box.x1 + (x + 0.5) / w * box.width());
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  return out;
}

}  // namespace

TEST_CASE("round-robin placement covers each identity in exactly two scenes") {
  auto split = generate_dataset(4, 2, 1, 1, 0.0, 7);
  REQUIRE(split.train.size() == 4);
  std::map<int, std::set<std::string>> scenes_of;
  for (const auto& s : split.train) {
    REQUIRE(s.persons.size() == 1);
    if (s.persons[0].identity >= 0) scenes_of[s.persons[0].identity].insert(s.scene_id);
  }
  REQUIRE(scenes_of.size() == 2);
  CHECK(scenes_of[0].size() == 2);
  CHECK(scenes_of[1].size() == 2);
}

TEST_CASE("generation is deterministic: same seed yields byte-identical annotations") {
  auto dir_a = temp_dir("det_a"), dir_b = temp_dir("det_b");
  save_dataset(generate_dataset(6, 3, 1, 2, 0.2, 7), dir_a.string());
  save_dataset(generate_dataset(6, 3, 1, 2, 0.2, 7), dir_b.string());
  for (const char* f : {"annotations.jsonl", "split.json"}) {
    std::ifstream fa(dir_a / f), fb(dir_b / f);
    std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ca == cb);
    CHECK_FALSE(ca.empty());
  }
  CHECK(dataset_content_hash(dir_a.string()) == dataset_content_hash(dir_b.string()));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("the 200-scene split has enough queries with nonempty galleries") {
  GeneratorConfig cfg;
  cfg.n_scenes = 200;
  cfg.n_ids = 25;
  cfg.persons_min = 2;
  cfg.persons_max = 5;
  cfg.scale_jitter = 0.3;
  cfg.seed = 1;
  auto split = generate_dataset(cfg);
  CHECK(split.queries.size() >= 50);
  for (const auto& q : split.queries) CHECK_FALSE(q.gallery.empty());
  validate_split(split);  // throws on any invariant violation

  // Roughly the configured fraction of instances is unlabeled.
  int total = 0, unl = 0;
  for (const auto& s : split.train)
    for (const auto& p : s.persons) {
      ++total;
      if (p.identity == kUnlabeled) ++unl;
    }
  const double frac = static_cast<double>(unl) / total;
  CHECK(frac > 0.1);
  CHECK(frac < 0.3);
}

TEST_CASE("scene invariants hold over many generated scenes") {
  GeneratorConfig cfg;
  cfg.n_scenes = 250;  // ~1000 person instances
  cfg.n_ids = 20;
  cfg.persons_min = 3;
  cfg.persons_max = 6;
  cfg.seed = 9;
  auto split = generate_dataset(cfg);
  for (const auto& s : split.train) {
    validate_scene(s);
    for (const auto& p : s.persons) {
      CHECK(p.box.x1 >= 0);
      CHECK(p.box.y2 <= s.image.height);
      CHECK(p.box.width() >= 4);
      CHECK(p.box.height() >= 4);
      CHECK(p.identity >= kUnlabeled);
    }
  }
}

TEST_CASE("infeasible packing raises") {
  GeneratorConfig cfg;
  cfg.n_scenes = 2;
  cfg.n_ids = 8;
  cfg.persons_min = 8;
  cfg.persons_max = 8;
  cfg.base_person_height = 0.9;  // near image-sized persons cannot coexist
  cfg.max_overlap_iou = 0.05;
  cfg.seed = 3;
  CHECK_THROWS_AS(generate_dataset(cfg), std::runtime_error);
}

TEST_CASE("save/load round trip is exact") {
  auto split = generate_dataset(5, 3, 1, 2, 0.25, 11);
  auto dir = temp_dir("roundtrip");
  save_dataset(split, dir.string());
  auto loaded = load_dataset(dir.string());

  REQUIRE(loaded.train.size() == split.train.size());
  for (size_t i = 0; i < split.train.size(); ++i) {
    CHECK(loaded.train[i].scene_id == split.train[i].scene_id);
    CHECK(loaded.train[i].image.rgb == split.train[i].image.rgb);
    REQUIRE(loaded.train[i].persons.size() == split.train[i].persons.size());
    for (size_t p = 0; p < split.train[i].persons.size(); ++p) {
      CHECK(loaded.train[i].persons[p].identity == split.train[i].persons[p].identity);
      CHECK(loaded.train[i].persons[p].box.x1 == split.train[i].persons[p].box.x1);
      CHECK(loaded.train[i].persons[p].box.y2 == split.train[i].persons[p].box.y2);
    }
  }
  REQUIRE(loaded.queries.size() == split.queries.size());
  for (size_t i = 0; i < split.queries.size(); ++i) {
    CHECK(loaded.queries[i].scene_id == split.queries[i].scene_id);
    CHECK(loaded.queries[i].identity == split.queries[i].identity);
    CHECK(loaded.queries[i].gallery == split.queries[i].gallery);
  }
  CHECK(loaded.gallery_size == split.gallery_size);
  fs::remove_all(dir);
}

TEST_CASE("a box outside the image is rejected at load with its line number") {
  auto split = generate_dataset(4, 2, 1, 1, 0.0, 5);
  auto dir = temp_dir("badbox");
  save_dataset(split, dir.string());

  // Corrupt the second annotation line with an out-of-bounds box.
  std::ifstream in(dir / "annotations.jsonl");
  std::vector<std::string> lines;
  std::string l;
  while (std::getline(in, l)) lines.push_back(l);
  in.close();
  auto j = nlohmann::json::parse(lines[1]);
  j["persons"][0]["box"][0] = -5.0;
  lines[1] = j.dump();
  std::ofstream out(dir / "annotations.jsonl");
  for (const auto& s : lines) out << s << "\n";
  out.close();

  try {
    load_dataset(dir.string());
    FAIL("expected a validation error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("a malformed annotation line reports a parse error with its line number") {
  auto dir = temp_dir("badjson");
  fs::create_directories(dir / "images");
  std::ofstream out(dir / "annotations.jsonl");
  out << "{\"scene_id\": \"s0\", \"ima\n";
  out.close();
  try {
    load_dataset(dir.string());
    FAIL("expected a parse error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 1") != std::string::npos);
    CHECK(msg.find("parse error") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("empty scene list round-trips as a valid empty dataset") {
  SearchSplit empty;
  auto dir = temp_dir("empty");
  save_dataset(empty, dir.string());
  auto loaded = load_dataset(dir.string());
  CHECK(loaded.train.empty());
  CHECK(loaded.queries.empty());
  fs::remove_all(dir);
}

TEST_CASE("identity consistency: same-id crops correlate more than cross-id crops") {
  GeneratorConfig cfg;
  cfg.n_scenes = 60;
  cfg.n_ids = 10;
  cfg.persons_min = 2;
  cfg.persons_max = 4;
  cfg.scale_jitter = 0.0;
  cfg.illum_jitter = 0.0;
  cfg.seed = 21;
  auto split = generate_dataset(cfg);

  struct Crop {
    int id;
    ImageU8 img;
  };
  std::vector<Crop> crops;
  for (const auto& s : split.train)
    for (const auto& p : s.persons)
      if (p.identity >= 0) crops.push_back({p.identity, crop_resize(s.image, p.box, 12, 28)});

  std::mt19937_64 rng(99);
  double same_sum = 0, diff_sum = 0;
  int same_n = 0, diff_n = 0;
  while (same_n < 100 || diff_n < 100) {
    const auto& a = crops[rng() % crops.size()];
    const auto& b = crops[rng() % crops.size()];
    if (&a == &b) continue;
    const double c = pearson(a.img, b.img);
    if (a.id == b.id && same_n < 100) {
      same_sum += c;
      ++same_n;
    } else if (a.id != b.id && diff_n < 100) {
      diff_sum += c;
      ++diff_n;
    }
  }
  CHECK(same_sum / same_n > diff_sum / diff_n);
}

TEST_CASE("identity specs are deterministic and distinct") {
  GeneratorConfig cfg;
  cfg.seed = 4;
  auto a = identity_spec(cfg, 3);
  auto b = identity_spec(cfg, 3);
  CHECK(a.torso_color == b.torso_color);
  CHECK(a.pattern == b.pattern);
  auto c = identity_spec(cfg, 4);
  const bool distinct = a.torso_color != c.torso_color || a.legs_color != c.legs_color;
  CHECK(distinct);
}
