#include "alignps/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace alignps {

namespace {

constexpr double kPi = 3.14159265358979323846;

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 step over (seed ^ stream-tag)
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::array<double, 3> random_color(std::mt19937_64& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

double color_dist2(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

IdentitySpec sample_identity(std::mt19937_64& rng, int id) {
  IdentitySpec spec;
  spec.id = id;
  spec.torso_color = random_color(rng, 0.25, 1.0);
  spec.legs_color = random_color(rng, 0.25, 1.0);
  spec.pattern = std::uniform_int_distribution<int>(0, 3)(rng);
  spec.pattern_period = uniform(rng, 0.18, 0.4);
  spec.aspect = uniform(rng, 0.38, 0.55);
  return spec;
}

// Rounded-rectangle mask in person-local coordinates u,v in [0,1].
bool inside_person(double u, double v, double aspect) {
  const double r = 0.25;  // corner radius relative to width
  const double ru = r, rv = r * aspect;  // radius in local units keeps corners circular
  const double cu = std::min(u, 1.0 - u), cv = std::min(v, 1.0 - v);
  if (cu >= ru || cv >= rv) return true;
  const double du = (ru - cu) / ru, dv = (rv - cv) / rv;
  return du * du + dv * dv <= 1.0;
}

double pattern_gain(const IdentitySpec& spec, double u, double v) {
  switch (spec.pattern) {
    case 1: return std::sin(2.0 * kPi * v / spec.pattern_period) >= 0.0 ? 1.18 : 0.82;
    case 2: return std::sin(2.0 * kPi * u / spec.pattern_period) >= 0.0 ? 1.18 : 0.82;
    case 3:
      return std::sin(2.0 * kPi * u / spec.pattern_period) *
                     std::sin(2.0 * kPi * v / spec.pattern_period) >=
                     0.0
                 ? 1.18
                 : 0.82;
    default: return 1.0;
  }
}

void draw_person(ImageU8& img, const BoxF& box, const IdentitySpec& spec, double illum) {
  const int x1 = static_cast<int>(box.x1), y1 = static_cast<int>(box.y1);
  const int x2 = static_cast<int>(box.x2), y2 = static_cast<int>(box.y2);
  const double w = box.width(), h = box.height();
  for (int y = y1; y < y2; ++y)
    for (int x = x1; x < x2; ++x) {
      const double u = (x - box.x1 + 0.5) / w;
      const double v = (y - box.y1 + 0.5) / h;
      if (!inside_person(u, v, spec.aspect)) continue;
      const auto& base = v < 0.55 ? spec.torso_color : spec.legs_color;
      const double edge = (u < 0.08 || u > 0.92 || v < 0.05 || v > 0.95) ? 0.7 : 1.0;
      const double gain = pattern_gain(spec, u, v) * illum * edge;
      for (int c = 0; c < 3; ++c) {
        const double val = std::clamp(base[c] * gain, 0.0, 1.0);
        img.at(y, x, c) = static_cast<uint8_t>(std::lround(val * 255.0));
      }
    }
}

struct Slot {
  int scene = 0;
  int identity = kUnlabeled;
};

}  // namespace

int SearchSplit::scene_index(const std::string& scene_id) const {
  for (size_t i = 0; i < train.size(); ++i)
    if (train[i].scene_id == scene_id) return static_cast<int>(i);
  return -1;
}

IdentitySpec identity_spec(const GeneratorConfig& cfg, int id) {
  // Deterministic per (seed, id); rejection keeps appearances separated.
  std::mt19937_64 rng(mix_seed(cfg.seed, 0xA11CE));
  std::vector<IdentitySpec> specs;
  for (int i = 0; i <= id; ++i) {
    IdentitySpec s = sample_identity(rng, i);
    for (int attempt = 0; attempt < 50; ++attempt) {
      bool ok = true;
      for (const auto& prev : specs)
        if (color_dist2(prev.torso_color, s.torso_color) +
                color_dist2(prev.legs_color, s.legs_color) <
            0.15)
          ok = false;
      if (ok) break;
      s = sample_identity(rng, i);
    }
    specs.push_back(s);
  }
  return specs.back();
}

ImageU8 render_person_crop(const IdentitySpec& spec, int width, int height, double illum) {
  ImageU8 img = ImageU8::filled(width, height, 30);
  draw_person(img, BoxF{0, 0, static_cast<double>(width), static_cast<double>(height)}, spec,
              illum);
  return img;
}

SearchSplit generate_dataset(const GeneratorConfig& cfg) {
  if (cfg.n_ids < 2) throw std::invalid_argument("generate_dataset: n_ids must be >= 2");
  if (cfg.persons_min < 1 || cfg.persons_max > 8 || cfg.persons_min > cfg.persons_max)
    throw std::invalid_argument("generate_dataset: persons_per_scene must lie in [1,8]");
  if (cfg.image_h % 32 != 0 || cfg.image_w % 32 != 0)
    throw std::invalid_argument("generate_dataset: image dims must be multiples of 32");

  std::mt19937_64 rng(mix_seed(cfg.seed, 1));

  // Identity appearances (one rng pass; identical to identity_spec()).
  std::vector<IdentitySpec> specs;
  {
    std::mt19937_64 srng(mix_seed(cfg.seed, 0xA11CE));
    for (int i = 0; i < cfg.n_ids; ++i) {
      IdentitySpec s = sample_identity(srng, i);
      for (int attempt = 0; attempt < 50; ++attempt) {
        bool ok = true;
        for (const auto& prev : specs)
          if (color_dist2(prev.torso_color, s.torso_color) +
                  color_dist2(prev.legs_color, s.legs_color) <
              0.15)
            ok = false;
        if (ok) break;
        s = sample_identity(srng, i);
      }
      specs.push_back(s);
    }
  }

  // Labeled slots per scene, identities assigned cyclically; a slot whose
  // identity is already present in the scene is skipped forward.
  std::vector<int> scene_count(static_cast<size_t>(cfg.n_scenes));
  std::uniform_int_distribution<int> count_dist(cfg.persons_min, cfg.persons_max);
  int total_slots = 0;
  for (int s = 0; s < cfg.n_scenes; ++s) {
    scene_count[s] = count_dist(rng);
    total_slots += scene_count[s];
  }
  if (total_slots < 2 * cfg.n_ids)
    throw std::runtime_error(
        "generate_dataset: infeasible identity coverage (need every identity in >= 2 scenes)");

  std::vector<Slot> slots;
  int cyclic = 0;
  for (int s = 0; s < cfg.n_scenes; ++s) {
    std::vector<int> in_scene;
    for (int j = 0; j < scene_count[s]; ++j) {
      int id = -1;
      for (int probe = 0; probe < cfg.n_ids; ++probe) {
        const int cand = (cyclic + probe) % cfg.n_ids;
        if (std::find(in_scene.begin(), in_scene.end(), cand) == in_scene.end()) {
          id = cand;
          cyclic = cand + 1;
          break;
        }
      }
      slots.push_back({s, id});  // id stays kUnlabeled when scene already holds all ids
      if (id >= 0) in_scene.push_back(id);
    }
  }

  // Convert a fraction of slots to UNLABELED, never dropping an identity
  // below two distinct labeled scenes.
  if (cfg.unlabeled_fraction > 0.0) {
    std::vector<size_t> order(slots.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    auto labeled_scenes = [&](int id) {
      std::vector<int> scenes;
      for (const auto& sl : slots)
        if (sl.identity == id && std::find(scenes.begin(), scenes.end(), sl.scene) == scenes.end())
          scenes.push_back(sl.scene);
      return scenes;
    };
    int want = static_cast<int>(std::lround(cfg.unlabeled_fraction * total_slots));
    for (const auto& sl : slots)
      if (sl.identity == kUnlabeled) --want;
    for (size_t oi = 0; oi < order.size() && want > 0; ++oi) {
      Slot& sl = slots[order[oi]];
      if (sl.identity == kUnlabeled) continue;
      const int id = sl.identity;
      sl.identity = kUnlabeled;
      if (static_cast<int>(labeled_scenes(id).size()) < 2) {
        sl.identity = id;  // would break coverage, revert
      } else {
        --want;
      }
    }
  }

  for (int id = 0; id < cfg.n_ids; ++id) {
    std::vector<int> scenes;
    for (const auto& sl : slots)
      if (sl.identity == id && std::find(scenes.begin(), scenes.end(), sl.scene) == scenes.end())
        scenes.push_back(sl.scene);
    if (scenes.size() < 2)
      throw std::runtime_error("generate_dataset: identity coverage infeasible for id " +
                               std::to_string(id));
  }

  // Place and render scenes.
  SearchSplit split;
  split.gallery_size = cfg.gallery_size;
  size_t slot_pos = 0;
  for (int s = 0; s < cfg.n_scenes; ++s) {
    SceneSample scene;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%04d", s);
    scene.scene_id = buf;

    std::mt19937_64 srng(mix_seed(cfg.seed, 0xB0B0 + static_cast<uint64_t>(s)));
    ImageU8 img = ImageU8::filled(cfg.image_w, cfg.image_h);
    const auto bg0 = random_color(srng, 0.05, 0.45), bg1 = random_color(srng, 0.05, 0.45);
    for (int y = 0; y < cfg.image_h; ++y)
      for (int x = 0; x < cfg.image_w; ++x) {
        const double t = 0.5 * (static_cast<double>(x) / cfg.image_w +
                                static_cast<double>(y) / cfg.image_h);
        for (int c = 0; c < 3; ++c) {
          const double noise = uniform(srng, -0.02, 0.02);
          const double v = std::clamp(bg0[c] * (1 - t) + bg1[c] * t + noise, 0.0, 1.0);
          img.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0));
        }
      }
    // Sparse clutter rectangles behind the persons.
    const int n_clutter = std::uniform_int_distribution<int>(1, 3)(srng);
    for (int k = 0; k < n_clutter; ++k) {
      const int cw = std::uniform_int_distribution<int>(6, 18)(srng);
      const int ch = std::uniform_int_distribution<int>(6, 18)(srng);
      const int cx = std::uniform_int_distribution<int>(0, cfg.image_w - cw - 1)(srng);
      const int cy = std::uniform_int_distribution<int>(0, cfg.image_h - ch - 1)(srng);
      const auto col = random_color(srng, 0.1, 0.5);
      for (int y = cy; y < cy + ch; ++y)
        for (int x = cx; x < cx + cw; ++x)
          for (int c = 0; c < 3; ++c)
            img.at(y, x, c) = static_cast<uint8_t>(std::lround(col[c] * 255.0));
    }

    for (int j = 0; j < scene_count[s]; ++j, ++slot_pos) {
      const Slot& sl = slots[slot_pos];
      IdentitySpec spec =
          sl.identity >= 0 ? specs[static_cast<size_t>(sl.identity)]
                           : sample_identity(srng, kUnlabeled);
      const double jit = cfg.scale_jitter > 0 ? uniform(srng, -cfg.scale_jitter, cfg.scale_jitter)
                                              : 0.0;
      int ph = static_cast<int>(std::lround(cfg.base_person_height * cfg.image_h * (1.0 + jit)));
      ph = std::clamp(ph, 8, cfg.image_h - 2);
      int pw = std::clamp(static_cast<int>(std::lround(spec.aspect * ph)), 5, cfg.image_w - 2);

      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        const int x1 = std::uniform_int_distribution<int>(1, cfg.image_w - pw - 1)(srng);
        const int y1 = std::uniform_int_distribution<int>(1, cfg.image_h - ph - 1)(srng);
        BoxF box{static_cast<double>(x1), static_cast<double>(y1),
                 static_cast<double>(x1 + pw), static_cast<double>(y1 + ph)};
        bool clear = true;
        for (const auto& p : scene.persons)
          if (iou(box, p.box) > cfg.max_overlap_iou) clear = false;
        if (!clear) continue;
        const double illum =
            cfg.illum_jitter > 0 ? 1.0 + uniform(srng, -cfg.illum_jitter, cfg.illum_jitter) : 1.0;
        draw_person(img, box, spec, illum);
        scene.persons.push_back({box, sl.identity});
        placed = true;
      }
      if (!placed)
        throw std::runtime_error("generate_dataset: infeasible packing in scene " +
                                 scene.scene_id + " (too many persons for image size)");
    }

    scene.image = std::move(img);
    validate_scene(scene);
    split.train.push_back(std::move(scene));
  }

  // Queries and galleries over the scene pool.
  std::vector<std::vector<int>> id_scenes(static_cast<size_t>(cfg.n_ids));
  for (size_t i = 0; i < split.train.size(); ++i)
    for (const auto& p : split.train[i].persons)
      if (p.identity >= 0) {
        auto& v = id_scenes[static_cast<size_t>(p.identity)];
        if (std::find(v.begin(), v.end(), static_cast<int>(i)) == v.end())
          v.push_back(static_cast<int>(i));
      }

  std::mt19937_64 qrng(mix_seed(cfg.seed, 0xDEAD));
  for (int id = 0; id < cfg.n_ids; ++id) {
    auto scenes = id_scenes[static_cast<size_t>(id)];
    if (scenes.size() < 2) continue;
    std::shuffle(scenes.begin(), scenes.end(), qrng);
    const int n_q = std::min<int>(cfg.queries_per_id, static_cast<int>(scenes.size()));
    for (int qi = 0; qi < n_q; ++qi) {
      const int qs = scenes[static_cast<size_t>(qi)];
      Query q;
      q.scene_id = split.train[static_cast<size_t>(qs)].scene_id;
      q.identity = id;
      for (const auto& p : split.train[static_cast<size_t>(qs)].persons)
        if (p.identity == id) q.box = p.box;

      std::vector<std::string> truth, distract;
      for (int si : id_scenes[static_cast<size_t>(id)])
        if (si != qs) truth.push_back(split.train[static_cast<size_t>(si)].scene_id);
      for (size_t i = 0; i < split.train.size(); ++i) {
        if (static_cast<int>(i) == qs) continue;
        const auto& sid = split.train[i].scene_id;
        if (std::find(truth.begin(), truth.end(), sid) == truth.end()) distract.push_back(sid);
      }
      std::shuffle(distract.begin(), distract.end(), qrng);
      q.gallery = truth;
      for (const auto& d : distract) {
        if (static_cast<int>(q.gallery.size()) >= cfg.gallery_size) break;
        q.gallery.push_back(d);
      }
      if (static_cast<int>(q.gallery.size()) > cfg.gallery_size)
        q.gallery.resize(static_cast<size_t>(cfg.gallery_size));
      if (!q.gallery.empty()) split.queries.push_back(std::move(q));
    }
  }

  validate_split(split);
  return split;
}

SearchSplit generate_dataset(int n_scenes, int n_ids, int persons_min, int persons_max,
                             double scale_jitter, uint64_t seed) {
  GeneratorConfig cfg;
  cfg.n_scenes = n_scenes;
  cfg.n_ids = n_ids;
  cfg.persons_min = persons_min;
  cfg.persons_max = persons_max;
  cfg.scale_jitter = scale_jitter;
  if (scale_jitter == 0.0) cfg.illum_jitter = 0.0;
  cfg.seed = seed;
  return generate_dataset(cfg);
}

void validate_scene(const SceneSample& scene) {
  auto fail = [&](const std::string& why) {
    throw std::runtime_error("scene " + scene.scene_id + ": " + why);
  };
  if (scene.image.width <= 0 || scene.image.height <= 0) fail("empty image");
  for (const auto& p : scene.persons) {
    if (!(p.box.x1 >= 0 && p.box.y1 >= 0 && p.box.x2 <= scene.image.width &&
          p.box.y2 <= scene.image.height))
      fail("box outside image bounds");
    if (p.box.width() < 4.0 || p.box.height() < 4.0) fail("box smaller than 4 px");
    if (p.identity < kUnlabeled) fail("invalid identity label");
  }
}

void validate_split(const SearchSplit& split) {
  for (const auto& scene : split.train) validate_scene(scene);
  for (const auto& q : split.queries) {
    if (q.identity < 0) throw std::runtime_error("query with unlabeled identity");
    bool found = false;
    for (const auto& g : q.gallery) {
      if (g == q.scene_id)
        throw std::runtime_error("query scene " + q.scene_id + " contained in its own gallery");
      const int idx = split.scene_index(g);
      if (idx < 0) throw std::runtime_error("gallery scene " + g + " missing from dataset");
      for (const auto& p : split.train[static_cast<size_t>(idx)].persons)
        if (p.identity == q.identity) found = true;
    }
    if (!found)
      throw std::runtime_error("query identity " + std::to_string(q.identity) +
                               " absent from its gallery");
  }
}

}  // namespace alignps
