#include <json.hpp>

#include <filesystem>
#include <fstream>

#include "alignps/encoding.hpp"
#include "alignps/synth_data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace alignps {

namespace {

json box_to_json(const BoxF& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

BoxF box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("box must be [x1,y1,x2,y2]");
  return BoxF{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

void save_dataset(const SearchSplit& split, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");

  std::ofstream ann(fs::path(dir) / "annotations.jsonl");
  if (!ann) throw std::runtime_error("save_dataset: cannot write annotations in " + dir);
  for (const auto& scene : split.train) {
    const std::string img_rel = "images/" + scene.scene_id + ".png";
    write_png((fs::path(dir) / img_rel).string(), scene.image);
    json persons = json::array();
    for (const auto& p : scene.persons)
      persons.push_back({{"box", box_to_json(p.box)}, {"identity", p.identity}});
    json line = {{"scene_id", scene.scene_id}, {"image", img_rel}, {"persons", persons}};
    ann << line.dump() << "\n";
  }
  ann.close();

  json queries = json::array();
  for (const auto& q : split.queries)
    queries.push_back({{"scene_id", q.scene_id},
                       {"box", box_to_json(q.box)},
                       {"identity", q.identity},
                       {"gallery", q.gallery}});
  json sp = {{"gallery_size", split.gallery_size}, {"queries", queries}};
  std::ofstream sf(fs::path(dir) / "split.json");
  if (!sf) throw std::runtime_error("save_dataset: cannot write split.json in " + dir);
  sf << sp.dump(2) << "\n";
}

SearchSplit load_dataset(const std::string& dir) {
  SearchSplit split;

  std::ifstream ann(fs::path(dir) / "annotations.jsonl");
  if (!ann) throw std::runtime_error("load_dataset: missing annotations.jsonl in " + dir);
  std::string line;
  int line_no = 0;
  while (std::getline(ann, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("annotations.jsonl line " + std::to_string(line_no) +
                               ": parse error: " + e.what());
    }
    try {
      SceneSample scene;
      scene.scene_id = j.at("scene_id").get<std::string>();
      scene.image = read_png((fs::path(dir) / j.at("image").get<std::string>()).string());
      for (const auto& pj : j.at("persons")) {
        PersonAnn p;
        p.box = box_from_json(pj.at("box"));
        p.identity = pj.at("identity").get<int>();
        scene.persons.push_back(p);
      }
      validate_scene(scene);
      split.train.push_back(std::move(scene));
    } catch (const std::exception& e) {
      throw std::runtime_error("annotations.jsonl line " + std::to_string(line_no) + ": " +
                               e.what());
    }
  }

  const fs::path split_path = fs::path(dir) / "split.json";
  if (fs::exists(split_path)) {
    std::ifstream sf(split_path);
    json sp;
    try {
      sf >> sp;
    } catch (const json::exception& e) {
      throw std::runtime_error(std::string("split.json: parse error: ") + e.what());
    }
    split.gallery_size = sp.value("gallery_size", 0);
    for (const auto& qj : sp.at("queries")) {
      Query q;
      q.scene_id = qj.at("scene_id").get<std::string>();
      q.box = box_from_json(qj.at("box"));
      q.identity = qj.at("identity").get<int>();
      q.gallery = qj.at("gallery").get<std::vector<std::string>>();
      split.queries.push_back(std::move(q));
    }
  }

  validate_split(split);
  return split;
}

std::string dataset_content_hash(const std::string& dir) {
  std::vector<std::string> files{"annotations.jsonl", "split.json"};
  std::vector<std::string> images;
  const fs::path img_dir = fs::path(dir) / "images";
  if (fs::exists(img_dir))
    for (const auto& e : fs::directory_iterator(img_dir))
      images.push_back("images/" + e.path().filename().string());
  std::sort(images.begin(), images.end());
  files.insert(files.end(), images.begin(), images.end());

  std::string acc;
  for (const auto& f : files) {
    const fs::path p = fs::path(dir) / f;
    if (!fs::exists(p)) continue;
    acc += f + ":" + sha256_file_hex(p.string()) + "\n";
  }
  return sha256_hex(reinterpret_cast<const uint8_t*>(acc.data()), acc.size());
}

}  // namespace alignps
