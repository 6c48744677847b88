#include "cloak/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "cloak/errors.hpp"
#include "cloak/image_io.hpp"

namespace cloak {

namespace fs = std::filesystem;
using nlohmann::json;

Image DatasetManifest::load_image(std::size_t index) const {
  if (index >= images.size()) throw LoadError("image index out of range");
  const auto& e = images[index];
  Image img;
  try {
    img = read_png(root / e.file_name);
  } catch (const std::exception& ex) {
    throw LoadError("image '" + e.id + "' (" + e.file_name + "): " + ex.what());
  }
  if (img.width() != e.width || img.height() != e.height) {
    throw LoadError("image '" + e.id + "': file is " + std::to_string(img.width()) + "x" +
                    std::to_string(img.height()) + " but the manifest says " + std::to_string(e.width) + "x" +
                    std::to_string(e.height));
  }
  return img;
}

std::size_t DatasetManifest::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].id == id) return i;
  }
  throw LoadError("unknown image id '" + id + "'");
}

namespace {

std::string id_string(const json& v, const std::string& where) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw LoadError(where + ": id must be an integer or a string");
}

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw LoadError(where + ": missing field '" + key + "'");
  return obj.at(key);
}

DatasetManifest load_png_directory(const fs::path& dir, const std::vector<std::string>& names) {
  DatasetManifest m;
  m.root = dir;
  m.category_names = names;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    ImageEntry e;
    e.id = f.stem().string();
    e.file_name = f.filename().string();
    Image img;
    try {
      img = read_png(f);
    } catch (const std::exception& ex) {
      throw LoadError("image '" + e.id + "': " + ex.what());
    }
    e.width = img.width();
    e.height = img.height();
    m.images.push_back(std::move(e));
  }
  if (m.images.empty()) throw LoadError("no PNG images in " + dir.string());
  return m;
}

}  // namespace

DatasetManifest load_dataset(const fs::path& path, const std::vector<std::string>& detector_categories) {
  if (!fs::exists(path)) throw LoadError("dataset path does not exist: " + path.string());
  fs::path file = path;
  if (fs::is_directory(path)) {
    file = path / kAnnotationFileName;
    if (!fs::exists(file)) return load_png_directory(path, detector_categories);
  }

  json doc;
  {
    std::ifstream in(file);
    if (!in) throw LoadError("cannot read " + file.string());
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& ex) {
      throw LoadError(file.string() + ": malformed JSON: " + ex.what());
    }
  }

  DatasetManifest m;
  m.root = file.parent_path();
  m.category_names = detector_categories;

  const json& images = field(doc, "images", file.string());
  if (!images.is_array()) throw LoadError(file.string() + ": 'images' must be an array");
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = "images[" + std::to_string(i) + "]";
    ImageEntry e;
    e.id = id_string(field(images[i], "id", where), where);
    try {
      e.file_name = field(images[i], "file_name", where).get<std::string>();
      e.width = field(images[i], "width", where).get<int>();
      e.height = field(images[i], "height", where).get<int>();
    } catch (const json::type_error& ex) {
      throw LoadError(where + " (id '" + e.id + "'): " + ex.what());
    }
    if (e.width <= 0 || e.height <= 0) throw LoadError(where + " (id '" + e.id + "'): dimensions must be positive");
    if (!by_id.emplace(e.id, m.images.size()).second) throw LoadError("duplicate image id '" + e.id + "'");
    m.images.push_back(std::move(e));
  }

  m.has_annotations = doc.contains("annotations");
  if (!m.has_annotations) return m;

  std::map<std::string, std::string> category_name;  // file id -> name
  if (doc.contains("categories")) {
    const json& cats = doc.at("categories");
    if (!cats.is_array()) throw LoadError(file.string() + ": 'categories' must be an array");
    for (std::size_t i = 0; i < cats.size(); ++i) {
      const std::string where = "categories[" + std::to_string(i) + "]";
      const std::string id = id_string(field(cats[i], "id", where), where);
      const json& name = field(cats[i], "name", where);
      if (!name.is_string()) throw LoadError(where + ": 'name' must be a string");
      if (!category_name.emplace(id, name.get<std::string>()).second) {
        throw LoadError("duplicate category id '" + id + "'");
      }
    }
  }
  std::set<std::string> unmapped;
  for (const auto& [id, name] : category_name) {
    if (std::find(detector_categories.begin(), detector_categories.end(), name) == detector_categories.end()) {
      unmapped.insert(name);
    }
  }
  m.unmapped_categories.assign(unmapped.begin(), unmapped.end());

  for (auto& e : m.images) e.ground_truth.emplace();
  const json& anns = doc.at("annotations");
  if (!anns.is_array()) throw LoadError(file.string() + ": 'annotations' must be an array");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string where = "annotations[" + std::to_string(i) + "]";
    const std::string image_id = id_string(field(anns[i], "image_id", where), where);
    const auto img = by_id.find(image_id);
    if (img == by_id.end()) throw LoadError(where + " references missing image id '" + image_id + "'");
    const std::string cat_id = id_string(field(anns[i], "category_id", where), where);
    const auto cat = category_name.find(cat_id);
    if (cat == category_name.end()) throw LoadError(where + " references missing category id '" + cat_id + "'");
    const json& bbox = field(anns[i], "bbox", where);
    if (!bbox.is_array() || bbox.size() != 4 || !std::all_of(bbox.begin(), bbox.end(), [](const json& v) {
          return v.is_number();
        })) {
      throw LoadError(where + ": 'bbox' must be four numbers [x, y, w, h]");
    }
    const double x = bbox[0], y = bbox[1], w = bbox[2], h = bbox[3];
    auto& entry = m.images[img->second];
    if (!(w > 0 && h > 0) || x < 0 || y < 0 || x + w > entry.width || y + h > entry.height) {
      throw LoadError(where + ": bbox lies outside image '" + entry.id + "' or is empty");
    }
    const auto pos = std::find(detector_categories.begin(), detector_categories.end(), cat->second);
    if (pos == detector_categories.end()) {
      ++m.dropped_annotations;
      continue;
    }
    entry.ground_truth->push_back({Box{x, y, x + w, y + h}, static_cast<int>(pos - detector_categories.begin())});
  }
  return m;
}

void write_dataset(const fs::path& directory, std::span<const LabeledImage> items,
                   const std::vector<std::string>& category_names, const std::string& id_prefix) {
  fs::create_directories(directory);
  json images = json::array(), anns = json::array(), cats = json::array();
  for (std::size_t k = 1; k < category_names.size(); ++k) {
    cats.push_back({{"id", k}, {"name", category_names[k]}});
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%04zu", i);
    const std::string id = id_prefix + buf;
    const std::string file = id + ".png";
    write_png(directory / file, items[i].image, BitDepth::k8);
    images.push_back({{"id", id}, {"file_name", file}, {"width", items[i].image.width()},
                      {"height", items[i].image.height()}});
    for (const auto& a : items[i].annotations) {
      anns.push_back({{"id", anns.size() + 1},
                      {"image_id", id},
                      {"bbox", {a.box.x_min, a.box.y_min, a.box.width(), a.box.height()}},
                      {"category_id", a.category}});
    }
  }
  std::ofstream out(directory / kAnnotationFileName);
  if (!out) throw LoadError("cannot write " + (directory / kAnnotationFileName).string());
  out << json{{"images", images}, {"annotations", anns}, {"categories", cats}}.dump(1) << '\n';
}

}  // namespace cloak
