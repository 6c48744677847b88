#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cloak/geometry.hpp"
#include "cloak/image.hpp"
#include "cloak/scene.hpp"

namespace cloak {

struct ImageEntry {
  std::string id;
  std::string file_name;  // relative to the manifest root
  int width = 0;
  int height = 0;
  // Present iff the manifest carries annotations; categories are indices
  // into the detector's category table.
  std::optional<std::vector<Annotation>> ground_truth;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ImageEntry> images;
  std::vector<std::string> category_names;      // the detector's table
  std::vector<std::string> unmapped_categories;  // names in the file the detector does not know
  std::size_t dropped_annotations = 0;           // annotations using unmapped names
  bool has_annotations = false;

  // Reads and validates one image. Throws LoadError naming the entry.
  Image load_image(std::size_t index) const;
  std::size_t index_of(const std::string& id) const;  // throws LoadError when unknown
};

inline constexpr const char* kAnnotationFileName = "annotations.json";

// Accepts a COCO-style JSON file, a directory holding annotations.json, or a
// plain directory of PNG files (no ground truth). Annotation category names
// are remapped onto `detector_categories`.
DatasetManifest load_dataset(const std::filesystem::path& path, const std::vector<std::string>& detector_categories);

// Writes images as PNG plus annotations.json in the format load_dataset reads.
// Image ids are "<prefix><index>" with index zero-padded to four digits.
void write_dataset(const std::filesystem::path& directory, std::span<const LabeledImage> items,
                   const std::vector<std::string>& category_names, const std::string& id_prefix = "scene_");

}  // namespace cloak
