#pragma once

// Synthetic blob dataset: generation, on-disk format (PNG + JSON per sample,
// JSON manifest per split) and loading with ground-truth masks.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "curvegcn/geometry.hpp"
#include "curvegcn/numerics.hpp"
#include "curvegcn/raster.hpp"

namespace curvegcn {

struct Sample {
  std::string id;
  FeatureMap<Real> image;          // 3 x H x W, values in [0, 1]
  PointList<double> gt_polygon;    // pixel coordinates, counter-clockwise
  Mask gt_mask;

  int height() const { return image.height; }
  int width() const { return image.width; }
  // Polygon divided by (width, height).
  PointList<double> unit_polygon() const;
};

struct ManifestEntry {
  std::string id;
  std::string image;       // relative to the manifest directory
  std::string annotation;  // relative to the manifest directory
};

struct DatasetManifest {
  std::filesystem::path root;  // directory holding the manifest; not serialized
  std::string split;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  std::size_t size() const { return entries.size(); }
};

struct Annotation {
  std::string id;
  PointList<double> vertices;
  int height = 0;
  int width = 0;
};

// Writes <root>/<split>.json plus <root>/<split>/<id>.png and .json.
DatasetManifest gen_synthetic(const std::filesystem::path& root, const std::string& split, int n, std::uint64_t seed,
                              int size = 64);

void save_manifest(const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& manifest_file);
std::filesystem::path manifest_path(const std::filesystem::path& root, const std::string& split);

Sample load_sample(const DatasetManifest& m, std::size_t idx);
std::vector<Sample> load_all(const DatasetManifest& m);

void write_annotation(const Annotation& a, const std::filesystem::path& file);
Annotation read_annotation(const std::filesystem::path& file);

// 8-bit RGB PNG I/O; images are 3 x H x W with values in [0, 1].
void write_png(const FeatureMap<Real>& image, const std::filesystem::path& file);
FeatureMap<Real> read_png(const std::filesystem::path& file);
FeatureMap<Real> decode_png(const std::string& bytes);
std::string encode_png(const FeatureMap<Real>& image);

// O(V^2) test that no two non-adjacent edges touch and no adjacent edges overlap.
bool polygon_is_simple(const PointList<double>& pts);

// Deterministic validation membership: a pure function of (id, seed).
bool in_validation_split(const std::string& id, std::uint64_t seed, double fraction);

// Bilinear resize (pixel-center aligned) of every channel.
FeatureMap<Real> resize_bilinear(const FeatureMap<Real>& image, int height, int width);

// Resized, zero-centred network input.
FeatureMap<Real> model_input(const Sample& s, int input_size);

// Edge and vertex target grids on a grid x grid lattice: cells touched by the
// polygon boundary (resp. its vertices), dilated by one cell. Row-major 1 x grid^2.
Matrix<Real> edge_target(const PointList<double>& unit_polygon, int grid);
Matrix<Real> vertex_target(const PointList<double>& unit_polygon, int grid);

}  // namespace curvegcn
