#include "curvegcn/data.hpp"

#include <png.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "curvegcn/random.hpp"

namespace curvegcn {

namespace fs = std::filesystem;
using nlohmann::json;

PointList<double> Sample::unit_polygon() const {
  PointList<double> u = gt_polygon;
  u.col(0) /= double(width());
  u.col(1) /= double(height());
  return u;
}

// ---------------------------------------------------------------------------
// PNG

namespace {

std::vector<png_byte> to_rgb8(const FeatureMap<Real>& image) {
  if (image.channels != 3) throw ShapeError("png: expected 3 channels");
  const Index pixels = Index{image.height} * image.width;
  std::vector<png_byte> rgb(static_cast<std::size_t>(pixels) * 3);
  for (Index p = 0; p < pixels; ++p)
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(double(image.data(c, p)), 0.0, 1.0);
      rgb[p * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
    }
  return rgb;
}

png_image rgb_header(const FeatureMap<Real>& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  return img;
}

FeatureMap<Real> finish_read(png_image& img, const std::string& what) {
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> rgb(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode " + what + ": " + img.message);
  }
  FeatureMap<Real> out(3, static_cast<int>(img.height), static_cast<int>(img.width));
  const Index pixels = Index{out.height} * out.width;
  for (Index p = 0; p < pixels; ++p)
    for (int c = 0; c < 3; ++c) out.data(c, p) = Real(rgb[p * 3 + c]) / Real(255);
  return out;
}

}  // namespace

void write_png(const FeatureMap<Real>& image, const fs::path& file) {
  const auto rgb = to_rgb8(image);
  png_image img = rgb_header(image);
  if (!png_image_write_to_file(&img, file.c_str(), 0, rgb.data(), 0, nullptr))
    throw IoError("cannot write " + file.string() + ": " + img.message);
}

std::string encode_png(const FeatureMap<Real>& image) {
  const auto rgb = to_rgb8(image);
  png_image img = rgb_header(image);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, rgb.data(), 0, nullptr))
    throw IoError(std::string("cannot encode png: ") + img.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, rgb.data(), 0, nullptr))
    throw IoError(std::string("cannot encode png: ") + img.message);
  out.resize(size);
  return out;
}

FeatureMap<Real> read_png(const fs::path& file) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, file.c_str()))
    throw IoError("cannot read " + file.string() + ": " + img.message);
  return finish_read(img, file.string());
}

FeatureMap<Real> decode_png(const std::string& bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw ParseError(std::string("not a PNG image: ") + img.message);
  return finish_read(img, "png data");
}

// ---------------------------------------------------------------------------
// JSON files

namespace {

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
  if (!out) throw IoError("write failed for " + file.string());
}

}  // namespace

void write_annotation(const Annotation& a, const fs::path& file) {
  json v = json::array();
  for (Index i = 0; i < a.vertices.rows(); ++i) v.push_back({a.vertices(i, 0), a.vertices(i, 1)});
  const json j{{"id", a.id}, {"vertices", v}, {"height", a.height}, {"width", a.width}};
  write_text(file, j.dump(1) + "\n");
}

Annotation read_annotation(const fs::path& file) {
  const json j = read_json(file);
  Annotation a;
  try {
    a.id = j.at("id").get<std::string>();
    a.height = j.at("height").get<int>();
    a.width = j.at("width").get<int>();
    const auto& v = j.at("vertices");
    a.vertices.resize(static_cast<Index>(v.size()), 2);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i].size() != 2) throw ParseError(file.string() + ": vertex " + std::to_string(i) + " is not an [x, y] pair");
      a.vertices(Index(i), 0) = v[i][0].get<double>();
      a.vertices(Index(i), 1) = v[i][1].get<double>();
    }
  } catch (const json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  if (a.vertices.rows() < 3) throw ParseError(file.string() + ": polygon needs at least 3 vertices");
  if (a.height <= 0 || a.width <= 0) throw ParseError(file.string() + ": non-positive image size");
  if (!all_finite(a.vertices)) throw ParseError(file.string() + ": non-finite vertex");
  return a;
}

fs::path manifest_path(const fs::path& root, const std::string& split) { return root / (split + ".json"); }

void save_manifest(const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) entries.push_back({{"id", e.id}, {"image", e.image}, {"annotation", e.annotation}});
  const json j{{"split", m.split}, {"seed", m.seed}, {"samples", entries}};
  write_text(manifest_path(m.root, m.split), j.dump(1) + "\n");
}

DatasetManifest load_manifest(const fs::path& manifest_file) {
  const json j = read_json(manifest_file);
  DatasetManifest m;
  m.root = manifest_file.parent_path();
  try {
    m.split = j.at("split").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("samples"))
      m.entries.push_back({e.at("id").get<std::string>(), e.at("image").get<std::string>(),
                           e.at("annotation").get<std::string>()});
  } catch (const json::exception& e) {
    throw ParseError(manifest_file.string() + ": " + e.what());
  }
  for (const auto& e : m.entries) {
    if (!fs::exists(m.root / e.image)) throw IoError("missing image " + (m.root / e.image).string());
    if (!fs::exists(m.root / e.annotation)) throw IoError("missing annotation " + (m.root / e.annotation).string());
  }
  return m;
}

Sample load_sample(const DatasetManifest& m, std::size_t idx) {
  if (idx >= m.entries.size()) throw Error("load_sample: index out of range");
  const auto& e = m.entries[idx];
  const Annotation a = read_annotation(m.root / e.annotation);
  Sample s;
  s.id = a.id;
  s.image = read_png(m.root / e.image);
  if (s.image.height != a.height || s.image.width != a.width)
    throw ParseError((m.root / e.annotation).string() + ": size disagrees with the image");
  s.gt_polygon = canonicalize_orientation(a.vertices).points;
  s.gt_mask = rasterize_polygon(s.unit_polygon(), a.height, a.width);
  return s;
}

std::vector<Sample> load_all(const DatasetManifest& m) {
  std::vector<Sample> out;
  out.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out.push_back(load_sample(m, i));
  return out;
}

// ---------------------------------------------------------------------------
// Geometry helpers

namespace {

double cross(const Point2<double>& o, const Point2<double>& a, const Point2<double>& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

bool on_segment(const Point2<double>& a, const Point2<double>& b, const Point2<double>& p) {
  return std::min(a.x(), b.x()) <= p.x() && p.x() <= std::max(a.x(), b.x()) && std::min(a.y(), b.y()) <= p.y() &&
         p.y() <= std::max(a.y(), b.y());
}

bool segments_touch(const Point2<double>& a, const Point2<double>& b, const Point2<double>& c,
                    const Point2<double>& d) {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b), d3 = cross(a, b, c), d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  return (d1 == 0 && on_segment(c, d, a)) || (d2 == 0 && on_segment(c, d, b)) || (d3 == 0 && on_segment(a, b, c)) ||
         (d4 == 0 && on_segment(a, b, d));
}

}  // namespace

bool polygon_is_simple(const PointList<double>& pts) {
  const Index n = pts.rows();
  if (n < 3) return false;
  const auto p = [&](Index i) -> Point2<double> { return pts.row(i % n).transpose(); };
  for (Index i = 0; i < n; ++i) {
    if (p(i) == p(i + 1)) return false;
    for (Index j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (!adjacent) {
        if (segments_touch(p(i), p(i + 1), p(j), p(j + 1))) return false;
        continue;
      }
      // Adjacent edges share one endpoint; they must not fold back onto each other.
      const Index shared = j == i + 1 ? j : i;
      const Point2<double> s = p(shared);
      const Point2<double> u = (j == i + 1 ? p(i) : p(j + 1)) - s;
      const Point2<double> v = (j == i + 1 ? p(j + 1) : p(i + 1)) - s;
      if (u.x() * v.y() - u.y() * v.x() == 0 && u.dot(v) > 0) return false;
    }
  }
  return true;
}

bool in_validation_split(const std::string& id, std::uint64_t seed, double fraction) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : id) h = (h ^ ch) * 0x100000001b3ULL;
  const double u = double(mix_seed(h, seed) >> 11) * 0x1.0p-53;
  return u < fraction;
}

FeatureMap<Real> resize_bilinear(const FeatureMap<Real>& image, int height, int width) {
  if (height <= 0 || width <= 0) throw ShapeError("resize_bilinear: empty target");
  if (image.height == height && image.width == width) return image;
  FeatureMap<Real> out(image.channels, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto tap = bilinear_tap(image.height, image.width, Real((x + 0.5) / width), Real((y + 0.5) / height));
      out.data.col(Index{y} * width + x) = bilinear_sample(image, tap);
    }
  return out;
}

FeatureMap<Real> model_input(const Sample& s, int input_size) {
  FeatureMap<Real> in = resize_bilinear(s.image, input_size, input_size);
  in.data.array() -= Real(0.5);
  return in;
}

namespace {

void dilate_mark(Matrix<Real>& grid, int g, double gx, double gy) {
  const int cx = std::clamp(static_cast<int>(std::floor(gx)), 0, g - 1);
  const int cy = std::clamp(static_cast<int>(std::floor(gy)), 0, g - 1);
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const int x = cx + dx, y = cy + dy;
      if (x >= 0 && x < g && y >= 0 && y < g) grid(0, Index{y} * g + x) = Real(1);
    }
}

}  // namespace

Matrix<Real> edge_target(const PointList<double>& unit_polygon, int grid) {
  Matrix<Real> t = Matrix<Real>::Zero(1, Index{grid} * grid);
  const Index n = unit_polygon.rows();
  for (Index i = 0; i < n; ++i) {
    const Point2<double> a = unit_polygon.row(i).transpose() * double(grid);
    const Point2<double> b = unit_polygon.row((i + 1) % n).transpose() * double(grid);
    const int steps = std::max(1, static_cast<int>(std::ceil((b - a).norm() * 4)));
    for (int s = 0; s < steps; ++s) {
      const Point2<double> p = a + (b - a) * (double(s) / steps);
      dilate_mark(t, grid, p.x(), p.y());
    }
  }
  return t;
}

Matrix<Real> vertex_target(const PointList<double>& unit_polygon, int grid) {
  Matrix<Real> t = Matrix<Real>::Zero(1, Index{grid} * grid);
  for (Index i = 0; i < unit_polygon.rows(); ++i)
    dilate_mark(t, grid, unit_polygon(i, 0) * grid, unit_polygon(i, 1) * grid);
  return t;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

constexpr int kSamplesPerLobe = 4;

// Star polygon with jittered angles and radii, smoothed into a closed
// Catmull-Rom curve. Pixel coordinates.
PointList<double> random_blob(Rng& rng, int size) {
  const int lobes = 8 + static_cast<int>(rng.below(9));
  const double radius = rng.uniform(0.22, 0.34) * size;
  const double cx = size * 0.5 + rng.uniform(-0.08, 0.08) * size;
  const double cy = size * 0.5 + rng.uniform(-0.08, 0.08) * size;
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  ControlCurve<double> star;
  star.points.resize(lobes, 2);
  for (int j = 0; j < lobes; ++j) {
    const double theta = phase + 2.0 * std::numbers::pi * (j + rng.uniform(-0.3, 0.3)) / lobes;
    const double r = radius * rng.uniform(0.55, 1.0);
    star.points(j, 0) = cx + r * std::cos(theta);
    star.points(j, 1) = cy + r * std::sin(theta);
  }
  PointList<double> blob = crs_sample(star, lobes * kSamplesPerLobe).points;
  blob = blob.cwiseMax(1.0).cwiseMin(size - 1.0);
  return blob;
}

double smooth_noise(double x, double y, const std::array<double, 6>& p) {
  return std::sin(p[0] * x + p[1]) * std::cos(p[2] * y + p[3]) + 0.5 * std::sin(p[4] * (x + y) + p[5]);
}

FeatureMap<Real> render_image(Rng& rng, const Mask& mask) {
  const int h = mask.height, w = mask.width;
  std::array<double, 3> bg{}, fg{};
  for (;;) {
    double diff = 0;
    for (int c = 0; c < 3; ++c) {
      bg[c] = rng.uniform(0.1, 0.9);
      fg[c] = rng.uniform(0.1, 0.9);
      diff += std::abs(bg[c] - fg[c]);
    }
    if (diff / 3 > 0.25) break;
  }
  std::array<double, 6> tex{};
  for (int k = 0; k < 6; k += 2) {
    tex[k] = rng.uniform(0.1, 0.5);
    tex[k + 1] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  FeatureMap<Real> img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double t = 0.08 * smooth_noise(x, y, tex);
      for (int c = 0; c < 3; ++c) {
        const double base = mask(y, x) > 0 ? fg[c] : bg[c] + t;
        img.at(c, y, x) = Real(std::clamp(base + 0.05 * rng.normal(), 0.0, 1.0));
      }
    }
  return img;
}

}  // namespace

DatasetManifest gen_synthetic(const fs::path& root, const std::string& split, int n, std::uint64_t seed, int size) {
  if (n < 1) throw Error("gen_synthetic: need at least one sample");
  if (size < 8) throw Error("gen_synthetic: image size too small");
  fs::create_directories(root / split);
  DatasetManifest m;
  m.root = root;
  m.split = split;
  m.seed = seed;
  std::uint64_t split_hash = 0xcbf29ce484222325ULL;
  for (unsigned char ch : split) split_hash = (split_hash ^ ch) * 0x100000001b3ULL;
  for (int i = 0; i < n; ++i) {
    Rng rng(mix_seed(mix_seed(seed, split_hash), static_cast<std::uint64_t>(i)));
    PointList<double> poly = random_blob(rng, size);
    while (!polygon_is_simple(poly)) poly = random_blob(rng, size);
    poly = canonicalize_orientation(poly).points;
    PointList<double> unit = poly;
    unit.col(0) /= double(size);
    unit.col(1) /= double(size);
    const Mask mask = rasterize_polygon(unit, size, size);

    ManifestEntry e;
    e.id = split + "-" + std::to_string(i);
    e.image = split + "/" + e.id + ".png";
    e.annotation = split + "/" + e.id + ".json";
    write_png(render_image(rng, mask), root / e.image);
    write_annotation({e.id, poly, size, size}, root / e.annotation);
    m.entries.push_back(std::move(e));
  }
  save_manifest(m);
  return m;
}

}  // namespace curvegcn
