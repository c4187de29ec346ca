#pragma once

#include <filesystem>
#include <string>

#include "curvegcn/model.hpp"
#include "curvegcn/random.hpp"

namespace curvegcn::test {

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.control_points = 8;
  c.samples = 64;
  c.iterations = 2;
  c.input_size = 16;
  c.backbone_channels = {4, 4, 6, 6};
  c.branch_channels = 4;
  c.hidden = 8;
  c.resnet_blocks = 1;
  return c;
}

inline FeatureMap<Real> random_image(int size, Rng& rng) {
  FeatureMap<Real> img(3, size, size);
  for (Index i = 0; i < img.data.size(); ++i) img.data.data()[i] = Real(rng.uniform(-0.5, 0.5));
  return img;
}

// Fresh, empty directory under the system temp dir; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(std::filesystem::temp_directory_path() / ("curvegcn_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

}  // namespace curvegcn::test
