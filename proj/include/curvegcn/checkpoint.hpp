#pragma once

// Binary checkpoint: "CGCN", u32 version, u64-length JSON header (model
// config, scalar type, caller metadata), named tensors, trailing CRC32.
// All integers and values are little-endian.

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>

#include "curvegcn/interactive.hpp"
#include "curvegcn/model.hpp"

namespace curvegcn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  CurveGcn model;
  std::optional<InteractiveGcn> interactive;
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& file, const CurveGcn& model,
                     const InteractiveGcn* interactive = nullptr,
                     const nlohmann::json& metadata = nlohmann::json::object());

Checkpoint load_checkpoint(const std::filesystem::path& file);

// Hex SHA-256 of the file contents.
std::string checkpoint_hash(const std::filesystem::path& file);

// Copies parameter values between stores with identical names and shapes.
void copy_parameters(const ParamStore<Real>& from, ParamStore<Real>& to);

}  // namespace curvegcn
