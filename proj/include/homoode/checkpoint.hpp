#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "homoode/tensor.hpp"

namespace homoode {

// Versioned binary container of named tensors. Layout, little-endian:
//   magic "HOCK" (4 bytes) | version u32 | tensor count u64
//   per tensor: name length u32 | name bytes | ndim u32 | dims i64[ndim]
//               | float64 data
inline constexpr char kCheckpointMagic[4] = {'H', 'O', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Reserved name for the shared initial point inside a model checkpoint.
inline constexpr const char* kSharedInitName = "shared_init.z_tilde";

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

bool checkpoint_has(const std::vector<std::pair<std::string, Tensor>>& tensors,
                    const std::string& name);
Tensor checkpoint_get(const std::vector<std::pair<std::string, Tensor>>& tensors,
                      const std::string& name);

}  // namespace homoode

#include "homoode/model.hpp"
#include "homoode/shared_init.hpp"

namespace homoode {

// Whole-model serialization: parameters plus the model configuration encoded
// as scalar `meta.*` tensors, and optionally the shared init under its
// reserved name.
void save_model_checkpoint(const std::string& path, const ImplicitModel& m,
                           const SharedInit* si = nullptr);

struct LoadedModel {
    ImplicitModel model;
    bool has_shared_init = false;
    SharedInit shared_init;
};

LoadedModel load_model_checkpoint(const std::string& path);

}  // namespace homoode
