#pragma once

#include <string>
#include <string_view>

#include "timflow/network.hpp"

namespace timflow {

inline constexpr std::uint16_t kWeightsVersion = 1;

/// TIMW: "TIMW", u16 version, u32 header length, UTF-8 JSON header
/// (hyperparams, input_scale, resolution, tensor list with shapes), then
/// every tensor as little-endian f32 in header order.
std::string serialize_model(const SurrogateModel& model);
SurrogateModel deserialize_model(std::string_view bytes);

void save_model(const SurrogateModel& model, const std::string& path);
SurrogateModel load_model(const std::string& path);

}  // namespace timflow
