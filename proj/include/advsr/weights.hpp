#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "advsr/models.hpp"

namespace advsr {

// Binary checkpoint layout, all integers little-endian:
//   "ADVW" | u16 version | u32 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | u32 dims[rank] | u64 payload offset
//   payloads: f64 values, tensors in table order, contiguous
inline constexpr char kWeightMagic[4] = {'A', 'D', 'V', 'W'};
inline constexpr std::uint16_t kWeightVersion = 1;

std::size_t weight_header_size(const ParameterList& params);

std::vector<char> encode_weights(const ParameterList& params);
ParameterList decode_weights(std::span<const char> bytes);

void save_weights(const ParameterList& params, const std::filesystem::path& path);
ParameterList load_weights(const std::filesystem::path& path);

SrModel load_sr_model(const std::filesystem::path& path);
ClassifierModel load_classifier(const std::filesystem::path& path);

}  // namespace advsr
