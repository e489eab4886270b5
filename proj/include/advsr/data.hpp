#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "advsr/tensor.hpp"

namespace advsr::data {

enum class Downsample { decimate, average };

struct DegradeConfig {
    int kernel_size = 9;
    double sigma = 0.75;
    Downsample downsample = Downsample::decimate;
};

struct Sample {
    Tensor hr;  // 3 x H x W in [0, 1]
    Tensor lr;  // 3 x H/2 x W/2
    int class_id = 0;
};

struct DatasetSplit {
    std::string name;
    int classes = 0;
    std::uint64_t seed = 0;
    std::vector<Sample> samples;

    std::vector<std::size_t> per_class_counts() const;
};

struct DataConfig {
    int classes = 8;
    int train_per_class = 200;
    int val_per_class = 25;
    int test_per_class = 25;
    int hr_size = 48;
    DegradeConfig degrade;
};

struct Dataset {
    DatasetSplit train;
    DatasetSplit val;
    DatasetSplit test;
};

inline constexpr int kShapeClasses = 8;
const char* class_name(int class_id);

// HR image of one of the eight shape classes: disk, square, triangle, cross,
// ring, star, diagonal stripes, checker.
Tensor render_sample(int class_id, int size, std::mt19937_64& rng);

// k x k normalised Gaussian, outer product of the sampled 1-D profile.
Tensor gaussian_kernel(int k, double sigma);

// Per-channel blur (reflect borders) followed by 2x downsampling.
Tensor degrade(const Tensor& hr, const DegradeConfig& cfg);

void validate(const DataConfig& cfg);
DatasetSplit make_split(const DataConfig& cfg, std::uint64_t seed, const std::string& name, int per_class);
Dataset make_dataset(const DataConfig& cfg, std::uint64_t seed);

// Stacks the selected samples into N x 3 x H x W batches.
Tensor stack_hr(const DatasetSplit& split, std::span<const std::size_t> indices);
Tensor stack_lr(const DatasetSplit& split, std::span<const std::size_t> indices);
std::vector<std::size_t> all_indices(const DatasetSplit& split);

// "ADVD" | u16 version | u32 classes | u32 count | u32 hr height | u32 hr width
// then per sample: u16 class id | hr f64[3*H*W] | lr f64[3*H/2*W/2]
std::vector<char> encode_split(const DatasetSplit& split);
DatasetSplit decode_split(std::span<const char> bytes, const std::string& name);
void save_split(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit load_split(const std::filesystem::path& path, const std::string& name);

}  // namespace advsr::data
