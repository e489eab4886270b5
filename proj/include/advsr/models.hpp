#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "advsr/autodiff.hpp"

namespace advsr {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using ParameterList = std::vector<NamedTensor>;

std::size_t parameter_count(const ParameterList& params);
void set_trainable(ParameterList& params, bool on);
void clear_grads(ParameterList& params);

// SRCNN-style network: bicubic 2x pre-upsample followed by three
// same-padded convolutions, relu after the first two.
struct SrConfig {
    std::array<int, 3> kernels{5, 3, 5};
    std::array<int, 2> widths{16, 8};
    bool operator==(const SrConfig&) const = default;
};

class SrModel {
public:
    static constexpr int kScale = 2;
    static constexpr int kChannels = 3;

    static SrModel build(const SrConfig& config, std::uint64_t seed);
    // Rebuilds a model from stored parameters, inferring the architecture
    // from the tensor shapes.
    static SrModel from_parameters(ParameterList params);

    // Differentiable forward; parameters enter the tape as trainable leaves.
    ad::Var forward(ad::Tape& tape, ad::Var lr);
    // Gradient-free forward over N x 3 x H x W, unclamped.
    Tensor infer(const Tensor& lr) const;

    const SrConfig& config() const { return config_; }
    ParameterList& parameters() { return params_; }
    const ParameterList& parameters() const { return params_; }

private:
    SrModel(SrConfig config, ParameterList params) : config_(config), params_(std::move(params)) {}
    ad::Var graph(ad::Tape& tape, ad::Var lr, std::span<const ad::Var> p) const;
    void check_input(const Tensor& lr) const;

    SrConfig config_;
    ParameterList params_;
};

// conv(3, w1)->relu->maxpool->conv(3, w2)->relu->maxpool->dense(classes)
struct ClassifierConfig {
    int classes = 8;
    int input_size = 48;
    std::array<int, 2> widths{16, 32};
    bool operator==(const ClassifierConfig&) const = default;
};

class ClassifierModel {
public:
    static ClassifierModel build(const ClassifierConfig& config, std::uint64_t seed);
    static ClassifierModel from_parameters(ParameterList params);

    ad::Var forward(ad::Tape& tape, ad::Var images);
    // Forward with parameters bound read-only; gradients reach only the images.
    ad::Var forward_frozen(ad::Tape& tape, ad::Var images) const;
    Tensor infer(const Tensor& images) const;
    std::vector<int> predict(const Tensor& images) const;

    // Marks every parameter requires_grad = !frozen.
    void freeze(bool frozen);
    bool frozen() const;

    int classes() const { return config_.classes; }
    const ClassifierConfig& config() const { return config_; }
    ParameterList& parameters() { return params_; }
    const ParameterList& parameters() const { return params_; }

private:
    ClassifierModel(ClassifierConfig config, ParameterList params) : config_(config), params_(std::move(params)) {}
    ad::Var graph(ad::Tape& tape, ad::Var images, std::span<const ad::Var> p) const;
    void check_input(const Tensor& images) const;

    ClassifierConfig config_;
    ParameterList params_;
};

// Frozen random-feature network used for the perceptual term: two 3x3
// conv+relu stages (3 -> 8 -> 16), features tapped after each relu.
class FeatureExtractor {
public:
    static FeatureExtractor build(std::uint64_t seed);

    std::vector<ad::Var> features(ad::Tape& tape, ad::Var images) const;
    std::vector<Tensor> infer(const Tensor& images) const;
    std::size_t tap_count() const { return 2; }

    const ParameterList& parameters() const { return params_; }

private:
    explicit FeatureExtractor(ParameterList params) : params_(std::move(params)) {}
    ParameterList params_;
};

int argmax_row(std::span<const double> row);

}  // namespace advsr
