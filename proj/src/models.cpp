#include "advsr/models.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace advsr {
namespace {

using ad::Tape;
using ad::Var;

constexpr double kFeatureBiasStd = 0.1;

Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng)
{
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    return t;
}

void add_conv(ParameterList& params, const std::string& name, int out, int in, int k, std::mt19937_64& rng)
{
    const auto uo = static_cast<std::size_t>(out), ui = static_cast<std::size_t>(in), uk = static_cast<std::size_t>(k);
    params.push_back({name + ".weight", he_normal({uo, ui, uk, uk}, ui * uk * uk, rng)});
    params.push_back({name + ".bias", Tensor({uo}, 0.0)});
}

std::vector<Var> bind_trainable(Tape& tape, ParameterList& params)
{
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (auto& p : params) vars.push_back(tape.parameter(p.tensor));
    return vars;
}

std::vector<Var> bind_frozen(Tape& tape, const ParameterList& params)
{
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.input(p.tensor));
    return vars;
}

const Tensor& expect_param(const ParameterList& params, std::size_t i, const std::string& name, std::size_t rank)
{
    if (i >= params.size() || params[i].name != name) {
        throw std::invalid_argument("parameter list: expected '" + name + "' at position " + std::to_string(i));
    }
    if (params[i].tensor.rank() != rank) {
        throw std::invalid_argument("parameter '" + name + "' has unexpected shape " + shape_str(params[i].tensor.shape()));
    }
    return params[i].tensor;
}

void check_conv_pair(const Tensor& w, const Tensor& b, std::size_t in_channels, const std::string& name)
{
    if (w.dim(1) != in_channels || w.dim(2) != w.dim(3) || b.dim(0) != w.dim(0)) {
        throw std::invalid_argument("parameter '" + name + "' shapes are inconsistent: weight " + shape_str(w.shape()) +
                                    ", bias " + shape_str(b.shape()));
    }
}

}  // namespace

std::size_t parameter_count(const ParameterList& params)
{
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

void set_trainable(ParameterList& params, bool on)
{
    for (auto& p : params) p.tensor.set_requires_grad(on);
}

void clear_grads(ParameterList& params)
{
    for (auto& p : params) p.tensor.clear_grad();
}

int argmax_row(std::span<const double> row)
{
    int best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
        if (row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
    }
    return best;
}

// --- SrModel ---------------------------------------------------------------

SrModel SrModel::build(const SrConfig& config, std::uint64_t seed)
{
    for (int k : config.kernels) {
        if (k < 1 || k % 2 == 0) {
            throw std::invalid_argument("SR kernel sizes must be odd, got " + std::to_string(k));
        }
    }
    for (int w : config.widths) {
        if (w < 1) throw std::invalid_argument("SR widths must be >= 1, got " + std::to_string(w));
    }
    std::mt19937_64 rng(seed);
    ParameterList params;
    add_conv(params, "conv1", config.widths[0], kChannels, config.kernels[0], rng);
    add_conv(params, "conv2", config.widths[1], config.widths[0], config.kernels[1], rng);
    add_conv(params, "conv3", kChannels, config.widths[1], config.kernels[2], rng);
    set_trainable(params, true);
    return SrModel(config, std::move(params));
}

SrModel SrModel::from_parameters(ParameterList params)
{
    if (params.size() != 6) throw std::invalid_argument("SR model expects 6 parameter tensors, got " + std::to_string(params.size()));
    const Tensor& w1 = expect_param(params, 0, "conv1.weight", 4);
    const Tensor& b1 = expect_param(params, 1, "conv1.bias", 1);
    const Tensor& w2 = expect_param(params, 2, "conv2.weight", 4);
    const Tensor& b2 = expect_param(params, 3, "conv2.bias", 1);
    const Tensor& w3 = expect_param(params, 4, "conv3.weight", 4);
    const Tensor& b3 = expect_param(params, 5, "conv3.bias", 1);
    check_conv_pair(w1, b1, kChannels, "conv1");
    check_conv_pair(w2, b2, w1.dim(0), "conv2");
    check_conv_pair(w3, b3, w2.dim(0), "conv3");
    if (w3.dim(0) != kChannels) throw std::invalid_argument("conv3 must produce 3 channels");
    SrConfig config;
    config.kernels = {static_cast<int>(w1.dim(2)), static_cast<int>(w2.dim(2)), static_cast<int>(w3.dim(2))};
    config.widths = {static_cast<int>(w1.dim(0)), static_cast<int>(w2.dim(0))};
    for (int k : config.kernels) {
        if (k % 2 == 0) throw std::invalid_argument("SR kernel sizes must be odd");
    }
    set_trainable(params, true);
    return SrModel(config, std::move(params));
}

void SrModel::check_input(const Tensor& lr) const
{
    if (lr.rank() != 4 || lr.dim(1) != kChannels) {
        throw std::invalid_argument("SR input must be N x 3 x H x W, got " + shape_str(lr.shape()));
    }
}

Var SrModel::graph(Tape& tape, Var lr, std::span<const Var> p) const
{
    check_input(tape.value(lr));
    Var x = ad::bicubic_upsample2x(tape, lr);
    x = ad::relu(tape, ad::conv2d(tape, x, p[0], p[1], 1, config_.kernels[0] / 2));
    x = ad::relu(tape, ad::conv2d(tape, x, p[2], p[3], 1, config_.kernels[1] / 2));
    return ad::conv2d(tape, x, p[4], p[5], 1, config_.kernels[2] / 2);
}

Var SrModel::forward(Tape& tape, Var lr)
{
    auto p = bind_trainable(tape, params_);
    return graph(tape, lr, p);
}

Tensor SrModel::infer(const Tensor& lr) const
{
    Tape tape;
    auto p = bind_frozen(tape, params_);
    return tape.value(graph(tape, tape.input(lr), p));
}

// --- ClassifierModel -------------------------------------------------------

ClassifierModel ClassifierModel::build(const ClassifierConfig& config, std::uint64_t seed)
{
    if (config.classes < 2) throw std::invalid_argument("classifier needs at least 2 classes, got " + std::to_string(config.classes));
    if (config.input_size < 4 || config.input_size % 4 != 0) {
        throw std::invalid_argument("classifier input size must be a positive multiple of 4, got " +
                                    std::to_string(config.input_size));
    }
    if (config.widths[0] < 1 || config.widths[1] < 1) throw std::invalid_argument("classifier widths must be >= 1");
    std::mt19937_64 rng(seed);
    ParameterList params;
    add_conv(params, "conv1", config.widths[0], 3, 3, rng);
    add_conv(params, "conv2", config.widths[1], config.widths[0], 3, rng);
    const auto q = static_cast<std::size_t>(config.input_size / 4);
    const std::size_t features = static_cast<std::size_t>(config.widths[1]) * q * q;
    const auto c = static_cast<std::size_t>(config.classes);
    params.push_back({"fc.weight", he_normal({features, c}, features, rng)});
    params.push_back({"fc.bias", Tensor({c}, 0.0)});
    set_trainable(params, true);
    return ClassifierModel(config, std::move(params));
}

ClassifierModel ClassifierModel::from_parameters(ParameterList params)
{
    if (params.size() != 6) {
        throw std::invalid_argument("classifier expects 6 parameter tensors, got " + std::to_string(params.size()));
    }
    const Tensor& w1 = expect_param(params, 0, "conv1.weight", 4);
    const Tensor& b1 = expect_param(params, 1, "conv1.bias", 1);
    const Tensor& w2 = expect_param(params, 2, "conv2.weight", 4);
    const Tensor& b2 = expect_param(params, 3, "conv2.bias", 1);
    const Tensor& fw = expect_param(params, 4, "fc.weight", 2);
    const Tensor& fb = expect_param(params, 5, "fc.bias", 1);
    check_conv_pair(w1, b1, 3, "conv1");
    check_conv_pair(w2, b2, w1.dim(0), "conv2");
    if (w1.dim(2) != 3 || w2.dim(2) != 3) throw std::invalid_argument("classifier convolutions must be 3x3");
    if (fb.dim(0) != fw.dim(1)) throw std::invalid_argument("fc bias does not match fc weight");
    const std::size_t per_channel = fw.dim(0) / w2.dim(0);
    const auto q = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(per_channel))));
    if (fw.dim(0) % w2.dim(0) != 0 || q * q != per_channel) {
        throw std::invalid_argument("fc weight " + shape_str(fw.shape()) + " is inconsistent with conv2 width");
    }
    ClassifierConfig config;
    config.classes = static_cast<int>(fw.dim(1));
    config.input_size = static_cast<int>(q * 4);
    config.widths = {static_cast<int>(w1.dim(0)), static_cast<int>(w2.dim(0))};
    if (config.classes < 2) throw std::invalid_argument("classifier needs at least 2 classes");
    set_trainable(params, true);
    return ClassifierModel(config, std::move(params));
}

void ClassifierModel::check_input(const Tensor& images) const
{
    const auto s = static_cast<std::size_t>(config_.input_size);
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != s || images.dim(3) != s) {
        throw std::invalid_argument("classifier expects N x 3 x " + std::to_string(s) + " x " + std::to_string(s) +
                                    " images, got " + shape_str(images.shape()));
    }
}

Var ClassifierModel::graph(Tape& tape, Var images, std::span<const Var> p) const
{
    check_input(tape.value(images));
    Var x = ad::maxpool2x2(tape, ad::relu(tape, ad::conv2d(tape, images, p[0], p[1], 1, 1)));
    x = ad::maxpool2x2(tape, ad::relu(tape, ad::conv2d(tape, x, p[2], p[3], 1, 1)));
    const Shape& s = tape.shape(x);
    x = ad::reshape(tape, x, {s[0], s[1] * s[2] * s[3]});
    return ad::dense(tape, x, p[4], p[5]);
}

Var ClassifierModel::forward(Tape& tape, Var images)
{
    auto p = bind_trainable(tape, params_);
    return graph(tape, images, p);
}

Var ClassifierModel::forward_frozen(Tape& tape, Var images) const
{
    auto p = bind_frozen(tape, params_);
    return graph(tape, images, p);
}

Tensor ClassifierModel::infer(const Tensor& images) const
{
    Tape tape;
    auto p = bind_frozen(tape, params_);
    return tape.value(graph(tape, tape.input(images), p));
}

std::vector<int> ClassifierModel::predict(const Tensor& images) const
{
    const Tensor logits = infer(images);
    const std::size_t c = logits.dim(1);
    std::vector<int> out(logits.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax_row(logits.data().subspan(i * c, c));
    return out;
}

void ClassifierModel::freeze(bool frozen) { set_trainable(params_, !frozen); }

bool ClassifierModel::frozen() const
{
    for (const auto& p : params_) {
        if (p.tensor.requires_grad()) return false;
    }
    return true;
}

// --- FeatureExtractor ------------------------------------------------------

FeatureExtractor FeatureExtractor::build(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    ParameterList params;
    add_conv(params, "feat1", 8, 3, 3, rng);
    add_conv(params, "feat2", 16, 8, 3, rng);
    // Biases are drawn too, so no feature sits exactly on a relu kink.
    std::normal_distribution<double> bias(0.0, kFeatureBiasStd);
    for (auto& p : params) {
        if (p.tensor.rank() == 1) {
            for (double& v : p.tensor.data()) v = bias(rng);
        }
    }
    set_trainable(params, false);
    return FeatureExtractor(std::move(params));
}

std::vector<Var> FeatureExtractor::features(Tape& tape, Var images) const
{
    const Tensor& x = tape.value(images);
    if (x.rank() != 4 || x.dim(1) != 3) {
        throw std::invalid_argument("feature extractor expects N x 3 x H x W, got " + shape_str(x.shape()));
    }
    auto p = bind_frozen(tape, params_);
    Var f1 = ad::relu(tape, ad::conv2d(tape, images, p[0], p[1], 1, 1));
    Var f2 = ad::relu(tape, ad::conv2d(tape, f1, p[2], p[3], 1, 1));
    return {f1, f2};
}

std::vector<Tensor> FeatureExtractor::infer(const Tensor& images) const
{
    Tape tape;
    std::vector<Tensor> out;
    for (Var v : features(tape, tape.input(images))) out.push_back(tape.value(v));
    return out;
}

}  // namespace advsr
