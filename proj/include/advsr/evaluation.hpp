#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsr/data.hpp"
#include "advsr/loss.hpp"
#include "advsr/models.hpp"

namespace advsr::eval {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kPsnrMseFloor = 1e-10;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

// 10 log10(1 / MSE) after clamping both images to [0, 1]; 100 dB when the
// MSE is below 1e-10.
double psnr(const Tensor& a, const Tensor& b);

// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5) over valid
// positions, averaged over channels. Accepts H x W or C x H x W.
double ssim(const Tensor& a, const Tensor& b);

// Mean over feature taps of the L1 distance between feature maps.
double perceptual_distance(const Tensor& a, const Tensor& b, const FeatureExtractor& featnet);

struct MetricStats {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
};

MetricStats summarize(std::span<const double> values);

struct QualityStats {
    MetricStats psnr;
    MetricStats ssim;
    MetricStats pd;
    std::size_t n = 0;
};

struct AttackStats {
    double targeted_asr = 0.0;
    double untargeted_asr = 0.0;
    double nsa = 0.0;
    std::size_t source_count = 0;
    std::size_t nonsource_count = 0;
};

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  // [truth][pred]

AttackStats attack_metrics(std::span<const int> predictions, std::span<const int> truths, const loss::AttackSpec& spec);
ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> truths, int classes);
AttackStats attack_from_confusion(const ConfusionMatrix& confusion, const loss::AttackSpec& spec);

struct SampleResult {
    std::size_t index = 0;
    int class_id = 0;
    int pred = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    double pd = 0.0;
};

struct EvalReport {
    std::string model_id;
    QualityStats quality;
    AttackStats attack;
    ConfusionMatrix confusion;
    std::vector<SampleResult> samples;
    loss::AttackSpec spec;

    bool targeted_equals_untargeted() const { return attack.targeted_asr == attack.untargeted_asr; }

    nlohmann::ordered_json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    // index,class,pred,psnr,ssim,pd
    std::string samples_csv() const;
};

// Column titles and per-report cells of the markdown table.
std::vector<std::string> markdown_columns();
std::vector<std::string> markdown_cells(const EvalReport& report);

// Markdown table, one row per report, columns PSNR, SSIM, PD (mean and
// standard deviation each), Targeted-ASR, Untargeted-ASR, NSA.
std::string markdown_table(std::span<const EvalReport> reports);

// Maps a batch of LR images (with their split indices) to SR images.
using Upscaler = std::function<Tensor(const Tensor& lr, std::span<const std::size_t> indices)>;

Upscaler model_upscaler(const SrModel& model);
Upscaler bicubic_upscaler();

EvalReport evaluate(const Upscaler& upscale, const ClassifierModel& classifier, const FeatureExtractor& featnet,
                    const data::DatasetSplit& test, const loss::AttackSpec& spec, const std::string& model_id);
EvalReport evaluate(const SrModel& sr_model, const ClassifierModel& classifier, const FeatureExtractor& featnet,
                    const data::DatasetSplit& test, const loss::AttackSpec& spec, const std::string& model_id);

}  // namespace advsr::eval
