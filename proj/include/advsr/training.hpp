#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "advsr/data.hpp"
#include "advsr/loss.hpp"
#include "advsr/models.hpp"

namespace advsr::train {

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    static AdamState for_parameters(const ParameterList& params, double lr);
};

// Bias-corrected Adam update from the gradients stored on the parameters.
// Every parameter must carry a gradient.
void adam_step(ParameterList& params, AdamState& state);

// Halves the learning rate once `patience` consecutive epochs fail to strictly
// improve the best monitored value; the counter restarts after each halving.
struct PlateauScheduler {
    double lr = 1e-3;
    int patience = 10;
    double factor = 0.5;
    double best = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;
};

// Returns the learning rate to use for the next epoch.
double scheduler_step(PlateauScheduler& sched, double val_mse);

enum class Mode { classifier, sr_clean, sr_advsr };

const char* mode_name(Mode mode);
Mode parse_mode(const std::string& name);

enum class Selection { best_val, final_epoch };

struct TrainConfig {
    Mode mode = Mode::classifier;
    int epochs = 30;
    int batch_size = 32;
    std::uint64_t seed = 1;
    double lr = 1e-3;
    double r = 0.1;
    Selection selection = Selection::best_val;
    loss::AttackSpec attack;
    SrConfig sr;
    ClassifierConfig classifier;

    // Default epochs, batch size, learning rate and checkpoint selection for a mode.
    static TrainConfig defaults(Mode mode);
    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_mse = 0.0;
    std::optional<double> val_advce;
    double lr = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> records;

    // Header: epoch,train_loss,val_mse,val_advce,lr
    std::string to_csv() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct ClassifierRun {
    ClassifierModel model;
    TrainLog log;
    double initial_val_accuracy = 0.0;
    double val_accuracy = 0.0;  // of the selected checkpoint
    int selected_epoch = 0;
};

// Trains on HR images with plain cross-entropy. The scheduler and
// checkpoint selection monitor the validation Brier score (MSE between the
// softmax output and the one-hot label).
ClassifierRun train_classifier(const TrainConfig& cfg, const data::Dataset& dataset, const EpochCallback& on_epoch = {});

struct SrRun {
    SrModel model;
    TrainLog log;
    std::optional<loss::LossBalance> balance;
    int selected_epoch = 0;
};

// sr_clean minimises the reconstruction loss from a fresh model (or `init`
// when given). sr_advsr starts from `init`, which must be the clean
// checkpoint, derives lambda on the validation split and minimises the
// combined objective. The classifier is only read.
SrRun finetune_sr(const TrainConfig& cfg, const data::Dataset& dataset, const ClassifierModel& classifier,
                  const FeatureExtractor& featnet, const SrModel* init, const EpochCallback& on_epoch = {});

// Fraction of correctly classified HR images.
double classifier_accuracy(const ClassifierModel& classifier, const data::DatasetSplit& split);

// Mean squared error of raw SR outputs against HR over a split.
double sr_val_mse(const SrModel& model, const data::DatasetSplit& split);

// Deterministic epoch permutation derived from (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, int epoch);

}  // namespace advsr::train
