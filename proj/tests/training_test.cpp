#include <gtest/gtest.h>

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "advsr/binary_io.hpp"
#include "advsr/errors.hpp"
#include "advsr/training.hpp"
#include "advsr/weights.hpp"

using namespace advsr;
using namespace advsr::train;

namespace {

NamedTensor param(std::vector<double> values, std::vector<double> grad)
{
    const std::size_t n = values.size();
    Tensor t({n}, std::move(values));
    t.set_requires_grad(true);
    t.accumulate_grad(grad);
    return {"p", std::move(t)};
}

data::Dataset tiny_dataset(std::uint64_t seed)
{
    data::DataConfig cfg;
    cfg.classes = 4;
    cfg.train_per_class = 6;
    cfg.val_per_class = 3;
    cfg.test_per_class = 2;
    cfg.hr_size = 16;
    cfg.degrade.kernel_size = 5;
    return data::make_dataset(cfg, seed);
}

TrainConfig tiny_classifier_config()
{
    auto cfg = TrainConfig::defaults(Mode::classifier);
    cfg.epochs = 3;
    cfg.batch_size = 5;
    cfg.seed = 11;
    cfg.classifier.classes = 4;
    cfg.classifier.input_size = 16;
    cfg.classifier.widths = {4, 4};
    return cfg;
}

TrainConfig tiny_sr_config(Mode mode)
{
    auto cfg = TrainConfig::defaults(mode);
    cfg.epochs = 3;
    cfg.batch_size = 5;
    cfg.seed = 21;
    cfg.lr = 1e-3;
    cfg.sr.widths = {4, 3};
    cfg.sr.kernels = {3, 3, 3};
    cfg.attack = loss::AttackSpec{0, 2, 4};
    cfg.r = 0.5;
    return cfg;
}

ClassifierModel tiny_classifier(const data::Dataset& ds)
{
    return train_classifier(tiny_classifier_config(), ds).model;
}

std::string digest(const ParameterList& p) { return io::sha256_hex(encode_weights(p)); }

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate)
{
    ParameterList params{param({1.0, -2.0}, {0.5, -3.0})};
    auto st = AdamState::for_parameters(params, 0.1);
    adam_step(params, st);
    // m = 0.1 g, v = 0.001 g^2, bias-corrected to g and g^2.
    EXPECT_DOUBLE_EQ(params[0].tensor[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8));
    EXPECT_DOUBLE_EQ(params[0].tensor[1], -2.0 + 0.1 * 3.0 / (3.0 + 1e-8));
    EXPECT_EQ(st.step, 1u);
}

TEST(Adam, MatchesClosedFormMoments)
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> dist;
    std::vector<double> grads;
    for (int i = 0; i < 7; ++i) grads.push_back(dist(rng));

    ParameterList params{param({0.25}, {grads[0]})};
    auto st = AdamState::for_parameters(params, 0.01);
    double expected = 0.25;
    for (int t = 1; t <= 7; ++t) {
        if (t > 1) {
            params[0].tensor.clear_grad();
            std::vector<double> g{grads[static_cast<std::size_t>(t - 1)]};
            params[0].tensor.accumulate_grad(g);
        }
        adam_step(params, st);
        double m = 0.0, v = 0.0;
        for (int i = 1; i <= t; ++i) {
            const double g = grads[static_cast<std::size_t>(i - 1)];
            m += (1 - 0.9) * std::pow(0.9, t - i) * g;
            v += (1 - 0.999) * std::pow(0.999, t - i) * g * g;
        }
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
        expected -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        EXPECT_NEAR(params[0].tensor[0], expected, 1e-14) << "step " << t;
    }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged)
{
    ParameterList params{param({0.3, 0.7, -1.1}, {0.0, 0.0, 0.0})};
    auto st = AdamState::for_parameters(params, 1e-3);
    for (int i = 0; i < 5; ++i) adam_step(params, st);
    EXPECT_EQ(params[0].tensor[0], 0.3);
    EXPECT_EQ(params[0].tensor[1], 0.7);
    EXPECT_EQ(params[0].tensor[2], -1.1);
}

TEST(Adam, RejectsMissingGradientAndMismatchedState)
{
    ParameterList params{param({1.0}, {1.0})};
    auto st = AdamState::for_parameters(params, 1e-3);
    params[0].tensor.clear_grad();
    EXPECT_THROW(adam_step(params, st), std::invalid_argument);

    ParameterList two{param({1.0}, {1.0}), param({2.0}, {1.0})};
    EXPECT_THROW(adam_step(two, st), std::invalid_argument);
}

TEST(Scheduler, FlatSequenceHalvesAtEpochEleven)
{
    PlateauScheduler s{1e-4};
    for (int epoch = 1; epoch <= 10; ++epoch) EXPECT_EQ(scheduler_step(s, 0.5), 1e-4) << epoch;
    EXPECT_EQ(scheduler_step(s, 0.5), 5e-5);
    // The counter restarts after a halving.
    for (int epoch = 12; epoch <= 20; ++epoch) EXPECT_EQ(scheduler_step(s, 0.5), 5e-5) << epoch;
    EXPECT_EQ(scheduler_step(s, 0.5), 2.5e-5);
}

TEST(Scheduler, EqualValueIsNotAnImprovement)
{
    PlateauScheduler s{1.0};
    scheduler_step(s, 1.0);
    for (int i = 0; i < 9; ++i) scheduler_step(s, 1.0);
    scheduler_step(s, 0.999);
    for (int i = 0; i < 9; ++i) EXPECT_EQ(scheduler_step(s, 0.999), 1.0);
    EXPECT_EQ(scheduler_step(s, 0.999), 0.5);
}

TEST(Scheduler, MatchesReferenceSimulation)
{
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PlateauScheduler s{1e-3};
    double lr = 1e-3, best = 1e300;
    int bad = 0;
    double level = 1.0;
    for (int epoch = 0; epoch < 400; ++epoch) {
        level *= u(rng) < 0.1 ? 0.97 : 1.0;
        const double val = level * (1.0 + 0.02 * u(rng));
        if (val < best) {
            best = val;
            bad = 0;
        } else if (++bad == 10) {
            lr /= 2.0;
            bad = 0;
        }
        ASSERT_EQ(scheduler_step(s, val), lr) << "epoch " << epoch;
    }
}

TEST(EpochPermutation, IsDeterministicPermutationThatVariesByEpoch)
{
    const auto a = epoch_permutation(100, 42, 1);
    EXPECT_EQ(a, epoch_permutation(100, 42, 1));
    EXPECT_NE(a, epoch_permutation(100, 42, 2));
    EXPECT_NE(a, epoch_permutation(100, 43, 1));
    std::set<std::size_t> seen(a.begin(), a.end());
    EXPECT_EQ(seen.size(), 100u);
    EXPECT_EQ(*seen.rbegin(), 99u);
    EXPECT_TRUE(epoch_permutation(0, 1, 1).empty());
}

TEST(TrainLog, CsvHeaderAndBlankAdvce)
{
    TrainLog log;
    log.records.push_back({1, 0.5, 0.25, std::nullopt, 1e-3});
    log.records.push_back({2, 0.125, 0.0625, 2.5, 5e-4});
    EXPECT_EQ(log.to_csv(), "epoch,train_loss,val_mse,val_advce,lr\n"
                            "1,0.5,0.25,,0.001\n"
                            "2,0.125,0.0625,2.5,0.00050000000000000001\n");
}

TEST(TrainConfig, DefaultsAndValidation)
{
    auto c = TrainConfig::defaults(Mode::classifier);
    EXPECT_EQ(c.epochs, 30);
    EXPECT_EQ(c.lr, 1e-3);
    auto a = TrainConfig::defaults(Mode::sr_advsr);
    EXPECT_EQ(a.epochs, 60);
    EXPECT_EQ(a.lr, 1e-4);
    EXPECT_EQ(a.selection, Selection::final_epoch);
    EXPECT_EQ(TrainConfig::defaults(Mode::sr_clean).selection, Selection::best_val);

    a.epochs = 0;
    EXPECT_THROW(a.validate(), std::invalid_argument);
    a.epochs = 1;
    a.r = -0.1;
    EXPECT_THROW(a.validate(), std::invalid_argument);
    a.r = 0.1;
    a.lr = 0.0;
    EXPECT_THROW(a.validate(), std::invalid_argument);
    EXPECT_EQ(parse_mode("sr-clean"), Mode::sr_clean);
    EXPECT_THROW(parse_mode("sr"), std::invalid_argument);
}

TEST(TrainClassifier, DeterministicAndLogsEveryEpoch)
{
    const auto ds = tiny_dataset(5);
    int calls = 0;
    auto a = train_classifier(tiny_classifier_config(), ds, [&](const EpochRecord&) { ++calls; });
    auto b = train_classifier(tiny_classifier_config(), ds);
    EXPECT_EQ(calls, 3);
    EXPECT_EQ(digest(a.model.parameters()), digest(b.model.parameters()));
    EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
    ASSERT_EQ(a.log.records.size(), 3u);
    EXPECT_TRUE(a.model.frozen());
    EXPECT_GE(a.selected_epoch, 1);
    EXPECT_LE(a.selected_epoch, 3);
    // The selected checkpoint holds the best validation Brier score.
    double best = 1e300;
    for (const auto& r : a.log.records) best = std::min(best, r.val_mse);
    EXPECT_EQ(a.log.records[static_cast<std::size_t>(a.selected_epoch - 1)].val_mse, best);
    EXPECT_DOUBLE_EQ(a.val_accuracy, classifier_accuracy(a.model, ds.val));
}

TEST(TrainClassifier, ThreadCountDoesNotChangeWeights)
{
    const auto ds = tiny_dataset(6);
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    auto a = train_classifier(tiny_classifier_config(), ds);
    omp_set_num_threads(3);
    auto b = train_classifier(tiny_classifier_config(), ds);
    omp_set_num_threads(saved);
    EXPECT_EQ(digest(a.model.parameters()), digest(b.model.parameters()));
}

TEST(TrainClassifier, DefaultsReachNinetyPercentFromChance)
{
    const auto ds = data::make_dataset(data::DataConfig{}, 1);
    const auto run = train_classifier(TrainConfig::defaults(Mode::classifier), ds);
    EXPECT_NEAR(run.initial_val_accuracy, 1.0 / data::kShapeClasses, 0.10);
    EXPECT_GE(run.val_accuracy, 0.90);
}

TEST(TrainClassifier, RejectsClassCountMismatch)
{
    const auto ds = tiny_dataset(5);
    auto cfg = tiny_classifier_config();
    cfg.classifier.classes = 5;
    EXPECT_THROW(train_classifier(cfg, ds), std::invalid_argument);
}

TEST(FinetuneSr, CleanRunLeavesFrozenNetworksUntouched)
{
    const auto ds = tiny_dataset(7);
    const auto classifier = tiny_classifier(ds);
    const auto featnet = FeatureExtractor::build(9);
    const auto cls_before = digest(classifier.parameters());
    const auto feat_before = digest(featnet.parameters());

    auto run = finetune_sr(tiny_sr_config(Mode::sr_clean), ds, classifier, featnet, nullptr);
    EXPECT_EQ(digest(classifier.parameters()), cls_before);
    EXPECT_EQ(digest(featnet.parameters()), feat_before);
    EXPECT_FALSE(run.balance.has_value());
    ASSERT_EQ(run.log.records.size(), 3u);
    double best = 1e300;
    for (const auto& r : run.log.records) {
        best = std::min(best, r.val_mse);
        EXPECT_TRUE(r.val_advce.has_value());
    }
    EXPECT_EQ(sr_val_mse(run.model, ds.val), best);
}

TEST(FinetuneSr, AdversarialRunNeedsCleanInit)
{
    const auto ds = tiny_dataset(7);
    const auto classifier = tiny_classifier(ds);
    const auto featnet = FeatureExtractor::build(9);
    EXPECT_THROW(finetune_sr(tiny_sr_config(Mode::sr_advsr), ds, classifier, featnet, nullptr), DependencyError);
}

TEST(FinetuneSr, AdversarialRunBalancesAndKeepsFinalEpoch)
{
    const auto ds = tiny_dataset(8);
    const auto classifier = tiny_classifier(ds);
    const auto featnet = FeatureExtractor::build(9);
    auto clean_cfg = tiny_sr_config(Mode::sr_clean);
    clean_cfg.epochs = 2;
    const auto clean = finetune_sr(clean_cfg, ds, classifier, featnet, nullptr).model;
    const auto clean_digest = digest(clean.parameters());
    const auto cls_before = digest(classifier.parameters());

    const auto cfg = tiny_sr_config(Mode::sr_advsr);
    auto a = finetune_sr(cfg, ds, classifier, featnet, &clean);
    auto b = finetune_sr(cfg, ds, classifier, featnet, &clean);
    EXPECT_EQ(digest(clean.parameters()), clean_digest);
    EXPECT_EQ(digest(classifier.parameters()), cls_before);
    EXPECT_EQ(digest(a.model.parameters()), digest(b.model.parameters()));

    ASSERT_TRUE(a.balance.has_value());
    const auto& bal = *a.balance;
    EXPECT_EQ(bal.r, 0.5);
    EXPECT_NEAR(bal.lambda * bal.l0_sr, bal.r * bal.l0_advce, 1e-12 * bal.r * bal.l0_advce);
    EXPECT_EQ(a.selected_epoch, cfg.epochs);
    EXPECT_EQ(sr_val_mse(a.model, ds.val), a.log.records.back().val_mse);
}
