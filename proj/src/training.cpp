#include "advsr/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "advsr/errors.hpp"

namespace advsr::train {
namespace {

using ad::Tape;
using ad::Var;

constexpr std::size_t kEvalChunk = 25;

std::vector<int> labels_of(const data::DatasetSplit& split, std::span<const std::size_t> idx)
{
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(split.samples[i].class_id);
    return out;
}

template <typename Fn>
void for_each_chunk(const data::DatasetSplit& split, Fn&& fn)
{
    const auto idx = data::all_indices(split);
    for (std::size_t start = 0; start < idx.size(); start += kEvalChunk) {
        fn(std::span<const std::size_t>(idx.data() + start, std::min(kEvalChunk, idx.size() - start)));
    }
}

// Mean Brier score and accuracy of the classifier on HR images.
std::pair<double, double> classifier_val(const ClassifierModel& classifier, const data::DatasetSplit& split)
{
    double brier = 0.0;
    std::size_t correct = 0;
    const auto c = static_cast<std::size_t>(classifier.classes());
    for_each_chunk(split, [&](std::span<const std::size_t> batch) {
        Tape tape;
        const Tensor logits = classifier.infer(data::stack_hr(split, batch));
        const Tensor& probs = tape.value(ad::softmax(tape, tape.constant(logits)));
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const int truth = split.samples[batch[i]].class_id;
            auto row = probs.data().subspan(i * c, c);
            for (std::size_t j = 0; j < c; ++j) {
                const double d = row[j] - (static_cast<int>(j) == truth ? 1.0 : 0.0);
                brier += d * d;
            }
            if (argmax_row(logits.data().subspan(i * c, c)) == truth) ++correct;
        }
    });
    const double n = static_cast<double>(split.samples.size());
    return {brier / (n * static_cast<double>(c)), static_cast<double>(correct) / n};
}

struct SrVal {
    double mse = 0.0;
    std::optional<double> advce;
};

SrVal sr_val(const SrModel& model, const data::DatasetSplit& split, const ClassifierModel* classifier,
             const loss::AttackSpec& spec)
{
    double sq = 0.0, advce = 0.0;
    std::size_t values = 0;
    for_each_chunk(split, [&](std::span<const std::size_t> batch) {
        const Tensor sr = model.infer(data::stack_lr(split, batch));
        const Tensor hr = data::stack_hr(split, batch);
        for (std::size_t i = 0; i < sr.numel(); ++i) {
            const double d = sr[i] - hr[i];
            sq += d * d;
        }
        values += sr.numel();
        if (classifier) {
            Tape tape;
            const auto labels = labels_of(split, batch);
            advce += tape.value(loss::adv_ce_loss(tape, tape.constant(sr), labels, spec, *classifier)).item() *
                     static_cast<double>(batch.size());
        }
    });
    SrVal out;
    out.mse = sq / static_cast<double>(values);
    if (classifier) out.advce = advce / static_cast<double>(split.samples.size());
    return out;
}

void require_split(const data::DatasetSplit& split, const char* what)
{
    if (split.samples.empty()) throw std::invalid_argument(std::string(what) + " split is empty");
}

}  // namespace

// --- optimiser and scheduler -----------------------------------------------

AdamState AdamState::for_parameters(const ParameterList& params, double lr)
{
    AdamState s;
    s.lr = lr;
    for (const auto& p : params) {
        s.m.emplace_back(p.tensor.numel(), 0.0);
        s.v.emplace_back(p.tensor.numel(), 0.0);
    }
    return s;
}

void adam_step(ParameterList& params, AdamState& state)
{
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw std::invalid_argument("adam_step: optimiser state tracks " + std::to_string(state.m.size()) +
                                    " tensors, got " + std::to_string(params.size()));
    }
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) throw std::invalid_argument("adam_step: parameter '" + p.name + "' has no gradient");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto value = params[k].tensor.data();
        auto grad = std::as_const(params[k].tensor).grad();
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != value.size()) throw std::invalid_argument("adam_step: moment shape mismatch for '" + params[k].name + "'");
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mh = m[i] / c1;
            const double vh = v[i] / c2;
            value[i] -= state.lr * mh / (std::sqrt(vh) + state.eps);
        }
    }
}

double scheduler_step(PlateauScheduler& sched, double val_mse)
{
    if (val_mse < sched.best) {
        sched.best = val_mse;
        sched.bad_epochs = 0;
    } else if (++sched.bad_epochs >= sched.patience) {
        sched.lr *= sched.factor;
        sched.bad_epochs = 0;
    }
    return sched.lr;
}

// --- configuration ---------------------------------------------------------

const char* mode_name(Mode mode)
{
    switch (mode) {
    case Mode::classifier: return "classifier";
    case Mode::sr_clean: return "sr_clean";
    case Mode::sr_advsr: return "sr_advsr";
    }
    return "?";
}

Mode parse_mode(const std::string& name)
{
    if (name == "classifier") return Mode::classifier;
    if (name == "sr_clean" || name == "sr-clean") return Mode::sr_clean;
    if (name == "sr_advsr" || name == "sr-advsr") return Mode::sr_advsr;
    throw std::invalid_argument("unknown training mode '" + name + "' (expected classifier, sr-clean or sr-advsr)");
}

TrainConfig TrainConfig::defaults(Mode mode)
{
    TrainConfig cfg;
    cfg.mode = mode;
    switch (mode) {
    case Mode::classifier:
        cfg.epochs = 30;
        cfg.batch_size = 32;
        cfg.lr = 1e-3;
        cfg.selection = Selection::best_val;
        break;
    case Mode::sr_clean:
        cfg.epochs = 60;
        cfg.batch_size = 16;
        cfg.lr = 1e-4;
        cfg.selection = Selection::best_val;
        break;
    case Mode::sr_advsr:
        cfg.epochs = 60;
        cfg.batch_size = 16;
        cfg.lr = 1e-4;
        cfg.selection = Selection::final_epoch;
        break;
    }
    return cfg;
}

void TrainConfig::validate() const
{
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1, got " + std::to_string(epochs));
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1, got " + std::to_string(batch_size));
    if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be positive and finite");
    if (mode == Mode::sr_advsr) {
        if (!(r >= 0.0) || !std::isfinite(r)) throw std::invalid_argument("r must be a finite value >= 0");
        attack.validate();
    }
}

std::string TrainLog::to_csv() const
{
    std::ostringstream os;
    os << "epoch,train_loss,val_mse,val_advce,lr\n";
    char buf[256];
    for (const auto& r : records) {
        std::string advce;
        if (r.val_advce) {
            char a[64];
            std::snprintf(a, sizeof a, "%.17g", *r.val_advce);
            advce = a;
        }
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%s,%.17g\n", r.epoch, r.train_loss, r.val_mse, advce.c_str(), r.lr);
        os << buf;
    }
    return os.str();
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, int epoch)
{
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5eedu,
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    // Fisher-Yates with an explicit bounded draw so the order does not depend
    // on the standard library's shuffle.
    for (std::size_t i = n; i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t x;
        do x = rng(); while (x >= limit);
        std::swap(perm[i - 1], perm[static_cast<std::size_t>(x % bound)]);
    }
    return perm;
}

double classifier_accuracy(const ClassifierModel& classifier, const data::DatasetSplit& split)
{
    require_split(split, "evaluation");
    return classifier_val(classifier, split).second;
}

double sr_val_mse(const SrModel& model, const data::DatasetSplit& split)
{
    require_split(split, "evaluation");
    return sr_val(model, split, nullptr, {}).mse;
}

// --- classifier ------------------------------------------------------------

ClassifierRun train_classifier(const TrainConfig& cfg, const data::Dataset& dataset, const EpochCallback& on_epoch)
{
    cfg.validate();
    if (cfg.mode != Mode::classifier) throw std::invalid_argument("train_classifier needs mode classifier");
    require_split(dataset.train, "training");
    require_split(dataset.val, "validation");
    const auto counts = dataset.train.per_class_counts();
    if (std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) != counts.end()) {
        throw std::invalid_argument("train_classifier: training split is not class-balanced");
    }
    if (dataset.train.classes != cfg.classifier.classes) {
        throw std::invalid_argument("train_classifier: dataset has " + std::to_string(dataset.train.classes) +
                                    " classes, classifier config " + std::to_string(cfg.classifier.classes));
    }

    ClassifierModel model = ClassifierModel::build(cfg.classifier, cfg.seed);
    model.freeze(false);
    ClassifierRun run{model, {}, 0.0, 0.0, 0};
    run.initial_val_accuracy = classifier_val(model, dataset.val).second;

    AdamState adam = AdamState::for_parameters(model.parameters(), cfg.lr);
    PlateauScheduler sched;
    sched.lr = cfg.lr;
    double best = std::numeric_limits<double>::infinity();
    const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto perm = epoch_permutation(dataset.train.samples.size(), cfg.seed, epoch);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < perm.size(); start += batch) {
            std::span<const std::size_t> idx(perm.data() + start, std::min(batch, perm.size() - start));
            const auto labels = labels_of(dataset.train, idx);
            Tape tape;
            Var logits = model.forward(tape, tape.constant(data::stack_hr(dataset.train, idx)));
            Var l = ad::ce_soft_labels(tape, ad::softmax(tape, logits),
                                       tape.constant(loss::onehot_matrix(labels, model.classes())));
            loss_sum += tape.value(l).item() * static_cast<double>(idx.size());
            tape.backward(l);
            adam_step(model.parameters(), adam);
            clear_grads(model.parameters());
        }
        const auto [brier, acc] = classifier_val(model, dataset.val);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(perm.size()), brier, std::nullopt, adam.lr};
        run.log.records.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (cfg.selection == Selection::final_epoch || brier < best) {
            best = brier;
            run.model = model;
            run.val_accuracy = acc;
            run.selected_epoch = epoch;
        }
        adam.lr = scheduler_step(sched, brier);
    }
    run.model.freeze(true);
    return run;
}

// --- super-resolution ------------------------------------------------------

SrRun finetune_sr(const TrainConfig& cfg, const data::Dataset& dataset, const ClassifierModel& classifier,
                  const FeatureExtractor& featnet, const SrModel* init, const EpochCallback& on_epoch)
{
    cfg.validate();
    if (cfg.mode == Mode::classifier) throw std::invalid_argument("finetune_sr needs mode sr_clean or sr_advsr");
    const bool adversarial = cfg.mode == Mode::sr_advsr;
    if (adversarial && !init) throw DependencyError("sr_advsr training requires the clean SR checkpoint to start from");
    if (!classifier.frozen()) throw std::invalid_argument("finetune_sr: classifier must be frozen");
    require_split(dataset.train, "training");
    require_split(dataset.val, "validation");
    if (adversarial && classifier.classes() != cfg.attack.classes) {
        throw std::invalid_argument("finetune_sr: classifier has " + std::to_string(classifier.classes()) +
                                    " classes, attack spec " + std::to_string(cfg.attack.classes));
    }
    const bool track_advce = classifier.classes() == cfg.attack.classes;

    SrModel model = init ? *init : SrModel::build(cfg.sr, cfg.seed);
    set_trainable(model.parameters(), true);
    clear_grads(model.parameters());
    SrRun run{model, {}, std::nullopt, 0};
    if (adversarial) run.balance = loss::compute_lambda(model, classifier, featnet, dataset.val, cfg.attack, cfg.r);

    AdamState adam = AdamState::for_parameters(model.parameters(), cfg.lr);
    PlateauScheduler sched;
    sched.lr = cfg.lr;
    double best = std::numeric_limits<double>::infinity();
    const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto perm = epoch_permutation(dataset.train.samples.size(), cfg.seed, epoch);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < perm.size(); start += batch) {
            std::span<const std::size_t> idx(perm.data() + start, std::min(batch, perm.size() - start));
            Tape tape;
            Var hr = tape.constant(data::stack_hr(dataset.train, idx));
            Var sr = model.forward(tape, tape.constant(data::stack_lr(dataset.train, idx)));
            Var l;
            if (adversarial) {
                const auto labels = labels_of(dataset.train, idx);
                l = loss::total_loss(tape, hr, sr, labels, cfg.attack, classifier, featnet, run.balance->lambda);
            } else {
                l = loss::sr_recon_loss(tape, hr, sr, featnet);
            }
            loss_sum += tape.value(l).item() * static_cast<double>(idx.size());
            tape.backward(l);
            adam_step(model.parameters(), adam);
            clear_grads(model.parameters());
        }
        const SrVal val = sr_val(model, dataset.val, track_advce ? &classifier : nullptr, cfg.attack);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(perm.size()), val.mse, val.advce, adam.lr};
        run.log.records.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (cfg.selection == Selection::final_epoch || val.mse < best) {
            best = val.mse;
            run.model = model;
            run.selected_epoch = epoch;
        }
        adam.lr = scheduler_step(sched, val.mse);
    }
    clear_grads(run.model.parameters());
    return run;
}

}  // namespace advsr::train
