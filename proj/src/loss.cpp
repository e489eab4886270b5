#include "advsr/loss.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace advsr::loss {

using ad::Tape;
using ad::Var;

void AttackSpec::validate() const
{
    if (classes < 2) throw std::invalid_argument("attack spec needs at least 2 classes");
    if (source < 0 || source >= classes || target < 0 || target >= classes) {
        throw std::invalid_argument("attack source/target must lie in [0, " + std::to_string(classes) + ")");
    }
    if (source == target) throw std::invalid_argument("attack source and target must differ");
}

AdvLabel rewrite_label(int class_id, const AttackSpec& spec)
{
    spec.validate();
    if (class_id < 0 || class_id >= spec.classes) {
        throw std::invalid_argument("class id " + std::to_string(class_id) + " outside [0, " + std::to_string(spec.classes) + ")");
    }
    AdvLabel label;
    label.hot = class_id == spec.source ? spec.target : class_id;
    label.values.assign(static_cast<std::size_t>(spec.classes), 0.0);
    label.values[static_cast<std::size_t>(label.hot)] = 1.0;
    return label;
}

Tensor adv_label_matrix(std::span<const int> class_ids, const AttackSpec& spec)
{
    const auto c = static_cast<std::size_t>(spec.classes);
    Tensor out({class_ids.size(), c}, 0.0);
    for (std::size_t i = 0; i < class_ids.size(); ++i) {
        const AdvLabel l = rewrite_label(class_ids[i], spec);
        out[i * c + static_cast<std::size_t>(l.hot)] = 1.0;
    }
    return out;
}

Tensor onehot_matrix(std::span<const int> class_ids, int classes)
{
    const auto c = static_cast<std::size_t>(classes);
    Tensor out({class_ids.size(), c}, 0.0);
    for (std::size_t i = 0; i < class_ids.size(); ++i) {
        if (class_ids[i] < 0 || class_ids[i] >= classes) throw std::invalid_argument("class id out of range");
        out[i * c + static_cast<std::size_t>(class_ids[i])] = 1.0;
    }
    return out;
}

Var adv_ce_loss(Tape& tape, Var sr_batch, std::span<const int> class_ids, const AttackSpec& spec,
                const ClassifierModel& classifier)
{
    if (!classifier.frozen()) throw std::invalid_argument("adv_ce_loss: classifier must be frozen");
    if (classifier.classes() != spec.classes) {
        throw std::invalid_argument("adv_ce_loss: classifier has " + std::to_string(classifier.classes()) +
                                    " classes, attack spec " + std::to_string(spec.classes));
    }
    const Shape& s = tape.shape(sr_batch);
    if (s.empty() || s[0] != class_ids.size()) {
        throw std::invalid_argument("adv_ce_loss: batch of " + shape_str(s) + " with " + std::to_string(class_ids.size()) +
                                    " labels");
    }
    Var probs = ad::softmax(tape, classifier.forward_frozen(tape, sr_batch));
    return ad::ce_soft_labels(tape, probs, tape.constant(adv_label_matrix(class_ids, spec)));
}

Var sr_recon_loss(Tape& tape, Var hr, Var sr, const FeatureExtractor& featnet)
{
    if (tape.shape(hr) != tape.shape(sr)) {
        throw std::invalid_argument("sr_recon_loss: shape mismatch " + shape_str(tape.shape(hr)) + " vs " +
                                    shape_str(tape.shape(sr)));
    }
    Var pixel = ad::l1_mean(tape, hr, sr);
    const auto fh = featnet.features(tape, hr);
    const auto fs = featnet.features(tape, sr);
    Var perceptual = ad::l1_mean(tape, fh[0], fs[0]);
    for (std::size_t l = 1; l < fh.size(); ++l) perceptual = ad::add(tape, perceptual, ad::l1_mean(tape, fh[l], fs[l]));
    return ad::add(tape, pixel, ad::scale(tape, perceptual, kPerceptualWeight));
}

LossBalance balance_from_initial(double r, double l0_advce, double l0_sr)
{
    if (!(r >= 0.0)) throw std::invalid_argument("loss balance ratio r must be >= 0");
    if (!(l0_sr > 0.0)) {
        throw std::invalid_argument("initial SR loss is " + std::to_string(l0_sr) +
                                    "; lambda = r * L0_advce / L0_sr is undefined");
    }
    return LossBalance{r, l0_advce, l0_sr, r * l0_advce / l0_sr};
}

LossBalance compute_lambda(const SrModel& sr_model, const ClassifierModel& classifier, const FeatureExtractor& featnet,
                           const data::DatasetSplit& val, const AttackSpec& spec, double r)
{
    if (val.samples.empty()) throw std::invalid_argument("compute_lambda: validation split is empty");
    constexpr std::size_t kChunk = 25;
    double advce_sum = 0.0, sr_sum = 0.0;
    const auto idx = data::all_indices(val);
    for (std::size_t start = 0; start < idx.size(); start += kChunk) {
        const std::size_t n = std::min(kChunk, idx.size() - start);
        std::span<const std::size_t> batch(idx.data() + start, n);
        std::vector<int> labels;
        for (std::size_t i : batch) labels.push_back(val.samples[i].class_id);
        Tape tape;
        Var hr = tape.constant(data::stack_hr(val, batch));
        Var sr = tape.constant(sr_model.infer(data::stack_lr(val, batch)));
        const double nd = static_cast<double>(n);
        advce_sum += tape.value(adv_ce_loss(tape, sr, labels, spec, classifier)).item() * nd;
        sr_sum += tape.value(sr_recon_loss(tape, hr, sr, featnet)).item() * nd;
    }
    const double count = static_cast<double>(idx.size());
    return balance_from_initial(r, advce_sum / count, sr_sum / count);
}

LossTerms total_loss_terms(Tape& tape, Var hr, Var sr_batch, std::span<const int> class_ids, const AttackSpec& spec,
                           const ClassifierModel& classifier, const FeatureExtractor& featnet, double lambda)
{
    if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be >= 0");
    LossTerms terms;
    terms.advce = adv_ce_loss(tape, sr_batch, class_ids, spec, classifier);
    terms.recon = sr_recon_loss(tape, hr, sr_batch, featnet);
    terms.total = ad::add(tape, terms.advce, ad::scale(tape, terms.recon, lambda));
    return terms;
}

Var total_loss(Tape& tape, Var hr, Var sr_batch, std::span<const int> class_ids, const AttackSpec& spec,
               const ClassifierModel& classifier, const FeatureExtractor& featnet, double lambda)
{
    return total_loss_terms(tape, hr, sr_batch, class_ids, spec, classifier, featnet, lambda).total;
}

}  // namespace advsr::loss
