#pragma once

#include <span>
#include <vector>

#include "advsr/autodiff.hpp"
#include "advsr/data.hpp"
#include "advsr/models.hpp"

namespace advsr::loss {

// Source class s is pushed towards target class t; all others keep their label.
struct AttackSpec {
    int source = 0;
    int target = 3;
    int classes = 8;

    void validate() const;
};

// Rewritten one-hot label: hot index is t for class s, the class itself otherwise.
struct AdvLabel {
    std::vector<double> values;
    int hot = 0;
};

inline constexpr double kPerceptualWeight = 0.01;

AdvLabel rewrite_label(int class_id, const AttackSpec& spec);
// N x C matrix of rewritten labels.
Tensor adv_label_matrix(std::span<const int> class_ids, const AttackSpec& spec);
// N x C matrix of plain one-hot labels.
Tensor onehot_matrix(std::span<const int> class_ids, int classes);

// Batch mean of -sum_c label_c log p_c(sr) against rewritten labels. The
// classifier must be frozen.
ad::Var adv_ce_loss(ad::Tape& tape, ad::Var sr_batch, std::span<const int> class_ids, const AttackSpec& spec,
                    const ClassifierModel& classifier);

// l1_mean(hr, sr) + 0.01 * sum over taps of l1_mean(psi(hr), psi(sr))
ad::Var sr_recon_loss(ad::Tape& tape, ad::Var hr, ad::Var sr, const FeatureExtractor& featnet);

struct LossBalance {
    double r = 0.0;
    double l0_advce = 0.0;
    double l0_sr = 0.0;
    double lambda = 0.0;
};

// lambda = r * l0_advce / l0_sr
LossBalance balance_from_initial(double r, double l0_advce, double l0_sr);

// Evaluates the initial SR model once over the whole validation split and
// derives lambda from the mean losses.
LossBalance compute_lambda(const SrModel& sr_model, const ClassifierModel& classifier, const FeatureExtractor& featnet,
                           const data::DatasetSplit& val, const AttackSpec& spec, double r);

struct LossTerms {
    ad::Var total;
    ad::Var advce;
    ad::Var recon;
};

// advce + lambda * recon as one differentiable scalar.
LossTerms total_loss_terms(ad::Tape& tape, ad::Var hr, ad::Var sr_batch, std::span<const int> class_ids,
                           const AttackSpec& spec, const ClassifierModel& classifier, const FeatureExtractor& featnet,
                           double lambda);
ad::Var total_loss(ad::Tape& tape, ad::Var hr, ad::Var sr_batch, std::span<const int> class_ids, const AttackSpec& spec,
                   const ClassifierModel& classifier, const FeatureExtractor& featnet, double lambda);

}  // namespace advsr::loss
