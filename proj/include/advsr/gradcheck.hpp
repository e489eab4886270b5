#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advsr/autodiff.hpp"

namespace advsr::ad {

struct ParamError {
    std::size_t input = 0;    // position in the checked input list
    std::size_t element = 0;  // worst element of that input
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    std::string op;
    double max_rel_error = 0.0;
    std::vector<ParamError> table;  // one row per input with requires_grad
};

// Builds a scalar-valued graph over the supplied input variables.
using GraphBuilder = std::function<Var(Tape&, std::span<const Var>)>;

// |g_a - g_n| / max(|g_a|, |g_n|, 1e-8)
double relative_error(double analytic, double numeric);

// Compares reverse-mode gradients with central differences for every element
// of each input whose requires_grad flag is set. Inputs are restored on return.
GradCheckReport grad_check(std::string op, const GraphBuilder& build, std::vector<Tensor>& inputs, double eps = 1e-5);

}  // namespace advsr::ad
