#include "advsr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace advsr::ad {
namespace {

double evaluate(const GraphBuilder& build, std::vector<Tensor>& inputs)
{
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(tape.input(t));
    return tape.value(build(tape, vars)).item();
}

}  // namespace

double relative_error(double analytic, double numeric)
{
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(std::string op, const GraphBuilder& build, std::vector<Tensor>& inputs, double eps)
{
    GradCheckReport report;
    report.op = std::move(op);

    std::vector<std::vector<double>> analytic(inputs.size());
    {
        Tape tape;
        std::vector<Var> vars;
        for (Tensor& t : inputs) vars.push_back(tape.parameter(t));
        Var loss = build(tape, vars);
        tape.backward(loss);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            if (!inputs[i].requires_grad()) continue;
            auto g = tape.adjoint_of(vars[i]);
            analytic[i] = g.empty() ? std::vector<double>(inputs[i].numel(), 0.0)
                                    : std::vector<double>(g.begin(), g.end());
            inputs[i].clear_grad();
        }
    }

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        ParamError row;
        row.input = i;
        for (std::size_t e = 0; e < inputs[i].numel(); ++e) {
            const double saved = inputs[i][e];
            inputs[i][e] = saved + eps;
            const double up = evaluate(build, inputs);
            inputs[i][e] = saved - eps;
            const double down = evaluate(build, inputs);
            inputs[i][e] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double err = relative_error(analytic[i][e], numeric);
            if (e == 0 || err > row.rel_error) {
                row.element = e;
                row.analytic = analytic[i][e];
                row.numeric = numeric;
                row.rel_error = err;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, row.rel_error);
        report.table.push_back(row);
    }
    return report;
}

}  // namespace advsr::ad
