#include "advsr/autodiff.hpp"

#include <stdexcept>

namespace advsr::ad {

Var Tape::push(Node n)
{
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::parameter(Tensor& t)
{
    Node n;
    n.op = "parameter";
    n.external = &t;
    n.trainable = t.requires_grad() ? &t : nullptr;
    n.needs_grad = t.requires_grad();
    return push(std::move(n));
}

Var Tape::input(const Tensor& t)
{
    Node n;
    n.op = "input";
    n.external = &t;
    return push(std::move(n));
}

Var Tape::constant(Tensor t)
{
    Node n;
    n.op = "constant";
    n.owned = std::move(t);
    return push(std::move(n));
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward)
{
    Node n;
    n.op = std::string(op);
    n.owned = std::move(value);
    for (Var in : inputs) {
        if (in.id >= nodes_.size()) {
            throw std::invalid_argument(n.op + ": input is not on this tape");
        }
        n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    }
    n.inputs = std::move(inputs);
    if (n.needs_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

const Tape::Node& Tape::node(Var v) const
{
    if (v.id >= nodes_.size()) throw std::out_of_range("variable is not on this tape");
    return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const
{
    const Node& n = node(v);
    return n.external ? *n.external : n.owned;
}

bool Tape::needs_grad(Var v) const { return node(v).needs_grad; }

std::string_view Tape::op_name(Var v) const { return node(v).op; }

std::vector<double>& Tape::adjoint(Var v)
{
    node(v);
    Node& n = nodes_[v.id];
    if (n.adjoint.empty()) n.adjoint.assign(value(v).numel(), 0.0);
    return n.adjoint;
}

std::span<const double> Tape::adjoint_of(Var v) const { return node(v).adjoint; }

void Tape::backward(Var loss)
{
    const Tensor& out = value(loss);
    if (out.numel() != 1) {
        throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_str(out.shape()));
    }
    if (swept_) throw std::logic_error("backward already ran on this tape");
    swept_ = true;

    adjoint(loss)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.adjoint.empty()) continue;
        ++visited_;
        if (n.backward) {
            // The callback may grow other nodes' adjoints but never this one.
            n.backward(*this, n.adjoint);
        }
    }
    for (Node& n : nodes_) {
        if (!n.trainable) continue;
        if (n.adjoint.empty()) n.adjoint.assign(n.trainable->numel(), 0.0);
        n.trainable->accumulate_grad(n.adjoint);
    }
}

void backward(Var loss, Tape& tape) { tape.backward(loss); }

}  // namespace advsr::ad
