#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advsr/tensor.hpp"

namespace advsr::ad {

// Handle to a value recorded on a Tape.
struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const { return id != npos; }
};

class Tape;

// Called during the reverse sweep with the adjoint of the node's output.
using BackwardFn = std::function<void(Tape& tape, std::span<const double> out_grad)>;

// Records operations in execution order. Nodes are appended only after their
// inputs exist, so the record is topologically sorted by construction.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Trainable leaf; gradient tracked iff t.requires_grad(). The tensor must
    // outlive the tape.
    Var parameter(Tensor& t);
    // Read-only leaf referencing external storage, never differentiated.
    Var input(const Tensor& t);
    // Leaf owning its value, never differentiated.
    Var constant(Tensor t);

    Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(Var v) const;
    const Shape& shape(Var v) const { return value(v).shape(); }
    bool needs_grad(Var v) const;
    std::string_view op_name(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    // Adjoint buffer of v, zero-initialised on first access.
    std::vector<double>& adjoint(Var v);
    // Empty span if the reverse sweep never reached v.
    std::span<const double> adjoint_of(Var v) const;

    // Reverse sweep from a scalar loss. Every node is visited at most once.
    // Afterwards each requires_grad parameter has its gradient accumulated.
    void backward(Var loss);
    std::size_t nodes_visited() const { return visited_; }

private:
    struct Node {
        std::string op;
        std::vector<Var> inputs;
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor* trainable = nullptr;
        bool needs_grad = false;
        BackwardFn backward;
        std::vector<double> adjoint;
    };

    const Node& node(Var v) const;
    Var push(Node n);

    std::vector<Node> nodes_;
    bool swept_ = false;
    std::size_t visited_ = 0;
};

void backward(Var loss, Tape& tape);

// NCHW convolution with OIKK kernel and zero padding.
Var conv2d(Tape& tape, Var input, Var kernel, Var bias, int stride, int padding);
Var relu(Tape& tape, Var x);
// Non-overlapping 2x2 max pooling; ties go to the first element in scan order.
Var maxpool2x2(Tape& tape, Var x);
// input NxD, weight DxM, bias M.
Var dense(Tape& tape, Var input, Var weight, Var bias);
// Catmull-Rom (a = -0.5) 2x upsampling, half-pixel centres, replicated edges.
Var bicubic_upsample2x(Tape& tape, Var x);
// Row-wise softmax over the last axis of an NxC tensor.
Var softmax(Tape& tape, Var logits);
// Batch mean of -sum_c labels * log(probs + 1e-12).
Var ce_soft_labels(Tape& tape, Var probs, Var labels);
Var l1_mean(Tape& tape, Var a, Var b);

Var add(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var x, double factor);
Var sum(Tape& tape, Var x);
Var square(Tape& tape, Var x);
Var reshape(Tape& tape, Var x, Shape shape);

inline constexpr double kLogEpsilon = 1e-12;

}  // namespace advsr::ad
