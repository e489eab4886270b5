#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace advsr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major f64 tensor. The shape is fixed at construction; the gradient
// buffer only exists once a backward pass has written to it.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double item() const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on) { requires_grad_ = on; }

    bool has_grad() const { return grad_.has_value(); }
    std::span<const double> grad() const;
    std::span<double> grad();
    void accumulate_grad(std::span<const double> g);
    void clear_grad() { grad_.reset(); }

    Tensor reshaped(Shape shape) const;
    bool same_values(const Tensor& other) const;

private:
    Shape shape_;
    std::vector<double> data_;
    bool requires_grad_ = false;
    std::optional<std::vector<double>> grad_;
};

// Keeps freed tensor storage in the process heap instead of returning it to
// the kernel, which avoids page faults on every training step. Call once from
// main before any work.
void retain_freed_memory();

}  // namespace advsr
