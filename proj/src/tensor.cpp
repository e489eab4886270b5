#include "advsr/tensor.hpp"

#include <cstring>
#include <malloc.h>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace advsr {

std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_numel(shape_) != data_.size()) {
        throw std::invalid_argument("tensor shape " + shape_str(shape_) + " does not match " +
                                    std::to_string(data_.size()) + " values");
    }
}

double Tensor::item() const
{
    if (data_.size() != 1) {
        throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape_));
    }
    return data_[0];
}

std::span<const double> Tensor::grad() const
{
    if (!grad_) throw std::logic_error("tensor has no gradient");
    return *grad_;
}

std::span<double> Tensor::grad()
{
    if (!grad_) throw std::logic_error("tensor has no gradient");
    return *grad_;
}

void Tensor::accumulate_grad(std::span<const double> g)
{
    if (g.size() != data_.size()) {
        throw std::invalid_argument("gradient size mismatch for tensor " + shape_str(shape_));
    }
    if (!grad_) {
        grad_.emplace(g.begin(), g.end());
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) (*grad_)[i] += g[i];
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), data_);
}

bool Tensor::same_values(const Tensor& other) const
{
    return shape_ == other.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

void retain_freed_memory()
{
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
}

}  // namespace advsr
