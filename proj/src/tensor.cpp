#include "protosolo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace protosolo {

std::size_t shape_product(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            out += ",";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_product(shape_) != data_.size()) {
        throw std::invalid_argument("tensor: shape " + shape_to_string(shape_) + " does not match " +
                                    std::to_string(data_.size()) + " elements");
    }
}

Tensor Tensor::scalar(double value)
{
    return Tensor(Shape{}, std::vector<double>{value});
}

Tensor Tensor::vector(std::vector<double> values)
{
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const
{
    if (axis >= shape_.size()) {
        throw std::out_of_range("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                                shape_to_string(shape_));
    }
    return shape_[axis];
}

double& Tensor::at(std::size_t i, std::size_t j)
{
    return data_[i * shape_[1] + j];
}

double Tensor::at(std::size_t i, std::size_t j) const
{
    return data_[i * shape_[1] + j];
}

double& Tensor::at(std::size_t i, std::size_t j, std::size_t k)
{
    return data_[(i * shape_[1] + j) * shape_[2] + k];
}

double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const
{
    return data_[(i * shape_[1] + j) * shape_[2] + k];
}

double Tensor::item() const
{
    if (data_.size() != 1) {
        throw std::logic_error("tensor: item() on tensor of shape " + shape_to_string(shape_));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) noexcept
{
    std::fill(data_.begin(), data_.end(), value);
}

} // namespace protosolo
