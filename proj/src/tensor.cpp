#include "srdml/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace srdml {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> data;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("expected rank-2 tensor, got " + shape_to_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("expected rank-2 tensor, got " + shape_to_string(shape_));
  return shape_[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  const auto cols = t.cols();
  if (begin > end || end > t.rows()) throw ShapeError("row slice out of range");
  std::vector<double> data(t.storage().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                           t.storage().begin() + static_cast<std::ptrdiff_t>(end * cols));
  return Tensor::matrix(end - begin, cols, std::move(data));
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const auto cols = t.cols();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (auto r : rows) {
    if (r >= t.rows()) throw ShapeError("row index out of range");
    auto first = t.storage().begin() + static_cast<std::ptrdiff_t>(r * cols);
    data.insert(data.end(), first, first + static_cast<std::ptrdiff_t>(cols));
  }
  return Tensor::matrix(rows.size(), cols, std::move(data));
}

Tensor vstack(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("vstack of nothing");
  const auto cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<double> data;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("vstack column mismatch");
    rows += p.rows();
    data.insert(data.end(), p.storage().begin(), p.storage().end());
  }
  return Tensor::matrix(rows, cols, std::move(data));
}

}  // namespace srdml
