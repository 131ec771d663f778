// Dense n-dimensional tensor of 64-bit reals, row-major, with shape metadata.
// This is the universal value type of the project: signals, images, kernels,
// masks and parameters are all Tensors.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace n2b {

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double value);
    static Tensor ones(std::vector<int> shape) { return full(std::move(shape), 1.0); }
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(const std::vector<int>& index) { return data_[flat_index(index)]; }
    double at(const std::vector<int>& index) const { return data_[flat_index(index)]; }
    std::size_t flat_index(const std::vector<int>& index) const;

    // Size-preserving shape change.
    Tensor reshaped(std::vector<int> shape) const;

    void fill(double value);

    Tensor& operator+=(const Tensor& rhs);
    Tensor& operator-=(const Tensor& rhs);
    Tensor& operator*=(double s);

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::string shape_string(const std::vector<int>& shape);
std::size_t shape_size(const std::vector<int>& shape);
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scaled(const Tensor& a, double s);

double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double mean(const Tensor& a);
double sum_sq(const Tensor& a);
double norm2(const Tensor& a);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Binary tensor container: magic "N2BT", u32 LE rank, rank u32 LE extents,
// then row-major 64-bit LE reals.
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace n2b
