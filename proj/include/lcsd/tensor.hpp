#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace lcsd {

// Dense row-major fp64 array. Rank 1 tensors behave as a single row when
// matrix operations are applied to them.
class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return Tensor({rows, cols}, std::move(values));
    }
    static Tensor vector(std::vector<double> values) {
        const std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    [[nodiscard]] const std::vector<std::size_t>& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] std::size_t rank() const { return shape_.size(); }
    [[nodiscard]] std::size_t rows() const;
    [[nodiscard]] std::size_t cols() const;
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] std::span<double> values() { return data_; }
    [[nodiscard]] std::span<const double> values() const { return data_; }
    [[nodiscard]] double* data() { return data_.data(); }
    [[nodiscard]] const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    [[nodiscard]] std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const {
        return {data_.data() + r * cols(), cols()};
    }

    [[nodiscard]] double item() const;
    [[nodiscard]] bool all_finite() const;
    [[nodiscard]] bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    [[nodiscard]] std::string shape_string() const;

    void fill(double v);
    bool operator==(const Tensor&) const = default;

   private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Value kernels shared by the differentiable ops and the inference paths, so
// both produce bit-identical results.
namespace kernels {

// out = a (n x k) * b (k x m)
Tensor matmul(const Tensor& a, const Tensor& b);
// out = a^T (k x n) * b (n x m)
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// out = a (n x m) * b^T (k x m)
Tensor matmul_nt(const Tensor& a, const Tensor& b);
void add_row_inplace(Tensor& x, const Tensor& bias);
void tanh_inplace(Tensor& x);
void axpy(double alpha, const Tensor& x, Tensor& y);

}  // namespace kernels

}  // namespace lcsd
