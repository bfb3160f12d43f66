#include "lcsd/tensor.hpp"

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "lcsd/error.hpp"

namespace lcsd {
namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) {
        require(s > 0, "Tensor: shape entries must be positive");
        n *= s;
    }
    return n;
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap as_matrix(const Tensor& t) { return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())}; }
MutMap as_matrix(Tensor& t) { return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())}; }

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    require(!shape_.empty(), "Tensor: shape must have at least one dimension");
    data_.assign(element_count(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    require(!shape_.empty(), "Tensor: shape must have at least one dimension");
    const std::size_t n = element_count(shape_);
    if (n != data_.size()) {
        throw ContractViolation("Tensor: shape " + shape_string() + " needs " + std::to_string(n) +
                                " values, got " + std::to_string(data_.size()));
    }
}

std::size_t Tensor::rows() const {
    if (shape_.empty()) return 0;
    if (shape_.size() == 1) return 1;
    return std::accumulate(shape_.begin(), shape_.end() - 1, std::size_t{1}, std::multiplies<>());
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

double Tensor::item() const {
    require(data_.size() == 1, "Tensor::item: tensor of shape " + shape_string() + " is not a scalar");
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ']';
    return os.str();
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw ContractViolation("matmul: inner dimensions differ (" + a.shape_string() + " x " +
                                b.shape_string() + ")");
    }
    Tensor out = Tensor::zeros(a.rows(), b.cols());
    as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require(a.rows() == b.rows(), "matmul_tn: row counts differ (" + a.shape_string() + ", " +
                                      b.shape_string() + ")");
    Tensor out = Tensor::zeros(a.cols(), b.cols());
    as_matrix(out).noalias() = as_matrix(a).transpose() * as_matrix(b);
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require(a.cols() == b.cols(), "matmul_nt: column counts differ (" + a.shape_string() + ", " +
                                      b.shape_string() + ")");
    Tensor out = Tensor::zeros(a.rows(), b.rows());
    as_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
    return out;
}

void add_row_inplace(Tensor& x, const Tensor& bias) {
    require(bias.size() == x.cols(), "add_bias: bias of " + std::to_string(bias.size()) +
                                         " entries for " + std::to_string(x.cols()) + " columns");
    const std::size_t m = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double* row = x.data() + r * m;
        for (std::size_t c = 0; c < m; ++c) row[c] += bias[c];
    }
}

void tanh_inplace(Tensor& x) {
    for (double& v : x.values()) v = std::tanh(v);
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
    require(x.size() == y.size(), "axpy: size mismatch");
    const double* xs = x.data();
    double* ys = y.data();
    for (std::size_t i = 0; i < x.size(); ++i) ys[i] += alpha * xs[i];
}

}  // namespace kernels
}  // namespace lcsd
