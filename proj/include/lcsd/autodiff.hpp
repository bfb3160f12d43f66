#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lcsd/tensor.hpp"

namespace lcsd {

// Ordered, named collection of learnable tensors. Gradients and optimizer
// moments are aligned with it by position.
class ParamSet {
   public:
    std::size_t add(std::string name, Tensor value);

    [[nodiscard]] std::size_t size() const { return tensors_.size(); }
    Tensor& operator[](std::size_t i) { return tensors_[i]; }
    const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
    [[nodiscard]] const std::string& name(std::size_t i) const { return names_[i]; }
    [[nodiscard]] std::size_t element_count() const;
    [[nodiscard]] std::vector<Tensor> zeros_like() const;

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    [[nodiscard]] auto begin() const { return tensors_.begin(); }
    [[nodiscard]] auto end() const { return tensors_.end(); }

    bool operator==(const ParamSet&) const = default;

   private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
};

using GradList = std::vector<Tensor>;

// Result of a backward pass, keyed by parameter set. Sets that the loss
// never reached yield all-zero gradients.
class Gradients {
   public:
    [[nodiscard]] GradList of(const ParamSet& set) const;
    GradList& slot(const ParamSet& set);

   private:
    std::map<const ParamSet*, GradList> grads_;
};

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    [[nodiscard]] const Tensor& value() const;
};

// Single-threaded record of one forward pass. Nodes are appended in
// evaluation order, so reverse insertion order is a valid topological order.
class Tape {
   public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Var constant(Tensor value);
    Var param(const ParamSet& set, std::size_t index);
    std::vector<Var> params(const ParamSet& set);

    [[nodiscard]] const Tensor& value(Var v) const { return nodes_[v.id].value; }
    [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    [[nodiscard]] bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    // Gradient accumulator for a node, zero-initialized on first access.
    Tensor& grad(std::size_t id);
    [[nodiscard]] const Tensor& grad_of_output(std::size_t id) const { return nodes_[id].grad; }

    Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward);

    // Reverse pass from a scalar loss.
    Gradients backprop(Var loss);

    // Values behind stop-gradient ops (detach, straight_through), in call
    // order. A tape given a replay list uses those values instead, which is
    // how finite differences treat sg(.) as a constant of the base point.
    Tensor stop_gradient(Tensor computed);
    [[nodiscard]] const std::vector<Tensor>& stop_gradient_values() const { return sg_values_; }
    void replay_stop_gradients(const std::vector<Tensor>* values) { sg_replay_ = values; }
    [[nodiscard]] bool replaying_stop_gradients() const { return sg_replay_ != nullptr; }

    [[nodiscard]] std::size_t node_count() const { return nodes_.size(); }

   private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        bool needs_grad = false;
        const ParamSet* set = nullptr;
        std::size_t param_index = 0;
    };
    std::vector<Node> nodes_;
    std::vector<const ParamSet*> sets_;
    std::vector<Tensor> sg_values_;
    const std::vector<Tensor>* sg_replay_ = nullptr;
};

namespace ad {

Var matmul(Var a, Var b);
Var add_bias(Var x, Var bias);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var tanh(Var a);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
// Horizontal concatenation of matrices with equal row counts.
Var concat_cols(const std::vector<Var>& parts);
// out[r] = table[indices[r]]; gradients scatter-add into table rows.
Var gather_rows(Var table, const std::vector<std::size_t>& indices);
// out[r] = concat(x[groups[r][0]], ..., x[groups[r][j]]) for the first
// min(width, |groups[r]|) members, zero-padded to width * x.cols().
Var pack_rows(Var x, const std::vector<std::vector<std::size_t>>& groups, std::size_t width);
// Forward value of `code`, gradient routed entirely to `latent`.
Var straight_through(Var latent, Var code);
Var detach(Var a);
// Per-row squared L2 norm, shape (rows x 1).
Var row_sq_norm(Var a);
// sum_i a[i] * weights[i] with constant weights of the same size.
Var weighted_sum(Var a, const Tensor& weights);
// mean((a - target)^2) over all entries, target constant.
Var mse(Var a, const Tensor& target);

}  // namespace ad

inline Var operator+(Var a, Var b) { return ad::add(a, b); }
inline Var operator-(Var a, Var b) { return ad::sub(a, b); }
inline Var operator*(double c, Var a) { return ad::scale(a, c); }

}  // namespace lcsd
