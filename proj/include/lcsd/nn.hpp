#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lcsd/autodiff.hpp"
#include "lcsd/rng.hpp"
#include "lcsd/tensor.hpp"

namespace lcsd {

// Fully connected net: tanh on hidden layers, identity on the output layer.
// Layer l stores "<prefix>.w<l>" (fan_in x fan_out) and "<prefix>.b<l>".
class Mlp {
   public:
    Mlp() = default;
    // Glorot-uniform weights, zero biases.
    Mlp(const std::vector<std::size_t>& widths, Rng& rng, const std::string& prefix);
    static Mlp zeros(const std::vector<std::size_t>& widths, const std::string& prefix);

    [[nodiscard]] std::size_t in_dim() const { return widths_.front(); }
    [[nodiscard]] std::size_t out_dim() const { return widths_.back(); }
    [[nodiscard]] std::size_t layer_count() const { return widths_.size() - 1; }
    [[nodiscard]] const std::vector<std::size_t>& widths() const { return widths_; }

    Tensor& weight(std::size_t layer) { return params[2 * layer]; }
    Tensor& bias(std::size_t layer) { return params[2 * layer + 1]; }
    [[nodiscard]] const Tensor& weight(std::size_t layer) const { return params[2 * layer]; }
    [[nodiscard]] const Tensor& bias(std::size_t layer) const { return params[2 * layer + 1]; }

    ParamSet params;

   private:
    std::vector<std::size_t> widths_;
};

// Glorot-uniform matrix: U[-b, b], b = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Inference path; no tape.
Tensor mlp_forward(const Mlp& net, const Tensor& input);
// Recorded path for training.
Var mlp_forward(Tape& tape, const Mlp& net, Var input);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamState() = default;
    AdamState(const ParamSet& params, AdamConfig config);

    AdamConfig config;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::uint64_t step = 0;
};

// Bias-corrected Adam update in place.
void adam_step(ParamSet& params, const GradList& grads, AdamState& state);

// Builds a scalar loss on the given tape, reading parameters via Tape::param.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst;  // "<param name>[<flat index>]"
    std::size_t checked = 0;
    bool ok = true;
    std::string failure;  // set when a non-finite value was met
};

// Two-point central differences, or Ridders' extrapolation of central
// differences (eps is then the initial step). Ridders resolves entries whose
// gradient is many orders below the loss value, where the two-point rule is
// limited by the rounding of the loss.
enum class FiniteDifference { central, ridders };

// Compares backprop gradients against finite differences. The error per
// entry is |analytic - fd| / max(1e-12, |analytic| + |fd|). When
// `max_entries_per_tensor` is nonzero, each tensor is checked on that many
// entries drawn with `sample_seed` (all entries if the tensor is smaller).
// Stop-gradient values are held at the base point while perturbing.
GradCheckReport grad_check(const LossBuilder& loss, const std::vector<ParamSet*>& params, double eps,
                           std::size_t max_entries_per_tensor = 0, std::uint64_t sample_seed = 0,
                           FiniteDifference method = FiniteDifference::central);

}  // namespace lcsd
