#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "lcsd/autodiff.hpp"
#include "lcsd/nn.hpp"
#include "lcsd/rng.hpp"

namespace lcsd {

inline constexpr std::size_t kTimeEmbedDim = 16;

using ActionVec = std::array<double, 3>;

// Linear beta schedule; index i runs over 1..steps.
struct NoiseSchedule {
    std::size_t steps = 0;
    double beta_min = 0.0;
    double beta_max = 0.0;
    std::vector<double> betas;       // [i-1] -> beta_i
    std::vector<double> alphas;      // 1 - beta_i
    std::vector<double> alpha_bars;  // prod_{j<=i} alpha_j

    [[nodiscard]] double beta(std::size_t i) const { return betas.at(i - 1); }
    [[nodiscard]] double alpha(std::size_t i) const { return alphas.at(i - 1); }
    [[nodiscard]] double alpha_bar(std::size_t i) const { return alpha_bars.at(i - 1); }
};

NoiseSchedule make_schedule(std::size_t steps, double beta_min = 1e-4, double beta_max = 0.02);

// Schedule with `steps` timesteps covering the same noise range as
// `reference`: the beta endpoints are scaled by reference.steps / steps
// (capped below 1). Used to sample a trained net with a different number of
// ancestral steps.
NoiseSchedule rescaled_schedule(const NoiseSchedule& reference, std::size_t steps);

// a_i = sqrt(abar_i) a + sqrt(1 - abar_i) eps
ActionVec forward_diffuse(const ActionVec& action, std::size_t i, const ActionVec& eps, const NoiseSchedule& schedule);

// 8 sin/cos pairs with frequencies geometric between 1 and 1/horizon.
std::array<double, kTimeEmbedDim> timestep_embedding(double t, std::size_t horizon);

struct DenoiserConfig {
    std::size_t action_dim = 3;
    std::size_t state_dim = 6;
    std::size_t cond_dim = 16;
    std::size_t hidden = 128;
    std::size_t blocks = 3;
    std::size_t horizon = 50;  // training T_diff, scales the time embedding
};

// Sum-fusion MLP: every block projects the noisy action, state, time
// embedding and condition separately and sums them; blocks after the first
// also add a projection of the previous block's output:
//   h_0 = tanh(X_0 a_i + S_0 s + T_0 e(t) + C_0 c + bias_0)
//   h_b = tanh(X_b a_i + S_b s + T_b e(t) + C_b c + bias_b + H_b h_{b-1})
// A final linear layer maps h to the action dimension.
class DenoiseNet {
   public:
    DenoiseNet() = default;
    DenoiseNet(const DenoiserConfig& config, Rng& rng);
    static DenoiseNet zeros(const DenoiserConfig& config);

    [[nodiscard]] const DenoiserConfig& config() const { return config_; }

    // Layout per block b: x, s, t, c projections, bias, then h for b > 0;
    // after the last block come out.w and out.b.
    [[nodiscard]] std::size_t block_offset(std::size_t b) const { return b == 0 ? 0 : 6 * b - 1; }

    ParamSet params;

   private:
    explicit DenoiseNet(const DenoiserConfig& config) : config_(config) {}
    DenoiserConfig config_;
};

// Batched inference. `timesteps[r]` is the (training-scale) timestep of row r.
Tensor denoise_predict(const DenoiseNet& net, const Tensor& noisy, const Tensor& states, const Tensor& conds,
                       std::span<const double> timesteps);
ActionVec denoise_predict(const DenoiseNet& net, const ActionVec& noisy, std::span<const double> state,
                          std::span<const double> cond, double timestep);

// Recorded forward pass; `time_embed` rows are timestep_embedding outputs.
Var denoise_forward(Tape& tape, const DenoiseNet& net, Var noisy, Var states, Var time_embed, Var cond);

// Fixed (i, eps) draws for a batch, so a loss can be re-evaluated exactly.
struct NoiseDraw {
    std::vector<std::size_t> steps;  // i in [1, T]
    Tensor eps;                      // n x 3
};
NoiseDraw draw_noise(std::size_t rows, const NoiseSchedule& schedule, Rng& rng);

using TapePredictor = std::function<Var(Tape&, Var noisy, Var states, Var time_embed, Var cond)>;

// mean over rows and action dims of (eps - eps_hat(a_i, s, c, i))^2.
Var ddpm_loss(Tape& tape, const TapePredictor& predictor, const Tensor& states, const Tensor& actions, Var cond,
              const NoiseSchedule& schedule, const NoiseDraw& draw);
Var ddpm_loss(Tape& tape, const DenoiseNet& net, const Tensor& states, const Tensor& actions, Var cond,
              const NoiseSchedule& schedule, const NoiseDraw& draw);

// Noise prediction for one action vector at a (training-scale) timestep.
using EpsPredictor = std::function<ActionVec(const ActionVec& noisy, double timestep)>;

// Binds state and condition; caches their projections across timesteps.
class BoundDenoiser {
   public:
    BoundDenoiser(const DenoiseNet& net, std::span<const double> state, std::span<const double> cond);
    ActionVec operator()(const ActionVec& noisy, double timestep) const;

   private:
    const DenoiseNet* net_;
    std::vector<std::vector<double>> fixed_;  // per block: S s + C c + bias
};

// Ancestral sampling from a_T ~ N(0, I); the final action is clipped to
// [-1, 1]^3. The predictor receives timesteps on the net's training scale,
// i * horizon / schedule.steps.
ActionVec sample_ddpm(const EpsPredictor& predictor, const NoiseSchedule& schedule, std::size_t horizon, Rng& rng);
ActionVec sample_ddpm(const DenoiseNet& net, std::span<const double> state, std::span<const double> cond,
                      const NoiseSchedule& schedule, Rng& rng);

// Decreasing timestep subsequence T = t_0 > ... > t_{steps-1} = 1.
std::vector<std::size_t> ddim_timesteps(std::size_t horizon, std::size_t steps);

// Deterministic (eta = 0) DDIM from the given x_T, clipped at the end.
ActionVec sample_ddim(const EpsPredictor& predictor, const NoiseSchedule& schedule, std::size_t steps,
                      const ActionVec& x_T);
ActionVec sample_ddim(const DenoiseNet& net, std::span<const double> state, std::span<const double> cond,
                      const NoiseSchedule& schedule, std::size_t steps, Rng& rng);

}  // namespace lcsd
