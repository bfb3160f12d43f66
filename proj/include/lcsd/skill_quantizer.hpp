#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lcsd/autodiff.hpp"
#include "lcsd/nn.hpp"
#include "lcsd/rng.hpp"
#include "lcsd/skillgrid.hpp"
#include "lcsd/text_embed.hpp"

namespace lcsd {

struct QuantizerConfig {
    std::size_t codes = 20;          // M
    std::size_t code_dim = 16;       // d
    std::size_t recon_options = 4;   // K
    std::size_t encoder_hidden = 64;
    std::size_t decoder_hidden = 64;
    double commitment = 1.0;         // beta
    double recon_weight = 0.01;
    double codebook_weight = 1.0;
};

struct ReinitConfig {
    std::uint64_t every = 50;
    std::uint64_t until = 500;
    double degenerate_eps = 1e-12;
};

// M learnable d-dimensional skill vectors plus selection counts for the
// current reinitialization window.
class Codebook {
   public:
    Codebook() = default;
    // Entries drawn from U[-1/M, 1/M].
    Codebook(std::size_t codes, std::size_t dim, Rng& rng);
    explicit Codebook(Tensor vectors);

    [[nodiscard]] std::size_t size() const { return params[0].rows(); }
    [[nodiscard]] std::size_t dim() const { return params[0].cols(); }
    [[nodiscard]] const Tensor& vectors() const { return params[0]; }
    Tensor& vectors() { return params[0]; }
    [[nodiscard]] std::span<const double> code(std::size_t k) const { return params[0].row(k); }
    [[nodiscard]] std::size_t codes_in_use() const;
    void clear_usage();

    ParamSet params;                   // single tensor "codebook" (M x d)
    std::vector<std::uint64_t> usage;  // M_k
};

struct Quantized {
    std::size_t index = 0;
    std::vector<double> code;
    double distance_sq = 0.0;
};

// Nearest code by Euclidean distance, lowest index on ties. Pure.
std::size_t nearest_code(const Tensor& codes, std::span<const double> latent);
// nearest_code plus usage bookkeeping.
Quantized quantize(Codebook& codebook, std::span<const double> latent);

template <typename T>
std::vector<T> unique_consecutive(std::span<const T> values) {
    std::vector<T> out;
    for (const T& v : values)
        if (out.empty() || !(out.back() == v)) out.push_back(v);
    return out;
}
// Positions where a new run of equal values starts.
std::vector<std::size_t> run_starts(std::span<const std::size_t> values);

// p(s, E(l)): 6 + 32 -> hidden -> hidden -> d.
Mlp make_skill_encoder(const QuantizerConfig& config, Rng& rng);
// q(U(z)): K*d -> hidden -> 32.
Mlp make_recovery_decoder(const QuantizerConfig& config, Rng& rng);

std::vector<double> encode_skill(const Mlp& encoder, const skillgrid::WorldState& state, const LangEmbedding& lang);

// First min(K, n) codes concatenated, zero padded to K*d, then decoded.
std::vector<double> recover_instruction(const Mlp& decoder, const std::vector<std::vector<double>>& unique_codes,
                                        std::size_t options);

struct SkillModel {
    QuantizerConfig config;
    Mlp encoder;
    Mlp decoder;
    Codebook codebook;

    SkillModel() = default;
    SkillModel(const QuantizerConfig& config, Rng& rng);
};

// Per-step inputs for a batch of trajectories. Rows of `states` and `langs`
// are steps; `offsets[b]` is the first row of trajectory b.
struct SkillBatch {
    Tensor states;   // N x 6
    Tensor langs;    // N x 32
    Tensor targets;  // B x 32, E(l) per trajectory
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> lengths;

    [[nodiscard]] std::size_t trajectories() const { return offsets.size(); }
    [[nodiscard]] std::size_t steps() const { return states.rows(); }
};

// Steps 0..T-1 (the ones that carry an action) of each trajectory.
SkillBatch make_skill_batch(std::span<const skillgrid::Trajectory* const> trajectories);

struct SkillForward {
    Var loss;        // weighted skill loss (recon dropped when disabled)
    Var recon;       // mean squared reconstruction error
    Var commitment;  // mean over steps of ||p - sg(z_q)||^2, averaged per trajectory
    Var codebook;    // mean over steps of ||sg(p) - z_q||^2, averaged per trajectory
    Var latents;     // N x d encoder outputs
    Var quantized;   // N x d straight-through codes
    std::vector<std::size_t> indices;
};

// Records the skill loss on `tape`. When `frozen_indices` is non-empty it is
// used instead of the nearest-code search (for finite-difference checks).
// Usage counts are incremented when `record_usage` is set.
SkillForward skill_forward(Tape& tape, SkillModel& model, const SkillBatch& batch, bool with_recon,
                           bool record_usage, std::span<const std::size_t> frozen_indices = {});

// Single-trajectory skill loss value and per-step indices.
struct SkillLossValue {
    double loss = 0.0;
    std::vector<std::size_t> indices;
};
SkillLossValue skill_loss(SkillModel& model, const skillgrid::Trajectory& trajectory);

// Normalized inverse-squared-distance weights of `outputs` rows relative to
// `code`. If some squared distance is below `degenerate_eps`, the first such
// output gets probability 1.
std::vector<double> candidate_probabilities(std::span<const double> code, const Tensor& outputs,
                                            double degenerate_eps);

bool reinit_due(const ReinitConfig& config, std::uint64_t iteration);

struct ReinitReport {
    std::vector<std::size_t> reset_codes;
    std::vector<std::size_t> chosen_outputs;  // aligned with reset_codes
};

// Per code k: draw y ~ U(0,1) and reset iff y > M_k * M / sum_j M_j (every
// code resets when nothing was selected). A reset code is replaced by an
// encoder output drawn from candidate_probabilities. Clears usage afterwards.
ReinitReport reinit_codebook(Codebook& codebook, const Tensor& encoder_outputs, Rng& rng, std::uint64_t iteration,
                             const ReinitConfig& config);

}  // namespace lcsd
