#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lcsd/diffusion.hpp"
#include "lcsd/nn.hpp"
#include "lcsd/rng.hpp"
#include "lcsd/skill_quantizer.hpp"
#include "lcsd/skillgrid.hpp"

namespace lcsd {

enum class Mode : std::uint8_t { lcsd, lang, encoder_only, no_reinit };

std::string_view to_string(Mode m);
// Throws ContractViolation naming the valid set.
Mode parse_mode(std::string_view name);

struct TrainConfig {
    Mode mode = Mode::lcsd;
    std::size_t batch_trajectories = 32;
    std::uint64_t iterations = 2000;
    double behavior_weight = 5.0;  // gamma
    double skill_weight = 2.0;     // alpha
    double recon_weight = 0.01;
    double commitment_weight = 1.0;
    double codebook_weight = 1.0;
    double policy_lr = 2e-4;
    double skill_lr = 1e-4;
    std::size_t codes = 20;
    std::size_t code_dim = 16;
    std::size_t recon_options = 4;
    std::size_t diffusion_steps = 50;
    double beta_min = 1e-4;
    double beta_max = 0.02;
    std::uint64_t reinit_every = 50;
    std::uint64_t reinit_until = 500;
    std::size_t encoder_hidden = 64;
    std::size_t decoder_hidden = 64;
    std::size_t denoiser_hidden = 128;
    std::uint64_t diagnostics_every = 100;
    std::size_t probe_trajectories = 64;
    std::uint64_t seed = 0;

    bool operator==(const TrainConfig&) const = default;

    [[nodiscard]] bool uses_skills() const { return mode != Mode::lang; }
    [[nodiscard]] std::size_t cond_dim() const { return uses_skills() ? code_dim : kEmbedDim; }
    [[nodiscard]] QuantizerConfig quantizer() const;
    [[nodiscard]] ReinitConfig reinit() const;
    [[nodiscard]] DenoiserConfig denoiser() const;
    void validate() const;
};

// Flat key=value view of a config; keys are the field names above.
std::map<std::string, std::string> config_to_kv(const TrainConfig& config);
// Throws ContractViolation on unknown keys or unparsable values.
void apply_config_value(TrainConfig& config, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

struct MetricRow {
    std::uint64_t iteration = 0;
    double loss_total = 0.0;
    double loss_skill = 0.0;
    double loss_bc = 0.0;
    double loss_recon = 0.0;
    std::optional<double> mi;
    std::optional<std::size_t> codes_used;
};

struct LossReport {
    double total = 0.0;
    double skill = 0.0;
    double bc = 0.0;
    double recon = 0.0;
    double commitment = 0.0;
    double codebook = 0.0;
    bool reinitialized = false;
    std::size_t codes_reset = 0;
};

struct RunState {
    TrainConfig config;
    std::optional<SkillModel> skill;  // absent in lang mode
    DenoiseNet policy;
    NoiseSchedule schedule;
    AdamState policy_opt;
    AdamState encoder_opt;
    AdamState decoder_opt;
    AdamState codebook_opt;
    std::uint64_t iteration = 0;
    Rng train_rng;  // root of the per-iteration streams
    std::vector<MetricRow> log;
};

// Fresh parameters from the config's seed ("init" stream).
RunState init_run(const TrainConfig& config);

// One joint step of skill learning and behavior cloning on `batch`.
LossReport train_iteration(RunState& run, std::span<const skillgrid::Trajectory* const> batch);

// Loss terms for a fixed batch with frozen skill indices and noise draws;
// the combined objective alpha * L_skill + gamma * L_bc recorded on `tape`.
struct CombinedLoss {
    Var total;
    Var skill;
    Var bc;
    std::optional<SkillForward> skill_terms;  // absent in lang mode
};
CombinedLoss combined_loss(Tape& tape, RunState& run, std::span<const skillgrid::Trajectory* const> batch,
                           const NoiseDraw& draw, std::span<const std::size_t> frozen_indices = {},
                           bool record_usage = false);

// Batch rows for behavior cloning: actions of every step, N x 3.
Tensor batch_actions(std::span<const skillgrid::Trajectory* const> batch);

// Probe diagnostics: MI between code and template id, distinct codes used.
struct Diagnostics {
    double mi = 0.0;
    std::size_t codes_used = 0;
};
Diagnostics probe_diagnostics(const RunState& run, std::span<const skillgrid::Trajectory> probe);

using ProgressFn = std::function<void(const MetricRow&)>;
RunState train(const TrainConfig& config, const skillgrid::Dataset& dataset, const ProgressFn& progress = {});

// CSV: iteration,loss_total,loss_skill,loss_bc,loss_recon,mi,codes_used
std::string metric_log_csv(const std::vector<MetricRow>& rows);
void write_metric_log(const std::string& path, const std::vector<MetricRow>& rows);

// Binary checkpoint: "LCSD", u32 version, u64-length JSON block, u32 array
// count, u64-length fp64 arrays, CRC32 over everything after the version.
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::string checkpoint_bytes(const RunState& run);
RunState checkpoint_from_bytes(const std::string& bytes);
void save_checkpoint(const RunState& run, const std::string& path);
RunState load_checkpoint(const std::string& path);

}  // namespace lcsd
