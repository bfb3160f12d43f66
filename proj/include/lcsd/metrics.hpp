#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lcsd/rng.hpp"
#include "lcsd/skillgrid.hpp"
#include "lcsd/text_embed.hpp"
#include "lcsd/trainer.hpp"

namespace lcsd {

// Counts indexed by (skill code, instruction template id).
class JointCounts {
   public:
    JointCounts(std::size_t codes, std::size_t templates);

    void add(std::size_t code, std::size_t template_id, std::uint64_t count = 1);
    [[nodiscard]] std::uint64_t at(std::size_t code, std::size_t template_id) const;
    [[nodiscard]] std::size_t codes() const { return codes_; }
    [[nodiscard]] std::size_t templates() const { return templates_; }
    [[nodiscard]] std::uint64_t total() const;
    [[nodiscard]] std::vector<std::uint64_t> code_marginal() const;
    [[nodiscard]] std::vector<std::uint64_t> template_marginal() const;

   private:
    std::size_t codes_;
    std::size_t templates_;
    std::vector<std::uint64_t> counts_;
};

// Plug-in mutual information in nats; zero cells contribute nothing.
double mi_estimate(const JointCounts& counts);

struct SamplerSpec {
    enum class Kind { ddpm, ddim } kind = Kind::ddpm;
    std::size_t steps = 0;  // 0: the checkpoint's diffusion horizon

    [[nodiscard]] std::string label() const;
};
// "ddpm", "ddpm:25", "ddim:10"
SamplerSpec parse_sampler(std::string_view text);

class Policy {
   public:
    virtual ~Policy() = default;
    virtual void begin_episode(const skillgrid::Instruction& instruction) { (void)instruction; }
    // `skill` receives the selected code index when the policy uses one.
    virtual skillgrid::Action act(const skillgrid::WorldState& state, const skillgrid::Instruction& instruction,
                                  const std::vector<bool>& latched, Rng& rng, std::optional<std::size_t>& skill) = 0;
};

class ExpertPolicy final : public Policy {
   public:
    skillgrid::Action act(const skillgrid::WorldState& state, const skillgrid::Instruction& instruction,
                          const std::vector<bool>& latched, Rng& rng, std::optional<std::size_t>& skill) override;
};

class RandomPolicy final : public Policy {
   public:
    skillgrid::Action act(const skillgrid::WorldState& state, const skillgrid::Instruction& instruction,
                          const std::vector<bool>& latched, Rng& rng, std::optional<std::size_t>& skill) override;
};

// Diffusion policy from a run: per step, z = quantize(p(s, E(l))) conditions
// the sampler (or E(l) directly for language-mode runs).
class TrainedPolicy final : public Policy {
   public:
    TrainedPolicy(const RunState& run, SamplerSpec sampler);
    void begin_episode(const skillgrid::Instruction& instruction) override;
    skillgrid::Action act(const skillgrid::WorldState& state, const skillgrid::Instruction& instruction,
                          const std::vector<bool>& latched, Rng& rng, std::optional<std::size_t>& skill) override;

   private:
    const RunState* run_;
    SamplerSpec sampler_;
    NoiseSchedule schedule_;
    LangEmbedding lang_{};
};

struct EpisodeResult {
    skillgrid::Instruction instruction;
    std::vector<bool> latched;
    bool success = false;
    std::vector<std::size_t> skills;  // per step, empty for skill-free policies
    double inference_seconds = 0.0;
    std::size_t steps = 0;
};

struct RolloutOptions {
    std::size_t max_steps = 0;  // 0: 40 per subtask
    bool stop_on_success = true;
};

EpisodeResult rollout(Policy& policy, const skillgrid::Instruction& instruction, Rng& rng,
                      const RolloutOptions& options = {});

// Episode e of split s uses stream Rng(seed).split("eval").split(s).split(e).
EpisodeResult evaluate_episode(Policy& policy, skillgrid::Split split, std::size_t episode, std::uint64_t seed,
                               const RolloutOptions& options = {});

struct SuccessRow {
    std::string split;
    std::size_t episodes = 0;
    std::size_t successes = 0;
    std::size_t subtask_total = 0;
    std::size_t subtask_completed = 0;
    std::size_t single_episodes = 0;
    std::size_t single_successes = 0;
    std::size_t composite_episodes = 0;
    std::size_t composite_successes = 0;

    [[nodiscard]] double success_rate() const;
    [[nodiscard]] double subtask_rate() const;
    [[nodiscard]] double single_rate() const;
    [[nodiscard]] double composite_rate() const;
    bool operator==(const SuccessRow&) const = default;
};

struct SuccessTable {
    std::vector<SuccessRow> rows;  // one per split, then "overall"
    std::vector<EpisodeResult> episodes;

    [[nodiscard]] const SuccessRow& row(std::string_view split) const;
    [[nodiscard]] std::string csv() const;
};

SuccessTable success_table(Policy& policy, std::span<const skillgrid::Split> splits, std::size_t episodes_per_split,
                           std::uint64_t seed, const RolloutOptions& options = {});

// Code x word counts; each code used in an episode adds one count per
// instruction token of that episode.
struct SkillWordMap {
    std::size_t codes = 0;
    std::vector<std::string> vocabulary;            // sorted
    std::vector<std::vector<std::uint64_t>> counts;  // [code][word]

    [[nodiscard]] std::uint64_t at(std::size_t code, std::string_view word) const;
    [[nodiscard]] std::size_t nonzero_rows() const;
    [[nodiscard]] std::string csv() const;
};

SkillWordMap skill_word_map(std::span<const EpisodeResult> episodes, std::size_t codes);

// Distinct skill codes over a set of episodes.
std::size_t distinct_codes(std::span<const EpisodeResult> episodes);

struct TimingRow {
    std::string sampler;
    std::size_t episodes = 0;
    double mean_episode_seconds = 0.0;
    double mean_action_seconds = 0.0;
};

// Fixed-length episodes (no early stop) with identical seeds per setting.
std::vector<TimingRow> bench_inference(const RunState& run, std::span<const SamplerSpec> samplers,
                                       std::size_t episodes, std::uint64_t seed, std::size_t steps_per_episode = 40);
std::string timings_csv(std::span<const TimingRow> rows);

// Rows of the metric log that carry an MI sample.
std::string mi_curve_csv(const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metric_log(const std::string& path);

}  // namespace lcsd
