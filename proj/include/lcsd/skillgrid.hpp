#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lcsd/rng.hpp"

namespace lcsd::skillgrid {

inline constexpr std::size_t kStateDim = 6;
inline constexpr std::size_t kActionDim = 3;
inline constexpr double kZoneRadius = 0.15;
inline constexpr double kMoveGain = 0.2;
inline constexpr std::size_t kHorizonPerSubtask = 40;
inline constexpr std::size_t kMaxEpisodeLength = 80;
inline constexpr int kTemplateCount = 56;

struct WorldState {
    double effector_x = 0.0;
    double effector_y = 0.0;
    double drawer = 0.0;  // [0, 1]
    double faucet = 0.0;  // [-1, 1]
    double block1_x = 0.0;
    double block2_x = 0.0;

    [[nodiscard]] std::array<double, kStateDim> to_array() const {
        return {effector_x, effector_y, drawer, faucet, block1_x, block2_x};
    }
    static WorldState from_array(std::span<const double> v);
    [[nodiscard]] bool in_range() const;
    bool operator==(const WorldState&) const = default;
};

struct Action {
    double dx = 0.0;
    double dy = 0.0;
    double u = 0.0;

    // Components clipped to [-1, 1].
    static Action clipped(double dx, double dy, double u);
    [[nodiscard]] std::array<double, kActionDim> to_array() const { return {dx, dy, u}; }
    bool operator==(const Action&) const = default;
};

enum class Subtask : std::uint8_t {
    open_drawer,
    close_drawer,
    faucet_right,
    faucet_left,
    block1_left,
    block1_right,
    block2_left,
    block2_right,
};
inline constexpr int kSubtaskCount = 8;

enum class Object : std::uint8_t { drawer, faucet, block1, block2 };

enum class Split : std::uint8_t { seen, unseen_verb, unseen_noun, unseen_both, human };
inline constexpr std::array<Split, 5> kAllSplits{Split::seen, Split::unseen_verb, Split::unseen_noun,
                                                 Split::unseen_both, Split::human};

std::string_view to_string(Subtask s);
std::string_view to_string(Split s);
Split parse_split(std::string_view name);
Object object_of(Subtask s);

struct Instruction {
    std::vector<Subtask> subtasks;  // 1 or 2, distinct objects
    std::string text;
    int template_id = 0;
    Split split = Split::seen;

    bool operator==(const Instruction&) const = default;
};

struct Trajectory {
    std::vector<WorldState> states;  // length T_len + 1
    std::vector<Action> actions;     // length T_len
    Instruction instruction;

    [[nodiscard]] std::size_t length() const { return actions.size(); }
};

// Template ids: 0..7 single subtasks (enum order); 8 + 6 * first + rank of
// second among the six primitives on other objects, for ordered pairs.
int template_id_of(std::span<const Subtask> subtasks);
std::vector<Subtask> subtasks_of_template(int template_id);
std::string render_text(std::span<const Subtask> subtasks, Split split);
Instruction make_instruction(int template_id, Split split);
// Every token a seen-split instruction can contain.
const std::vector<std::string>& canonical_vocabulary();

Instruction sample_task(Rng& rng, Split split);
WorldState reset(Rng& rng, const Instruction& instruction);
WorldState step(const WorldState& state, const Action& action);
bool subtask_done(const WorldState& state, Subtask subtask);
// Latches every pending subtask whose predicate holds in `state`.
void update_latches(const WorldState& state, std::span<const Subtask> subtasks, std::vector<bool>& latched);

// Scripted controller for the first unlatched subtask. Pass a generator to
// add N(0, 0.02^2) noise to every component before clipping.
Action expert_action(const WorldState& state, const Instruction& instruction, const std::vector<bool>& latched,
                     Rng* noise = nullptr);
inline constexpr double kExpertNoise = 0.02;

std::size_t horizon_for(const Instruction& instruction);

struct DatasetConfig {
    std::size_t n = 2000;
    std::uint64_t seed = 0;
    Split split = Split::seen;
    bool noise = true;
};

struct Dataset {
    std::vector<Trajectory> trajectories;
    std::size_t rejected = 0;  // failed expert rollouts that were resampled
    std::uint64_t seed = 0;
};

Dataset generate_dataset(const DatasetConfig& config);

// JSON Lines: header {"format":"skillgrid-v1","seed":..,"n":..} then one
// record per trajectory, floats printed with 17 significant digits.
void write_dataset(const std::string& path, const Dataset& dataset);
std::string dataset_to_jsonl(const Dataset& dataset);
Dataset read_dataset(const std::string& path);

}  // namespace lcsd::skillgrid
