#include "lcsd/skillgrid.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "lcsd/error.hpp"

namespace lcsd::skillgrid {
namespace {

double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

struct Zone {
    double x;
    double y;
};

Zone zone_of(const WorldState& s, Object o) {
    switch (o) {
        case Object::drawer: return {-0.5, -0.5};
        case Object::faucet: return {0.5, -0.5};
        case Object::block1: return {s.block1_x, 0.3};
        case Object::block2: return {s.block2_x, 0.7};
    }
    return {0.0, 0.0};
}

double zone_distance(const WorldState& s, Object o) {
    const Zone z = zone_of(s, o);
    return std::hypot(s.effector_x - z.x, s.effector_y - z.y);
}

double push_direction(Subtask t) {
    switch (t) {
        case Subtask::open_drawer:
        case Subtask::faucet_right:
        case Subtask::block1_right:
        case Subtask::block2_right: return 1.0;
        default: return -1.0;
    }
}

struct Words {
    std::string_view open, close, turn, move, drawer, faucet, block;
};

Words words_for(Split split) {
    const bool new_verbs = split == Split::unseen_verb || split == Split::unseen_both;
    const bool new_nouns = split == Split::unseen_noun || split == Split::unseen_both;
    Words w{"open", "close", "turn", "move", "drawer", "faucet", "block"};
    if (new_verbs) {
        w.open = "pull";
        w.close = "shut";
        w.turn = "rotate";
        w.move = "slide";
    }
    if (new_nouns) {
        w.drawer = "cabinet";
        w.faucet = "tap";
        w.block = "cube";
    }
    return w;
}

std::string clause(Subtask t, const Words& w) {
    std::string s;
    switch (t) {
        case Subtask::open_drawer: s.append(w.open).append(" the ").append(w.drawer); break;
        case Subtask::close_drawer: s.append(w.close).append(" the ").append(w.drawer); break;
        case Subtask::faucet_right: s.append(w.turn).append(" the ").append(w.faucet).append(" to the right"); break;
        case Subtask::faucet_left: s.append(w.turn).append(" the ").append(w.faucet).append(" to the left"); break;
        case Subtask::block1_left: s.append(w.move).append(" the red ").append(w.block).append(" to the left"); break;
        case Subtask::block1_right: s.append(w.move).append(" the red ").append(w.block).append(" to the right"); break;
        case Subtask::block2_left: s.append(w.move).append(" the blue ").append(w.block).append(" to the left"); break;
        case Subtask::block2_right: s.append(w.move).append(" the blue ").append(w.block).append(" to the right"); break;
    }
    return s;
}

// The six primitives acting on objects other than `first`, in enum order.
std::vector<Subtask> partners_of(Subtask first) {
    std::vector<Subtask> out;
    for (int i = 0; i < kSubtaskCount; ++i) {
        const auto t = static_cast<Subtask>(i);
        if (object_of(t) != object_of(first)) out.push_back(t);
    }
    return out;
}

void append_number(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

}  // namespace

WorldState WorldState::from_array(std::span<const double> v) {
    require(v.size() == kStateDim, "WorldState::from_array: expected 6 values, got " + std::to_string(v.size()));
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

bool WorldState::in_range() const {
    auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    return in(effector_x, -1, 1) && in(effector_y, -1, 1) && in(drawer, 0, 1) && in(faucet, -1, 1) &&
           in(block1_x, -1, 1) && in(block2_x, -1, 1);
}

Action Action::clipped(double dx, double dy, double u) {
    return {clip(dx, -1.0, 1.0), clip(dy, -1.0, 1.0), clip(u, -1.0, 1.0)};
}

std::string_view to_string(Subtask s) {
    static constexpr std::array<std::string_view, kSubtaskCount> names{
        "open_drawer", "close_drawer", "faucet_right", "faucet_left",
        "block1_left", "block1_right", "block2_left",  "block2_right"};
    return names[static_cast<std::size_t>(s)];
}

std::string_view to_string(Split s) {
    static constexpr std::array<std::string_view, 5> names{"seen", "unseen_verb", "unseen_noun", "unseen_both",
                                                           "human"};
    return names[static_cast<std::size_t>(s)];
}

Split parse_split(std::string_view name) {
    for (Split s : kAllSplits)
        if (to_string(s) == name) return s;
    throw ContractViolation("unknown split '" + std::string(name) +
                            "' (valid: seen, unseen_verb, unseen_noun, unseen_both, human)");
}

Object object_of(Subtask s) {
    switch (s) {
        case Subtask::open_drawer:
        case Subtask::close_drawer: return Object::drawer;
        case Subtask::faucet_right:
        case Subtask::faucet_left: return Object::faucet;
        case Subtask::block1_left:
        case Subtask::block1_right: return Object::block1;
        default: return Object::block2;
    }
}

int template_id_of(std::span<const Subtask> subtasks) {
    require(subtasks.size() == 1 || subtasks.size() == 2, "template_id_of: need 1 or 2 subtasks");
    const int first = static_cast<int>(subtasks[0]);
    if (subtasks.size() == 1) return first;
    require(object_of(subtasks[0]) != object_of(subtasks[1]), "template_id_of: subtasks share an object");
    const auto partners = partners_of(subtasks[0]);
    const auto rank = std::find(partners.begin(), partners.end(), subtasks[1]) - partners.begin();
    return kSubtaskCount + 6 * first + static_cast<int>(rank);
}

std::vector<Subtask> subtasks_of_template(int template_id) {
    require(template_id >= 0 && template_id < kTemplateCount,
            "subtasks_of_template: id " + std::to_string(template_id) + " outside [0, 56)");
    if (template_id < kSubtaskCount) return {static_cast<Subtask>(template_id)};
    const int k = template_id - kSubtaskCount;
    const auto first = static_cast<Subtask>(k / 6);
    return {first, partners_of(first)[static_cast<std::size_t>(k % 6)]};
}

std::string render_text(std::span<const Subtask> subtasks, Split split) {
    require(!subtasks.empty(), "render_text: no subtasks");
    const Words w = words_for(split);
    if (split == Split::human) {
        std::string s = "please " + clause(subtasks[0], w);
        if (subtasks.size() > 1) s += ", then also " + clause(subtasks[1], w);
        return s;
    }
    std::string s = clause(subtasks[0], w);
    for (std::size_t i = 1; i < subtasks.size(); ++i) s += " and " + clause(subtasks[i], w);
    return s;
}

Instruction make_instruction(int template_id, Split split) {
    Instruction ins;
    ins.subtasks = subtasks_of_template(template_id);
    ins.template_id = template_id;
    ins.split = split;
    ins.text = render_text(ins.subtasks, split);
    return ins;
}

const std::vector<std::string>& canonical_vocabulary() {
    static const std::vector<std::string> vocab{"open", "close", "turn", "move", "drawer", "faucet", "block",
                                                "left", "right", "the",  "to",   "red",  "blue",   "and"};
    return vocab;
}

Instruction sample_task(Rng& rng, Split split) {
    const auto first = static_cast<Subtask>(rng.below(kSubtaskCount));
    if (rng.uniform() < 0.5) return make_instruction(template_id_of(std::array{first}), split);
    const auto partners = partners_of(first);
    const Subtask second = partners[rng.below(partners.size())];
    return make_instruction(template_id_of(std::array{first, second}), split);
}

WorldState reset(Rng& rng, const Instruction& instruction) {
    auto has = [&](Subtask t) {
        return std::find(instruction.subtasks.begin(), instruction.subtasks.end(), t) != instruction.subtasks.end();
    };
    WorldState s;
    if (has(Subtask::open_drawer)) {
        s.drawer = rng.uniform(0.0, 0.5);
    } else if (has(Subtask::close_drawer)) {
        s.drawer = rng.uniform(0.5, 1.0);
    } else {
        s.drawer = rng.uniform(0.2, 0.8);
    }
    s.faucet = rng.uniform(-0.4, 0.4);
    s.block1_x = rng.uniform(-0.3, 0.3);
    s.block2_x = rng.uniform(-0.3, 0.3);
    return s;
}

WorldState step(const WorldState& state, const Action& raw) {
    const Action a = Action::clipped(raw.dx, raw.dy, raw.u);
    WorldState s = state;
    s.effector_x = clip(s.effector_x + kMoveGain * a.dx, -1.0, 1.0);
    s.effector_y = clip(s.effector_y + kMoveGain * a.dy, -1.0, 1.0);

    // Nearest zone containing the effector; strict comparison keeps the
    // earlier object on ties (drawer, faucet, block1, block2).
    std::optional<Object> target;
    double best = kZoneRadius;
    for (Object o : {Object::drawer, Object::faucet, Object::block1, Object::block2}) {
        const double d = zone_distance(s, o);
        if (d <= kZoneRadius && (!target || d < best)) {
            target = o;
            best = d;
        }
    }
    if (!target) return s;
    const double delta = kMoveGain * a.u;
    switch (*target) {
        case Object::drawer: s.drawer = clip(s.drawer + delta, 0.0, 1.0); break;
        case Object::faucet: s.faucet = clip(s.faucet + delta, -1.0, 1.0); break;
        case Object::block1: s.block1_x = clip(s.block1_x + delta, -1.0, 1.0); break;
        case Object::block2: s.block2_x = clip(s.block2_x + delta, -1.0, 1.0); break;
    }
    return s;
}

bool subtask_done(const WorldState& s, Subtask t) {
    switch (t) {
        case Subtask::open_drawer: return s.drawer >= 0.9;
        case Subtask::close_drawer: return s.drawer <= 0.1;
        case Subtask::faucet_right: return s.faucet >= 0.8;
        case Subtask::faucet_left: return s.faucet <= -0.8;
        case Subtask::block1_left: return s.block1_x <= -0.5;
        case Subtask::block1_right: return s.block1_x >= 0.5;
        case Subtask::block2_left: return s.block2_x <= -0.5;
        case Subtask::block2_right: return s.block2_x >= 0.5;
    }
    return false;
}

void update_latches(const WorldState& state, std::span<const Subtask> subtasks, std::vector<bool>& latched) {
    require(latched.size() == subtasks.size(), "update_latches: flag count differs from subtask count");
    for (std::size_t i = 0; i < subtasks.size(); ++i)
        if (!latched[i] && subtask_done(state, subtasks[i])) latched[i] = true;
}

Action expert_action(const WorldState& state, const Instruction& instruction, const std::vector<bool>& latched,
                     Rng* noise) {
    require(latched.size() == instruction.subtasks.size(), "expert_action: flag count differs from subtask count");
    const auto pending = std::find(latched.begin(), latched.end(), false);
    if (pending == latched.end()) throw NoPendingSubtask("expert_action: every subtask is already latched");
    const Subtask task = instruction.subtasks[static_cast<std::size_t>(pending - latched.begin())];

    const Object obj = object_of(task);
    double dx = 0.0, dy = 0.0, u = 0.0;
    if (zone_distance(state, obj) > kZoneRadius) {
        const Zone z = zone_of(state, obj);
        dx = clip(5.0 * (z.x - state.effector_x), -1.0, 1.0);
        dy = clip(5.0 * (z.y - state.effector_y), -1.0, 1.0);
    } else {
        u = push_direction(task);
    }
    if (noise != nullptr) {
        dx += kExpertNoise * noise->normal();
        dy += kExpertNoise * noise->normal();
        u += kExpertNoise * noise->normal();
    }
    return Action::clipped(dx, dy, u);
}

std::size_t horizon_for(const Instruction& instruction) {
    return kHorizonPerSubtask * instruction.subtasks.size();
}

Dataset generate_dataset(const DatasetConfig& config) {
    require(config.n >= 1, "generate_dataset: n must be at least 1");
    Dataset out;
    out.seed = config.seed;
    const Rng root = Rng(config.seed).split("data");
    out.trajectories.reserve(config.n);
    for (std::size_t i = 0; i < config.n; ++i) {
        for (std::uint64_t attempt = 0;; ++attempt) {
            Rng rng = root.split(i).split(attempt);
            Trajectory traj;
            traj.instruction = sample_task(rng, config.split);
            WorldState s = reset(rng, traj.instruction);
            traj.states.push_back(s);
            std::vector<bool> latched(traj.instruction.subtasks.size(), false);
            const std::size_t horizon = horizon_for(traj.instruction);
            for (std::size_t t = 0; t < horizon; ++t) {
                const Action a = expert_action(s, traj.instruction, latched, config.noise ? &rng : nullptr);
                s = step(s, a);
                traj.actions.push_back(a);
                traj.states.push_back(s);
                update_latches(s, traj.instruction.subtasks, latched);
                if (std::all_of(latched.begin(), latched.end(), [](bool b) { return b; })) break;
            }
            if (std::all_of(latched.begin(), latched.end(), [](bool b) { return b; })) {
                out.trajectories.push_back(std::move(traj));
                break;
            }
            ++out.rejected;
        }
    }
    return out;
}

std::string dataset_to_jsonl(const Dataset& dataset) {
    std::string out;
    out += "{\"format\":\"skillgrid-v1\",\"seed\":" + std::to_string(dataset.seed) +
           ",\"n\":" + std::to_string(dataset.trajectories.size()) + "}\n";
    for (const Trajectory& t : dataset.trajectories) {
        out += "{\"template_id\":" + std::to_string(t.instruction.template_id);
        out += ",\"split\":" + nlohmann::json(std::string(to_string(t.instruction.split))).dump();
        out += ",\"instruction\":" + nlohmann::json(t.instruction.text).dump();
        out += ",\"states\":[";
        for (std::size_t i = 0; i < t.states.size(); ++i) {
            out += i ? ",[" : "[";
            const auto v = t.states[i].to_array();
            for (std::size_t k = 0; k < v.size(); ++k) {
                if (k) out += ',';
                append_number(out, v[k]);
            }
            out += ']';
        }
        out += "],\"actions\":[";
        for (std::size_t i = 0; i < t.actions.size(); ++i) {
            out += i ? ",[" : "[";
            const auto v = t.actions[i].to_array();
            for (std::size_t k = 0; k < v.size(); ++k) {
                if (k) out += ',';
                append_number(out, v[k]);
            }
            out += ']';
        }
        out += "]}\n";
    }
    return out;
}

void write_dataset(const std::string& path, const Dataset& dataset) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DatasetError("dataset write error: cannot open " + path);
    f << dataset_to_jsonl(dataset);
    if (!f) throw DatasetError("dataset write error: failed writing " + path);
}

Dataset read_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DatasetError("dataset read error: cannot open " + path);
    Dataset out;
    std::string line;
    std::size_t lineno = 0;
    std::optional<std::size_t> declared;
    try {
        while (std::getline(f, line)) {
            ++lineno;
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            if (lineno == 1) {
                if (j.value("format", "") != "skillgrid-v1")
                    throw DatasetError("dataset read error: " + path + " has no skillgrid-v1 header");
                out.seed = j.at("seed").get<std::uint64_t>();
                declared = j.at("n").get<std::size_t>();
                continue;
            }
            Trajectory t;
            t.instruction = make_instruction(j.at("template_id").get<int>(), parse_split(j.at("split").get<std::string>()));
            t.instruction.text = j.at("instruction").get<std::string>();
            for (const auto& s : j.at("states")) t.states.push_back(WorldState::from_array(s.get<std::vector<double>>()));
            for (const auto& a : j.at("actions")) {
                const auto v = a.get<std::vector<double>>();
                require(v.size() == kActionDim, "action of wrong width");
                t.actions.push_back({v[0], v[1], v[2]});
            }
            if (t.states.size() != t.actions.size() + 1 || t.actions.empty())
                throw DatasetError("dataset read error: " + path + ":" + std::to_string(lineno) +
                                   " state/action counts inconsistent");
            out.trajectories.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError("dataset read error: " + path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ContractViolation& e) {
        throw DatasetError("dataset read error: " + path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!declared) throw DatasetError("dataset read error: " + path + " is empty");
    if (*declared != out.trajectories.size())
        throw DatasetError("dataset read error: " + path + " declares " + std::to_string(*declared) +
                           " records, found " + std::to_string(out.trajectories.size()));
    return out;
}

}  // namespace lcsd::skillgrid
