#include "lcsd/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "lcsd/error.hpp"
#include "lcsd/skill_quantizer.hpp"

namespace lcsd {
namespace {

using skillgrid::Action;
using skillgrid::Instruction;
using skillgrid::Split;
using skillgrid::WorldState;

using Clock = std::chrono::steady_clock;

std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, res.ptr};
}

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

bool all_true(const std::vector<bool>& v) {
    return std::all_of(v.begin(), v.end(), [](bool b) { return b; });
}

void accumulate(SuccessRow& row, const EpisodeResult& ep) {
    ++row.episodes;
    row.successes += ep.success ? 1 : 0;
    row.subtask_total += ep.latched.size();
    row.subtask_completed += static_cast<std::size_t>(std::count(ep.latched.begin(), ep.latched.end(), true));
    if (ep.instruction.subtasks.size() == 1) {
        ++row.single_episodes;
        row.single_successes += ep.success ? 1 : 0;
    } else {
        ++row.composite_episodes;
        row.composite_successes += ep.success ? 1 : 0;
    }
}

}  // namespace

JointCounts::JointCounts(std::size_t codes, std::size_t templates)
    : codes_(codes), templates_(templates), counts_(codes * templates, 0) {
    require(codes >= 1 && templates >= 1, "JointCounts: dimensions must be positive");
}

void JointCounts::add(std::size_t code, std::size_t template_id, std::uint64_t count) {
    require(code < codes_ && template_id < templates_, "JointCounts: index out of range");
    counts_[code * templates_ + template_id] += count;
}

std::uint64_t JointCounts::at(std::size_t code, std::size_t template_id) const {
    require(code < codes_ && template_id < templates_, "JointCounts: index out of range");
    return counts_[code * templates_ + template_id];
}

std::uint64_t JointCounts::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

std::vector<std::uint64_t> JointCounts::code_marginal() const {
    std::vector<std::uint64_t> m(codes_, 0);
    for (std::size_t z = 0; z < codes_; ++z)
        for (std::size_t l = 0; l < templates_; ++l) m[z] += counts_[z * templates_ + l];
    return m;
}

std::vector<std::uint64_t> JointCounts::template_marginal() const {
    std::vector<std::uint64_t> m(templates_, 0);
    for (std::size_t z = 0; z < codes_; ++z)
        for (std::size_t l = 0; l < templates_; ++l) m[l] += counts_[z * templates_ + l];
    return m;
}

double mi_estimate(const JointCounts& counts) {
    const std::uint64_t total = counts.total();
    if (total == 0) throw ContractViolation("mi_estimate: joint counts are all zero");
    const auto pz = counts.code_marginal();
    const auto pl = counts.template_marginal();
    const double n = static_cast<double>(total);
    // p(z,l) ln(p(z,l) / (p(z) p(l))) = (c/n) ln(c n / (c_z c_l))
    double mi = 0.0;
    for (std::size_t z = 0; z < counts.codes(); ++z) {
        for (std::size_t l = 0; l < counts.templates(); ++l) {
            const auto c = counts.at(z, l);
            if (c == 0) continue;
            const double cd = static_cast<double>(c);
            mi += cd / n * std::log(cd * n / (static_cast<double>(pz[z]) * static_cast<double>(pl[l])));
        }
    }
    // Rounding can leave a tiny negative value for independent tables.
    return std::max(mi, 0.0);
}

std::string SamplerSpec::label() const {
    std::string s = kind == Kind::ddpm ? "ddpm" : "ddim";
    if (steps > 0) s += ":" + std::to_string(steps);
    return s;
}

SamplerSpec parse_sampler(std::string_view text) {
    SamplerSpec spec;
    const auto colon = text.find(':');
    const std::string_view kind = text.substr(0, colon);
    if (kind == "ddpm") {
        spec.kind = SamplerSpec::Kind::ddpm;
    } else if (kind == "ddim") {
        spec.kind = SamplerSpec::Kind::ddim;
    } else {
        throw ContractViolation("invalid sampler '" + std::string(text) + "' (valid: ddpm[:steps], ddim[:steps])");
    }
    if (colon != std::string_view::npos) {
        const std::string_view num = text.substr(colon + 1);
        std::size_t steps = 0;
        const auto res = std::from_chars(num.data(), num.data() + num.size(), steps);
        if (res.ec != std::errc() || res.ptr != num.data() + num.size() || steps == 0)
            throw ContractViolation("invalid sampler step count in '" + std::string(text) + "'");
        spec.steps = steps;
    }
    return spec;
}

Action ExpertPolicy::act(const WorldState& state, const Instruction& instruction, const std::vector<bool>& latched,
                         Rng&, std::optional<std::size_t>&) {
    return skillgrid::expert_action(state, instruction, latched, nullptr);
}

Action RandomPolicy::act(const WorldState&, const Instruction&, const std::vector<bool>&, Rng& rng,
                         std::optional<std::size_t>&) {
    const double dx = rng.uniform(-1.0, 1.0);
    const double dy = rng.uniform(-1.0, 1.0);
    const double u = rng.uniform(-1.0, 1.0);
    return Action::clipped(dx, dy, u);
}

TrainedPolicy::TrainedPolicy(const RunState& run, SamplerSpec sampler) : run_(&run), sampler_(sampler) {
    const std::size_t horizon = run.schedule.steps;
    if (sampler_.steps == 0) sampler_.steps = horizon;
    if (sampler_.kind == SamplerSpec::Kind::ddim) {
        ddim_timesteps(horizon, sampler_.steps);  // validates the step count
        schedule_ = run.schedule;
    } else {
        schedule_ = sampler_.steps == horizon ? run.schedule : rescaled_schedule(run.schedule, sampler_.steps);
    }
}

void TrainedPolicy::begin_episode(const Instruction& instruction) { lang_ = embed(instruction.text); }

Action TrainedPolicy::act(const WorldState& state, const Instruction&, const std::vector<bool>&, Rng& rng,
                          std::optional<std::size_t>& skill) {
    const auto s = state.to_array();
    std::vector<double> cond;
    if (run_->skill) {
        const auto latent = encode_skill(run_->skill->encoder, state, lang_);
        const std::size_t k = nearest_code(run_->skill->codebook.vectors(), latent);
        skill = k;
        const auto code = run_->skill->codebook.code(k);
        cond.assign(code.begin(), code.end());
    } else {
        cond.assign(lang_.begin(), lang_.end());
    }
    const ActionVec a = sampler_.kind == SamplerSpec::Kind::ddpm
                            ? sample_ddpm(run_->policy, s, cond, schedule_, rng)
                            : sample_ddim(run_->policy, s, cond, schedule_, sampler_.steps, rng);
    return Action::clipped(a[0], a[1], a[2]);
}

EpisodeResult rollout(Policy& policy, const Instruction& instruction, Rng& rng, const RolloutOptions& options) {
    EpisodeResult out;
    out.instruction = instruction;
    out.latched.assign(instruction.subtasks.size(), false);
    const std::size_t max_steps = options.max_steps ? options.max_steps : skillgrid::horizon_for(instruction);
    WorldState s = skillgrid::reset(rng, instruction);
    policy.begin_episode(instruction);
    for (std::size_t t = 0; t < max_steps; ++t) {
        std::optional<std::size_t> skill;
        const auto start = Clock::now();
        const Action a = policy.act(s, instruction, out.latched, rng, skill);
        out.inference_seconds += std::chrono::duration<double>(Clock::now() - start).count();
        if (skill) out.skills.push_back(*skill);
        s = skillgrid::step(s, a);
        ++out.steps;
        skillgrid::update_latches(s, instruction.subtasks, out.latched);
        if (options.stop_on_success && all_true(out.latched)) break;
    }
    out.success = all_true(out.latched);
    return out;
}

EpisodeResult evaluate_episode(Policy& policy, Split split, std::size_t episode, std::uint64_t seed,
                               const RolloutOptions& options) {
    Rng rng = Rng(seed).split("eval").split(static_cast<std::uint64_t>(split)).split(episode);
    Rng task_rng = rng.split("task");
    const Instruction instruction = skillgrid::sample_task(task_rng, split);
    Rng episode_rng = rng.split("episode");
    return rollout(policy, instruction, episode_rng, options);
}

double SuccessRow::success_rate() const { return ratio(successes, episodes); }
double SuccessRow::subtask_rate() const { return ratio(subtask_completed, subtask_total); }
double SuccessRow::single_rate() const { return ratio(single_successes, single_episodes); }
double SuccessRow::composite_rate() const { return ratio(composite_successes, composite_episodes); }

const SuccessRow& SuccessTable::row(std::string_view split) const {
    for (const auto& r : rows)
        if (r.split == split) return r;
    throw ContractViolation("success table has no row '" + std::string(split) + "'");
}

std::string SuccessTable::csv() const {
    std::string out =
        "split,episodes,successes,success_rate,subtask_completion_rate,single_episodes,single_success_rate,"
        "composite_episodes,composite_success_rate\n";
    for (const auto& r : rows) {
        out += r.split + "," + std::to_string(r.episodes) + "," + std::to_string(r.successes) + "," +
               fmt(r.success_rate()) + "," + fmt(r.subtask_rate()) + "," + std::to_string(r.single_episodes) + "," +
               fmt(r.single_rate()) + "," + std::to_string(r.composite_episodes) + "," + fmt(r.composite_rate()) +
               "\n";
    }
    return out;
}

SuccessTable success_table(Policy& policy, std::span<const Split> splits, std::size_t episodes_per_split,
                           std::uint64_t seed, const RolloutOptions& options) {
    require(episodes_per_split >= 1, "success_table: episodes_per_split must be at least 1");
    require(!splits.empty(), "success_table: no splits given");
    // Rows follow the canonical split order whatever order was requested.
    std::vector<Split> ordered;
    for (Split s : skillgrid::kAllSplits)
        if (std::find(splits.begin(), splits.end(), s) != splits.end()) ordered.push_back(s);

    SuccessTable table;
    SuccessRow overall;
    overall.split = "overall";
    for (Split s : ordered) {
        SuccessRow row;
        row.split = std::string(skillgrid::to_string(s));
        for (std::size_t e = 0; e < episodes_per_split; ++e) {
            EpisodeResult ep = evaluate_episode(policy, s, e, seed, options);
            accumulate(row, ep);
            accumulate(overall, ep);
            table.episodes.push_back(std::move(ep));
        }
        table.rows.push_back(row);
    }
    table.rows.push_back(overall);
    return table;
}

std::uint64_t SkillWordMap::at(std::size_t code, std::string_view word) const {
    require(code < codes, "SkillWordMap: code out of range");
    const auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), word);
    if (it == vocabulary.end() || *it != word) return 0;
    return counts[code][static_cast<std::size_t>(it - vocabulary.begin())];
}

std::size_t SkillWordMap::nonzero_rows() const {
    return static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](const auto& row) {
        return std::any_of(row.begin(), row.end(), [](std::uint64_t c) { return c != 0; });
    }));
}

std::string SkillWordMap::csv() const {
    std::string out = "code";
    for (const auto& w : vocabulary) out += "," + w;
    out += "\n";
    for (std::size_t k = 0; k < codes; ++k) {
        out += std::to_string(k);
        for (auto c : counts[k]) out += "," + std::to_string(c);
        out += "\n";
    }
    return out;
}

SkillWordMap skill_word_map(std::span<const EpisodeResult> episodes, std::size_t codes) {
    std::set<std::string> vocab;
    std::vector<std::vector<std::string>> tokens;
    tokens.reserve(episodes.size());
    for (const auto& ep : episodes) {
        tokens.push_back(tokenize(ep.instruction.text));
        vocab.insert(tokens.back().begin(), tokens.back().end());
    }
    SkillWordMap map;
    map.codes = codes;
    map.vocabulary.assign(vocab.begin(), vocab.end());
    map.counts.assign(codes, std::vector<std::uint64_t>(map.vocabulary.size(), 0));
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const std::set<std::size_t> used(episodes[e].skills.begin(), episodes[e].skills.end());
        for (std::size_t k : used) {
            require(k < codes, "skill_word_map: code index out of range");
            for (const auto& w : tokens[e]) {
                const auto it = std::lower_bound(map.vocabulary.begin(), map.vocabulary.end(), w);
                ++map.counts[k][static_cast<std::size_t>(it - map.vocabulary.begin())];
            }
        }
    }
    return map;
}

std::size_t distinct_codes(std::span<const EpisodeResult> episodes) {
    std::set<std::size_t> used;
    for (const auto& ep : episodes) used.insert(ep.skills.begin(), ep.skills.end());
    return used.size();
}

std::vector<TimingRow> bench_inference(const RunState& run, std::span<const SamplerSpec> samplers,
                                       std::size_t episodes, std::uint64_t seed, std::size_t steps_per_episode) {
    require(episodes >= 1, "bench_inference: episodes must be at least 1");
    require(steps_per_episode >= 1, "bench_inference: steps per episode must be at least 1");
    const RolloutOptions opts{steps_per_episode, false};
    std::vector<TimingRow> rows;
    for (const SamplerSpec& spec : samplers) {
        TrainedPolicy policy(run, spec);
        TimingRow row;
        row.sampler = spec.label();
        row.episodes = episodes;
        double total = 0.0;
        std::size_t actions = 0;
        for (std::size_t e = 0; e < episodes; ++e) {
            const auto start = Clock::now();
            const EpisodeResult ep = evaluate_episode(policy, Split::seen, e, seed, opts);
            total += std::chrono::duration<double>(Clock::now() - start).count();
            actions += ep.steps;
        }
        row.mean_episode_seconds = total / static_cast<double>(episodes);
        row.mean_action_seconds = total / static_cast<double>(std::max<std::size_t>(actions, 1));
        rows.push_back(row);
    }
    return rows;
}

std::string timings_csv(std::span<const TimingRow> rows) {
    std::string out = "sampler,episodes,mean_episode_seconds,mean_action_seconds\n";
    for (const auto& r : rows)
        out += r.sampler + "," + std::to_string(r.episodes) + "," + fmt(r.mean_episode_seconds) + "," +
               fmt(r.mean_action_seconds) + "\n";
    return out;
}

std::string mi_curve_csv(const std::vector<MetricRow>& rows) {
    std::string out = "iteration,mi,codes_used\n";
    for (const auto& r : rows) {
        if (!r.mi) continue;
        out += std::to_string(r.iteration) + "," + fmt(*r.mi) + "," +
               (r.codes_used ? std::to_string(*r.codes_used) : std::string()) + "\n";
    }
    return out;
}

std::vector<MetricRow> read_metric_log(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DatasetError("cannot open metric log " + path);
    std::string line;
    if (!std::getline(f, line) || line != "iteration,loss_total,loss_skill,loss_bc,loss_recon,mi,codes_used")
        throw DatasetError(path + ": unexpected metric log header");
    std::vector<MetricRow> rows;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != 7) throw DatasetError(path + ":" + std::to_string(lineno) + ": expected 7 fields");
        try {
            MetricRow r;
            r.iteration = std::stoull(cells[0]);
            r.loss_total = std::stod(cells[1]);
            r.loss_skill = std::stod(cells[2]);
            r.loss_bc = std::stod(cells[3]);
            r.loss_recon = std::stod(cells[4]);
            if (!cells[5].empty()) r.mi = std::stod(cells[5]);
            if (!cells[6].empty()) r.codes_used = std::stoull(cells[6]);
            rows.push_back(r);
        } catch (const std::exception&) {
            throw DatasetError(path + ":" + std::to_string(lineno) + ": malformed number");
        }
    }
    return rows;
}

}  // namespace lcsd
