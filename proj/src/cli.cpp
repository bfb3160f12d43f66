#include "lcsd/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "lcsd/error.hpp"
#include "lcsd/metrics.hpp"
#include "lcsd/skillgrid.hpp"

namespace fs = std::filesystem;

namespace lcsd::cli {
namespace {

// Raised for argument problems detected after CLI11 parsing.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

const std::vector<std::string> kSubcommands{"gen-data", "train", "eval", "skill-map", "mi-curve", "bench"};

std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::string suggest(const std::string& word, const std::vector<std::string>& options) {
    const auto best = std::min_element(options.begin(), options.end(), [&](const auto& x, const auto& y) {
        return edit_distance(word, x) < edit_distance(word, y);
    });
    return *best;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<skillgrid::Split> parse_splits(const std::string& text) {
    std::vector<skillgrid::Split> out;
    if (text == "all") return {skillgrid::kAllSplits.begin(), skillgrid::kAllSplits.end()};
    for (const auto& s : split_list(text)) out.push_back(skillgrid::parse_split(s));
    if (out.empty()) throw UsageError("--splits is empty");
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

fs::path ensure_dir(const std::string& dir) {
    const fs::path p(dir);
    fs::create_directories(p);
    return p;
}

void write_resolved(const fs::path& dir, const std::map<std::string, std::string>& kv) {
    write_text(dir / "config.resolved", resolved_text(kv));
}

std::string str(std::uint64_t v) { return std::to_string(v); }

}  // namespace

std::map<std::string, std::string> read_config_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file " + path.string());
    const auto keys = config_keys();
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(f, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ContractViolation(where + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        if (std::find(keys.begin(), keys.end(), key) == keys.end())
            throw ContractViolation(where + ": unknown config key '" + key + "' (did you mean '" + suggest(key, keys) +
                                    "'?)");
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

TrainConfig resolve_config(const std::map<std::string, std::string>& file_values,
                           const std::map<std::string, std::string>& flag_values) {
    TrainConfig c;
    for (const auto& [k, v] : file_values) apply_config_value(c, k, v);
    for (const auto& [k, v] : flag_values) apply_config_value(c, k, v);
    c.validate();
    return c;
}

std::string resolved_text(const std::map<std::string, std::string>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    if (!args.empty() && !args[0].empty() && args[0][0] != '-' &&
        std::find(kSubcommands.begin(), kSubcommands.end(), args[0]) == kSubcommands.end()) {
        err << "error: usage: unknown subcommand '" << args[0] << "' (did you mean '" << suggest(args[0], kSubcommands)
            << "'?)\n";
        return kExitUsage;
    }

    CLI::App app{"Language-conditioned skill discovery toolkit", "lcsd"};
    app.require_subcommand(1);

    // gen-data
    skillgrid::DatasetConfig data_cfg;
    std::string data_split = "seen", data_out;
    bool data_noise = true;
    auto* gen = app.add_subcommand("gen-data", "Generate scripted expert demonstrations as JSON Lines");
    gen->add_option("--n", data_cfg.n, "Number of trajectories")->capture_default_str();
    gen->add_option("--seed", data_cfg.seed, "Random seed")->capture_default_str();
    gen->add_option("--split", data_split, "Instruction split")->capture_default_str();
    gen->add_option("--noise", data_noise, "Add expert action noise (true/false)")->capture_default_str();
    gen->add_option("--out", data_out, "Output .jsonl file")->required();

    // train
    std::string train_data, train_config, train_out, train_mode;
    std::optional<std::uint64_t> train_seed, train_iterations;
    std::vector<std::string> train_sets;
    auto* tr = app.add_subcommand("train", "Train a policy and write checkpoint + metric log");
    tr->add_option("--data", train_data, "Dataset .jsonl")->required();
    tr->add_option("--config", train_config, "key=value config file");
    tr->add_option("--mode", train_mode, "lcsd | lang | encoder_only | no_reinit");
    tr->add_option("--seed", train_seed, "Random seed");
    tr->add_option("--iterations", train_iterations, "Training iterations");
    tr->add_option("--set", train_sets, "Override any config key (key=value), repeatable");
    tr->add_option("--out", train_out, "Output directory")->required();

    // eval
    std::string eval_ckpt, eval_splits = "all", eval_out, eval_sampler = "ddpm";
    std::size_t eval_episodes = 200;
    std::uint64_t eval_seed = 0;
    auto* ev = app.add_subcommand("eval", "Success rates per instruction split");
    ev->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
    ev->add_option("--splits", eval_splits, "Comma list of splits or 'all'")->capture_default_str();
    ev->add_option("--episodes", eval_episodes, "Episodes per split")->capture_default_str();
    ev->add_option("--seed", eval_seed, "Evaluation seed")->capture_default_str();
    ev->add_option("--sampler", eval_sampler, "ddpm[:steps] or ddim[:steps]")->capture_default_str();
    ev->add_option("--out", eval_out, "Output directory")->required();

    // skill-map
    std::string map_ckpt, map_out, map_splits = "seen";
    std::size_t map_episodes = 200;
    std::uint64_t map_seed = 0;
    auto* sm = app.add_subcommand("skill-map", "Skill code x instruction word counts");
    sm->add_option("--ckpt", map_ckpt, "Checkpoint file")->required();
    sm->add_option("--episodes", map_episodes, "Episodes per split")->capture_default_str();
    sm->add_option("--seed", map_seed, "Evaluation seed")->capture_default_str();
    sm->add_option("--splits", map_splits, "Comma list of splits or 'all'")->capture_default_str();
    sm->add_option("--out", map_out, "Output directory")->required();

    // mi-curve
    std::string mi_log, mi_out;
    auto* mc = app.add_subcommand("mi-curve", "Extract the MI samples from a metric log");
    mc->add_option("--log", mi_log, "metrics.csv from train")->required();
    mc->add_option("--out", mi_out, "Output directory")->required();

    // bench
    std::string bench_ckpt, bench_sampler = "ddpm:25,ddpm:50,ddpm:75,ddpm:100,ddim:10", bench_out;
    std::size_t bench_steps = 0, bench_episodes = 5, bench_length = 40;
    std::uint64_t bench_seed = 0;
    auto* bn = app.add_subcommand("bench", "Inference time per sampler setting");
    bn->add_option("--ckpt", bench_ckpt, "Checkpoint file")->required();
    bn->add_option("--sampler", bench_sampler, "Comma list of ddpm[:steps] / ddim[:steps]")->capture_default_str();
    bn->add_option("--steps", bench_steps, "Default step count for entries without one (0: checkpoint horizon)")
        ->capture_default_str();
    bn->add_option("--episodes", bench_episodes, "Episodes per setting")->capture_default_str();
    bn->add_option("--episode-length", bench_length, "Actions per episode")->capture_default_str();
    bn->add_option("--seed", bench_seed, "Evaluation seed")->capture_default_str();
    bn->add_option("--out", bench_out, "Output directory")->required();

    std::vector<std::string> argv_store{"lcsd"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << one_line(e.what()) << "\n";
        return kExitUsage;
    }

    try {
        if (gen->parsed()) {
            data_cfg.split = skillgrid::parse_split(data_split);
            data_cfg.noise = data_noise;
            const skillgrid::Dataset ds = skillgrid::generate_dataset(data_cfg);
            const fs::path path(data_out);
            const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
            fs::create_directories(dir);
            skillgrid::write_dataset(path.string(), ds);
            write_resolved(dir, {{"command", "gen-data"},
                                 {"n", str(data_cfg.n)},
                                 {"seed", str(data_cfg.seed)},
                                 {"split", data_split},
                                 {"noise", data_noise ? "true" : "false"},
                                 {"out", data_out}});
            out << "wrote " << ds.trajectories.size() << " trajectories (" << ds.rejected << " rejected) to " << data_out
                << "\n";
        } else if (tr->parsed()) {
            std::map<std::string, std::string> flags;
            for (const auto& s : train_sets) {
                const auto eq = s.find('=');
                if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
                flags[s.substr(0, eq)] = s.substr(eq + 1);
            }
            if (!train_mode.empty()) flags["mode"] = train_mode;
            if (train_seed) flags["seed"] = str(*train_seed);
            if (train_iterations) flags["iterations"] = str(*train_iterations);
            const auto file_values = train_config.empty() ? std::map<std::string, std::string>{}
                                                          : read_config_file(train_config);
            const TrainConfig config = resolve_config(file_values, flags);
            const skillgrid::Dataset ds = skillgrid::read_dataset(train_data);
            const fs::path dir = ensure_dir(train_out);
            write_resolved(dir, config_to_kv(config));
            const RunState run = train(config, ds, [&out](const MetricRow& r) {
                if (r.mi || r.iteration % 100 == 0) {
                    out << "iter " << r.iteration << " loss " << r.loss_total;
                    if (r.mi) out << " mi " << *r.mi << " codes " << r.codes_used.value_or(0);
                    out << "\n";
                }
            });
            save_checkpoint(run, (dir / "checkpoint.bin").string());
            write_metric_log((dir / "metrics.csv").string(), run.log);
        } else if (ev->parsed()) {
            const auto splits = parse_splits(eval_splits);
            const SamplerSpec sampler = parse_sampler(eval_sampler);
            if (eval_episodes < 1) throw UsageError("--episodes must be at least 1");
            const RunState run = load_checkpoint(eval_ckpt);
            TrainedPolicy policy(run, sampler);
            const SuccessTable table = success_table(policy, splits, eval_episodes, eval_seed);
            const fs::path dir = ensure_dir(eval_out);
            write_text(dir / "success_table.csv", table.csv());
            write_resolved(dir, {{"command", "eval"},
                                 {"ckpt", eval_ckpt},
                                 {"splits", eval_splits},
                                 {"episodes", str(eval_episodes)},
                                 {"seed", str(eval_seed)},
                                 {"sampler", sampler.label()}});
            out << table.csv();
        } else if (sm->parsed()) {
            const auto splits = parse_splits(map_splits);
            if (map_episodes < 1) throw UsageError("--episodes must be at least 1");
            const RunState run = load_checkpoint(map_ckpt);
            if (!run.skill) throw UsageError("skill-map needs a checkpoint with a codebook (mode != lang)");
            TrainedPolicy policy(run, SamplerSpec{});
            const SuccessTable table = success_table(policy, splits, map_episodes, map_seed);
            const SkillWordMap map = skill_word_map(table.episodes, run.skill->codebook.size());
            const fs::path dir = ensure_dir(map_out);
            write_text(dir / "skill_word_map.csv", map.csv());
            write_resolved(dir, {{"command", "skill-map"},
                                 {"ckpt", map_ckpt},
                                 {"splits", map_splits},
                                 {"episodes", str(map_episodes)},
                                 {"seed", str(map_seed)}});
            out << "codes used " << distinct_codes(table.episodes) << ", nonzero rows " << map.nonzero_rows() << "\n";
        } else if (mc->parsed()) {
            const auto rows = read_metric_log(mi_log);
            const fs::path dir = ensure_dir(mi_out);
            write_text(dir / "mi_curve.csv", mi_curve_csv(rows));
            write_resolved(dir, {{"command", "mi-curve"}, {"log", mi_log}});
        } else if (bn->parsed()) {
            std::vector<SamplerSpec> specs;
            for (const auto& s : split_list(bench_sampler)) {
                SamplerSpec spec = parse_sampler(s);
                if (spec.steps == 0) spec.steps = bench_steps;
                specs.push_back(spec);
            }
            if (specs.empty()) throw UsageError("--sampler is empty");
            if (bench_episodes < 1) throw UsageError("--episodes must be at least 1");
            const RunState run = load_checkpoint(bench_ckpt);
            const auto rows = bench_inference(run, specs, bench_episodes, bench_seed, bench_length);
            const fs::path dir = ensure_dir(bench_out);
            write_text(dir / "timings.csv", timings_csv(rows));
            write_resolved(dir, {{"command", "bench"},
                                 {"ckpt", bench_ckpt},
                                 {"sampler", bench_sampler},
                                 {"steps", str(bench_steps)},
                                 {"episodes", str(bench_episodes)},
                                 {"episode_length", str(bench_length)},
                                 {"seed", str(bench_seed)}});
            out << timings_csv(rows);
        }
    } catch (const std::invalid_argument& e) {
        // ContractViolation and friends: the inputs were wrong.
        err << "error: usage: " << one_line(e.what()) << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: runtime: " << one_line(e.what()) << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace lcsd::cli
