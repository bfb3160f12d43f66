#include "lcsd/trainer.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>
#include <type_traits>

#include "lcsd/error.hpp"
#include "lcsd/metrics.hpp"

namespace lcsd {
namespace {

using skillgrid::Trajectory;

template <typename Config, typename F>
void visit_fields(Config& c, F&& f) {
    f("mode", c.mode);
    f("batch_trajectories", c.batch_trajectories);
    f("iterations", c.iterations);
    f("behavior_weight", c.behavior_weight);
    f("skill_weight", c.skill_weight);
    f("recon_weight", c.recon_weight);
    f("commitment_weight", c.commitment_weight);
    f("codebook_weight", c.codebook_weight);
    f("policy_lr", c.policy_lr);
    f("skill_lr", c.skill_lr);
    f("codes", c.codes);
    f("code_dim", c.code_dim);
    f("recon_options", c.recon_options);
    f("diffusion_steps", c.diffusion_steps);
    f("beta_min", c.beta_min);
    f("beta_max", c.beta_max);
    f("reinit_every", c.reinit_every);
    f("reinit_until", c.reinit_until);
    f("encoder_hidden", c.encoder_hidden);
    f("decoder_hidden", c.decoder_hidden);
    f("denoiser_hidden", c.denoiser_hidden);
    f("diagnostics_every", c.diagnostics_every);
    f("probe_trajectories", c.probe_trajectories);
    f("seed", c.seed);
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, res.ptr};
}

template <typename T>
std::string format_value(const T& v) {
    if constexpr (std::is_same_v<T, Mode>) {
        return std::string(to_string(v));
    } else if constexpr (std::is_floating_point_v<T>) {
        return format_double(v);
    } else {
        return std::to_string(v);
    }
}

template <typename T>
void parse_value(const std::string& key, const std::string& text, T& out) {
    if constexpr (std::is_same_v<T, Mode>) {
        out = parse_mode(text);
    } else {
        T v{};
        const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
        if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
            throw ContractViolation("config: invalid value '" + text + "' for key '" + key + "'");
        }
        out = v;
    }
}

std::vector<const Trajectory*> probe_pointers(std::span<const Trajectory> probe) {
    std::vector<const Trajectory*> out;
    for (const auto& t : probe) out.push_back(&t);
    return out;
}

// Little-endian byte writer/reader for checkpoints.
struct Writer {
    std::string buf;
    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        buf.append(b, sizeof(T));
    }
    void put_array(const Tensor& t) {
        put<std::uint64_t>(t.size());
        for (double v : t.values()) put(v);
    }
};

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    template <typename T>
    T get() {
        if (pos + sizeof(T) > buf.size()) throw CorruptCheckpoint("checkpoint truncated at byte " + std::to_string(pos));
        char b[sizeof(T)];
        std::memcpy(b, buf.data() + pos, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        pos += sizeof(T);
        T v;
        std::memcpy(&v, b, sizeof(T));
        return v;
    }
    void get_array(Tensor& t, const std::string& what) {
        const auto n = get<std::uint64_t>();
        if (n != t.size()) {
            throw CorruptCheckpoint("checkpoint array for " + what + " has " + std::to_string(n) + " values, expected " +
                                    std::to_string(t.size()));
        }
        for (double& v : t.values()) v = get<double>();
    }
};

// Arrays in checkpoint order: parameters, then Adam moments per group.
std::vector<std::pair<std::string, Tensor*>> checkpoint_arrays(RunState& run) {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add_set = [&out](ParamSet& set) {
        for (std::size_t i = 0; i < set.size(); ++i) out.emplace_back(set.name(i), &set[i]);
    };
    auto add_moments = [&out](const std::string& group, AdamState& st, const ParamSet& set) {
        for (std::size_t i = 0; i < set.size(); ++i) {
            out.emplace_back(group + ".m." + set.name(i), &st.first_moment[i]);
            out.emplace_back(group + ".v." + set.name(i), &st.second_moment[i]);
        }
    };
    if (run.skill) {
        add_set(run.skill->encoder.params);
        add_set(run.skill->decoder.params);
        add_set(run.skill->codebook.params);
    }
    add_set(run.policy.params);
    add_moments("adam.policy", run.policy_opt, run.policy.params);
    if (run.skill) {
        add_moments("adam.encoder", run.encoder_opt, run.skill->encoder.params);
        add_moments("adam.decoder", run.decoder_opt, run.skill->decoder.params);
        add_moments("adam.codebook", run.codebook_opt, run.skill->codebook.params);
    }
    return out;
}

std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

std::string_view to_string(Mode m) {
    switch (m) {
        case Mode::lcsd: return "lcsd";
        case Mode::lang: return "lang";
        case Mode::encoder_only: return "encoder_only";
        case Mode::no_reinit: return "no_reinit";
    }
    return "lcsd";
}

Mode parse_mode(std::string_view name) {
    for (Mode m : {Mode::lcsd, Mode::lang, Mode::encoder_only, Mode::no_reinit})
        if (to_string(m) == name) return m;
    throw ContractViolation("invalid mode '" + std::string(name) + "' (valid: lcsd, lang, encoder_only, no_reinit)");
}

QuantizerConfig TrainConfig::quantizer() const {
    QuantizerConfig q;
    q.codes = codes;
    q.code_dim = code_dim;
    q.recon_options = recon_options;
    q.encoder_hidden = encoder_hidden;
    q.decoder_hidden = decoder_hidden;
    q.commitment = commitment_weight;
    q.recon_weight = recon_weight;
    q.codebook_weight = codebook_weight;
    return q;
}

ReinitConfig TrainConfig::reinit() const { return {reinit_every, reinit_until, 1e-12}; }

DenoiserConfig TrainConfig::denoiser() const {
    DenoiserConfig d;
    d.cond_dim = cond_dim();
    d.hidden = denoiser_hidden;
    d.horizon = diffusion_steps;
    return d;
}

void TrainConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0)) throw ContractViolation(std::string("config: ") + name + " must be positive");
    };
    positive(behavior_weight, "behavior_weight");
    positive(skill_weight, "skill_weight");
    positive(recon_weight, "recon_weight");
    positive(commitment_weight, "commitment_weight");
    positive(codebook_weight, "codebook_weight");
    positive(policy_lr, "policy_lr");
    positive(skill_lr, "skill_lr");
    for (auto [v, name] : {std::pair{batch_trajectories, "batch_trajectories"}, {codes, "codes"},
                           {code_dim, "code_dim"}, {recon_options, "recon_options"},
                           {diffusion_steps, "diffusion_steps"}, {encoder_hidden, "encoder_hidden"},
                           {decoder_hidden, "decoder_hidden"}, {denoiser_hidden, "denoiser_hidden"},
                           {probe_trajectories, "probe_trajectories"}}) {
        if (v == 0) throw ContractViolation(std::string("config: ") + name + " must be positive");
    }
    if (reinit_every == 0) throw ContractViolation("config: reinit_every must be at least 1");
    if (diagnostics_every == 0) throw ContractViolation("config: diagnostics_every must be at least 1");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
        throw ContractViolation("config: need 0 < beta_min <= beta_max < 1");
}

std::map<std::string, std::string> config_to_kv(const TrainConfig& config) {
    std::map<std::string, std::string> kv;
    visit_fields(config, [&kv](const char* key, const auto& v) { kv[key] = format_value(v); });
    return kv;
}

void apply_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
    bool found = false;
    visit_fields(config, [&](const char* k, auto& field) {
        if (key == k) {
            parse_value(key, value, field);
            found = true;
        }
    });
    if (!found) throw ContractViolation("config: unknown key '" + key + "'");
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    TrainConfig c;
    visit_fields(c, [&keys](const char* k, auto&) { keys.emplace_back(k); });
    return keys;
}

RunState init_run(const TrainConfig& config) {
    config.validate();
    RunState run;
    run.config = config;
    Rng root(config.seed);
    Rng init = root.split("init");
    if (config.uses_skills()) {
        Rng skill_rng = init.split("skill");
        run.skill.emplace(config.quantizer(), skill_rng);
        run.encoder_opt = AdamState(run.skill->encoder.params, {config.skill_lr});
        run.decoder_opt = AdamState(run.skill->decoder.params, {config.skill_lr});
        run.codebook_opt = AdamState(run.skill->codebook.params, {config.skill_lr});
    }
    Rng policy_rng = init.split("policy");
    run.policy = DenoiseNet(config.denoiser(), policy_rng);
    run.policy_opt = AdamState(run.policy.params, {config.policy_lr});
    run.schedule = make_schedule(config.diffusion_steps, config.beta_min, config.beta_max);
    run.train_rng = root.split("train");
    return run;
}

Tensor batch_actions(std::span<const Trajectory* const> batch) {
    std::size_t n = 0;
    for (const auto* t : batch) n += t->length();
    Tensor a = Tensor::zeros(n, 3);
    std::size_t r = 0;
    for (const auto* t : batch)
        for (const auto& act : t->actions) {
            a(r, 0) = act.dx;
            a(r, 1) = act.dy;
            a(r, 2) = act.u;
            ++r;
        }
    return a;
}

CombinedLoss combined_loss(Tape& tape, RunState& run, std::span<const Trajectory* const> batch, const NoiseDraw& draw,
                           std::span<const std::size_t> frozen_indices, bool record_usage) {
    require(!batch.empty(), "train_iteration: empty batch");
    const TrainConfig& c = run.config;
    const SkillBatch sb = make_skill_batch(batch);
    CombinedLoss out;
    Var cond;
    if (c.uses_skills()) {
        out.skill_terms = skill_forward(tape, *run.skill, sb, c.mode != Mode::encoder_only, record_usage, frozen_indices);
        out.skill = out.skill_terms->loss;
        cond = out.skill_terms->quantized;
    } else {
        out.skill = tape.constant(Tensor::scalar(0.0));
        cond = tape.constant(sb.langs);
    }
    out.bc = ddpm_loss(tape, run.policy, sb.states, batch_actions(batch), cond, run.schedule, draw);
    out.total = ad::scale(out.skill, c.skill_weight) + ad::scale(out.bc, c.behavior_weight);
    return out;
}

LossReport train_iteration(RunState& run, std::span<const Trajectory* const> batch) {
    require(!batch.empty(), "train_iteration: empty batch");
    const TrainConfig& c = run.config;
    run.iteration += 1;
    const std::uint64_t it = run.iteration;
    Rng it_rng = run.train_rng.split(it);
    Rng diffusion_rng = it_rng.split("diffusion");
    Rng reinit_rng = it_rng.split("reinit");

    std::size_t steps = 0;
    for (const auto* t : batch) steps += t->length();
    const NoiseDraw draw = draw_noise(steps, run.schedule, diffusion_rng);

    Tape tape;
    CombinedLoss loss = combined_loss(tape, run, batch, draw, {}, true);
    LossReport report;
    report.total = loss.total.value().item();
    report.skill = loss.skill.value().item();
    report.bc = loss.bc.value().item();
    if (loss.skill_terms) {
        report.recon = loss.skill_terms->recon.value().item();
        report.commitment = loss.skill_terms->commitment.value().item();
        report.codebook = loss.skill_terms->codebook.value().item();
    }

    const Gradients grads = tape.backprop(loss.total);
    adam_step(run.policy.params, grads.of(run.policy.params), run.policy_opt);
    if (run.skill) {
        SkillModel& sk = *run.skill;
        adam_step(sk.encoder.params, grads.of(sk.encoder.params), run.encoder_opt);
        adam_step(sk.codebook.params, grads.of(sk.codebook.params), run.codebook_opt);
        if (c.mode != Mode::encoder_only) adam_step(sk.decoder.params, grads.of(sk.decoder.params), run.decoder_opt);

        // Reinitialization uses this batch's encoder outputs and runs after
        // the optimizer step, so reset codes equal encoder outputs exactly.
        const ReinitConfig rc = c.reinit();
        const bool reinit_mode = c.mode == Mode::lcsd || c.mode == Mode::encoder_only;
        if (reinit_mode && reinit_due(rc, it)) {
            const ReinitReport r = reinit_codebook(sk.codebook, loss.skill_terms->latents.value(), reinit_rng, it, rc);
            report.reinitialized = true;
            report.codes_reset = r.reset_codes.size();
        } else if (it % rc.every == 0) {
            sk.codebook.clear_usage();
        }
    }
    return report;
}

Diagnostics probe_diagnostics(const RunState& run, std::span<const Trajectory> probe) {
    Diagnostics d;
    if (!run.skill || probe.empty()) return d;
    const auto ptrs = probe_pointers(probe);
    const SkillBatch sb = make_skill_batch(ptrs);
    Tensor x = Tensor::zeros(sb.steps(), sb.states.cols() + sb.langs.cols());
    for (std::size_t r = 0; r < sb.steps(); ++r) {
        std::copy(sb.states.row(r).begin(), sb.states.row(r).end(), x.row(r).begin());
        std::copy(sb.langs.row(r).begin(), sb.langs.row(r).end(), x.row(r).begin() + static_cast<std::ptrdiff_t>(sb.states.cols()));
    }
    const Tensor lat = mlp_forward(run.skill->encoder, x);
    JointCounts counts(run.skill->codebook.size(), skillgrid::kTemplateCount);
    std::vector<bool> used(run.skill->codebook.size(), false);
    for (std::size_t b = 0; b < sb.trajectories(); ++b) {
        for (std::size_t s = 0; s < sb.lengths[b]; ++s) {
            const std::size_t k = nearest_code(run.skill->codebook.vectors(), lat.row(sb.offsets[b] + s));
            counts.add(k, static_cast<std::size_t>(probe[b].instruction.template_id));
            used[k] = true;
        }
    }
    d.mi = mi_estimate(counts);
    d.codes_used = static_cast<std::size_t>(std::count(used.begin(), used.end(), true));
    return d;
}

RunState train(const TrainConfig& config, const skillgrid::Dataset& dataset, const ProgressFn& progress) {
    if (dataset.trajectories.empty()) throw DatasetError("train: dataset is empty");
    RunState run = init_run(config);
    const std::size_t n = dataset.trajectories.size();
    const std::span<const Trajectory> probe(dataset.trajectories.data(), std::min(n, config.probe_trajectories));

    std::vector<std::size_t> order(n);
    std::vector<const Trajectory*> batch;
    for (std::uint64_t it = 1; it <= config.iterations; ++it) {
        Rng batch_rng = run.train_rng.split(it).split("batch");
        batch.clear();
        if (n >= config.batch_trajectories) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            for (std::size_t i = 0; i < config.batch_trajectories; ++i) {
                std::swap(order[i], order[i + batch_rng.below(n - i)]);
                batch.push_back(&dataset.trajectories[order[i]]);
            }
        } else {
            for (std::size_t i = 0; i < config.batch_trajectories; ++i)
                batch.push_back(&dataset.trajectories[batch_rng.below(n)]);
        }

        const LossReport rep = train_iteration(run, batch);
        MetricRow row{it, rep.total, rep.skill, rep.bc, rep.recon, std::nullopt, std::nullopt};
        if (it % config.diagnostics_every == 0 && run.skill) {
            const Diagnostics d = probe_diagnostics(run, probe);
            row.mi = d.mi;
            row.codes_used = d.codes_used;
        }
        run.log.push_back(row);
        if (progress) progress(row);
    }
    return run;
}

std::string metric_log_csv(const std::vector<MetricRow>& rows) {
    std::string out = "iteration,loss_total,loss_skill,loss_bc,loss_recon,mi,codes_used\n";
    for (const auto& r : rows) {
        out += std::to_string(r.iteration) + "," + format_double(r.loss_total) + "," + format_double(r.loss_skill) +
               "," + format_double(r.loss_bc) + "," + format_double(r.loss_recon) + "," + opt_field(r.mi) + "," +
               (r.codes_used ? std::to_string(*r.codes_used) : std::string()) + "\n";
    }
    return out;
}

void write_metric_log(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write metric log " + path);
    f << metric_log_csv(rows);
}

std::string checkpoint_bytes(const RunState& run_in) {
    RunState& run = const_cast<RunState&>(run_in);  // checkpoint_arrays only reads through the pointers
    nlohmann::json meta;
    meta["format"] = "lcsd-checkpoint";
    meta["config"] = config_to_kv(run.config);
    meta["embed_dim"] = kEmbedDim;
    meta["iteration"] = run.iteration;
    meta["rng"] = {{"key", run.train_rng.state().key}, {"counter", run.train_rng.state().counter}};
    meta["adam_steps"] = {{"policy", run.policy_opt.step},
                          {"encoder", run.encoder_opt.step},
                          {"decoder", run.decoder_opt.step},
                          {"codebook", run.codebook_opt.step}};
    meta["usage"] = run.skill ? run.skill->codebook.usage : std::vector<std::uint64_t>{};
    const std::string json = meta.dump();

    Writer payload;
    payload.put<std::uint64_t>(json.size());
    payload.buf += json;
    const auto arrays = checkpoint_arrays(run);
    payload.put<std::uint32_t>(static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [name, t] : arrays) payload.put_array(*t);

    Writer out;
    out.buf = "LCSD";
    out.put<std::uint32_t>(kCheckpointVersion);
    out.buf += payload.buf;
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.buf.data()), static_cast<uInt>(payload.buf.size())));
    out.put<std::uint32_t>(crc);
    return out.buf;
}

RunState checkpoint_from_bytes(const std::string& bytes) {
    if (bytes.size() < 8 || bytes.compare(0, 4, "LCSD") != 0) throw CorruptCheckpoint("checkpoint: bad magic bytes");
    Reader head{bytes, 4};
    const auto version = head.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                           std::to_string(kCheckpointVersion) + ")");
    }
    if (bytes.size() < 12) throw CorruptCheckpoint("checkpoint truncated");
    const std::string payload = bytes.substr(8, bytes.size() - 12);
    Reader tail{bytes, bytes.size() - 4};
    const auto stored_crc = tail.get<std::uint32_t>();
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
    if (crc != stored_crc) throw CorruptCheckpoint("checkpoint: CRC mismatch (file truncated or modified)");

    Reader r{payload};
    const auto json_len = r.get<std::uint64_t>();
    if (json_len > payload.size() - r.pos) throw CorruptCheckpoint("checkpoint: config block overruns file");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(payload.substr(r.pos, json_len));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint(std::string("checkpoint: bad config block: ") + e.what());
    }
    r.pos += json_len;

    TrainConfig config;
    try {
        for (const auto& [k, v] : meta.at("config").items()) apply_config_value(config, k, v.get<std::string>());
        if (meta.at("embed_dim").get<std::size_t>() != kEmbedDim)
            throw CorruptCheckpoint("checkpoint: embedding dimension differs from this build");
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint(std::string("checkpoint: bad config block: ") + e.what());
    }

    RunState run = init_run(config);
    run.iteration = meta.at("iteration").get<std::uint64_t>();
    run.train_rng = Rng::from_state({meta.at("rng").at("key").get<std::uint64_t>(),
                                     meta.at("rng").at("counter").get<std::uint64_t>()});
    const auto& steps = meta.at("adam_steps");
    run.policy_opt.step = steps.at("policy").get<std::uint64_t>();
    run.encoder_opt.step = steps.at("encoder").get<std::uint64_t>();
    run.decoder_opt.step = steps.at("decoder").get<std::uint64_t>();
    run.codebook_opt.step = steps.at("codebook").get<std::uint64_t>();
    if (run.skill) {
        auto usage = meta.at("usage").get<std::vector<std::uint64_t>>();
        if (usage.size() != run.skill->codebook.size()) throw CorruptCheckpoint("checkpoint: usage count length");
        run.skill->codebook.usage = std::move(usage);
    }

    auto arrays = checkpoint_arrays(run);
    const auto count = r.get<std::uint32_t>();
    if (count != arrays.size()) {
        throw CorruptCheckpoint("checkpoint: " + std::to_string(count) + " arrays, expected " +
                                std::to_string(arrays.size()));
    }
    for (auto& [name, t] : arrays) r.get_array(*t, name);
    if (r.pos != payload.size()) throw CorruptCheckpoint("checkpoint: trailing bytes after arrays");
    return run;
}

void save_checkpoint(const RunState& run, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path);
    const std::string bytes = checkpoint_bytes(run);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("failed writing checkpoint " + path);
}

RunState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return checkpoint_from_bytes(ss.str());
}

}  // namespace lcsd
