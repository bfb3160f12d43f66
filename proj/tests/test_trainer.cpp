#include <gtest/gtest.h>

#include <cmath>

#include "lcsd/error.hpp"
#include "lcsd/trainer.hpp"

using namespace lcsd;
using skillgrid::Trajectory;

namespace {

TrainConfig small_config(Mode mode) {
    TrainConfig c;
    c.mode = mode;
    c.batch_trajectories = 4;
    c.iterations = 20;
    c.codes = 6;
    c.code_dim = 4;
    c.encoder_hidden = 8;
    c.decoder_hidden = 8;
    c.denoiser_hidden = 16;
    c.reinit_every = 5;
    c.reinit_until = 16;
    c.diagnostics_every = 10;
    c.probe_trajectories = 8;
    c.seed = 3;
    return c;
}

const skillgrid::Dataset& dataset() {
    static const skillgrid::Dataset ds = skillgrid::generate_dataset({48, 1, skillgrid::Split::seen, true});
    return ds;
}

std::vector<const Trajectory*> first(std::size_t n) {
    std::vector<const Trajectory*> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(&dataset().trajectories[i]);
    return out;
}

}  // namespace

TEST(Config, KeyValueRoundTripAndErrors) {
    TrainConfig c = small_config(Mode::encoder_only);
    c.policy_lr = 0.1 + 0.2;  // needs all 17 digits
    TrainConfig back;
    for (const auto& [k, v] : config_to_kv(c)) apply_config_value(back, k, v);
    EXPECT_EQ(back, c);
    EXPECT_EQ(config_keys().size(), config_to_kv(c).size());
    EXPECT_THROW(apply_config_value(back, "learning_rate", "1"), ContractViolation);
    EXPECT_THROW(apply_config_value(back, "iterations", "-3"), ContractViolation);
    EXPECT_THROW(apply_config_value(back, "policy_lr", "fast"), ContractViolation);
    try {
        (void)parse_mode("bogus");
        FAIL();
    } catch (const ContractViolation& e) {
        const std::string msg = e.what();
        for (const char* m : {"lcsd", "lang", "encoder_only", "no_reinit"}) EXPECT_NE(msg.find(m), std::string::npos);
    }
}

TEST(TrainIteration, LangModeHasNoSkillTerm) {
    RunState run = init_run(small_config(Mode::lang));
    EXPECT_FALSE(run.skill.has_value());
    const auto batch = first(4);
    for (int i = 0; i < 3; ++i) {
        const LossReport r = train_iteration(run, batch);
        EXPECT_EQ(r.skill, 0.0);
        EXPECT_FALSE(r.reinitialized);
        EXPECT_NEAR(r.total, 5.0 * r.bc, 1e-12);
    }
}

TEST(TrainIteration, TotalIsWeightedSum) {
    for (Mode m : {Mode::lcsd, Mode::encoder_only, Mode::no_reinit}) {
        RunState run = init_run(small_config(m));
        const auto batch = first(4);
        for (int i = 0; i < 3; ++i) {
            const LossReport r = train_iteration(run, batch);
            EXPECT_NEAR(r.total, 2.0 * r.skill + 5.0 * r.bc, 1e-12);
            if (m == Mode::encoder_only) EXPECT_EQ(r.recon, 0.0);
            else EXPECT_GT(r.recon, 0.0);
        }
    }
}

TEST(TrainIteration, ReinitOnlyInsideWindowAndInReinitModes) {
    for (Mode m : {Mode::lcsd, Mode::encoder_only, Mode::no_reinit}) {
        RunState run = init_run(small_config(m));
        const auto batch = first(4);
        for (std::uint64_t it = 1; it <= 30; ++it) {
            const LossReport r = train_iteration(run, batch);
            const bool expected = m != Mode::no_reinit && (it == 5 || it == 10 || it == 15);
            EXPECT_EQ(r.reinitialized, expected) << to_string(m) << " it " << it;
            if (!r.reinitialized) EXPECT_EQ(r.codes_reset, 0u);
            if (it % 5 == 0) {
                for (auto u : run.skill->codebook.usage) EXPECT_EQ(u, 0u);
            }
        }
    }
}

namespace {
double max_step(const ParamSet& after, const ParamSet& before) {
    double m = 0.0;
    for (std::size_t i = 0; i < after.size(); ++i)
        for (std::size_t j = 0; j < after[i].size(); ++j) m = std::max(m, std::abs(after[i][j] - before[i][j]));
    return m;
}
}  // namespace

// Adam's first step moves every entry by at most its group's rate (exactly
// the rate where the gradient is nonzero), so distinct rates expose which
// optimizer touched which tensors.
TEST(TrainIteration, ParameterGroupsAreIsolated) {
    TrainConfig c = small_config(Mode::lcsd);
    c.policy_lr = 1e-3;
    c.skill_lr = 1e-7;
    RunState run = init_run(c);
    const ParamSet policy = run.policy.params;
    const SkillModel skill = *run.skill;
    train_iteration(run, first(4));
    auto within = [](double step, double lr) { return step <= lr * (1 + 1e-12) && step > 0.9 * lr; };
    EXPECT_TRUE(within(max_step(run.policy.params, policy), 1e-3));
    EXPECT_TRUE(within(max_step(run.skill->encoder.params, skill.encoder.params), 1e-7));
    EXPECT_TRUE(within(max_step(run.skill->decoder.params, skill.decoder.params), 1e-7));
    EXPECT_TRUE(within(max_step(run.skill->codebook.params, skill.codebook.params), 1e-7));
    EXPECT_EQ(run.policy_opt.step, 1u);
    EXPECT_EQ(run.encoder_opt.step, 1u);

    // encoder_only never touches the decoder.
    RunState run3 = init_run(small_config(Mode::encoder_only));
    const ParamSet decoder = run3.skill->decoder.params;
    for (int i = 0; i < 4; ++i) train_iteration(run3, first(4));
    EXPECT_EQ(run3.skill->decoder.params, decoder);
    EXPECT_EQ(run3.decoder_opt.step, 0u);
}

TEST(CombinedLoss, GradCheckOnMicroBatch) {
    TrainConfig c = small_config(Mode::lcsd);
    RunState run = init_run(c);
    const auto batch = first(4);
    std::size_t steps = 0;
    for (const auto* t : batch) steps += t->length();
    Rng rng(77);
    const NoiseDraw draw = draw_noise(steps, run.schedule, rng);
    Tape base;
    const CombinedLoss l = combined_loss(base, run, batch, draw);
    const std::vector<std::size_t> frozen = l.skill_terms->indices;
    const auto report = grad_check([&](Tape& t) { return combined_loss(t, run, batch, draw, frozen).total; },
                                   {&run.skill->encoder.params, &run.skill->decoder.params,
                                    &run.skill->codebook.params, &run.policy.params},
                                   0.1, 12, 5, FiniteDifference::ridders);
    EXPECT_TRUE(report.ok) << report.failure;
    EXPECT_LE(report.max_rel_error, 1e-5) << report.worst;
    EXPECT_GT(report.checked, 100u);
}

TEST(Train, LossDecreasesOverBlockAverages) {
    TrainConfig c = small_config(Mode::lcsd);
    c.iterations = 200;
    c.batch_trajectories = 8;
    c.policy_lr = 3e-3;
    c.skill_lr = 3e-3;
    const RunState run = train(c, dataset());
    ASSERT_EQ(run.log.size(), 200u);
    std::vector<double> blocks;
    for (std::size_t b = 0; b < 4; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < 50; ++i) s += run.log[b * 50 + i].loss_total;
        blocks.push_back(s / 50);
    }
    for (std::size_t b = 1; b < blocks.size(); ++b) EXPECT_LE(blocks[b], blocks[b - 1] * 1.02) << b;
    EXPECT_LT(blocks.back(), blocks.front());
}

TEST(Train, DiagnosticsEveryInterval) {
    TrainConfig c = small_config(Mode::lcsd);
    c.iterations = 30;
    const RunState run = train(c, dataset());
    for (const auto& row : run.log) {
        EXPECT_EQ(row.mi.has_value(), row.iteration % 10 == 0) << row.iteration;
        EXPECT_EQ(row.codes_used.has_value(), row.iteration % 10 == 0);
        if (row.mi) {
            EXPECT_GE(*row.mi, 0.0);
            EXPECT_LE(*row.mi, std::log(6.0) + 1e-12);
            EXPECT_GE(*row.codes_used, 1u);
            EXPECT_LE(*row.codes_used, 6u);
        }
    }
    c.mode = Mode::lang;
    for (const auto& row : train(c, dataset()).log) EXPECT_FALSE(row.mi.has_value());
}

TEST(Train, EmptyDatasetRejected) { EXPECT_THROW(train(small_config(Mode::lcsd), skillgrid::Dataset{}), DatasetError); }

TEST(Checkpoint, DeterministicAndRoundTrips) {
    const TrainConfig c = small_config(Mode::lcsd);
    RunState a = train(c, dataset());
    const RunState b = train(c, dataset());
    const std::string bytes = checkpoint_bytes(a);
    EXPECT_EQ(bytes, checkpoint_bytes(b));

    const std::string path = ::testing::TempDir() + "/ckpt.bin";
    save_checkpoint(a, path);
    RunState back = load_checkpoint(path);
    EXPECT_EQ(checkpoint_bytes(back), bytes);
    EXPECT_EQ(back.config, c);
    EXPECT_EQ(back.iteration, a.iteration);

    // Resuming from the checkpoint continues exactly like the original run.
    const auto batch = first(4);
    const LossReport ra = train_iteration(a, batch);
    const LossReport rb = train_iteration(back, batch);
    EXPECT_EQ(ra.total, rb.total);
    EXPECT_EQ(checkpoint_bytes(a), checkpoint_bytes(back));
}

TEST(Checkpoint, CorruptionAndVersionErrors) {
    const RunState run = init_run(small_config(Mode::lang));
    const std::string bytes = checkpoint_bytes(run);
    EXPECT_NO_THROW((void)checkpoint_from_bytes(bytes));
    EXPECT_THROW((void)checkpoint_from_bytes(bytes.substr(0, bytes.size() / 2)), CorruptCheckpoint);
    EXPECT_THROW((void)checkpoint_from_bytes(bytes.substr(0, 3)), CorruptCheckpoint);
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x01;
    EXPECT_THROW((void)checkpoint_from_bytes(flipped), CorruptCheckpoint);
    std::string magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW((void)checkpoint_from_bytes(magic), CorruptCheckpoint);
    std::string version = bytes;
    version[4] = static_cast<char>(kCheckpointVersion + 1);
    EXPECT_THROW((void)checkpoint_from_bytes(version), VersionError);
    EXPECT_THROW((void)load_checkpoint("/nonexistent/ckpt.bin"), std::runtime_error);
}

TEST(MetricLog, CsvHeaderAndEmptyFields) {
    std::vector<MetricRow> rows{{1, 1.5, 0.5, 0.1, 0.2, std::nullopt, std::nullopt}, {2, 1.0, 0.25, 0.1, 0.1, 0.5, 3}};
    const std::string csv = metric_log_csv(rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "iteration,loss_total,loss_skill,loss_bc,loss_recon,mi,codes_used");
    EXPECT_NE(csv.find("\n1,1.5,0.5,0.1,0.2,,\n"), std::string::npos);
    EXPECT_NE(csv.find("\n2,1,0.25,0.1,0.1,0.5,3\n"), std::string::npos);
}
