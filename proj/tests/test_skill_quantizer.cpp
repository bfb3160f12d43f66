#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "lcsd/error.hpp"
#include "lcsd/skill_quantizer.hpp"

using namespace lcsd;
using skillgrid::Trajectory;
using skillgrid::WorldState;

namespace {

QuantizerConfig small_config() {
    QuantizerConfig c;
    c.codes = 3;
    c.code_dim = 2;
    c.recon_options = 2;
    c.encoder_hidden = 4;
    c.decoder_hidden = 4;
    return c;
}

Trajectory toy_trajectory(std::size_t steps, const std::string& text) {
    Trajectory t;
    t.instruction.text = text;
    t.instruction.subtasks = {skillgrid::Subtask::open_drawer};
    for (std::size_t i = 0; i <= steps; ++i) {
        WorldState s;
        s.drawer = 0.1 * static_cast<double>(i);
        s.effector_x = -0.05 * static_cast<double>(i);
        t.states.push_back(s);
    }
    t.actions.assign(steps, skillgrid::Action{0.1, -0.2, 0.3});
    return t;
}

// Zero weights everywhere: the encoder emits its last bias, the decoder its bias.
SkillModel constant_model(const std::vector<double>& enc_bias, const std::vector<double>& dec_bias,
                          const Tensor& codes) {
    SkillModel m;
    m.config = small_config();
    m.encoder = Mlp::zeros({6 + kEmbedDim, 4, 4, 2}, "encoder");
    m.decoder = Mlp::zeros({4, 4, kEmbedDim}, "decoder");
    std::copy(enc_bias.begin(), enc_bias.end(), m.encoder.bias(2).data());
    std::copy(dec_bias.begin(), dec_bias.end(), m.decoder.bias(1).data());
    m.codebook = Codebook(codes);
    return m;
}

}  // namespace

TEST(Encoder, ZeroWeightsGiveBias) {
    SkillModel m = constant_model({0.3, -0.7}, std::vector<double>(kEmbedDim, 0.0), Tensor::zeros(3, 2));
    const auto z = encode_skill(m.encoder, WorldState{}, embed("open the drawer"));
    EXPECT_EQ(z, (std::vector<double>{0.3, -0.7}));
}

TEST(Encoder, MatchesManualForward) {
    Rng rng(4);
    const QuantizerConfig c = small_config();
    const Mlp enc = make_skill_encoder(c, rng);
    WorldState s;
    s.effector_x = 0.2;
    s.faucet = -0.4;
    s.block2_x = 0.1;
    const LangEmbedding e = embed("move the red block to the left");
    const auto sa = s.to_array();
    std::vector<double> x(sa.begin(), sa.end());
    x.insert(x.end(), e.begin(), e.end());
    for (std::size_t l = 0; l < enc.layer_count(); ++l) {
        const Tensor& w = enc.weight(l);
        std::vector<double> y(w.cols(), 0.0);
        for (std::size_t j = 0; j < w.cols(); ++j) {
            double acc = enc.bias(l)[j];
            for (std::size_t i = 0; i < w.rows(); ++i) acc += x[i] * w(i, j);
            y[j] = l + 1 < enc.layer_count() ? std::tanh(acc) : acc;
        }
        x = y;
    }
    const auto got = encode_skill(enc, s, e);
    ASSERT_EQ(got.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(got[i], x[i], 1e-12);
}

TEST(Quantize, ExactTieAndWrongWidth) {
    Codebook cb(Tensor::matrix(3, 2, {0.0, 0.0, 1.0, 1.0, 1.0, 1.0}));
    const Quantized q = quantize(cb, std::vector<double>{1.0, 1.0});
    EXPECT_EQ(q.index, 1u);  // exact match, tie with code 2 goes to the lower index
    EXPECT_EQ(q.distance_sq, 0.0);
    EXPECT_EQ(cb.usage, (std::vector<std::uint64_t>{0, 1, 0}));
    EXPECT_EQ(cb.codes_in_use(), 1u);
    EXPECT_EQ(nearest_code(cb.vectors(), std::vector<double>{0.5, 0.5}), 0u);
    EXPECT_THROW(quantize(cb, std::vector<double>{1.0}), ContractViolation);
}

TEST(Quantize, AgreesWithBruteForce) {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t m = 1 + rng.below(20), d = 1 + rng.below(16);
        Tensor codes = Tensor::zeros(m, d);
        for (double& v : codes.values()) v = rng.normal();
        std::vector<double> z(d);
        for (double& v : z) v = rng.normal();
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t k = 0; k < m; ++k) {
            double dist = 0.0;
            for (std::size_t i = 0; i < d; ++i) dist += (z[i] - codes(k, i)) * (z[i] - codes(k, i));
            if (dist < best) {
                best = dist;
                arg = k;
            }
        }
        ASSERT_EQ(nearest_code(codes, z), arg);
    }
}

TEST(UniqueConsecutive, Examples) {
    const std::vector<int> a{3, 3, 7, 7, 3};
    EXPECT_EQ(unique_consecutive<int>(a), (std::vector<int>{3, 7, 3}));
    EXPECT_TRUE(unique_consecutive<int>(std::vector<int>{}).empty());
    const std::vector<std::size_t> b{1, 1, 2, 2, 2, 1};
    EXPECT_EQ(run_starts(b), (std::vector<std::size_t>{0, 2, 5}));
}

TEST(RecoverInstruction, PadTruncateAndZeroDecoder) {
    Rng rng(2);
    QuantizerConfig c = small_config();
    const Mlp dec = make_recovery_decoder(c, rng);
    const std::vector<double> z1{0.2, -0.1}, z2{0.5, 0.4}, z3{-0.3, 0.9};
    EXPECT_EQ(recover_instruction(dec, {z1, z2, z3}, 2), recover_instruction(dec, {z1, z2}, 2));
    EXPECT_EQ(recover_instruction(dec, {z1}, 2), recover_instruction(dec, {z1, {0.0, 0.0}}, 2));
    EXPECT_THROW(recover_instruction(dec, {{0.1, 0.2, 0.3}}, 2), ContractViolation);

    const Mlp zero = Mlp::zeros({4, 4, kEmbedDim}, "decoder");
    const auto out = recover_instruction(zero, {z1}, 2);
    const LangEmbedding e = embed("open the drawer");
    double mse = 0.0;
    for (std::size_t i = 0; i < kEmbedDim; ++i) mse += (out[i] - e[i]) * (out[i] - e[i]);
    EXPECT_NEAR(mse / kEmbedDim, 1.0 / 32.0, 1e-15);
}

TEST(SkillLoss, HandComputedThreeStepToy) {
    // Latent p = (0.3, -0.7) at every step; nearest code is row 1.
    const Tensor codes = Tensor::matrix(3, 2, {1.0, 1.0, 0.5, -0.5, -1.0, 0.0});
    std::vector<double> dec_bias(kEmbedDim, 0.0);
    dec_bias[0] = 0.25;
    SkillModel m = constant_model({0.3, -0.7}, dec_bias, codes);
    const Trajectory t = toy_trajectory(3, "open the drawer");
    const SkillLossValue v = skill_loss(m, t);
    EXPECT_EQ(v.indices, (std::vector<std::size_t>{1, 1, 1}));

    const double dist = 0.2 * 0.2 + 0.2 * 0.2;  // ||p - z_1||^2
    const LangEmbedding e = embed("open the drawer");
    double recon = 0.0;
    for (std::size_t i = 0; i < kEmbedDim; ++i) recon += (dec_bias[i] - e[i]) * (dec_bias[i] - e[i]);
    recon /= kEmbedDim;
    const double expected = 1.0 * dist + 1.0 * dist + 0.01 * recon;
    EXPECT_NEAR(v.loss, expected, 1e-14);
    EXPECT_EQ(m.codebook.usage, (std::vector<std::uint64_t>{0, 3, 0}));
}

TEST(SkillLoss, StraightThroughGradients) {
    const Tensor codes = Tensor::matrix(3, 2, {1.0, 1.0, 0.5, -0.5, -1.0, 0.0});
    SkillModel m = constant_model({0.3, -0.7}, std::vector<double>(kEmbedDim, 0.0), codes);
    const Trajectory t = toy_trajectory(3, "open the drawer");
    const Trajectory* one[] = {&t};
    const SkillBatch batch = make_skill_batch(one);

    Tape tape;
    const SkillForward f = skill_forward(tape, m, batch, false, false);
    const Gradients g = tape.backprop(f.loss);
    // d/dp of beta * ||p - sg(z)||^2 is 2 (p - z); the codebook term routes
    // -2 (p - z) to the selected row only.
    const GradList enc = g.of(m.encoder.params);
    EXPECT_NEAR(enc[5][0], 2 * (0.3 - 0.5), 1e-14);
    EXPECT_NEAR(enc[5][1], 2 * (-0.7 + 0.5), 1e-14);
    const GradList cb = g.of(m.codebook.params);
    EXPECT_NEAR(cb[0](1, 0), -2 * (0.3 - 0.5), 1e-14);
    EXPECT_NEAR(cb[0](1, 1), -2 * (-0.7 + 0.5), 1e-14);
    for (std::size_t k : {0u, 2u})
        for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(cb[0](k, j), 0.0);
}

TEST(SkillLoss, ReconDoesNotReachCodebookAndGradCheckPasses) {
    Rng rng(21);
    SkillModel m(small_config(), rng);
    const Trajectory t1 = toy_trajectory(5, "open the drawer and turn the faucet to the left");
    const Trajectory t2 = toy_trajectory(3, "close the drawer");
    const Trajectory* two[] = {&t1, &t2};
    const SkillBatch batch = make_skill_batch(two);

    Tape tape;
    const SkillForward with = skill_forward(tape, m, batch, true, false);
    const GradList g_with = tape.backprop(with.loss).of(m.codebook.params);
    Tape tape2;
    const SkillForward without = skill_forward(tape2, m, batch, false, false);
    const GradList g_without = tape2.backprop(without.loss).of(m.codebook.params);
    for (std::size_t i = 0; i < g_with[0].size(); ++i) EXPECT_NEAR(g_with[0][i], g_without[0][i], 1e-15);

    const std::vector<std::size_t> frozen = with.indices;
    const auto report = grad_check(
        [&](Tape& tp) { return skill_forward(tp, m, batch, true, false, frozen).loss; },
        {&m.encoder.params, &m.decoder.params, &m.codebook.params}, 1e-5);
    EXPECT_TRUE(report.ok) << report.failure;
    EXPECT_LT(report.max_rel_error, 1e-5) << report.worst;
}

TEST(Reinit, ScheduleWindow) {
    const ReinitConfig c;
    EXPECT_FALSE(reinit_due(c, 0));
    EXPECT_FALSE(reinit_due(c, 49));
    EXPECT_TRUE(reinit_due(c, 50));
    EXPECT_TRUE(reinit_due(c, 450));
    EXPECT_FALSE(reinit_due(c, 500));
    EXPECT_FALSE(reinit_due(c, 550));
    Codebook cb(Tensor::zeros(2, 2));
    Rng rng(1);
    EXPECT_THROW(reinit_codebook(cb, Tensor::zeros(1, 2), rng, 500, c), ContractViolation);
}

TEST(Reinit, UnusedCodesAlwaysResetAverageNever) {
    Rng rng(7);
    const ReinitConfig c;
    Tensor outputs = Tensor::matrix(3, 2, {0.1, 0.2, -0.4, 0.9, 2.0, -1.0});
    for (int trial = 0; trial < 500; ++trial) {
        Codebook cb(Tensor::matrix(4, 2, {0, 0, 1, 1, 2, 2, 3, 3}));
        cb.usage = {5, 0, 5, 5};  // mean usage 3.75: rows 0, 2, 3 are above average
        const auto r = reinit_codebook(cb, outputs, rng, 100, c);
        ASSERT_EQ(r.reset_codes, (std::vector<std::size_t>{1}));
        for (std::uint64_t u : cb.usage) ASSERT_EQ(u, 0u);
        // The reset row is an exact copy of one encoder output.
        const auto row = cb.code(1);
        const auto src = outputs.row(r.chosen_outputs[0]);
        ASSERT_TRUE(std::equal(row.begin(), row.end(), src.begin()));

        Codebook flat(Tensor::matrix(2, 2, {0, 0, 1, 1}));
        flat.usage = {4, 4};
        ASSERT_TRUE(reinit_codebook(flat, outputs, rng, 100, c).reset_codes.empty());

        Codebook none(Tensor::matrix(2, 2, {0, 0, 1, 1}));
        ASSERT_EQ(reinit_codebook(none, outputs, rng, 100, c).reset_codes.size(), 2u);
    }
}

TEST(Reinit, ResetProbabilityMatchesRule) {
    Rng rng(9);
    const ReinitConfig c;
    const Tensor outputs = Tensor::matrix(1, 1, {0.5});
    const int n = 20000;
    int resets = 0;
    for (int i = 0; i < n; ++i) {
        Codebook cb(Tensor::matrix(2, 1, {0.0, 1.0}));
        cb.usage = {3, 1};  // code 1: threshold 1 * 2 / 4 = 0.5
        resets += static_cast<int>(reinit_codebook(cb, outputs, rng, 50, c).reset_codes.size());
    }
    const double p = 0.5, sigma = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(resets / static_cast<double>(n), p, 3 * sigma);
}

TEST(Reinit, CandidateDistribution) {
    const std::vector<double> code{0.0, 0.0};
    const Tensor outputs = Tensor::matrix(3, 2, {1.0, 0.0, 0.0, 2.0, -1.0, -1.0});
    const auto p = candidate_probabilities(code, outputs, 1e-12);
    double total = 0.0;
    for (double x : p) total += x;
    EXPECT_NEAR(total, 1.0, 1e-15);
    // weights 1/1, 1/4, 1/2
    EXPECT_NEAR(p[0], 1.0 / 1.75, 1e-15);
    EXPECT_NEAR(p[1], 0.25 / 1.75, 1e-15);
    EXPECT_NEAR(p[2], 0.5 / 1.75, 1e-15);

    const Tensor degenerate = Tensor::matrix(3, 2, {1.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    EXPECT_EQ(candidate_probabilities(code, degenerate, 1e-12), (std::vector<double>{0.0, 1.0, 0.0}));

    Rng rng(13);
    const ReinitConfig c;
    const int n = 100000;
    std::vector<int> hits(3, 0);
    for (int i = 0; i < n; ++i) {
        Codebook cb(Tensor::matrix(1, 2, {0.0, 0.0}));
        const auto r = reinit_codebook(cb, outputs, rng, 50, c);
        ++hits[r.chosen_outputs.at(0)];
    }
    for (std::size_t k = 0; k < 3; ++k) {
        const double sigma = std::sqrt(p[k] * (1 - p[k]) / n);
        EXPECT_NEAR(hits[k] / static_cast<double>(n), p[k], 3 * sigma) << k;
    }
}
