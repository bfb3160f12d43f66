#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "lcsd/error.hpp"
#include "lcsd/metrics.hpp"

using namespace lcsd;
using skillgrid::Split;

namespace {

// Textbook double sum over nonzero cells of p(z,l) log(p(z,l) / (p(z) p(l))).
double mi_reference(const std::vector<std::vector<double>>& counts) {
    double n = 0.0;
    std::vector<double> pz(counts.size(), 0.0), pl(counts[0].size(), 0.0);
    for (std::size_t z = 0; z < counts.size(); ++z)
        for (std::size_t l = 0; l < counts[z].size(); ++l) {
            n += counts[z][l];
            pz[z] += counts[z][l];
            pl[l] += counts[z][l];
        }
    double mi = 0.0;
    for (std::size_t z = 0; z < counts.size(); ++z)
        for (std::size_t l = 0; l < counts[z].size(); ++l) {
            if (counts[z][l] == 0) continue;
            const double p = counts[z][l] / n;
            mi += p * std::log(p / ((pz[z] / n) * (pl[l] / n)));
        }
    return mi;
}

}  // namespace

TEST(MutualInformation, ProductIsZeroDiagonalIsLogK) {
    JointCounts prod(3, 4);
    for (std::size_t z = 0; z < 3; ++z)
        for (std::size_t l = 0; l < 4; ++l) prod.add(z, l, (z + 1) * (l + 2));
    EXPECT_NEAR(mi_estimate(prod), 0.0, 1e-12);

    JointCounts diag(5, 5);
    for (std::size_t k = 0; k < 5; ++k) diag.add(k, k, 7);
    EXPECT_NEAR(mi_estimate(diag), std::log(5.0), 1e-12);

    EXPECT_THROW(mi_estimate(JointCounts(2, 2)), ContractViolation);
}

TEST(MutualInformation, MatchesDoubleSumAndBounds) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        JointCounts c(5, 5);
        std::vector<std::vector<double>> ref(5, std::vector<double>(5, 0.0));
        for (std::size_t z = 0; z < 5; ++z)
            for (std::size_t l = 0; l < 5; ++l) {
                const auto v = rng.below(4) == 0 ? 0 : rng.below(50);
                c.add(z, l, v);
                ref[z][l] = static_cast<double>(v);
            }
        if (c.total() == 0) continue;
        const double mi = mi_estimate(c);
        EXPECT_NEAR(mi, mi_reference(ref), 1e-12);
        EXPECT_GE(mi, 0.0);
        EXPECT_LE(mi, std::log(5.0) + 1e-12);
    }
}

TEST(Sampler, ParseAndLabel) {
    EXPECT_EQ(parse_sampler("ddpm").label(), "ddpm");
    EXPECT_EQ(parse_sampler("ddpm:25").steps, 25u);
    EXPECT_EQ(parse_sampler("ddim:10").kind, SamplerSpec::Kind::ddim);
    EXPECT_EQ(parse_sampler("ddim:10").label(), "ddim:10");
    EXPECT_THROW(parse_sampler("euler"), ContractViolation);
    EXPECT_THROW(parse_sampler("ddpm:x"), ContractViolation);
}

TEST(SuccessTable, ExpertSolvesEverySplit) {
    ExpertPolicy expert;
    const SuccessTable t = success_table(expert, skillgrid::kAllSplits, 60, 1);
    ASSERT_EQ(t.rows.size(), 6u);
    for (const auto& r : t.rows) {
        EXPECT_EQ(r.successes, r.episodes) << r.split;
        EXPECT_EQ(r.subtask_rate(), 1.0);
    }
    EXPECT_EQ(t.row("overall").episodes, 300u);
    EXPECT_GT(t.row("overall").composite_episodes, 0u);
    EXPECT_GT(t.row("overall").single_episodes, 0u);
    const std::string csv = t.csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "split,episodes,successes,success_rate,subtask_completion_rate,single_episodes,single_success_rate,"
              "composite_episodes,composite_success_rate");
}

TEST(SuccessTable, RandomPolicyRarelySolvesComposites) {
    RandomPolicy random;
    const std::array<Split, 1> seen{Split::seen};
    const SuccessTable t = success_table(random, seen, 200, 2);
    const SuccessRow& r = t.row("seen");
    ASSERT_GT(r.composite_episodes, 50u);
    EXPECT_LT(r.composite_rate(), 0.05);
}

TEST(SuccessTable, SplitOrderIndependentAndDeterministic) {
    RandomPolicy random;
    const std::array<Split, 2> a{Split::unseen_noun, Split::seen};
    const std::array<Split, 2> b{Split::seen, Split::unseen_noun};
    const SuccessTable ta = success_table(random, a, 30, 9);
    const SuccessTable tb = success_table(random, b, 30, 9);
    EXPECT_EQ(ta.rows, tb.rows);
    EXPECT_EQ(ta.rows.front().split, "seen");
    EXPECT_EQ(ta.csv(), success_table(random, a, 30, 9).csv());

    // Episode e of a split does not depend on which other splits ran.
    const std::array<Split, 1> only{Split::unseen_noun};
    const SuccessTable tc = success_table(random, only, 30, 9);
    EXPECT_EQ(tc.row("unseen_noun"), ta.row("unseen_noun"));
}

TEST(SkillWordMap, ExampleAndColumnSums) {
    EpisodeResult e1, e2, e3;
    e1.instruction.text = "open the drawer";
    e1.skills = {2, 2, 0, 2};
    e2.instruction.text = "close the drawer";
    e2.skills = {1};
    e3.instruction.text = "open the drawer";  // no skills: contributes nothing
    const std::vector<EpisodeResult> eps{e1, e2, e3};
    const SkillWordMap m = skill_word_map(eps, 3);
    EXPECT_EQ(m.vocabulary, (std::vector<std::string>{"close", "drawer", "open", "the"}));
    EXPECT_EQ(m.at(2, "open"), 1u);  // code 2 used several times, counted once
    EXPECT_EQ(m.at(0, "drawer"), 1u);
    EXPECT_EQ(m.at(1, "close"), 1u);
    EXPECT_EQ(m.at(1, "open"), 0u);
    EXPECT_EQ(m.nonzero_rows(), 3u);
    EXPECT_EQ(m.csv().substr(0, m.csv().find('\n')), "code,close,drawer,open,the");
    EXPECT_EQ(distinct_codes(eps), 3u);

    // Column sum of a word = sum over episodes of distinct codes x occurrences.
    Rng rng(4);
    std::vector<EpisodeResult> many;
    for (int i = 0; i < 50; ++i) {
        EpisodeResult e;
        e.instruction = skillgrid::sample_task(rng, Split::seen);
        for (int s = 0; s < 10; ++s) e.skills.push_back(rng.below(6));
        many.push_back(e);
    }
    const SkillWordMap big = skill_word_map(many, 6);
    for (std::size_t w = 0; w < big.vocabulary.size(); ++w) {
        std::uint64_t col = 0, want = 0;
        for (std::size_t k = 0; k < 6; ++k) col += big.counts[k][w];
        for (const auto& e : many) {
            const auto toks = tokenize(e.instruction.text);
            const auto occ = static_cast<std::uint64_t>(std::count(toks.begin(), toks.end(), big.vocabulary[w]));
            want += occ * std::set<std::size_t>(e.skills.begin(), e.skills.end()).size();
        }
        EXPECT_EQ(col, want) << big.vocabulary[w];
    }
    EXPECT_THROW(skill_word_map(many, 3), ContractViolation);
}

TEST(TrainedPolicy, RecordsSkillsAndTimesInference) {
    TrainConfig c;
    c.iterations = 3;
    c.batch_trajectories = 2;
    c.codes = 4;
    c.code_dim = 4;
    c.encoder_hidden = 8;
    c.decoder_hidden = 8;
    c.denoiser_hidden = 8;
    const auto ds = skillgrid::generate_dataset({8, 0, Split::seen, true});
    const RunState run = train(c, ds);

    TrainedPolicy ddpm(run, parse_sampler("ddpm"));
    const EpisodeResult r = evaluate_episode(ddpm, Split::seen, 0, 5, {6, false});
    EXPECT_EQ(r.steps, 6u);
    EXPECT_EQ(r.skills.size(), 6u);
    for (auto k : r.skills) EXPECT_LT(k, 4u);
    EXPECT_GT(r.inference_seconds, 0.0);
    // Same stream, same episode.
    const EpisodeResult again = evaluate_episode(ddpm, Split::seen, 0, 5, {6, false});
    EXPECT_EQ(r.skills, again.skills);

    EXPECT_THROW(TrainedPolicy(run, parse_sampler("ddim:51")), ContractViolation);

    const std::array<SamplerSpec, 2> specs{parse_sampler("ddpm:25"), parse_sampler("ddim:10")};
    const auto rows = bench_inference(run, specs, 2, 1, 5);
    ASSERT_EQ(rows.size(), 2u);
    for (const auto& row : rows) {
        EXPECT_EQ(row.episodes, 2u);
        EXPECT_GT(row.mean_episode_seconds, 0.0);
        EXPECT_NEAR(row.mean_action_seconds * 5, row.mean_episode_seconds, 1e-12);
    }
    const std::string csv = timings_csv(rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "sampler,episodes,mean_episode_seconds,mean_action_seconds");

    c.mode = Mode::lang;
    const RunState lang = train(c, ds);
    TrainedPolicy lp(lang, parse_sampler("ddim:5"));
    EXPECT_TRUE(evaluate_episode(lp, Split::seen, 0, 5, {4, false}).skills.empty());
}

TEST(MetricLog, ReadBackAndCurve) {
    std::vector<MetricRow> rows{{1, 2.0, 1.0, 0.2, 0.1, std::nullopt, std::nullopt},
                                {2, 1.5, 0.5, 0.2, 0.1, 0.75, 4}};
    const std::string path = ::testing::TempDir() + "/metrics.csv";
    write_metric_log(path, rows);
    const auto back = read_metric_log(path);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_FALSE(back[0].mi.has_value());
    EXPECT_EQ(back[1].mi, 0.75);
    EXPECT_EQ(back[1].codes_used, 4u);
    EXPECT_EQ(mi_curve_csv(back), "iteration,mi,codes_used\n2,0.75,4\n");

    std::ofstream(path) << "iteration,loss\n1,2\n";
    EXPECT_THROW(read_metric_log(path), DatasetError);
}
