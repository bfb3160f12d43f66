#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "lcsd/error.hpp"
#include "lcsd/skillgrid.hpp"
#include "lcsd/text_embed.hpp"

using namespace lcsd;
using namespace lcsd::skillgrid;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

bool all_latched(const std::vector<bool>& v) { return std::all_of(v.begin(), v.end(), [](bool b) { return b; }); }

}  // namespace

TEST(Templates, CountAndRoundTrip) {
    int composites = 0;
    std::set<std::vector<Subtask>> distinct;
    for (int id = 0; id < kTemplateCount; ++id) {
        const auto subs = subtasks_of_template(id);
        EXPECT_EQ(template_id_of(subs), id);
        if (subs.size() == 2) {
            ++composites;
            EXPECT_NE(object_of(subs[0]), object_of(subs[1]));
        }
        distinct.insert(subs);
    }
    EXPECT_EQ(composites, 48);
    EXPECT_EQ(distinct.size(), 56u);

    // Independent enumeration: ordered pairs of primitives on distinct objects.
    int pairs = 0;
    for (int a = 0; a < kSubtaskCount; ++a)
        for (int b = 0; b < kSubtaskCount; ++b)
            if (object_of(static_cast<Subtask>(a)) != object_of(static_cast<Subtask>(b))) ++pairs;
    EXPECT_EQ(pairs, 48);
}

TEST(SampleTask, DeterministicForSeed) {
    for (auto split : kAllSplits) {
        Rng a(99), b(99);
        EXPECT_EQ(sample_task(a, split), sample_task(b, split));
    }
}

TEST(SampleTask, SeenSplitUsesCanonicalVocabulary) {
    const auto& vocab = canonical_vocabulary();
    Rng rng(5);
    int singles = 0;
    for (int i = 0; i < 10000; ++i) {
        const Instruction ins = sample_task(rng, Split::seen);
        singles += ins.subtasks.size() == 1 ? 1 : 0;
        for (const auto& tok : tokenize(ins.text))
            ASSERT_NE(std::find(vocab.begin(), vocab.end(), tok), vocab.end()) << tok;
    }
    EXPECT_NEAR(singles / 10000.0, 0.5, 0.03);
}

TEST(SampleTask, SplitRendering) {
    const auto subs = subtasks_of_template(8);  // open_drawer then a partner
    EXPECT_EQ(render_text(std::vector<Subtask>{Subtask::open_drawer}, Split::seen), "open the drawer");
    EXPECT_EQ(render_text(std::vector<Subtask>{Subtask::open_drawer}, Split::unseen_verb), "pull the drawer");
    EXPECT_EQ(render_text(std::vector<Subtask>{Subtask::open_drawer}, Split::unseen_noun), "open the cabinet");
    EXPECT_EQ(render_text(std::vector<Subtask>{Subtask::close_drawer}, Split::unseen_both), "shut the cabinet");
    const std::string human = render_text(subs, Split::human);
    EXPECT_EQ(human.rfind("please open the drawer, then also ", 0), 0u) << human;
    EXPECT_NE(render_text(subs, Split::seen).find(" and "), std::string::npos);
    for (auto split : {Split::unseen_verb, Split::unseen_both}) {
        for (int id = 0; id < kTemplateCount; ++id) {
            const auto toks = tokenize(make_instruction(id, split).text);
            for (const char* w : {"open", "close", "turn", "move"})
                EXPECT_EQ(std::find(toks.begin(), toks.end(), w), toks.end());
        }
    }
}

TEST(Reset, RangesDeterminismAndNoGoalPreSatisfied) {
    for (int id = 0; id < kTemplateCount; ++id) {
        const Instruction ins = make_instruction(id, Split::seen);
        Rng rng(static_cast<std::uint64_t>(id));
        for (int i = 0; i < 1000; ++i) {
            const WorldState s = reset(rng, ins);
            ASSERT_TRUE(s.in_range());
            EXPECT_EQ(s.effector_x, 0.0);
            EXPECT_EQ(s.effector_y, 0.0);
            for (Subtask t : ins.subtasks) ASSERT_FALSE(subtask_done(s, t)) << "template " << id;
        }
    }
    const Instruction open = make_instruction(0, Split::seen);
    Rng a(3), b(3);
    EXPECT_EQ(reset(a, open), reset(b, open));
    Rng c(4);
    EXPECT_LT(reset(c, open).drawer, 0.9);
}

TEST(Step, Examples) {
    WorldState s;
    s.drawer = 0.4;
    s.faucet = 0.1;
    s.block1_x = 0.3;
    s.block2_x = -0.3;
    EXPECT_EQ(step(s, {0, 0, 0}), s);

    WorldState at_handle = s;
    at_handle.effector_x = -0.5;
    at_handle.effector_y = -0.5;
    at_handle.drawer = 0.5;
    EXPECT_NEAR(step(at_handle, {0, 0, 1}).drawer, 0.7, 1e-15);

    // From (0,0) no zone is within reach for any reset geometry (blocks at
    // most 0.3 away horizontally, rows at y=0.3 and 0.7).
    for (double bx : {-0.3, 0.0, 0.3}) {
        WorldState o = s;
        o.block1_x = bx;
        o.block2_x = bx;
        const WorldState n = step(o, {0, 0, 1});
        EXPECT_EQ(n.drawer, o.drawer);
        EXPECT_EQ(n.faucet, o.faucet);
        EXPECT_EQ(n.block1_x, o.block1_x);
        EXPECT_EQ(n.block2_x, o.block2_x);
    }
}

TEST(Step, ActionsClippedAndRangesKept) {
    Rng rng(8);
    WorldState s;
    s.drawer = 0.5;
    for (int i = 0; i < 5000; ++i) {
        const Action a{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
        s = step(s, a);
        ASSERT_TRUE(s.in_range());
    }
    const Action c = Action::clipped(2.0, -5.0, 0.5);
    EXPECT_EQ(c, (Action{1.0, -1.0, 0.5}));
}

TEST(Step, NearestZoneWinsAndTiePrefersEarlierObject) {
    WorldState s;
    s.block1_x = 0.0;
    s.block2_x = 0.0;
    s.effector_x = 0.0;
    s.effector_y = 0.5;  // equidistant (0.2) from both block rows: outside radius
    EXPECT_EQ(step(s, {0, 0, 1}), s);
    s.effector_y = 0.42;  // block1 zone only (0.12 vs 0.28)
    EXPECT_NEAR(step(s, {0, 0, 1}).block1_x, 0.2, 1e-15);
}

TEST(SubtaskDone, Boundaries) {
    WorldState s;
    s.drawer = 1.0;
    EXPECT_TRUE(subtask_done(s, Subtask::open_drawer));
    s.drawer = 0.9;
    EXPECT_TRUE(subtask_done(s, Subtask::open_drawer));
    s.faucet = -0.79;
    EXPECT_FALSE(subtask_done(s, Subtask::faucet_left));
    s.faucet = -0.8;
    EXPECT_TRUE(subtask_done(s, Subtask::faucet_left));
}

TEST(Expert, Examples) {
    WorldState s;
    s.effector_x = -0.9;
    s.effector_y = -0.5;
    const Instruction faucet = make_instruction(static_cast<int>(Subtask::faucet_right), Split::seen);
    EXPECT_EQ(expert_action(s, faucet, {false}).dx, 1.0);

    WorldState h;
    h.effector_x = -0.5;
    h.effector_y = -0.5;
    h.drawer = 0.3;
    const Instruction open = make_instruction(static_cast<int>(Subtask::open_drawer), Split::seen);
    const Action a = expert_action(h, open, {false});
    EXPECT_EQ(a, (Action{0.0, 0.0, 1.0}));

    EXPECT_THROW(expert_action(h, open, {true}), NoPendingSubtask);
}

TEST(Expert, NoiselessSolvesEverySingleTemplateWithin40Steps) {
    for (int id = 0; id < kSubtaskCount; ++id) {
        const Instruction ins = make_instruction(id, Split::seen);
        Rng rng(1000 + static_cast<std::uint64_t>(id));
        for (int e = 0; e < 1000; ++e) {
            WorldState s = reset(rng, ins);
            std::vector<bool> latched(1, false);
            for (std::size_t t = 0; t < kHorizonPerSubtask && !all_latched(latched); ++t) {
                s = step(s, expert_action(s, ins, latched));
                update_latches(s, ins.subtasks, latched);
            }
            ASSERT_TRUE(all_latched(latched)) << "template " << id << " episode " << e;
        }
    }
}

TEST(Latches, StayLatched) {
    const Instruction ins = make_instruction(template_id_of(std::array{Subtask::open_drawer, Subtask::faucet_left}),
                                             Split::seen);
    std::vector<bool> latched{false, false};
    WorldState s;
    s.drawer = 0.95;
    update_latches(s, ins.subtasks, latched);
    EXPECT_EQ(latched, (std::vector<bool>{true, false}));
    s.drawer = 0.2;
    update_latches(s, ins.subtasks, latched);
    EXPECT_TRUE(latched[0]);
}

TEST(Dataset, DefaultConfigAllSucceedAndReplay) {
    const Dataset ds = generate_dataset({2000, 0, Split::seen, true});
    ASSERT_EQ(ds.trajectories.size(), 2000u);
    EXPECT_LE(ds.rejected, 20u);
    for (const auto& tr : ds.trajectories) {
        ASSERT_EQ(tr.states.size(), tr.actions.size() + 1);
        ASSERT_LE(tr.length(), kMaxEpisodeLength);
        std::vector<bool> latched(tr.instruction.subtasks.size(), false);
        for (std::size_t i = 0; i < tr.length(); ++i) {
            ASSERT_EQ(step(tr.states[i], tr.actions[i]), tr.states[i + 1]);
            update_latches(tr.states[i + 1], tr.instruction.subtasks, latched);
        }
        ASSERT_TRUE(all_latched(latched));
    }
}

TEST(Dataset, FileRoundTripAndByteDeterminism) {
    const std::string dir = ::testing::TempDir();
    const Dataset a = generate_dataset({1, 17, Split::seen, true});
    const Dataset b = generate_dataset({1, 17, Split::seen, true});
    write_dataset(dir + "/a.jsonl", a);
    write_dataset(dir + "/b.jsonl", b);
    EXPECT_EQ(slurp(dir + "/a.jsonl"), slurp(dir + "/b.jsonl"));

    const Dataset c = generate_dataset({25, 3, Split::unseen_noun, true});
    write_dataset(dir + "/c.jsonl", c);
    const Dataset back = read_dataset(dir + "/c.jsonl");
    ASSERT_EQ(back.trajectories.size(), 25u);
    EXPECT_EQ(back.seed, 3u);
    for (std::size_t i = 0; i < 25; ++i) {
        EXPECT_EQ(back.trajectories[i].instruction, c.trajectories[i].instruction);
        EXPECT_EQ(back.trajectories[i].states, c.trajectories[i].states);  // 17 digits round-trip exactly
        EXPECT_EQ(back.trajectories[i].actions, c.trajectories[i].actions);
    }
    const std::string text = slurp(dir + "/c.jsonl");
    EXPECT_EQ(text.rfind("{\"format\":\"skillgrid-v1\",\"seed\":3,\"n\":25}\n", 0), 0u);
}

TEST(Dataset, ErrorsNamePath) {
    EXPECT_THROW(read_dataset("/nonexistent/dir/x.jsonl"), DatasetError);
    EXPECT_THROW(write_dataset("/nonexistent/dir/x.jsonl", Dataset{}), DatasetError);
    const std::string path = ::testing::TempDir() + "/bad.jsonl";
    std::ofstream(path) << "{\"format\":\"skillgrid-v1\",\"seed\":0,\"n\":1}\n{\"template_id\":\n";
    try {
        (void)read_dataset(path);
        FAIL();
    } catch (const DatasetError& e) {
        EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
    }
}
