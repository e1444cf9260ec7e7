#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <vector>

#include "gcn/common.hpp"
#include "gcn/corpus.hpp"
#include "gcn/model.hpp"
#include "gcn/ppo.hpp"
#include "gcn/reward.hpp"

using namespace gcn;

namespace {

LMConfig bandit_config() {
    LMConfig cfg;
    cfg.embed_dim = 8;
    cfg.hidden_dim = 12;
    cfg.num_layers = 1;
    cfg.max_seq_len = 16;
    cfg.dropout = 0.0;
    cfg.architecture = Architecture::self_attention;
    return cfg;
}

// Single-step task: emitting "x" pays 1, anything else 0.
struct Bandit {
    Vocabulary vocab = Vocabulary::from_ordered_tokens({"x", "y"});
    int x_id = vocab.id_of("x");
    std::vector<int> input = {kSepRsp};
    std::vector<DataPoint> contexts;
    RolloutRewardFn reward = [](const DataPoint&, const TokenSeq& response) {
        return response == TokenSeq{"x"} ? 1.0 : 0.0;
    };

    explicit Bandit(int n_contexts) {
        DataPoint dp;
        dp.response = Utterance::from_text(Speaker::B, "x");
        contexts.assign(static_cast<std::size_t>(n_contexts), dp);
    }

    SampleSpec spec() const {
        SampleSpec s;
        s.strategy = Strategy::nucleus;
        s.p = 1.0;
        s.max_new_tokens = 1;
        return s;
    }

    double p_preferred(const ConditionalLM& g) const {
        std::vector<int> resp = {x_id};
        return std::exp(g.logprob_of(input, resp)[0]);
    }
};

Trajectory make_traj(std::vector<int> response, double behavior, double ref, double shaped) {
    Trajectory t;
    t.input = {kSepRsp};
    t.response = std::move(response);
    t.behavior_logprobs.assign(t.response.size(), behavior);
    t.ref_logprobs.assign(t.response.size(), ref);
    t.shaped = shaped;
    return t;
}

}  // namespace

TEST_SUITE_BEGIN("ppo");

TEST_CASE("config validation") {
    PPOConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.clip_epsilon = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.clip_epsilon = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = PPOConfig{};
    cfg.epochs_per_batch = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = PPOConfig{};
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = PPOConfig{};
    cfg.beta = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = PPOConfig{};
    cfg.kl_warn_nats = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("rollouts store rewards, log-probs, and the shaped return") {
    Bandit bandit(6);
    ConditionalLM g(bandit_config(), bandit.vocab, 11);
    ConditionalLM g_ref(bandit_config(), bandit.vocab, 11);  // identical policy

    ShapingConfig shaping;
    auto rollouts =
        collect_rollouts(g, g_ref, bandit.contexts, bandit.spec(), bandit.reward, shaping, 5);
    REQUIRE(rollouts.size() == 6);
    for (const auto& t : rollouts) {
        CHECK(t.response.size() == 1);
        CHECK(t.behavior_logprobs.size() == t.response.size());
        CHECK(t.ref_logprobs.size() == t.response.size());
        CHECK((t.raw == 0.0 || t.raw == 1.0));
        // same policy on both sides: the KL term vanishes exactly
        CHECK(t.shaped == t.raw);
        // stored behavior log-probs are full-distribution scores
        auto again = g.logprob_of(t.input, t.response);
        CHECK(t.behavior_logprobs[0] == again[0]);
    }

    SUBCASE("same seed replays the same batch") {
        auto replay =
            collect_rollouts(g, g_ref, bandit.contexts, bandit.spec(), bandit.reward, shaping, 5);
        for (std::size_t i = 0; i < rollouts.size(); ++i)
            CHECK(replay[i].response == rollouts[i].response);
        auto other =
            collect_rollouts(g, g_ref, bandit.contexts, bandit.spec(), bandit.reward, shaping, 6);
        bool any_differ = false;
        for (std::size_t i = 0; i < rollouts.size(); ++i)
            any_differ = any_differ || other[i].response != rollouts[i].response;
        CHECK(any_differ);
    }
    SUBCASE("greedy rollouts match scoring recomputation") {
        auto greedy = collect_rollouts(g, g_ref, bandit.contexts, SampleSpec::greedy_spec(4),
                                       bandit.reward, shaping, 5);
        for (const auto& t : greedy) {
            auto lp = g.logprob_of(t.input, t.response);
            for (std::size_t j = 0; j < lp.size(); ++j)
                CHECK(std::abs(lp[j] - t.behavior_logprobs[j]) < 1e-6);
        }
    }
    SUBCASE("empty batch and vocabulary mismatch are rejected") {
        CHECK_THROWS_AS(
            collect_rollouts(g, g_ref, {}, bandit.spec(), bandit.reward, shaping, 5), DataError);
        auto other_vocab = Vocabulary::from_ordered_tokens({"x", "y", "z"});
        ConditionalLM stranger(bandit_config(), other_vocab, 11);
        CHECK_THROWS_AS(collect_rollouts(g, stranger, bandit.contexts, bandit.spec(),
                                         bandit.reward, shaping, 5),
                        DataError);
    }
}

TEST_CASE("advantages broadcast the return and whiten across the batch") {
    std::vector<Trajectory> two = {make_traj({kEos, kEos}, -1.0, -1.0, 0.0),
                                   make_traj({kEos, kEos, kEos}, -1.0, -1.0, 1.0)};
    auto adv = compute_advantages(two);
    REQUIRE(adv.size() == 2);
    CHECK(adv[0].size() == 2);
    CHECK(adv[1].size() == 3);
    for (double a : adv[0]) CHECK(a == doctest::Approx(-1.0).epsilon(1e-6));
    for (double a : adv[1]) CHECK(a == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(adv[0][0] + adv[1][0]) < 1e-6);  // whitened mean ~ 0

    SUBCASE("equal returns zero out") {
        std::vector<Trajectory> flat = {make_traj({kEos}, -1, -1, 0.7),
                                        make_traj({kEos}, -1, -1, 0.7)};
        for (const auto& row : compute_advantages(flat))
            for (double a : row) CHECK(a == 0.0);
    }
    SUBCASE("a single trajectory zeroes out") {
        std::vector<Trajectory> one = {make_traj({kEos}, -1, -1, 0.4)};
        CHECK(compute_advantages(one)[0][0] == 0.0);
    }
    SUBCASE("empty batch is rejected") {
        CHECK_THROWS_AS(compute_advantages({}), DataError);
    }
}

TEST_CASE("zero advantages leave the parameters untouched") {
    Bandit bandit(4);
    ConditionalLM g(bandit_config(), bandit.vocab, 3);
    ConditionalLM g_ref(bandit_config(), bandit.vocab, 3);
    auto rollouts =
        collect_rollouts(g, g_ref, bandit.contexts, bandit.spec(), bandit.reward, ShapingConfig{}, 1);
    std::vector<std::vector<double>> zeros;
    for (const auto& t : rollouts) zeros.emplace_back(t.response.size(), 0.0);

    auto before = g.params();
    PPOConfig cfg;
    auto stats = ppo_update(g, rollouts, zeros, cfg);
    CHECK(g.params() == before);
    CHECK(stats.clip_fraction == 0.0);  // first pass ratios are exactly 1
}

TEST_CASE("mismatched advantage shapes are rejected") {
    Bandit bandit(2);
    ConditionalLM g(bandit_config(), bandit.vocab, 3);
    auto rollouts = collect_rollouts(g, g, bandit.contexts, bandit.spec(), bandit.reward,
                                     ShapingConfig{}, 1);
    std::vector<std::vector<double>> bad(1);
    CHECK_THROWS_AS(ppo_update(g, rollouts, bad, PPOConfig{}), DataError);
    std::vector<std::vector<double>> wrong_len(rollouts.size());
    for (auto& row : wrong_len) row.assign(5, 0.0);
    CHECK_THROWS_AS(ppo_update(g, rollouts, wrong_len, PPOConfig{}), DataError);
}

TEST_CASE("stats report kl against the reference and warn on blowup") {
    Bandit bandit(2);
    ConditionalLM g(bandit_config(), bandit.vocab, 3);
    std::vector<Trajectory> trajs = {make_traj({bandit.x_id}, -0.5, -20.5, 1.0),
                                     make_traj({bandit.x_id}, -0.5, -20.5, 1.0)};
    trajs[0].raw = trajs[1].raw = 1.0;
    std::vector<std::vector<double>> zeros = {{0.0}, {0.0}};
    PPOConfig cfg;
    auto stats = ppo_update(g, trajs, zeros, cfg);
    CHECK(stats.mean_kl == doctest::Approx(20.0).epsilon(1e-9));
    CHECK(stats.kl_warning);
    CHECK(stats.mean_r == 1.0);
    CHECK(stats.mean_R == 1.0);
    // stored behavior probs are far from the live policy, so ratios clip
    CHECK(stats.clip_fraction > 0.0);

    auto line = nlohmann::json::parse(stats.log_line(7));
    CHECK(line["iteration"] == 7);
    CHECK(line["mean_kl"].get<double>() == doctest::Approx(20.0));
    CHECK(line["kl_warning"] == true);
}

TEST_CASE("a positive advantage on one action raises its probability") {
    Bandit bandit(1);
    PPOConfig cfg;
    cfg.clip_epsilon = 0.999;  // effectively unclipped: vanilla policy gradient
    cfg.beta = 0.0;
    cfg.learning_rate = 1e-2;
    cfg.epochs_per_batch = 1;

    for (double direction : {1.0, -1.0}) {
        CAPTURE(direction);
        ConditionalLM g(bandit_config(), bandit.vocab, 19);
        double before = bandit.p_preferred(g);
        std::vector<int> resp = {bandit.x_id};
        auto lp = g.logprob_of(bandit.input, resp);
        std::vector<Trajectory> trajs = {make_traj(resp, lp[0], lp[0], direction)};
        std::vector<std::vector<double>> adv = {{direction}};
        ppo_update(g, trajs, adv, cfg);
        double after = bandit.p_preferred(g);
        if (direction > 0)
            CHECK(after > before);
        else
            CHECK(after < before);
    }
}

TEST_CASE("ppo learns the rewarded action on the bandit task") {
    Bandit bandit(16);
    ConditionalLM g(bandit_config(), bandit.vocab, 23);
    ConditionalLM g_ref(bandit_config(), bandit.vocab, 23);

    PPOConfig cfg;
    cfg.learning_rate = 5e-3;
    cfg.minibatch_size = 8;
    cfg.rollouts_per_update = 16;

    double p0 = bandit.p_preferred(g);
    for (int update = 0; update < 120; ++update) {
        auto rollouts = collect_rollouts(g, g_ref, bandit.contexts, bandit.spec(), bandit.reward,
                                         cfg.shaping(), derive_seed(900, "update", update));
        auto adv = compute_advantages(rollouts);
        ppo_update(g, rollouts, adv, cfg);
    }
    double p1 = bandit.p_preferred(g);
    CAPTURE(p0);
    CAPTURE(p1);
    CHECK(p1 > 0.9);
    CHECK(p1 > p0);
}

TEST_SUITE_END();
