#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "gcn/corpus.hpp"
#include "gcn/metaloop_types.hpp"
#include "gcn/model.hpp"
#include "gcn/ppo.hpp"
#include "gcn/reward.hpp"

namespace gcn {

// Everything a pipeline run needs; one file, flag overrides on top.
struct RunConfig {
    std::filesystem::path corpus_path;
    Mode mode = Mode::knowledge_grounded;
    SplitSpec split;        // rng_seed field is ignored; derived from rng_seed below
    int context_turns = 2;  // turns of context per datapoint
    int top_m = 3;          // knowledge pieces retrieved per context

    LMConfig generator;
    LMConfig learner;
    SampleSpec sampling;  // synthetic-response decoding
    RewardWeights reward;
    PPOConfig ppo;
    MetaConfig meta;
    TrainConfig generator_train;  // lambda_kf1 stays 0 for the generator
    TrainConfig learner_train;

    std::filesystem::path output_dir = "runs";
    uint64_t rng_seed = 0;
    // Replaces the per-rollout metric reward with the iteration's measured
    // learner performance, broadcast to every trajectory.
    bool broadcast_meta_reward = false;

    void validate() const;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig defaults(Mode mode);

    static RunConfig load(const std::filesystem::path& file);
    void save(const std::filesystem::path& file) const;

    /// "ppo.learning_rate=3e-4" style dotted-path override on the json form.
    static void apply_override(nlohmann::json& doc, const std::string& assignment);
};

}  // namespace gcn
