#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gcn/common.hpp"
#include "gcn/corpus.hpp"
#include "gcn/model.hpp"
#include "gcn/reward.hpp"

namespace gcn {

struct PPOConfig {
    double clip_epsilon = 0.2;
    int epochs_per_batch = 4;
    int minibatch_size = 8;       // trajectories per optimizer step
    double learning_rate = 1e-4;
    double beta = 0.02;           // shaping strength, mirrors ShapingConfig
    int rollouts_per_update = 32;
    double max_grad_norm = 1.0;
    double kl_warn_nats = 10.0;

    void validate() const;
    ShapingConfig shaping() const { return ShapingConfig{beta}; }
};

struct Trajectory {
    std::vector<int> input;
    std::vector<int> response;              // sampled ids, closing <eos> included
    std::vector<double> behavior_logprobs;  // full-distribution scores at collection time
    std::vector<double> ref_logprobs;
    double raw = 0.0;     // metric reward r
    double shaped = 0.0;  // r - beta * (logp - ref_logp)
};

// Scores a decoded response for one rollout context.
using RolloutRewardFn = std::function<double(const DataPoint&, const TokenSeq&)>;

// The learner-mode metric mix against the datapoint's own reference response.
RolloutRewardFn make_metric_reward_fn(RewardWeights weights, EmbeddingFn embedding = {});

// One trajectory per context; sampling seeds derive from rng_seed by index.
std::vector<Trajectory> collect_rollouts(const ConditionalLM& g, const ConditionalLM& g_ref,
                                         std::span<const DataPoint> contexts,
                                         const SampleSpec& spec, const RolloutRewardFn& reward_fn,
                                         const ShapingConfig& shaping, uint64_t rng_seed);

// Terminal shaped reward broadcast over each trajectory's tokens, whitened
// across the batch (population std + 1e-8). Zero-variance batches give zeros.
std::vector<std::vector<double>> compute_advantages(std::span<const Trajectory> trajectories);

struct PPOStats {
    double mean_r = 0.0;
    double mean_R = 0.0;
    double mean_kl = 0.0;
    double clip_fraction = 0.0;
    bool kl_warning = false;

    std::string log_line(int iteration) const;
};

// Clipped-surrogate maximization over epochs_per_batch fixed-order passes.
PPOStats ppo_update(ConditionalLM& g, std::span<const Trajectory> trajectories,
                    const std::vector<std::vector<double>>& advantages, const PPOConfig& config);

}  // namespace gcn
