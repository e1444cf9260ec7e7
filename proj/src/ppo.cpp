#include "gcn/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace gcn {

void PPOConfig::validate() const {
    if (clip_epsilon <= 0.0 || clip_epsilon >= 1.0)
        throw ConfigError("clip_epsilon must be in (0,1)");
    if (epochs_per_batch < 1 || minibatch_size < 1 || rollouts_per_update < 1)
        throw ConfigError("ppo counts must be positive");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (!std::isfinite(beta) || beta < 0.0) throw ConfigError("beta must be finite non-negative");
    if (kl_warn_nats <= 0.0) throw ConfigError("kl_warn_nats must be > 0");
}

RolloutRewardFn make_metric_reward_fn(RewardWeights weights, EmbeddingFn embedding) {
    weights.validate();
    auto embed = std::make_shared<EmbeddingFn>(std::move(embedding));
    return [weights, embed](const DataPoint& dp, const TokenSeq& response) {
        RewardSample sample;
        sample.response = response;
        sample.references.push_back(dp.response.tokens);
        for (const auto& piece : dp.knowledge) sample.knowledge.push_back(piece.tokens);
        return raw_reward(sample, weights, *embed ? embed.get() : nullptr);
    };
}

std::vector<Trajectory> collect_rollouts(const ConditionalLM& g, const ConditionalLM& g_ref,
                                         std::span<const DataPoint> contexts,
                                         const SampleSpec& spec, const RolloutRewardFn& reward_fn,
                                         const ShapingConfig& shaping, uint64_t rng_seed) {
    if (contexts.empty()) throw DataError("collect_rollouts over an empty context batch");
    if (g.vocab().hash() != g_ref.vocab().hash())
        throw DataError("generator and reference use different vocabularies");
    spec.validate();
    shaping.validate();

    const int budget = std::max(1, g.config().max_seq_len - spec.max_new_tokens);
    std::vector<Trajectory> out;
    out.reserve(contexts.size());
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        const DataPoint& dp = contexts[i];
        Trajectory traj;
        traj.input = encode_input(dp.context, dp.knowledge, g.vocab(), budget);

        SampleSpec per = spec;
        per.rng_seed = derive_seed(rng_seed, "rollout", i);
        traj.response = g.generate(traj.input, per).tokens;

        traj.behavior_logprobs = g.logprob_of(traj.input, traj.response);
        traj.ref_logprobs = g_ref.logprob_of(traj.input, traj.response);
        traj.raw = reward_fn(dp, decode_tokens(g.vocab(), traj.response));

        const double lp = std::accumulate(traj.behavior_logprobs.begin(),
                                          traj.behavior_logprobs.end(), 0.0);
        const double lp_ref =
            std::accumulate(traj.ref_logprobs.begin(), traj.ref_logprobs.end(), 0.0);
        traj.shaped = shaped_reward(traj.raw, lp, lp_ref, shaping);
        out.push_back(std::move(traj));
    }
    return out;
}

std::vector<std::vector<double>> compute_advantages(std::span<const Trajectory> trajectories) {
    if (trajectories.empty()) throw DataError("compute_advantages over an empty batch");
    const double n = static_cast<double>(trajectories.size());
    double mean = 0.0;
    for (const auto& t : trajectories) mean += t.shaped;
    mean /= n;
    double var = 0.0;
    for (const auto& t : trajectories) var += (t.shaped - mean) * (t.shaped - mean);
    const double std_dev = std::sqrt(var / n);

    std::vector<std::vector<double>> out;
    out.reserve(trajectories.size());
    for (const auto& t : trajectories) {
        const double a = (t.shaped - mean) / (std_dev + 1e-8);
        out.emplace_back(t.response.size(), a);
    }
    return out;
}

std::string PPOStats::log_line(int iteration) const {
    nlohmann::json line = {
        {"iteration", iteration},         {"mean_r", mean_r},
        {"mean_R", mean_R},               {"mean_kl", mean_kl},
        {"clip_fraction", clip_fraction},
    };
    if (kl_warning) line["kl_warning"] = true;
    return line.dump();
}

PPOStats ppo_update(ConditionalLM& g, std::span<const Trajectory> trajectories,
                    const std::vector<std::vector<double>>& advantages, const PPOConfig& config) {
    config.validate();
    if (trajectories.empty()) throw DataError("ppo_update over an empty batch");
    if (advantages.size() != trajectories.size())
        throw DataError("ppo_update advantage batch size mismatch");
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const auto& t = trajectories[i];
        if (t.response.size() != t.behavior_logprobs.size() ||
            t.response.size() != t.ref_logprobs.size() ||
            t.response.size() != advantages[i].size())
            throw DataError("ppo_update trajectory field lengths differ");
        if (t.response.empty()) throw DataError("ppo_update empty trajectory");
    }

    PPOStats stats;
    for (const auto& t : trajectories) {
        stats.mean_r += t.raw;
        stats.mean_R += t.shaped;
        double kl = 0.0;
        for (std::size_t j = 0; j < t.response.size(); ++j)
            kl += t.behavior_logprobs[j] - t.ref_logprobs[j];
        stats.mean_kl += kl;
    }
    const double n_traj = static_cast<double>(trajectories.size());
    stats.mean_r /= n_traj;
    stats.mean_R /= n_traj;
    stats.mean_kl /= n_traj;
    stats.kl_warning = stats.mean_kl > config.kl_warn_nats;

    AdamState adam(g.num_params());
    std::vector<double> grad(g.num_params(), 0.0);
    const double lo = 1.0 - config.clip_epsilon;
    const double hi = 1.0 + config.clip_epsilon;
    long clipped = 0, seen = 0;

    for (int epoch = 0; epoch < config.epochs_per_batch; ++epoch) {
        for (std::size_t start = 0; start < trajectories.size();
             start += static_cast<std::size_t>(config.minibatch_size)) {
            const std::size_t end =
                std::min(trajectories.size(), start + static_cast<std::size_t>(config.minibatch_size));
            std::size_t tokens = 0;
            for (std::size_t i = start; i < end; ++i) tokens += trajectories[i].response.size();

            std::fill(grad.begin(), grad.end(), 0.0);
            double surrogate = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const Trajectory& t = trajectories[i];
                auto now = g.logprob_of(t.input, t.response);
                std::vector<double> weights(t.response.size(), 0.0);
                for (std::size_t j = 0; j < t.response.size(); ++j) {
                    const double ratio = std::exp(now[j] - t.behavior_logprobs[j]);
                    const double a = advantages[i][j];
                    const double unclipped = ratio * a;
                    const double clipped_term = std::clamp(ratio, lo, hi) * a;
                    surrogate += std::min(unclipped, clipped_term);
                    ++seen;
                    if (ratio < lo || ratio > hi) ++clipped;
                    // gradient flows only where the unclipped branch is active
                    if (unclipped <= clipped_term)
                        weights[j] = a * ratio / static_cast<double>(tokens);
                }
                g.nll_backward(t.input, t.response, weights, grad, nullptr);
            }
            surrogate /= static_cast<double>(tokens);
            if (!std::isfinite(surrogate))
                throw TrainingDiverged("ppo surrogate diverged; stats so far: " +
                                       stats.log_line(-1));
            adam_step(g.params(), grad, adam, config.learning_rate, config.max_grad_norm);
        }
    }
    stats.clip_fraction = seen > 0 ? static_cast<double>(clipped) / static_cast<double>(seen) : 0.0;
    return stats;
}

}  // namespace gcn
