#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "gcn/common.hpp"
#include "gcn/corpus.hpp"
#include "gcn/metrics.hpp"
#include "gcn/model.hpp"

namespace gcn {

// Weighted mix of text metrics scoring generated responses; the same mix is
// the learner-performance signal of the meta loop.
struct RewardWeights {
    Mode mode = Mode::knowledge_grounded;
    std::map<std::string, double> weights;  // metric name -> weight

    static RewardWeights defaults(Mode mode);
    void validate() const;
};

struct ShapingConfig {
    double beta = 0.02;

    void validate() const;
};

struct RewardSample {
    TokenSeq response;
    std::vector<TokenSeq> references;  // at least one
    std::vector<TokenSeq> knowledge;   // may be empty without a kf1 weight
};

// sum(w * value) / sum(w); every weighted name must be present in values.
double weighted_mix(const std::map<std::string, double>& weights,
                    const std::map<std::string, double>& values);

// embedding is only consulted for an "embed_score" weight.
double raw_reward(const RewardSample& sample, const RewardWeights& weights,
                  const EmbeddingFn* embedding = nullptr);
double raw_reward(std::span<const RewardSample> batch, const RewardWeights& weights,
                  const EmbeddingFn* embedding = nullptr);

// R = raw - beta * (logp_g - logp_gref)
double shaped_reward(double raw, double logp_g, double logp_gref, const ShapingConfig& config);

// L2-normalized rows of the model's token-embedding table; unknown tokens map
// to the <unk> row. The returned function owns a copy and outlives the model.
EmbeddingFn make_embedding_from_model(const ConditionalLM& model);

// Greedy-decodes a response per datapoint and scores the batch against the
// human responses. Deterministic for a fixed learner and dataset.
double performance_meta(const ConditionalLM& learner, std::span<const DataPoint> d_val,
                        const RewardWeights& weights, const EmbeddingFn* embedding = nullptr,
                        int max_new_tokens = 24);

}  // namespace gcn
