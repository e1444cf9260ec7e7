#include "gcn/reward.hpp"

#include <algorithm>
#include <cmath>

#include "model_internal.hpp"

namespace gcn {

namespace {

const std::map<std::string, bool>& known_metrics() {
    static const std::map<std::string, bool> names = {
        {"bleu1", true},  {"bleu4", true}, {"rouge1", true},      {"rouge2", true},
        {"rougeL", true}, {"kf1", true},   {"embed_score", true},
    };
    return names;
}

}  // namespace

RewardWeights RewardWeights::defaults(Mode mode) {
    RewardWeights w;
    w.mode = mode;
    if (mode == Mode::open_domain)
        w.weights = {{"bleu4", 0.1}, {"rougeL", 0.01}, {"embed_score", 0.95}};
    else
        w.weights = {{"bleu1", 0.75}, {"kf1", 0.25}};
    return w;
}

void RewardWeights::validate() const {
    if (weights.empty()) throw ConfigError("reward weights are empty");
    double positive = 0.0;
    for (const auto& [name, w] : weights) {
        if (!known_metrics().count(name)) throw ConfigError("unknown reward metric: " + name);
        if (!std::isfinite(w) || w < 0.0)
            throw ConfigError("reward weight for " + name + " must be a finite non-negative");
        positive += w;
    }
    if (positive <= 0.0) throw ConfigError("at least one reward weight must be positive");
}

void ShapingConfig::validate() const {
    if (!std::isfinite(beta) || beta < 0.0)
        throw ConfigError("shaping beta must be a finite non-negative");
}

double weighted_mix(const std::map<std::string, double>& weights,
                    const std::map<std::string, double>& values) {
    double num = 0.0, den = 0.0;
    for (const auto& [name, w] : weights) {
        auto it = values.find(name);
        if (it == values.end()) throw ConfigError("no value for reward metric: " + name);
        num += w * it->second;
        den += w;
    }
    if (den <= 0.0) throw ConfigError("reward weights sum to zero");
    return num / den;
}

namespace {

double best_over_references(const RewardSample& sample, RougeVariant variant) {
    double best = 0.0;
    for (const auto& ref : sample.references)
        best = std::max(best, rouge(sample.response, ref, variant));
    return best;
}

double metric_value(const std::string& name, const RewardSample& sample,
                    const EmbeddingFn* embedding) {
    if (sample.references.empty()) throw DataError("reward sample has no reference");
    if (name == "bleu1") return bleu(sample.response, sample.references, 1, BleuSmoothing::method7);
    if (name == "bleu4") return bleu(sample.response, sample.references, 4, BleuSmoothing::method7);
    if (name == "rouge1") return best_over_references(sample, RougeVariant::r1);
    if (name == "rouge2") return best_over_references(sample, RougeVariant::r2);
    if (name == "rougeL") return best_over_references(sample, RougeVariant::rL);
    if (name == "kf1") return kf1_multi(sample.response, sample.knowledge);
    if (name == "embed_score") {
        if (!embedding) throw ConfigError("embed_score weight requires an embedding");
        double best = 0.0;
        for (const auto& ref : sample.references)
            best = std::max(best, embed_score(sample.response, ref, *embedding));
        return best;
    }
    throw ConfigError("unknown reward metric: " + name);
}

}  // namespace

double raw_reward(const RewardSample& sample, const RewardWeights& weights,
                  const EmbeddingFn* embedding) {
    weights.validate();
    std::map<std::string, double> values;
    for (const auto& [name, w] : weights.weights)
        values[name] = metric_value(name, sample, embedding);
    return weighted_mix(weights.weights, values);
}

double raw_reward(std::span<const RewardSample> batch, const RewardWeights& weights,
                  const EmbeddingFn* embedding) {
    if (batch.empty()) throw DataError("raw_reward over an empty batch");
    double sum = 0.0;
    for (const auto& sample : batch) sum += raw_reward(sample, weights, embedding);
    return sum / static_cast<double>(batch.size());
}

double shaped_reward(double raw, double logp_g, double logp_gref, const ShapingConfig& config) {
    config.validate();
    if (!std::isfinite(raw)) throw DataError("shaped_reward: raw reward is not finite");
    if (!std::isfinite(logp_g) || !std::isfinite(logp_gref))
        throw DataError("shaped_reward: log-probabilities are not finite");
    return raw - config.beta * (logp_g - logp_gref);
}

EmbeddingFn make_embedding_from_model(const ConditionalLM& model) {
    const LMConfig& cfg = model.config();
    const detail::Tensor tok = cfg.architecture == Architecture::self_attention
                                   ? detail::TfLayout::make(cfg).tok
                                   : detail::GruLayout::make(cfg).tok;
    const int E = cfg.embed_dim;

    struct Table {
        Vocabulary vocab;
        std::vector<double> rows;  // V x E, L2-normalized
        int dim;
    };
    auto table = std::make_shared<Table>();
    table->vocab = model.vocab();
    table->dim = E;
    table->rows.assign(tok.size(), 0.0);
    for (int v = 0; v < cfg.vocab_size; ++v) {
        const double* src = model.params().data() + tok.off + static_cast<std::size_t>(v) * E;
        double norm2 = 0.0;
        for (int j = 0; j < E; ++j) norm2 += src[j] * src[j];
        const double inv = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
        double* dst = table->rows.data() + static_cast<std::size_t>(v) * E;
        for (int j = 0; j < E; ++j) dst[j] = src[j] * inv;
    }

    return [table](const std::string& token) {
        const int id = table->vocab.id_of(token);
        const double* row = table->rows.data() + static_cast<std::size_t>(id) * table->dim;
        return std::vector<double>(row, row + table->dim);
    };
}

double performance_meta(const ConditionalLM& learner, std::span<const DataPoint> d_val,
                        const RewardWeights& weights, const EmbeddingFn* embedding,
                        int max_new_tokens) {
    if (d_val.empty()) throw DataError("performance_meta over an empty validation set");
    if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
    const int budget = std::max(1, learner.config().max_seq_len - max_new_tokens);

    std::vector<RewardSample> batch;
    batch.reserve(d_val.size());
    for (const DataPoint& dp : d_val) {
        auto input = encode_input(dp.context, dp.knowledge, learner.vocab(), budget);
        auto out = learner.generate(input, SampleSpec::greedy_spec(max_new_tokens));
        RewardSample sample;
        sample.response = decode_tokens(learner.vocab(), out.tokens);
        sample.references.push_back(dp.response.tokens);
        for (const auto& piece : dp.knowledge) sample.knowledge.push_back(piece.tokens);
        batch.push_back(std::move(sample));
    }
    return raw_reward(batch, weights, embedding);
}

}  // namespace gcn
