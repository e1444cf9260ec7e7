#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gcn/common.hpp"
#include "gcn/corpus.hpp"

namespace gcn {

using TokenSeq = std::vector<std::string>;

enum class BleuSmoothing { none, method7 };

// Geometric mean of modified n-gram precisions times brevity penalty.
// method7 composes inverse-count smoothing with neighbour averaging; the
// unsmoothed variant returns 0 whenever any order has zero matches.
double bleu(std::span<const std::string> candidate, const std::vector<TokenSeq>& references,
            int max_n, BleuSmoothing smoothing);

enum class RougeVariant { r1, r2, rL };

double rouge(std::span<const std::string> candidate, std::span<const std::string> reference,
             RougeVariant variant);

// Token-level F1 between an utterance and a knowledge piece, multiset-clipped.
double kf1(std::span<const std::string> utterance, std::span<const std::string> knowledge);

// Max over pieces; 0 for an empty piece list.
double kf1_multi(std::span<const std::string> utterance, std::span<const TokenSeq> pieces);

using EmbeddingFn = std::function<std::vector<double>(const std::string&)>;

// Greedy-matching F1: precision is the mean over candidate tokens of the best
// cosine against any reference token, recall the mirror image. Negative
// cosines are floored at 0 so the score stays in [0,1].
double embed_score(std::span<const std::string> candidate, std::span<const std::string> reference,
                   const EmbeddingFn& embedding);

// Assigns each distinct token its own basis direction, so cosine degenerates
// to exact token equality. Each returned function owns its token registry.
EmbeddingFn one_hot_embedding();

// Fraction of generated response tokens absent from the seed vocabulary,
// reserved markers excluded. Errors on zero countable tokens.
double oov_rate(std::span<const DataPoint> generated, const Vocabulary& seed_vocab);

// Mean of a per-datapoint metric over a dataset (sentence-level averaging).
template <typename Fn>
double corpus_level(std::span<const DataPoint> datapoints, Fn&& metric) {
    if (datapoints.empty()) throw DataError("corpus_level over empty dataset");
    double sum = 0.0;
    for (const auto& dp : datapoints) sum += metric(dp);
    return sum / static_cast<double>(datapoints.size());
}

struct MetricReport {
    std::optional<double> bleu1;
    std::optional<double> bleu4;
    std::optional<double> rouge1;
    std::optional<double> rouge2;
    std::optional<double> rougeL;
    std::optional<double> kf1;       // against retrieved knowledge
    std::optional<double> kf1_gold;  // against the dialogue's own referenced pieces
    std::optional<double> embed_score;
    std::optional<double> perplexity;
    std::optional<double> oov_rate;

    std::map<std::string, double> to_flat() const;
};

}  // namespace gcn
