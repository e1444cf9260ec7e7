#include "gcn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>

namespace gcn {

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngram_counts(std::span<const std::string> tokens, int n) {
    NgramCounts counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    return counts;
}

struct Precision {
    double num = 0.0;  // clipped matches, possibly fractional after smoothing
    double den = 1.0;  // total candidate n-grams, floored at 1
    double value() const { return num / den; }
};

Precision modified_precision(std::span<const std::string> candidate,
                             const std::vector<TokenSeq>& references, int n) {
    NgramCounts cand = ngram_counts(candidate, n);
    long total = 0;
    for (const auto& [ng, c] : cand) total += c;

    NgramCounts max_ref;
    for (const auto& ref : references)
        for (const auto& [ng, c] : ngram_counts(ref, n)) {
            auto& slot = max_ref[ng];
            slot = std::max(slot, c);
        }

    long clipped = 0;
    for (const auto& [ng, c] : cand) {
        auto it = max_ref.find(ng);
        if (it != max_ref.end()) clipped += std::min(c, it->second);
    }

    Precision p;
    p.num = static_cast<double>(clipped);
    p.den = static_cast<double>(std::max<long>(1, total));
    return p;
}

std::size_t closest_ref_length(std::size_t cand_len, const std::vector<TokenSeq>& references) {
    std::size_t best = references.front().size();
    auto diff = [&](std::size_t r) {
        return r > cand_len ? r - cand_len : cand_len - r;
    };
    for (const auto& ref : references) {
        std::size_t r = ref.size();
        if (diff(r) < diff(best) || (diff(r) == diff(best) && r < best)) best = r;
    }
    return best;
}

double brevity_penalty(std::size_t cand_len, std::size_t ref_len) {
    if (cand_len >= ref_len) return 1.0;
    return std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
}

// Inverse-count smoothing: each zero-match order i gets the fractional match
// count ln(cand_len) / (2^incvnt * k), incvnt growing per zero order.
void smooth_inverse_counts(std::vector<Precision>& p_n, std::size_t cand_len) {
    constexpr double k = 5.0;
    int incvnt = 1;
    for (auto& p : p_n) {
        if (p.num == 0.0 && cand_len > 1) {
            p.num = std::log(static_cast<double>(cand_len)) / (std::pow(2.0, incvnt) * k);
            ++incvnt;
        }
    }
}

// Neighbour averaging over matched counts: each order's count becomes the
// mean of the previous smoothed count, its own, and the next order's raw
// count; seeded with m_1 + 1, extended by the raw (max_n + 1)-gram count, and
// divided by the original denominators only at the end. Averaging counts
// rather than precision ratios keeps a perfect match at exactly 1.0.
std::vector<double> smooth_neighbour_average(const std::vector<Precision>& p_n,
                                             Precision p_next) {
    std::vector<double> counts;
    for (const auto& p : p_n) counts.push_back(p.num);
    counts.push_back(p_next.num);

    std::vector<double> out(p_n.size());
    double prev = counts[0] + 1.0;
    for (std::size_t i = 0; i < p_n.size(); ++i) {
        double cur = (prev + counts[i] + counts[i + 1]) / 3.0;
        out[i] = cur / p_n[i].den;
        prev = cur;
    }
    return out;
}

}  // namespace

double bleu(std::span<const std::string> candidate, const std::vector<TokenSeq>& references,
            int max_n, BleuSmoothing smoothing) {
    if (references.empty()) throw DataError("bleu requires at least one reference");
    if (max_n < 1) throw ConfigError("bleu max_n must be >= 1");
    if (candidate.empty()) return 0.0;

    std::vector<Precision> p_n;
    for (int n = 1; n <= max_n; ++n) p_n.push_back(modified_precision(candidate, references, n));

    const std::size_t cand_len = candidate.size();
    const double bp = brevity_penalty(cand_len, closest_ref_length(cand_len, references));

    std::vector<double> values;
    if (smoothing == BleuSmoothing::method7) {
        smooth_inverse_counts(p_n, cand_len);
        values = smooth_neighbour_average(p_n, modified_precision(candidate, references, max_n + 1));
    } else {
        for (const auto& p : p_n) values.push_back(p.value());
    }

    double log_sum = 0.0;
    for (double v : values) {
        if (v <= 0.0) return 0.0;
        log_sum += std::log(v) / static_cast<double>(max_n);
    }
    return bp * std::exp(log_sum);
}

namespace {

double f1_from_overlap(double overlap, double cand_total, double ref_total) {
    if (cand_total <= 0.0 || ref_total <= 0.0) return 0.0;
    double p = overlap / cand_total;
    double r = overlap / ref_total;
    if (p + r <= 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

double rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n) {
    NgramCounts cand = ngram_counts(candidate, n);
    NgramCounts ref = ngram_counts(reference, n);
    long cand_total = 0, ref_total = 0, overlap = 0;
    for (const auto& [ng, c] : cand) cand_total += c;
    for (const auto& [ng, c] : ref) ref_total += c;
    for (const auto& [ng, c] : cand) {
        auto it = ref.find(ng);
        if (it != ref.end()) overlap += std::min(c, it->second);
    }
    return f1_from_overlap(static_cast<double>(overlap), static_cast<double>(cand_total),
                           static_cast<double>(ref_total));
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

double rouge(std::span<const std::string> candidate, std::span<const std::string> reference,
             RougeVariant variant) {
    switch (variant) {
        case RougeVariant::r1:
            return rouge_n(candidate, reference, 1);
        case RougeVariant::r2:
            return rouge_n(candidate, reference, 2);
        case RougeVariant::rL: {
            auto lcs = static_cast<double>(lcs_length(candidate, reference));
            return f1_from_overlap(lcs, static_cast<double>(candidate.size()),
                                   static_cast<double>(reference.size()));
        }
    }
    return 0.0;
}

double kf1(std::span<const std::string> utterance, std::span<const std::string> knowledge) {
    if (utterance.empty() || knowledge.empty()) return 0.0;
    std::map<std::string, int> avail;
    for (const auto& t : knowledge) ++avail[t];
    long overlap = 0;
    for (const auto& t : utterance) {
        auto it = avail.find(t);
        if (it != avail.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    return f1_from_overlap(static_cast<double>(overlap), static_cast<double>(utterance.size()),
                           static_cast<double>(knowledge.size()));
}

double kf1_multi(std::span<const std::string> utterance, std::span<const TokenSeq> pieces) {
    double best = 0.0;
    for (const auto& p : pieces) best = std::max(best, kf1(utterance, p));
    return best;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0;
    std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) dot += a[i] * b[i];
    return std::clamp(dot, 0.0, 1.0);
}

double greedy_side(std::span<const std::string> from, std::span<const std::string> to,
                   const EmbeddingFn& embedding) {
    double sum = 0.0;
    for (const auto& ft : from) {
        auto fv = embedding(ft);
        double best = 0.0;
        for (const auto& tt : to) best = std::max(best, cosine(fv, embedding(tt)));
        sum += best;
    }
    return sum / static_cast<double>(from.size());
}

}  // namespace

double embed_score(std::span<const std::string> candidate, std::span<const std::string> reference,
                   const EmbeddingFn& embedding) {
    if (candidate.empty() || reference.empty()) return 0.0;
    double p = greedy_side(candidate, reference, embedding);
    double r = greedy_side(reference, candidate, embedding);
    if (p + r <= 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

EmbeddingFn one_hot_embedding() {
    struct Registry {
        std::mutex mu;
        std::map<std::string, std::size_t> index;
    };
    auto reg = std::make_shared<Registry>();
    // First-seen tokens claim successive dimensions; dot products over the
    // shared prefix are then 1 for equal tokens and 0 otherwise.
    return [reg](const std::string& token) {
        std::lock_guard<std::mutex> lock(reg->mu);
        auto [it, inserted] = reg->index.try_emplace(token, reg->index.size());
        std::vector<double> v(it->second + 1, 0.0);
        v[it->second] = 1.0;
        return v;
    };
}

double oov_rate(std::span<const DataPoint> generated, const Vocabulary& seed_vocab) {
    long total = 0, novel = 0;
    for (const auto& dp : generated) {
        for (const auto& t : dp.response.tokens) {
            if (is_reserved_marker(t)) continue;
            ++total;
            if (!seed_vocab.contains(t)) ++novel;
        }
    }
    if (total == 0) throw DataError("oov_rate over zero generated tokens");
    return static_cast<double>(novel) / static_cast<double>(total);
}

std::map<std::string, double> MetricReport::to_flat() const {
    std::map<std::string, double> out;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) out[key] = *v;
    };
    put("bleu1", bleu1);
    put("bleu4", bleu4);
    put("rouge1", rouge1);
    put("rouge2", rouge2);
    put("rougeL", rougeL);
    put("kf1", kf1);
    put("kf1_gold", kf1_gold);
    put("embed_score", embed_score);
    put("perplexity", perplexity);
    put("oov_rate", oov_rate);
    return out;
}

}  // namespace gcn
