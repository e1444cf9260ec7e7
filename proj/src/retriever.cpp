#include "gcn/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace gcn {

double sparse_dot(const SparseVec& a, const SparseVec& b) {
    double dot = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i].first < b[j].first)
            ++i;
        else if (a[i].first > b[j].first)
            ++j;
        else
            dot += a[i++].second * b[j++].second;
    }
    return dot;
}

namespace {

void l2_normalize(SparseVec& v) {
    double sq = 0.0;
    for (auto& [idx, w] : v) sq += w * w;
    if (sq <= 0.0) return;  // zero vector stays zero
    double inv = 1.0 / std::sqrt(sq);
    for (auto& [idx, w] : v) w *= inv;
}

}  // namespace

TfidfIndex TfidfIndex::build(std::span<const KnowledgePiece> pieces) {
    if (pieces.empty()) throw ConfigError("cannot build retrieval index from zero knowledge pieces");

    TfidfIndex index;
    index.pieces_.assign(pieces.begin(), pieces.end());

    // Term indices in first-seen order over documents, for determinism.
    std::vector<int> df;
    for (const auto& p : index.pieces_) {
        std::map<std::string, int> seen;
        for (const auto& t : p.tokens) ++seen[t];
        for (const auto& [term, n] : seen) {
            auto [it, inserted] = index.term_index_.try_emplace(term, static_cast<int>(df.size()));
            if (inserted)
                df.push_back(1);
            else
                ++df[static_cast<std::size_t>(it->second)];
        }
    }

    const double d = static_cast<double>(index.pieces_.size());
    index.idf_.resize(df.size());
    for (std::size_t i = 0; i < df.size(); ++i)
        index.idf_[i] = std::log((1.0 + d) / (1.0 + static_cast<double>(df[i]))) + 1.0;

    for (const auto& p : index.pieces_) index.doc_vectors_.push_back(index.vectorize(p.tokens));
    return index;
}

SparseVec TfidfIndex::vectorize(std::span<const std::string> tokens) const {
    std::map<int, double> tf;
    for (const auto& t : tokens) {
        auto it = term_index_.find(t);
        if (it != term_index_.end()) tf[it->second] += 1.0;
    }
    SparseVec v;
    v.reserve(tf.size());
    for (const auto& [idx, count] : tf)
        v.emplace_back(idx, count * idf_[static_cast<std::size_t>(idx)]);
    l2_normalize(v);
    return v;
}

double TfidfIndex::idf(const std::string& term) const {
    auto it = term_index_.find(term);
    if (it == term_index_.end()) throw DataError("term not in index: " + term);
    return idf_[static_cast<std::size_t>(it->second)];
}

std::vector<ScoredPiece> TfidfIndex::top_m_tokens(std::span<const std::string> tokens, int m) const {
    if (m < 1) throw ConfigError("top_m requires m >= 1");
    SparseVec query = vectorize(tokens);

    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(pieces_.size());
    for (std::size_t i = 0; i < pieces_.size(); ++i)
        scored.emplace_back(sparse_dot(query, doc_vectors_[i]), i);
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(m), pieces_.size());
    std::vector<ScoredPiece> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i)
        out.push_back({pieces_[scored[i].second], scored[i].first});
    return out;
}

std::vector<ScoredPiece> TfidfIndex::top_m(std::span<const Utterance> context, int m) const {
    std::vector<std::string> tokens;
    for (const auto& u : context) tokens.insert(tokens.end(), u.tokens.begin(), u.tokens.end());
    return top_m_tokens(tokens, m);
}

}  // namespace gcn
