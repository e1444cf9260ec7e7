#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gcn/corpus.hpp"

namespace gcn {

/// Sparse vector over term indices, sorted by index, L2-normalized (or all
/// zero when nothing matched).
using SparseVec = std::vector<std::pair<int, double>>;

double sparse_dot(const SparseVec& a, const SparseVec& b);

struct ScoredPiece {
    KnowledgePiece piece;
    double score = 0.0;
};

/// Term-frequency / inverse-document-frequency index over knowledge pieces.
/// idf(term) = ln((1 + D) / (1 + df)) + 1, entries tf * idf, L2-normalized.
class TfidfIndex {
public:
    static TfidfIndex build(std::span<const KnowledgePiece> pieces);

    /// Out-of-index terms are dropped; the zero vector is returned when no
    /// term matches.
    SparseVec vectorize(std::span<const std::string> tokens) const;

    /// Pieces sorted by cosine to the concatenated context, descending; ties
    /// broken by document order. Returns min(m, D) entries.
    std::vector<ScoredPiece> top_m(std::span<const Utterance> context, int m) const;
    std::vector<ScoredPiece> top_m_tokens(std::span<const std::string> tokens, int m) const;

    std::size_t num_docs() const { return pieces_.size(); }
    std::size_t num_terms() const { return idf_.size(); }
    const std::vector<KnowledgePiece>& pieces() const { return pieces_; }
    const SparseVec& doc_vector(std::size_t i) const { return doc_vectors_[i]; }
    double idf(const std::string& term) const;

private:
    std::unordered_map<std::string, int> term_index_;
    std::vector<double> idf_;
    std::vector<SparseVec> doc_vectors_;
    std::vector<KnowledgePiece> pieces_;
};

}  // namespace gcn
