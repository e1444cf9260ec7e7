#pragma once

#include <cstdint>

#include "gcn/corpus.hpp"

namespace gcn {

/// Template-grammar corpus for desk-scale experiments: a generated fact bank
/// plus dialogues that discuss 1..3 facts each, with grounded turns lexically
/// overlapping their fact so knowledge-F1 carries signal.
struct SynthCorpusSpec {
    int num_dialogues = 200;
    int fact_bank_size = 50;
    int min_facts_per_dialogue = 1;
    int max_facts_per_dialogue = 3;
    uint64_t rng_seed = 7;

    void validate() const;
};

Corpus generate_synthetic_corpus(const SynthCorpusSpec& spec);

/// Multiset-clipped fraction of `tokens` that also occur in `reference`.
double token_overlap_fraction(std::span<const std::string> tokens,
                              std::span<const std::string> reference);

}  // namespace gcn
