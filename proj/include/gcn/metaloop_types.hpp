#pragma once

#include "gcn/corpus.hpp"

namespace gcn {

// Outer-loop schedule. epsilon is the stopping slack: iteration halts once the
// learner's validation reward reaches 1 - epsilon, so epsilon = 1 disables the
// loop entirely and small epsilon demands near-perfect imitation.
struct MetaConfig {
    double epsilon = 0.05;        // in (0, 1]
    int max_meta_iterations = 10;  // 0 means generate-only, no updates
    int synth_multiplier_inner = 1;   // synthetic size per iteration, x seed size
    int synth_multiplier_final = 5;   // synthetic size for the final learner
    int learner_epochs = 3;
    int runs_to_average = 3;
    Mode mode = Mode::knowledge_grounded;

    void validate() const;
};

}  // namespace gcn
