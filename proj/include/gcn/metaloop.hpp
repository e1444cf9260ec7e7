#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcn/corpus.hpp"
#include "gcn/metrics.hpp"
#include "gcn/model.hpp"
#include "gcn/retriever.hpp"
#include "gcn/run_config.hpp"

namespace gcn {

enum class Condition { baseline, gcn_no_rl, gcn_rl };

std::string to_string(Condition c);
Condition condition_from_string(const std::string& s);

// One line of the per-run state log; the loop resumes from the last one.
struct MetaRunState {
    int iteration = 0;
    std::string checkpoint_id;  // generator snapshot that produced this iteration's data
    std::string synth_id;
    double performance_meta = 0.0;
    MetricReport learner_val;
    double wall_seconds = 0.0;
    bool failed = false;
    std::string error;

    nlohmann::json to_json() const;
    static MetaRunState from_json(const nlohmann::json& j);
};

/// Highest recorded performance among non-failed states, earliest on ties;
/// nullptr when no iteration succeeded. Pure, so selection can be re-run over
/// a persisted state log with the same result.
const MetaRunState* select_best_state(std::span<const MetaRunState> states);

struct SynthResult {
    std::vector<DataPoint> datapoints;
    int skipped = 0;
};

// Deterministic derivations shared by every run and condition under one
// config: splits, datapoints, vocabularies, and sized model configs.
struct PreparedData {
    Corpus corpus;
    Split splits;
    std::optional<TfidfIndex> retriever;
    std::vector<DataPoint> seed_dps, val_dps, test_dps;
    Vocabulary vocab;      // model vocabulary: seed datapoints (+ knowledge bank)
    Vocabulary oov_vocab;  // seed dialogue utterances only, for OOV reporting
    LMConfig gen_cfg, learner_cfg;
};

PreparedData prepare_data(const RunConfig& config);

/// Samples contexts from the seed set (without replacement while they last),
/// re-retrieves knowledge per context, and decodes responses. Responses that
/// decode to nothing are retried up to 3 times, then skipped; more than half
/// skipped raises TrainingDiverged.
SynthResult generate_synthetic(const ConditionalLM& g, std::span<const DataPoint> seed,
                               const TfidfIndex* retriever, int top_m, const SampleSpec& spec,
                               std::size_t size, uint64_t rng_seed);

/// Greedy-decodes each datapoint and reports response metrics plus teacher-
/// forced perplexity. kf1_gold resolves gold_knowledge_refs against the bank;
/// embed_score needs an embedding and is otherwise left unset, as is oov_rate
/// (a property of synthetic data, filled in by the pipeline).
MetricReport evaluate_model(const ConditionalLM& model, std::span<const DataPoint> datapoints,
                            Mode mode, const EmbeddingFn* embedding, int max_new_tokens,
                            std::span<const KnowledgePiece> bank);

struct FinalReport {
    std::map<std::string, double> mean;
    std::map<std::string, double> stddev;  // population std over runs
    std::vector<std::map<std::string, double>> runs;

    std::string to_text() const;  // "metric\tmean\tstd" lines, sorted by key
};

// Observation points, used by tests to interrupt a pipeline mid-flight.
struct Hooks {
    std::function<void(int run)> after_pretrain;
    std::function<void(int run, int iteration)> after_iteration;
    std::function<void(int run)> after_run;
};

/// Owns a run directory: splits the corpus, repeats the train/evaluate cycle
/// runs_to_average times under derived seeds, and aggregates the final test
/// metrics. Safe to re-invoke on a partial directory; finished work is reused.
class Pipeline {
public:
    Pipeline(RunConfig config, Condition condition, Hooks hooks = {});

    FinalReport run();

    const std::filesystem::path& dir() const { return dir_; }
    const RunConfig& config() const { return config_; }

private:
    std::map<std::string, double> run_once(int r);
    ConditionalLM pretrain(int r, uint64_t run_seed);
    std::map<std::string, double> run_rl(int r, uint64_t run_seed, const ConditionalLM& g_ref,
                                         const EmbeddingFn* embedding);
    std::map<std::string, double> finish_run(int r, uint64_t run_seed, const ConditionalLM& g_best,
                                             const EmbeddingFn* embedding);

    RunConfig config_;
    Condition condition_;
    Hooks hooks_;
    std::filesystem::path dir_;
    std::unique_ptr<DirLock> lock_;
    std::shared_ptr<PreparedData> data_;
};

/// One pipeline per swept value, each in its own subdirectory; returns a
/// tab-delimited table {value, ppl, kf1, bleu4, oov_rate}.
std::string run_ablation(const std::string& sweep, std::span<const double> values,
                         const RunConfig& config, Condition condition);

}  // namespace gcn
