#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gcn/common.hpp"
#include "gcn/corpus.hpp"

namespace gcn {

enum class Architecture { recurrent, self_attention };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

struct LMConfig {
    int vocab_size = 0;  // filled from the vocabulary at init
    int embed_dim = 64;
    int hidden_dim = 128;
    int num_layers = 2;
    int max_seq_len = 128;
    double dropout = 0.1;
    Architecture architecture = Architecture::self_attention;

    void validate() const;
};

enum class Strategy { greedy, top_k, nucleus };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct SampleSpec {
    Strategy strategy = Strategy::nucleus;
    int k = 0;
    double p = 0.9;
    double temperature = 1.0;
    int max_new_tokens = 24;
    uint64_t rng_seed = 0;

    void validate() const;

    static SampleSpec greedy_spec(int max_new_tokens);
};

struct GenerationOutput {
    std::vector<int> tokens;        // includes the final EOS when one was produced
    std::vector<double> logprobs;   // one per token; sampling-distribution for
                                    // top_k/nucleus, full-distribution for greedy
    bool ended_with_eos = false;
};

/// Token ids for "SEP_CTX ctx_1 ... SEP_CTX ctx_t SEP_KNW k_1 ... SEP_KNW k_m
/// SEP_RSP", unknown tokens mapped to UNK, truncated from the left to fit
/// max_len. The trailing SEP_RSP marker always survives truncation.
std::vector<int> encode_input(std::span<const Utterance> context,
                              std::span<const KnowledgePiece> knowledge,
                              const Vocabulary& vocab, int max_len);

/// Teacher-forcing pair: target is the response plus <eos>, capped to leave
/// room in the window; the input is left-truncated into the remaining budget.
struct EncodedDataPoint {
    std::vector<int> input;
    std::vector<int> target;
};
EncodedDataPoint encode_datapoint(const DataPoint& dp, const Vocabulary& vocab, int max_seq_len);

std::vector<int> to_ids(const Vocabulary& vocab, std::span<const std::string> tokens);

/// Ids back to token strings with reserved markers dropped.
std::vector<std::string> decode_tokens(const Vocabulary& vocab, std::span<const int> ids);

struct SampleStep {
    int id = 0;
    double logprob = 0.0;  // under the distribution actually sampled from
};

/// Strategy core, exposed for direct testing against hand-built logits.
/// Greedy consumes no randomness and reports the full-distribution
/// log-probability; top_k/nucleus report the truncated-renormalized one.
SampleStep sample_step(std::span<const double> logits, const SampleSpec& spec, Rng& rng);

struct Activations;  // per-architecture forward trace, defined internally

class ConditionalLM {
public:
    /// Parameters drawn deterministically from rng_seed; vocab_size is taken
    /// from the vocabulary.
    ConditionalLM(LMConfig config, Vocabulary vocab, uint64_t rng_seed);

    const LMConfig& config() const { return config_; }
    const Vocabulary& vocab() const { return vocab_; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::size_t num_params() const { return params_.size(); }

    /// Mean per-token negative log-likelihood of target given input,
    /// teacher-forced, PAD targets excluded. Errors on an empty target.
    double nll(std::span<const int> input, std::span<const int> target) const;

    /// Forward/backward over input ++ target: accumulates weight * d(sum of
    /// per-position CE)/dtheta into grad and returns the summed loss with the
    /// number of scored positions. dropout_rng null means eval mode.
    struct LossSum {
        double loss = 0.0;
        int tokens = 0;
    };
    LossSum nll_backward(std::span<const int> input, std::span<const int> target, double weight,
                         std::vector<double>& grad, Rng* dropout_rng) const;
    /// Per-target-token weights (policy-gradient style); sizes must match.
    LossSum nll_backward(std::span<const int> input, std::span<const int> target,
                         std::span<const double> token_weights, std::vector<double>& grad,
                         Rng* dropout_rng) const;

    /// Logits over the next token after the prefix (eval mode, no temperature).
    std::vector<double> next_logits(std::span<const int> prefix) const;

    /// Autoregressive decoding; stops at EOS, max_new_tokens, or the position
    /// limit. Deterministic in spec.rng_seed.
    GenerationOutput generate(std::span<const int> input, const SampleSpec& spec) const;

    /// Per-token log-probabilities of response given input under the full
    /// next-token distribution; their sum is the sequence log-probability.
    std::vector<double> logprob_of(std::span<const int> input,
                                   std::span<const int> response) const;

private:
    friend void save_checkpoint(const ConditionalLM& model, const std::filesystem::path& path);
    friend ConditionalLM load_checkpoint(const std::filesystem::path& path,
                                         const Vocabulary& vocab);

    LMConfig config_;
    Vocabulary vocab_;
    std::vector<double> params_;
};

/// Self-describing container: magic, JSON header (config, vocabulary hash,
/// parameter count), raw little-endian doubles. Round trip is bit-exact.
void save_checkpoint(const ConditionalLM& model, const std::filesystem::path& path);
ConditionalLM load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// Clips grad to max_norm (global L2) in place, then applies one adaptive
/// moment update. Returns the pre-clip gradient norm.
double adam_step(std::vector<double>& params, std::vector<double>& grad, AdamState& state,
                 double learning_rate, double max_norm);

struct TrainConfig {
    int epochs = 3;
    double learning_rate = 1e-3;
    double lambda_kf1 = 0.0;
    int batch_size = 8;
    double max_grad_norm = 1.0;
    int scst_max_new_tokens = 24;
    uint64_t rng_seed = 0;

    void validate() const;
};

struct TrainResult {
    std::vector<double> loss_curve;  // mean cross-entropy per epoch
};

/// Cross-entropy training with an optional self-critical knowledge-overlap
/// term: a sampled response's sequence log-likelihood is weighted by its
/// knowledge-F1 advantage over the greedy response. lambda_kf1 = 0 recovers
/// pure cross-entropy exactly, including the parameter trajectory.
TrainResult train_supervised(ConditionalLM& model, std::span<const DataPoint> datapoints,
                             const TrainConfig& cfg);

}  // namespace gcn
