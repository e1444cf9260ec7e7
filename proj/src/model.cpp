#include "gcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "gcn/metrics.hpp"
#include "model_internal.hpp"

namespace gcn {

using detail::GruRun;
using detail::TfRun;

namespace detail {

namespace {

void fill_gauss(std::vector<double>& p, const Tensor& t, double scale, Rng& rng) {
    for (std::size_t i = 0; i < t.size(); ++i) p[t.off + i] = scale * rng.next_gauss();
}

void fill_const(std::vector<double>& p, const Tensor& t, double value) {
    std::fill_n(p.begin() + static_cast<std::ptrdiff_t>(t.off), t.size(), value);
}

// N(0, 1/sqrt(fan_in)); fan_in is the input dimension of the matmul
void fill_fan_in(std::vector<double>& p, const Tensor& t, Rng& rng) {
    fill_gauss(p, t, 1.0 / std::sqrt(static_cast<double>(t.rows)), rng);
}

}  // namespace

std::size_t param_count(const LMConfig& cfg) {
    return cfg.architecture == Architecture::self_attention ? TfLayout::make(cfg).total
                                                            : GruLayout::make(cfg).total;
}

void init_params(const LMConfig& cfg, std::vector<double>& params, Rng& rng) {
    if (cfg.architecture == Architecture::self_attention) {
        const TfLayout lay = TfLayout::make(cfg);
        fill_gauss(params, lay.tok, 0.1, rng);
        fill_gauss(params, lay.pos, 0.1, rng);
        for (const TfLayer& ly : lay.layers) {
            fill_const(params, ly.ln1_g, 1.0);
            fill_const(params, ly.ln1_b, 0.0);
            for (const Tensor* w : {&ly.wq, &ly.wk, &ly.wv, &ly.wo}) fill_fan_in(params, *w, rng);
            for (const Tensor* b : {&ly.bq, &ly.bk, &ly.bv, &ly.bo}) fill_const(params, *b, 0.0);
            fill_const(params, ly.ln2_g, 1.0);
            fill_const(params, ly.ln2_b, 0.0);
            fill_fan_in(params, ly.w1, rng);
            fill_const(params, ly.b1, 0.0);
            fill_fan_in(params, ly.w2, rng);
            fill_const(params, ly.b2, 0.0);
        }
        fill_const(params, lay.lnf_g, 1.0);
        fill_const(params, lay.lnf_b, 0.0);
        fill_gauss(params, lay.w_out, 0.02, rng);
        fill_const(params, lay.b_out, 0.0);
    } else {
        const GruLayout lay = GruLayout::make(cfg);
        fill_gauss(params, lay.tok, 0.1, rng);
        for (const GruLayer& ly : lay.layers) {
            for (const Tensor* w : {&ly.wz, &ly.uz, &ly.wr, &ly.ur, &ly.wh, &ly.uh})
                fill_fan_in(params, *w, rng);
            for (const Tensor* b : {&ly.bz, &ly.br, &ly.bh}) fill_const(params, *b, 0.0);
        }
        fill_gauss(params, lay.w_out, 0.02, rng);
        fill_const(params, lay.b_out, 0.0);
    }
}

}  // namespace detail

std::string to_string(Architecture a) {
    return a == Architecture::recurrent ? "recurrent" : "self_attention";
}

Architecture architecture_from_string(const std::string& s) {
    if (s == "recurrent") return Architecture::recurrent;
    if (s == "self_attention") return Architecture::self_attention;
    throw ConfigError("unknown architecture: " + s);
}

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::greedy: return "greedy";
        case Strategy::top_k: return "top_k";
        case Strategy::nucleus: return "nucleus";
    }
    return "";
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "greedy") return Strategy::greedy;
    if (s == "top_k") return Strategy::top_k;
    if (s == "nucleus") return Strategy::nucleus;
    throw ConfigError("unknown sampling strategy: " + s);
}

void LMConfig::validate() const {
    if (vocab_size <= 0) throw ConfigError("vocab_size must be positive");
    if (embed_dim <= 0 || hidden_dim <= 0 || num_layers <= 0 || max_seq_len <= 0)
        throw ConfigError("model dimensions must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
}

void SampleSpec::validate() const {
    if (strategy == Strategy::top_k && k < 1) throw ConfigError("top_k requires k >= 1");
    if (strategy == Strategy::nucleus && (p <= 0.0 || p > 1.0))
        throw ConfigError("nucleus requires p in (0,1]");
    if (temperature <= 0.0) throw ConfigError("temperature must be > 0");
    if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
}

SampleSpec SampleSpec::greedy_spec(int max_new_tokens) {
    SampleSpec s;
    s.strategy = Strategy::greedy;
    s.max_new_tokens = max_new_tokens;
    return s;
}

std::vector<int> to_ids(const Vocabulary& vocab, std::span<const std::string> tokens) {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(vocab.id_of(t));
    return ids;
}

std::vector<std::string> decode_tokens(const Vocabulary& vocab, std::span<const int> ids) {
    std::vector<std::string> out;
    for (int id : ids) {
        const std::string& t = vocab.token_of(id);
        if (!is_reserved_marker(t)) out.push_back(t);
    }
    return out;
}

std::vector<int> encode_input(std::span<const Utterance> context,
                              std::span<const KnowledgePiece> knowledge,
                              const Vocabulary& vocab, int max_len) {
    if (max_len < 1) throw ConfigError("encode_input needs room for at least one token");
    std::vector<int> ids;
    for (const auto& utt : context) {
        ids.push_back(kSepCtx);
        for (const auto& t : utt.tokens) ids.push_back(vocab.id_of(t));
    }
    for (const auto& piece : knowledge) {
        ids.push_back(kSepKnw);
        for (const auto& t : piece.tokens) ids.push_back(vocab.id_of(t));
    }
    ids.push_back(kSepRsp);
    if (static_cast<int>(ids.size()) > max_len)
        ids.erase(ids.begin(), ids.end() - max_len);
    return ids;
}

SampleStep sample_step(std::span<const double> logits, const SampleSpec& spec, Rng& rng) {
    const int V = static_cast<int>(logits.size());

    if (spec.strategy == Strategy::greedy) {
        int best = 0;
        for (int i = 1; i < V; ++i)
            if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(best)])
                best = i;
        double lse = detail::log_sum_exp(logits);
        return {best, logits[static_cast<std::size_t>(best)] - lse};
    }

    // Temperature-adjusted probabilities, sorted descending (ties by id).
    std::vector<double> scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / spec.temperature;
    const double lse = detail::log_sum_exp(scaled);
    std::vector<int> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double pa = scaled[static_cast<std::size_t>(a)],
                     pb = scaled[static_cast<std::size_t>(b)];
        return pa != pb ? pa > pb : a < b;
    });

    std::size_t keep = 0;
    if (spec.strategy == Strategy::top_k) {
        keep = static_cast<std::size_t>(std::min(spec.k, V));
    } else {
        double cum = 0.0;
        while (keep < order.size()) {
            cum += std::exp(scaled[static_cast<std::size_t>(order[keep])] - lse);
            ++keep;
            if (cum >= spec.p) break;
        }
    }

    double mass = 0.0;
    for (std::size_t i = 0; i < keep; ++i)
        mass += std::exp(scaled[static_cast<std::size_t>(order[i])] - lse);

    const double u = rng.next_unit() * mass;
    double cum = 0.0;
    std::size_t pick = keep - 1;
    for (std::size_t i = 0; i < keep; ++i) {
        cum += std::exp(scaled[static_cast<std::size_t>(order[i])] - lse);
        if (u < cum) {
            pick = i;
            break;
        }
    }
    const int id = order[pick];
    const double logprob = scaled[static_cast<std::size_t>(id)] - lse - std::log(mass);
    return {id, std::min(logprob, 0.0)};
}

// --- ConditionalLM ---------------------------------------------------------

ConditionalLM::ConditionalLM(LMConfig config, Vocabulary vocab, uint64_t rng_seed)
    : config_(config), vocab_(std::move(vocab)) {
    config_.vocab_size = vocab_.size();
    config_.validate();
    params_.assign(detail::param_count(config_), 0.0);
    Rng rng(derive_seed(rng_seed, "init"));
    detail::init_params(config_, params_, rng);
}

namespace {

// Runs the per-position step over the whole sequence, returning [T x V] logits.
template <typename Run, typename StepFn>
std::vector<double> run_sequence(const LMConfig& cfg, const std::vector<double>& params,
                                 std::span<const int> ids, Run& run, StepFn step,
                                 Rng* dropout_rng) {
    std::vector<double> logits;
    logits.reserve(ids.size() * static_cast<std::size_t>(cfg.vocab_size));
    for (int id : ids) {
        auto row = step(cfg, params, run, id, dropout_rng);
        logits.insert(logits.end(), row.begin(), row.end());
    }
    return logits;
}

std::vector<double> full_logits(const LMConfig& cfg, const std::vector<double>& params,
                                std::span<const int> ids, Rng* dropout_rng, TfRun* tf,
                                GruRun* gru) {
    if (cfg.architecture == Architecture::self_attention)
        return run_sequence(cfg, params, ids, *tf, detail::tf_step, dropout_rng);
    return run_sequence(cfg, params, ids, *gru, detail::gru_step, dropout_rng);
}

double log_softmax_at(std::span<const double> row, int id) {
    return row[static_cast<std::size_t>(id)] - detail::log_sum_exp(row);
}

}  // namespace

double ConditionalLM::nll(std::span<const int> input, std::span<const int> target) const {
    if (input.empty()) throw DataError("nll needs a non-empty input");
    std::vector<int> seq(input.begin(), input.end());
    for (int id : target) seq.push_back(id);

    TfRun tf = detail::tf_run(config_, false);
    GruRun gru = detail::gru_run(config_, false);
    auto logits = full_logits(config_, params_, seq, nullptr, &tf, &gru);

    const int V = config_.vocab_size;
    double sum = 0.0;
    int n = 0;
    // position p predicts seq[p + 1]
    for (std::size_t p = input.size() - 1; p + 1 < seq.size(); ++p) {
        const int tgt = seq[p + 1];
        if (tgt == kPad) continue;
        std::span<const double> row(logits.data() + p * static_cast<std::size_t>(V),
                                    static_cast<std::size_t>(V));
        sum -= log_softmax_at(row, tgt);
        ++n;
    }
    if (n == 0) throw DataError("nll needs a non-empty target");
    double out = sum / n;
    if (!std::isfinite(out)) throw TrainingDiverged("nll is not finite");
    return out;
}

ConditionalLM::LossSum ConditionalLM::nll_backward(std::span<const int> input,
                                                   std::span<const int> target, double weight,
                                                   std::vector<double>& grad,
                                                   Rng* dropout_rng) const {
    std::vector<double> uniform(target.size(), weight);
    return nll_backward(input, target, uniform, grad, dropout_rng);
}

ConditionalLM::LossSum ConditionalLM::nll_backward(std::span<const int> input,
                                                   std::span<const int> target,
                                                   std::span<const double> token_weights,
                                                   std::vector<double>& grad,
                                                   Rng* dropout_rng) const {
    if (input.empty()) throw DataError("nll_backward needs a non-empty input");
    if (target.empty()) throw DataError("nll_backward needs a non-empty target");
    if (token_weights.size() != target.size())
        throw DataError("nll_backward token weight count mismatch");
    if (grad.size() != params_.size()) throw DataError("gradient buffer size mismatch");

    std::vector<int> seq(input.begin(), input.end());
    for (int id : target) seq.push_back(id);

    TfRun tf = detail::tf_run(config_, true);
    GruRun gru = detail::gru_run(config_, true);
    auto logits = full_logits(config_, params_, seq, dropout_rng, &tf, &gru);

    const int V = config_.vocab_size;
    const std::size_t T = seq.size();
    std::vector<double> dlogits(T * static_cast<std::size_t>(V), 0.0);
    LossSum out;
    for (std::size_t p = input.size() - 1; p + 1 < T; ++p) {
        const int tgt = seq[p + 1];
        if (tgt == kPad) continue;
        std::span<const double> row(logits.data() + p * static_cast<std::size_t>(V),
                                    static_cast<std::size_t>(V));
        const double lse = detail::log_sum_exp(row);
        out.loss += lse - row[static_cast<std::size_t>(tgt)];
        ++out.tokens;
        const double weight = token_weights[p + 1 - input.size()];
        double* drow = dlogits.data() + p * static_cast<std::size_t>(V);
        for (int i = 0; i < V; ++i)
            drow[i] = weight * std::exp(row[static_cast<std::size_t>(i)] - lse);
        drow[tgt] -= weight;
    }
    if (!std::isfinite(out.loss)) throw TrainingDiverged("training loss is not finite");

    if (config_.architecture == Architecture::self_attention)
        detail::tf_backward(config_, params_, tf, dlogits, grad);
    else
        detail::gru_backward(config_, params_, gru, dlogits, grad);
    return out;
}

std::vector<double> ConditionalLM::next_logits(std::span<const int> prefix) const {
    if (prefix.empty()) throw DataError("next_logits needs a non-empty prefix");
    TfRun tf = detail::tf_run(config_, false);
    GruRun gru = detail::gru_run(config_, false);
    std::vector<double> row;
    for (int id : prefix) {
        if (config_.architecture == Architecture::self_attention)
            row = detail::tf_step(config_, params_, tf, id, nullptr);
        else
            row = detail::gru_step(config_, params_, gru, id, nullptr);
    }
    return row;
}

GenerationOutput ConditionalLM::generate(std::span<const int> input,
                                         const SampleSpec& spec) const {
    spec.validate();
    if (input.empty()) throw DataError("generate needs a non-empty input");
    Rng rng(spec.rng_seed);

    TfRun tf = detail::tf_run(config_, false);
    GruRun gru = detail::gru_run(config_, false);
    auto step = [&](int id) {
        if (config_.architecture == Architecture::self_attention)
            return detail::tf_step(config_, params_, tf, id, nullptr);
        return detail::gru_step(config_, params_, gru, id, nullptr);
    };

    std::vector<double> row;
    for (int id : input) row = step(id);

    GenerationOutput out;
    int positions_left = config_.max_seq_len - static_cast<int>(input.size());
    while (static_cast<int>(out.tokens.size()) < spec.max_new_tokens) {
        auto chosen = sample_step(row, spec, rng);
        out.tokens.push_back(chosen.id);
        out.logprobs.push_back(chosen.logprob);
        if (chosen.id == kEos) {
            out.ended_with_eos = true;
            break;
        }
        --positions_left;
        if (positions_left <= 0 || static_cast<int>(out.tokens.size()) >= spec.max_new_tokens)
            break;
        row = step(chosen.id);
    }
    return out;
}

std::vector<double> ConditionalLM::logprob_of(std::span<const int> input,
                                              std::span<const int> response) const {
    for (int id : response)
        if (id < 0 || id >= config_.vocab_size)
            throw DataError("response id out of range: " + std::to_string(id));
    if (input.empty()) throw DataError("logprob_of needs a non-empty input");

    std::vector<int> seq(input.begin(), input.end());
    seq.insert(seq.end(), response.begin(), response.end());

    TfRun tf = detail::tf_run(config_, false);
    GruRun gru = detail::gru_run(config_, false);
    auto logits = full_logits(config_, params_, seq, nullptr, &tf, &gru);

    const int V = config_.vocab_size;
    std::vector<double> out;
    out.reserve(response.size());
    for (std::size_t i = 0; i < response.size(); ++i) {
        const std::size_t p = input.size() - 1 + i;  // position predicting response[i]
        std::span<const double> row(logits.data() + p * static_cast<std::size_t>(V),
                                    static_cast<std::size_t>(V));
        out.push_back(log_softmax_at(row, seq[p + 1]));
    }
    return out;
}

// --- checkpoints ------------------------------------------------------------

namespace {
constexpr char kCkptMagic[8] = {'G', 'C', 'N', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const ConditionalLM& model, const std::filesystem::path& path) {
    nlohmann::json header = {
        {"vocab_size", model.config_.vocab_size},
        {"embed_dim", model.config_.embed_dim},
        {"hidden_dim", model.config_.hidden_dim},
        {"num_layers", model.config_.num_layers},
        {"max_seq_len", model.config_.max_seq_len},
        {"dropout", model.config_.dropout},
        {"architecture", to_string(model.config_.architecture)},
        {"vocab_hash", model.vocab_.hash()},
        {"param_count", model.params_.size()},
    };
    const std::string head = header.dump();
    std::string blob;
    blob.append(kCkptMagic, sizeof(kCkptMagic));
    uint64_t head_len = head.size();
    blob.append(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
    blob.append(head);
    blob.append(reinterpret_cast<const char*>(model.params_.data()),
                model.params_.size() * sizeof(double));
    write_file_atomic(path, blob);
}

ConditionalLM load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab) {
    const std::string blob = read_file(path);
    if (blob.size() < sizeof(kCkptMagic) + sizeof(uint64_t) ||
        std::memcmp(blob.data(), kCkptMagic, sizeof(kCkptMagic)) != 0)
        throw ParseError(path.string() + ": not a checkpoint file");
    uint64_t head_len = 0;
    std::memcpy(&head_len, blob.data() + sizeof(kCkptMagic), sizeof(head_len));
    const std::size_t params_off = sizeof(kCkptMagic) + sizeof(uint64_t) + head_len;
    if (params_off > blob.size()) throw ParseError(path.string() + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(blob.substr(sizeof(kCkptMagic) + sizeof(uint64_t),
                                                   head_len));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": bad checkpoint header: " + e.what());
    }

    LMConfig cfg;
    cfg.vocab_size = header.at("vocab_size").get<int>();
    cfg.embed_dim = header.at("embed_dim").get<int>();
    cfg.hidden_dim = header.at("hidden_dim").get<int>();
    cfg.num_layers = header.at("num_layers").get<int>();
    cfg.max_seq_len = header.at("max_seq_len").get<int>();
    cfg.dropout = header.at("dropout").get<double>();
    cfg.architecture = architecture_from_string(header.at("architecture").get<std::string>());

    if (header.at("vocab_hash").get<uint64_t>() != vocab.hash())
        throw DataError(path.string() + ": checkpoint was written with a different vocabulary");
    if (cfg.vocab_size != vocab.size())
        throw DataError(path.string() + ": checkpoint vocab size mismatch");

    const auto param_count = header.at("param_count").get<std::size_t>();
    if (blob.size() != params_off + param_count * sizeof(double))
        throw ParseError(path.string() + ": parameter payload size mismatch");

    ConditionalLM model(cfg, vocab, 0);
    if (model.params_.size() != param_count)
        throw DataError(path.string() + ": parameter count mismatch for config");
    std::memcpy(model.params_.data(), blob.data() + params_off, param_count * sizeof(double));
    return model;
}

// --- optimizer --------------------------------------------------------------

double adam_step(std::vector<double>& params, std::vector<double>& grad, AdamState& state,
                 double learning_rate, double max_norm) {
    if (grad.size() != params.size() || state.m.size() != params.size())
        throw DataError("optimizer buffer size mismatch");
    double sq = 0.0;
    for (double g : grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw TrainingDiverged("gradient norm is not finite");
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (double& g : grad) g *= s;
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] -= learning_rate * mhat / (std::sqrt(vhat) + state.eps);
    }
    return norm;
}

// --- supervised training -----------------------------------------------------

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (lambda_kf1 < 0.0) throw ConfigError("lambda_kf1 must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (scst_max_new_tokens < 1) throw ConfigError("scst_max_new_tokens must be >= 1");
}

EncodedDataPoint encode_datapoint(const DataPoint& dp, const Vocabulary& vocab, int max_seq_len) {
    EncodedDataPoint ep;
    ep.target = to_ids(vocab, dp.response.tokens);
    const int response_cap = max_seq_len - 2;  // leave room for SEP_RSP and EOS
    if (static_cast<int>(ep.target.size()) > response_cap)
        ep.target.resize(static_cast<std::size_t>(response_cap));
    ep.target.push_back(kEos);
    const int budget = max_seq_len - static_cast<int>(ep.target.size());
    ep.input = encode_input(dp.context, dp.knowledge, vocab, budget);
    return ep;
}

TrainResult train_supervised(ConditionalLM& model, std::span<const DataPoint> datapoints,
                             const TrainConfig& cfg) {
    cfg.validate();
    if (datapoints.empty()) throw DataError("train_supervised needs a non-empty dataset");

    std::vector<EncodedDataPoint> encoded;
    std::vector<std::vector<TokenSeq>> knowledge;
    encoded.reserve(datapoints.size());
    for (const auto& dp : datapoints) {
        encoded.push_back(encode_datapoint(dp, model.vocab(), model.config().max_seq_len));
        auto& pieces = knowledge.emplace_back();
        for (const auto& piece : dp.knowledge) pieces.push_back(piece.tokens);
    }

    AdamState adam(model.num_params());
    std::vector<double> grad(model.num_params(), 0.0);
    std::vector<std::size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    const std::size_t N = encoded.size();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.rng_seed, "epoch_shuffle", static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        Rng dropout_rng(derive_seed(cfg.rng_seed, "dropout", static_cast<uint64_t>(epoch)));

        double ce_sum = 0.0;  // sum over sequences of per-sequence token-mean CE
        for (std::size_t start = 0; start < N; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(N, start + static_cast<std::size_t>(cfg.batch_size));
            const double B = static_cast<double>(end - start);
            std::fill(grad.begin(), grad.end(), 0.0);

            for (std::size_t bi = start; bi < end; ++bi) {
                const EncodedDataPoint& ep = encoded[order[bi]];
                const std::vector<TokenSeq>& knowledge_tokens = knowledge[order[bi]];
                const double w = 1.0 / (B * static_cast<double>(ep.target.size()));
                auto loss = model.nll_backward(ep.input, ep.target, w, grad, &dropout_rng);
                ce_sum += loss.loss / static_cast<double>(loss.tokens);

                if (cfg.lambda_kf1 > 0.0 && !knowledge_tokens.empty()) {
                    SampleSpec sample;
                    sample.strategy = Strategy::nucleus;
                    sample.p = 1.0;
                    sample.temperature = 1.0;
                    sample.max_new_tokens = cfg.scst_max_new_tokens;
                    sample.rng_seed = derive_seed(cfg.rng_seed, "scst",
                                                  static_cast<uint64_t>(epoch) * N + order[bi]);
                    auto sampled = model.generate(ep.input, sample);
                    auto greedy =
                        model.generate(ep.input, SampleSpec::greedy_spec(cfg.scst_max_new_tokens));
                    const double adv =
                        kf1_multi(decode_tokens(model.vocab(), sampled.tokens),
                                  knowledge_tokens) -
                        kf1_multi(decode_tokens(model.vocab(), greedy.tokens),
                                  knowledge_tokens);
                    if (adv != 0.0)
                        model.nll_backward(ep.input, sampled.tokens, cfg.lambda_kf1 * adv / B,
                                           grad, nullptr);
                }
            }
            adam_step(model.params(), grad, adam, cfg.learning_rate, cfg.max_grad_norm);
        }
        result.loss_curve.push_back(ce_sum / static_cast<double>(N));
    }
    return result;
}

}  // namespace gcn
