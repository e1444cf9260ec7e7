#include "gcn/run_config.hpp"

#include <fstream>

#include "gcn/common.hpp"

namespace gcn {

namespace {

using nlohmann::json;

json lm_to_json(const LMConfig& c) {
    return {{"vocab_size", c.vocab_size},   {"embed_dim", c.embed_dim},
            {"hidden_dim", c.hidden_dim},   {"num_layers", c.num_layers},
            {"max_seq_len", c.max_seq_len}, {"dropout", c.dropout},
            {"architecture", to_string(c.architecture)}};
}

LMConfig lm_from_json(const json& j) {
    LMConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.num_layers = j.at("num_layers").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.architecture = architecture_from_string(j.at("architecture").get<std::string>());
    return c;
}

json sample_to_json(const SampleSpec& s) {
    return {{"strategy", to_string(s.strategy)},
            {"k", s.k},
            {"p", s.p},
            {"temperature", s.temperature},
            {"max_new_tokens", s.max_new_tokens}};
}

SampleSpec sample_from_json(const json& j) {
    SampleSpec s;
    s.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    s.k = j.at("k").get<int>();
    s.p = j.at("p").get<double>();
    s.temperature = j.at("temperature").get<double>();
    s.max_new_tokens = j.at("max_new_tokens").get<int>();
    return s;
}

json train_to_json(const TrainConfig& t) {
    return {{"epochs", t.epochs},
            {"learning_rate", t.learning_rate},
            {"lambda_kf1", t.lambda_kf1},
            {"batch_size", t.batch_size},
            {"max_grad_norm", t.max_grad_norm},
            {"scst_max_new_tokens", t.scst_max_new_tokens}};
}

TrainConfig train_from_json(const json& j) {
    TrainConfig t;
    t.epochs = j.at("epochs").get<int>();
    t.learning_rate = j.at("learning_rate").get<double>();
    t.lambda_kf1 = j.at("lambda_kf1").get<double>();
    t.batch_size = j.at("batch_size").get<int>();
    t.max_grad_norm = j.at("max_grad_norm").get<double>();
    t.scst_max_new_tokens = j.at("scst_max_new_tokens").get<int>();
    return t;
}

json ppo_to_json(const PPOConfig& p) {
    return {{"clip_epsilon", p.clip_epsilon},
            {"epochs_per_batch", p.epochs_per_batch},
            {"minibatch_size", p.minibatch_size},
            {"learning_rate", p.learning_rate},
            {"beta", p.beta},
            {"rollouts_per_update", p.rollouts_per_update},
            {"max_grad_norm", p.max_grad_norm},
            {"kl_warn_nats", p.kl_warn_nats}};
}

PPOConfig ppo_from_json(const json& j) {
    PPOConfig p;
    p.clip_epsilon = j.at("clip_epsilon").get<double>();
    p.epochs_per_batch = j.at("epochs_per_batch").get<int>();
    p.minibatch_size = j.at("minibatch_size").get<int>();
    p.learning_rate = j.at("learning_rate").get<double>();
    p.beta = j.at("beta").get<double>();
    p.rollouts_per_update = j.at("rollouts_per_update").get<int>();
    p.max_grad_norm = j.at("max_grad_norm").get<double>();
    p.kl_warn_nats = j.at("kl_warn_nats").get<double>();
    return p;
}

json meta_to_json(const MetaConfig& m) {
    return {{"epsilon", m.epsilon},
            {"max_meta_iterations", m.max_meta_iterations},
            {"synth_multiplier_inner", m.synth_multiplier_inner},
            {"synth_multiplier_final", m.synth_multiplier_final},
            {"learner_epochs", m.learner_epochs},
            {"runs_to_average", m.runs_to_average},
            {"mode", to_string(m.mode)}};
}

MetaConfig meta_from_json(const json& j) {
    MetaConfig m;
    m.epsilon = j.at("epsilon").get<double>();
    m.max_meta_iterations = j.at("max_meta_iterations").get<int>();
    m.synth_multiplier_inner = j.at("synth_multiplier_inner").get<int>();
    m.synth_multiplier_final = j.at("synth_multiplier_final").get<int>();
    m.learner_epochs = j.at("learner_epochs").get<int>();
    m.runs_to_average = j.at("runs_to_average").get<int>();
    m.mode = mode_from_string(j.at("mode").get<std::string>());
    return m;
}

}  // namespace

void MetaConfig::validate() const {
    if (!(epsilon > 0.0) || epsilon > 1.0)
        throw ConfigError("meta.epsilon must be in (0, 1]");
    if (max_meta_iterations < 0) throw ConfigError("meta.max_meta_iterations must be >= 0");
    if (synth_multiplier_inner < 1) throw ConfigError("meta.synth_multiplier_inner must be >= 1");
    if (synth_multiplier_final < 1) throw ConfigError("meta.synth_multiplier_final must be >= 1");
    if (learner_epochs < 1) throw ConfigError("meta.learner_epochs must be >= 1");
    if (runs_to_average < 1) throw ConfigError("meta.runs_to_average must be >= 1");
}

void RunConfig::validate() const {
    if (corpus_path.empty()) throw ConfigError("corpus_path is required");
    if (!(split.seed_fraction > 0.0) || split.seed_fraction >= 1.0)
        throw ConfigError("split.seed_fraction must be in (0, 1)");
    if (!(split.val_fraction > 0.0) || split.val_fraction >= 1.0)
        throw ConfigError("split.val_fraction must be in (0, 1)");
    if (split.seed_fraction + split.val_fraction >= 1.0)
        throw ConfigError("split fractions must leave room for a test split");
    if (context_turns < 1) throw ConfigError("context_turns must be >= 1");
    if (top_m < 1) throw ConfigError("top_m must be >= 1");
    if (sampling.max_new_tokens < 1) throw ConfigError("sampling.max_new_tokens must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir is required");
    reward.validate();
    if (reward.mode != mode) throw ConfigError("reward.mode must match the run mode");
    ppo.validate();
    meta.validate();
    if (meta.mode != mode) throw ConfigError("meta.mode must match the run mode");
    if (generator_train.lambda_kf1 != 0.0)
        throw ConfigError("generator_train.lambda_kf1 must be 0");
    if (mode == Mode::open_domain && learner_train.lambda_kf1 != 0.0)
        throw ConfigError("learner_train.lambda_kf1 requires knowledge grounding");
}

nlohmann::json RunConfig::to_json() const {
    json split_j = {{"seed_fraction", split.seed_fraction},
                    {"val_fraction", split.val_fraction}};
    json reward_j = {{"mode", to_string(reward.mode)}, {"weights", reward.weights}};
    return {{"corpus_path", corpus_path.string()},
            {"mode", to_string(mode)},
            {"split", split_j},
            {"context_turns", context_turns},
            {"top_m", top_m},
            {"generator", lm_to_json(generator)},
            {"learner", lm_to_json(learner)},
            {"sampling", sample_to_json(sampling)},
            {"reward", reward_j},
            {"ppo", ppo_to_json(ppo)},
            {"meta", meta_to_json(meta)},
            {"generator_train", train_to_json(generator_train)},
            {"learner_train", train_to_json(learner_train)},
            {"output_dir", output_dir.string()},
            {"rng_seed", rng_seed},
            {"broadcast_meta_reward", broadcast_meta_reward}};
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    try {
        c.corpus_path = j.at("corpus_path").get<std::string>();
        c.mode = mode_from_string(j.at("mode").get<std::string>());
        const json& sp = j.at("split");
        c.split.seed_fraction = sp.at("seed_fraction").get<double>();
        c.split.val_fraction = sp.at("val_fraction").get<double>();
        c.context_turns = j.at("context_turns").get<int>();
        c.top_m = j.at("top_m").get<int>();
        c.generator = lm_from_json(j.at("generator"));
        c.learner = lm_from_json(j.at("learner"));
        c.sampling = sample_from_json(j.at("sampling"));
        c.reward.mode = mode_from_string(j.at("reward").at("mode").get<std::string>());
        c.reward.weights =
            j.at("reward").at("weights").get<std::map<std::string, double>>();
        c.ppo = ppo_from_json(j.at("ppo"));
        c.meta = meta_from_json(j.at("meta"));
        c.generator_train = train_from_json(j.at("generator_train"));
        c.learner_train = train_from_json(j.at("learner_train"));
        c.output_dir = j.at("output_dir").get<std::string>();
        c.rng_seed = j.at("rng_seed").get<uint64_t>();
        c.broadcast_meta_reward = j.at("broadcast_meta_reward").get<bool>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad run config: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::defaults(Mode mode) {
    RunConfig c;
    c.mode = mode;
    c.reward = RewardWeights::defaults(mode);
    c.meta.mode = mode;
    c.generator_train.lambda_kf1 = 0.0;
    c.learner_train.lambda_kf1 = (mode == Mode::knowledge_grounded) ? 0.1 : 0.0;
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
    json doc;
    try {
        doc = json::parse(read_file(file));
    } catch (const json::exception& e) {
        throw ParseError(file.string() + ": " + e.what());
    }
    Mode mode = Mode::knowledge_grounded;
    if (doc.contains("mode")) mode = mode_from_string(doc.at("mode").get<std::string>());
    json merged = RunConfig::defaults(mode).to_json();
    merged.merge_patch(doc);
    return from_json(merged);
}

void RunConfig::save(const std::filesystem::path& file) const {
    write_file_atomic(file, to_json().dump(2) + "\n");
}

void RunConfig::apply_override(json& doc, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must look like key.path=value: " + assignment);
    std::string path = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);

    json::json_pointer ptr;
    size_t start = 0;
    while (start <= path.size()) {
        size_t dot = path.find('.', start);
        std::string part = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (part.empty()) throw ConfigError("empty key segment in override: " + assignment);
        ptr /= part;
        if (dot == std::string::npos) break;
        start = dot + 1;
    }

    // Interpret the value as JSON when it parses (numbers, bools), else string.
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;
    doc[ptr] = parsed;
}

}  // namespace gcn
