#include "gcn/metaloop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "gcn/ppo.hpp"
#include "gcn/reward.hpp"

namespace gcn {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Condition c) {
    switch (c) {
        case Condition::baseline: return "baseline";
        case Condition::gcn_no_rl: return "gcn-no-rl";
        case Condition::gcn_rl: return "gcn-rl";
    }
    throw ConfigError("unknown condition");
}

Condition condition_from_string(const std::string& s) {
    if (s == "baseline") return Condition::baseline;
    if (s == "gcn-no-rl") return Condition::gcn_no_rl;
    if (s == "gcn-rl") return Condition::gcn_rl;
    throw ConfigError("unknown condition: " + s);
}

namespace {

MetricReport report_from_flat(const std::map<std::string, double>& flat) {
    MetricReport r;
    auto get = [&](const char* key) -> std::optional<double> {
        auto it = flat.find(key);
        if (it == flat.end()) return std::nullopt;
        return it->second;
    };
    r.bleu1 = get("bleu1");
    r.bleu4 = get("bleu4");
    r.rouge1 = get("rouge1");
    r.rouge2 = get("rouge2");
    r.rougeL = get("rougeL");
    r.kf1 = get("kf1");
    r.kf1_gold = get("kf1_gold");
    r.embed_score = get("embed_score");
    r.perplexity = get("perplexity");
    r.oov_rate = get("oov_rate");
    return r;
}

std::string run_tag(int r) { return "run" + std::to_string(r); }

}  // namespace

json MetaRunState::to_json() const {
    json j = {{"iteration", iteration},
              {"checkpoint_id", checkpoint_id},
              {"synth_id", synth_id},
              {"performance_meta", performance_meta},
              {"learner_val", learner_val.to_flat()},
              {"wall_seconds", wall_seconds},
              {"failed", failed}};
    if (failed) j["error"] = error;
    return j;
}

MetaRunState MetaRunState::from_json(const json& j) {
    MetaRunState s;
    try {
        s.iteration = j.at("iteration").get<int>();
        s.checkpoint_id = j.at("checkpoint_id").get<std::string>();
        s.synth_id = j.at("synth_id").get<std::string>();
        s.performance_meta = j.at("performance_meta").get<double>();
        s.learner_val =
            report_from_flat(j.at("learner_val").get<std::map<std::string, double>>());
        s.wall_seconds = j.at("wall_seconds").get<double>();
        s.failed = j.at("failed").get<bool>();
        if (s.failed) s.error = j.value("error", std::string());
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad state record: ") + e.what());
    }
    if (s.performance_meta < 0.0 || s.performance_meta > 1.0 ||
        !std::isfinite(s.performance_meta))
        throw ParseError("state record performance out of range");
    return s;
}

const MetaRunState* select_best_state(std::span<const MetaRunState> states) {
    const MetaRunState* best = nullptr;
    for (const MetaRunState& st : states) {
        if (st.failed) continue;
        if (best == nullptr || st.performance_meta > best->performance_meta) best = &st;
    }
    return best;
}

SynthResult generate_synthetic(const ConditionalLM& g, std::span<const DataPoint> seed,
                               const TfidfIndex* retriever, int top_m, const SampleSpec& spec,
                               std::size_t size, uint64_t rng_seed) {
    if (seed.empty()) throw DataError("generate_synthetic needs seed datapoints");
    const Vocabulary& vocab = g.vocab();
    const int budget = std::max(1, g.config().max_seq_len - spec.max_new_tokens);

    // Shuffled pass over the seed contexts first, then draws with replacement.
    std::vector<std::size_t> order(seed.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng ctx_rng(derive_seed(rng_seed, "contexts"));
    ctx_rng.shuffle(order);

    SynthResult out;
    out.datapoints.reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
        const DataPoint& src =
            seed[i < order.size() ? order[i] : ctx_rng.below(seed.size())];

        std::vector<KnowledgePiece> knowledge;
        if (retriever != nullptr) {
            for (ScoredPiece& sp : retriever->top_m(src.context, top_m))
                knowledge.push_back(std::move(sp.piece));
        }
        std::vector<int> input = encode_input(src.context, knowledge, vocab, budget);

        bool kept = false;
        for (int attempt = 0; attempt < 3 && !kept; ++attempt) {
            SampleSpec s = spec;
            s.rng_seed = derive_seed(rng_seed, "gen", i * 4 + static_cast<std::size_t>(attempt));
            GenerationOutput gen = g.generate(input, s);
            std::vector<std::string> decoded = decode_tokens(vocab, gen.tokens);
            if (decoded.empty()) continue;  // degenerate sample, retry

            DataPoint dp;
            dp.context = src.context;
            dp.knowledge = std::move(knowledge);
            dp.response.speaker = src.response.speaker;
            dp.response.raw_text = join_tokens(decoded);
            dp.response.tokens = std::move(decoded);
            dp.origin = Origin::synthetic;
            dp.dialogue_id = src.dialogue_id;
            dp.response_turn_index = src.response_turn_index;
            dp.gold_knowledge_refs = src.gold_knowledge_refs;
            out.datapoints.push_back(std::move(dp));
            kept = true;
        }
        if (!kept) ++out.skipped;
    }
    if (static_cast<std::size_t>(out.skipped) * 2 > size)
        throw TrainingDiverged("degenerate generator: skipped " + std::to_string(out.skipped) +
                               " of " + std::to_string(size) + " synthetic datapoints");
    return out;
}

MetricReport evaluate_model(const ConditionalLM& model, std::span<const DataPoint> datapoints,
                            Mode mode, const EmbeddingFn* embedding, int max_new_tokens,
                            std::span<const KnowledgePiece> bank) {
    if (datapoints.empty()) throw DataError("evaluate_model over empty dataset");
    const Vocabulary& vocab = model.vocab();
    const int budget = std::max(1, model.config().max_seq_len - max_new_tokens);
    const SampleSpec greedy = SampleSpec::greedy_spec(max_new_tokens);

    std::unordered_map<std::string, const KnowledgePiece*> by_id;
    for (const KnowledgePiece& p : bank) by_id.emplace(p.id, &p);

    double bleu1 = 0, bleu4 = 0, r1 = 0, r2 = 0, rl = 0, kf = 0, emb = 0;
    double kf_gold = 0;
    long kf_gold_n = 0;
    double nll_total = 0;
    long tokens_total = 0;

    for (const DataPoint& dp : datapoints) {
        std::vector<int> input = encode_input(dp.context, dp.knowledge, vocab, budget);
        GenerationOutput gen = model.generate(input, greedy);
        std::vector<std::string> cand = decode_tokens(vocab, gen.tokens);
        const std::vector<TokenSeq> refs = {dp.response.tokens};

        bleu1 += bleu(cand, refs, 1, BleuSmoothing::method7);
        bleu4 += bleu(cand, refs, 4, BleuSmoothing::method7);
        r1 += rouge(cand, dp.response.tokens, RougeVariant::r1);
        r2 += rouge(cand, dp.response.tokens, RougeVariant::r2);
        rl += rouge(cand, dp.response.tokens, RougeVariant::rL);

        if (mode == Mode::knowledge_grounded) {
            std::vector<TokenSeq> pieces;
            for (const KnowledgePiece& p : dp.knowledge) pieces.push_back(p.tokens);
            kf += kf1_multi(cand, pieces);

            std::vector<TokenSeq> gold;
            for (const std::string& ref : dp.gold_knowledge_refs) {
                auto it = by_id.find(ref);
                if (it != by_id.end()) gold.push_back(it->second->tokens);
            }
            if (!gold.empty()) {
                kf_gold += kf1_multi(cand, gold);
                ++kf_gold_n;
            }
        }
        if (embedding != nullptr) emb += embed_score(cand, dp.response.tokens, *embedding);

        EncodedDataPoint ep = encode_datapoint(dp, vocab, model.config().max_seq_len);
        nll_total += model.nll(ep.input, ep.target) * static_cast<double>(ep.target.size());
        tokens_total += static_cast<long>(ep.target.size());
    }

    const double n = static_cast<double>(datapoints.size());
    MetricReport report;
    report.bleu1 = bleu1 / n;
    report.bleu4 = bleu4 / n;
    report.rouge1 = r1 / n;
    report.rouge2 = r2 / n;
    report.rougeL = rl / n;
    if (mode == Mode::knowledge_grounded) {
        report.kf1 = kf / n;
        if (kf_gold_n > 0) report.kf1_gold = kf_gold / static_cast<double>(kf_gold_n);
    }
    if (embedding != nullptr) report.embed_score = emb / n;
    report.perplexity = std::exp(nll_total / static_cast<double>(tokens_total));
    return report;
}

std::string FinalReport::to_text() const {
    std::string out;
    for (const auto& [key, m] : mean) {
        out += key;
        out += '\t';
        out += format_g17(m);
        out += '\t';
        out += format_g17(stddev.at(key));
        out += '\n';
    }
    return out;
}

PreparedData prepare_data(const RunConfig& config) {
    PreparedData d;
    d.corpus = load_corpus(config.corpus_path);
    SplitSpec sp = config.split;
    sp.rng_seed = derive_seed(config.rng_seed, "split");
    d.splits = split(d.corpus.dialogues, sp);

    const TfidfIndex* retr = nullptr;
    if (config.mode == Mode::knowledge_grounded) {
        d.retriever = TfidfIndex::build(d.corpus.pieces);
        retr = &*d.retriever;
    }
    d.seed_dps =
        extract_datapoints(d.splits.seed, config.context_turns, config.mode, retr, config.top_m)
            .datapoints;
    d.val_dps =
        extract_datapoints(d.splits.val, config.context_turns, config.mode, retr, config.top_m)
            .datapoints;
    d.test_dps =
        extract_datapoints(d.splits.test, config.context_turns, config.mode, retr, config.top_m)
            .datapoints;
    if (d.seed_dps.empty() || d.val_dps.empty() || d.test_dps.empty())
        throw DataError("a split yields no datapoints; corpus too small for the config");

    TokenCounts counts = count_datapoint_tokens(d.seed_dps);
    if (config.mode == Mode::knowledge_grounded) {
        for (const auto& [tok, cnt] : count_piece_tokens(d.corpus.pieces)) counts[tok] += cnt;
    }
    d.vocab = build_vocabulary(counts, 1);
    d.oov_vocab = build_vocabulary(count_dialogue_tokens(d.splits.seed), 1);

    d.gen_cfg = config.generator;
    d.gen_cfg.vocab_size = d.vocab.size();
    d.learner_cfg = config.learner;
    d.learner_cfg.vocab_size = d.vocab.size();
    return d;
}

Pipeline::Pipeline(RunConfig config, Condition condition, Hooks hooks)
    : config_(std::move(config)), condition_(condition), hooks_(std::move(hooks)) {
    config_.validate();
    if (!fs::exists(config_.corpus_path))
        throw ConfigError("corpus_path does not exist: " + config_.corpus_path.string());
    dir_ = config_.output_dir;
    lock_ = std::make_unique<DirLock>(dir_);
    fs::create_directories(dir_ / "checkpoints");
    fs::create_directories(dir_ / "synth");

    json snapshot = config_.to_json();
    snapshot["condition"] = to_string(condition_);
    const std::string canonical = snapshot.dump(2) + "\n";
    const fs::path snap_path = dir_ / "config.json";
    if (fs::exists(snap_path)) {
        if (read_file(snap_path) != canonical)
            throw ConfigError("run directory " + dir_.string() +
                              " was initialized with a different config");
    } else {
        write_file_atomic(snap_path, canonical);
    }
}

FinalReport Pipeline::run() {
    if (!data_) data_ = std::make_shared<PreparedData>(prepare_data(config_));

    FinalReport report;
    for (int r = 0; r < config_.meta.runs_to_average; ++r) {
        report.runs.push_back(run_once(r));
        if (hooks_.after_run) hooks_.after_run(r);
    }

    const double n = static_cast<double>(report.runs.size());
    for (const auto& [key, value] : report.runs.front()) {
        (void)value;
        double sum = 0.0;
        for (const auto& run : report.runs) sum += run.at(key);
        const double mean = sum / n;
        double var = 0.0;
        for (const auto& run : report.runs) {
            const double d = run.at(key) - mean;
            var += d * d;
        }
        report.mean[key] = mean;
        report.stddev[key] = std::sqrt(var / n);
    }
    write_file_atomic(dir_ / "report.txt", report.to_text());
    return report;
}

ConditionalLM Pipeline::pretrain(int r, uint64_t run_seed) {
    const fs::path path = dir_ / "checkpoints" / ("gen_" + run_tag(r) + "_pretrained.ckpt");
    if (fs::exists(path)) {
        ConditionalLM g = load_checkpoint(path, data_->vocab);
        if (hooks_.after_pretrain) hooks_.after_pretrain(r);
        return g;
    }
    ConditionalLM g(data_->gen_cfg, data_->vocab, derive_seed(run_seed, "gen_init"));
    TrainConfig tc = config_.generator_train;
    tc.rng_seed = derive_seed(run_seed, "pretrain");
    train_supervised(g, data_->seed_dps, tc);
    save_checkpoint(g, path);
    if (hooks_.after_pretrain) hooks_.after_pretrain(r);
    return g;
}

std::map<std::string, double> Pipeline::finish_run(int r, uint64_t run_seed,
                                                   const ConditionalLM& g_best,
                                                   const EmbeddingFn* embedding) {
    const TfidfIndex* retr = data_->retriever ? &*data_->retriever : nullptr;
    SynthResult sr = generate_synthetic(
        g_best, data_->seed_dps, retr, config_.top_m, config_.sampling,
        static_cast<std::size_t>(config_.meta.synth_multiplier_final) * data_->seed_dps.size(),
        derive_seed(run_seed, "synth_final"));
    save_datapoints(dir_ / "synth" / ("synth_" + run_tag(r) + "_final.txt"), sr.datapoints,
                    "gen_" + run_tag(r) + "_best", sr.skipped);

    ConditionalLM learner(data_->learner_cfg, data_->vocab,
                          derive_seed(run_seed, "final_learner"));
    std::vector<DataPoint> train_data = data_->seed_dps;
    train_data.insert(train_data.end(), sr.datapoints.begin(), sr.datapoints.end());
    TrainConfig lt = config_.learner_train;
    lt.epochs = config_.meta.learner_epochs;
    lt.rng_seed = derive_seed(run_seed, "final_learner_train");
    train_supervised(learner, train_data, lt);
    save_checkpoint(learner, dir_ / "checkpoints" / ("learner_" + run_tag(r) + "_final.ckpt"));

    MetricReport report = evaluate_model(learner, data_->test_dps, config_.mode, embedding,
                                         config_.sampling.max_new_tokens, data_->corpus.pieces);
    std::map<std::string, double> flat = report.to_flat();
    flat["oov_rate"] = sr.datapoints.empty() ? 0.0 : oov_rate(sr.datapoints, data_->oov_vocab);
    return flat;
}

std::map<std::string, double> Pipeline::run_rl(int r, uint64_t run_seed,
                                               const ConditionalLM& g_ref,
                                               const EmbeddingFn* embedding) {
    const TfidfIndex* retr = data_->retriever ? &*data_->retriever : nullptr;
    const fs::path state_path = dir_ / (run_tag(r) + ".state.jsonl");
    const fs::path ppo_log_path = dir_ / (run_tag(r) + ".ppo.jsonl");
    auto iter_ckpt = [&](int i) {
        return dir_ / "checkpoints" / ("gen_" + run_tag(r) + "_iter" + std::to_string(i) + ".ckpt");
    };
    const std::string pretrained_id = "gen_" + run_tag(r) + "_pretrained";

    // Replay persisted iterations, then resume the generator from the snapshot
    // written at the end of the last one.
    std::vector<MetaRunState> states;
    if (fs::exists(state_path)) {
        std::istringstream lines(read_file(state_path));
        std::string line;
        while (std::getline(lines, line)) {
            if (line.empty()) continue;
            try {
                states.push_back(MetaRunState::from_json(json::parse(line)));
            } catch (const json::exception& e) {
                throw ParseError(state_path.string() + ": " + e.what());
            }
        }
    }
    ConditionalLM g = states.empty()
                          ? g_ref
                          : load_checkpoint(iter_ckpt(static_cast<int>(states.size())),
                                            data_->vocab);
    double perf_latest = 0.0;
    for (auto it = states.rbegin(); it != states.rend(); ++it) {
        if (!it->failed) {
            perf_latest = it->performance_meta;
            break;
        }
    }

    const double target = 1.0 - config_.meta.epsilon;
    for (int i = static_cast<int>(states.size());
         i < config_.meta.max_meta_iterations && perf_latest < target; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        MetaRunState st;
        st.iteration = i;
        st.checkpoint_id =
            i == 0 ? pretrained_id : "gen_" + run_tag(r) + "_iter" + std::to_string(i);
        st.synth_id = "synth_" + run_tag(r) + "_iter" + std::to_string(i);
        try {
            SynthResult sr = generate_synthetic(
                g, data_->seed_dps, retr, config_.top_m, config_.sampling,
                static_cast<std::size_t>(config_.meta.synth_multiplier_inner) *
                    data_->seed_dps.size(),
                derive_seed(run_seed, "synth_inner", i));
            save_datapoints(dir_ / "synth" / (st.synth_id + ".txt"), sr.datapoints,
                            st.checkpoint_id, sr.skipped);

            ConditionalLM learner(data_->learner_cfg, data_->vocab,
                                  derive_seed(run_seed, "learner_init", i));
            std::vector<DataPoint> train_data = data_->seed_dps;
            train_data.insert(train_data.end(), sr.datapoints.begin(), sr.datapoints.end());
            TrainConfig lt = config_.learner_train;
            lt.epochs = config_.meta.learner_epochs;
            lt.rng_seed = derive_seed(run_seed, "learner_train", i);
            train_supervised(learner, train_data, lt);

            st.performance_meta =
                performance_meta(learner, data_->val_dps, config_.reward, embedding,
                                 config_.sampling.max_new_tokens);
            st.learner_val =
                evaluate_model(learner, data_->val_dps, config_.mode, embedding,
                               config_.sampling.max_new_tokens, data_->corpus.pieces);

            Rng ctx_rng(derive_seed(run_seed, "ppo_ctx", i));
            std::vector<DataPoint> contexts;
            contexts.reserve(config_.ppo.rollouts_per_update);
            for (int j = 0; j < config_.ppo.rollouts_per_update; ++j)
                contexts.push_back(data_->seed_dps[ctx_rng.below(data_->seed_dps.size())]);

            RolloutRewardFn reward_fn;
            if (config_.broadcast_meta_reward) {
                const double perf = st.performance_meta;
                reward_fn = [perf](const DataPoint&, const TokenSeq&) { return perf; };
            } else {
                reward_fn = make_metric_reward_fn(config_.reward,
                                                  embedding ? *embedding : EmbeddingFn{});
            }
            std::vector<Trajectory> trajectories =
                collect_rollouts(g, g_ref, contexts, config_.sampling, reward_fn,
                                 config_.ppo.shaping(), derive_seed(run_seed, "ppo_roll", i));
            PPOStats stats =
                ppo_update(g, trajectories, compute_advantages(trajectories), config_.ppo);
            std::ofstream ppo_log(ppo_log_path, std::ios::app);
            ppo_log << stats.log_line(i) << '\n';
        } catch (const TrainingDiverged& e) {
            st.failed = true;
            st.error = e.what();
            g = load_checkpoint(i == 0 ? dir_ / "checkpoints" / (pretrained_id + ".ckpt")
                                       : iter_ckpt(i),
                                data_->vocab);
        }
        st.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        save_checkpoint(g, iter_ckpt(i + 1));
        {
            std::ofstream log(state_path, std::ios::app);
            log << st.to_json().dump() << '\n';
        }
        states.push_back(st);
        if (!st.failed) perf_latest = st.performance_meta;
        if (hooks_.after_iteration) hooks_.after_iteration(r, i);
    }

    // Without a successful iteration the pretrained generator stands.
    const MetaRunState* best = select_best_state(states);
    if (best == nullptr) return finish_run(r, run_seed, g_ref, embedding);
    ConditionalLM g_best =
        load_checkpoint(dir_ / "checkpoints" / (best->checkpoint_id + ".ckpt"), data_->vocab);
    return finish_run(r, run_seed, g_best, embedding);
}

std::map<std::string, double> Pipeline::run_once(int r) {
    const uint64_t run_seed = derive_seed(config_.rng_seed, "run", r);
    const fs::path final_path = dir_ / (run_tag(r) + ".final.json");
    if (fs::exists(final_path)) {
        try {
            return json::parse(read_file(final_path)).get<std::map<std::string, double>>();
        } catch (const json::exception& e) {
            throw ParseError(final_path.string() + ": " + e.what());
        }
    }

    std::map<std::string, double> flat;
    const bool needs_embedding = config_.mode == Mode::open_domain;
    EmbeddingFn embedding_fn;

    if (condition_ == Condition::baseline) {
        // The learner sees seed data only. The generator is still pretrained in
        // open-domain mode because its embedding table anchors embed_score.
        if (needs_embedding) {
            ConditionalLM g_ref = pretrain(r, run_seed);
            embedding_fn = make_embedding_from_model(g_ref);
        }
        const EmbeddingFn* emb = embedding_fn ? &embedding_fn : nullptr;

        ConditionalLM learner(data_->learner_cfg, data_->vocab,
                              derive_seed(run_seed, "final_learner"));
        TrainConfig lt = config_.learner_train;
        lt.epochs = config_.meta.learner_epochs;
        lt.rng_seed = derive_seed(run_seed, "final_learner_train");
        train_supervised(learner, data_->seed_dps, lt);
        save_checkpoint(learner,
                        dir_ / "checkpoints" / ("learner_" + run_tag(r) + "_final.ckpt"));

        MetricReport report =
            evaluate_model(learner, data_->test_dps, config_.mode, emb,
                           config_.sampling.max_new_tokens, data_->corpus.pieces);
        flat = report.to_flat();
        flat["oov_rate"] = 0.0;  // no synthetic data by definition
    } else {
        ConditionalLM g_ref = pretrain(r, run_seed);
        if (needs_embedding) embedding_fn = make_embedding_from_model(g_ref);
        const EmbeddingFn* emb = embedding_fn ? &embedding_fn : nullptr;

        if (condition_ == Condition::gcn_no_rl) {
            flat = finish_run(r, run_seed, g_ref, emb);
        } else {
            flat = run_rl(r, run_seed, g_ref, emb);
        }
    }

    write_file_atomic(final_path, json(flat).dump(2) + "\n");
    return flat;
}

std::string run_ablation(const std::string& sweep, std::span<const double> values,
                         const RunConfig& config, Condition condition) {
    if (sweep != "meta_iterations" && sweep != "data_multiplier" && sweep != "seed_fraction")
        throw ConfigError("unknown sweep: " + sweep);

    auto as_count = [&](double v) {
        if (v < 0.0 || v != std::floor(v))
            throw ConfigError(sweep + " sweep values must be non-negative integers");
        return static_cast<int>(v);
    };

    std::string table = "value\tppl\tkf1\tbleu4\toov_rate\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        RunConfig cfg = config;
        if (sweep == "meta_iterations") {
            cfg.meta.max_meta_iterations = as_count(values[i]);
        } else if (sweep == "data_multiplier") {
            cfg.meta.synth_multiplier_final = as_count(values[i]);
            if (cfg.meta.synth_multiplier_final < 1)
                throw ConfigError("data_multiplier sweep values must be >= 1");
        } else {
            cfg.split.seed_fraction = values[i];
        }
        cfg.output_dir = config.output_dir / (sweep + "_" + std::to_string(i));

        Pipeline pipeline(cfg, condition);
        FinalReport report = pipeline.run();

        auto cell = [&](const char* key) {
            auto it = report.mean.find(key);
            return it == report.mean.end() ? std::string("-") : format_g17(it->second);
        };
        table += format_g17(values[i]) + '\t' + cell("perplexity") + '\t' + cell("kf1") + '\t' +
                 cell("bleu4") + '\t' + cell("oov_rate") + '\n';
    }
    return table;
}

}  // namespace gcn
