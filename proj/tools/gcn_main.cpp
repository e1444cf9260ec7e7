#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gcn/metaloop.hpp"
#include "gcn/reward.hpp"
#include "gcn/run_config.hpp"
#include "gcn/synth_corpus.hpp"

using namespace gcn;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigFlags {
    std::string config_file;
    std::string mode = "knowledge_grounded";
    std::string corpus;
    std::string out;
    uint64_t seed = 0;
    std::vector<std::string> sets;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
    cmd->add_option("--config", f.config_file, "run config file (json)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--mode", f.mode, "mode for built-in defaults when no --config is given")
        ->check(CLI::IsMember({"open_domain", "knowledge_grounded"}));
    cmd->add_option("--corpus", f.corpus, "corpus file, overrides the config");
    cmd->add_option("--out", f.out, "output directory, overrides the config");
    cmd->add_option("--seed", f.seed, "global rng seed, overrides the config");
    cmd->add_option("--set", f.sets, "dotted config override, e.g. ppo.learning_rate=3e-4")
        ->take_all();
}

// Precedence: named flags > --set > config file > mode defaults.
RunConfig build_config(const CLI::App* cmd, const ConfigFlags& f) {
    json doc = f.config_file.empty()
                   ? RunConfig::defaults(mode_from_string(f.mode)).to_json()
                   : RunConfig::load(f.config_file).to_json();
    for (const std::string& s : f.sets) RunConfig::apply_override(doc, s);
    RunConfig cfg = RunConfig::from_json(doc);
    if (cmd->count("--corpus") > 0) cfg.corpus_path = f.corpus;
    if (cmd->count("--seed") > 0) cfg.rng_seed = f.seed;
    if (cmd->count("--out") > 0) {
        cfg.output_dir = f.out;
    } else if (const char* root = std::getenv("GCN_OUTPUT_ROOT");
               root != nullptr && cfg.output_dir.is_relative()) {
        cfg.output_dir = fs::path(root) / cfg.output_dir;
    }
    return cfg;
}

int cmd_synth_corpus(const std::string& out, const SynthCorpusSpec& spec) {
    spec.validate();
    Corpus corpus = generate_synthetic_corpus(spec);
    save_corpus(out, corpus);
    std::cout << "wrote " << corpus.dialogues.size() << " dialogues, " << corpus.pieces.size()
              << " knowledge pieces to " << out << "\n";
    return 0;
}

int cmd_train(const CLI::App* cmd, const ConfigFlags& flags, const std::string& condition_name) {
    RunConfig cfg = build_config(cmd, flags);
    Condition condition = condition_from_string(condition_name);
    cfg.output_dir = cfg.output_dir / condition_name;
    cfg.validate();

    Pipeline pipeline(cfg, condition);
    FinalReport report = pipeline.run();
    std::cout << report.to_text();
    std::cout << "run directory: " << pipeline.dir().string() << "\n";
    return 0;
}

int cmd_evaluate(const std::string& run_dir, const std::string& split_name, int run_index) {
    const fs::path dir = run_dir;
    json snapshot;
    try {
        snapshot = json::parse(read_file(dir / "config.json"));
    } catch (const json::exception& e) {
        throw ParseError(run_dir + "/config.json: " + e.what());
    }
    RunConfig cfg = RunConfig::from_json(snapshot);
    PreparedData data = prepare_data(cfg);
    const std::vector<DataPoint>& dps = split_name == "val" ? data.val_dps : data.test_dps;

    const std::string tag = "run" + std::to_string(run_index);
    ConditionalLM learner =
        load_checkpoint(dir / "checkpoints" / ("learner_" + tag + "_final.ckpt"), data.vocab);

    EmbeddingFn embedding_fn;
    const EmbeddingFn* embedding = nullptr;
    if (cfg.mode == Mode::open_domain) {
        ConditionalLM g_ref = load_checkpoint(
            dir / "checkpoints" / ("gen_" + tag + "_pretrained.ckpt"), data.vocab);
        embedding_fn = make_embedding_from_model(g_ref);
        embedding = &embedding_fn;
    }

    MetricReport report = evaluate_model(learner, dps, cfg.mode, embedding,
                                         cfg.sampling.max_new_tokens, data.corpus.pieces);
    for (const auto& [key, value] : report.to_flat())
        std::cout << key << '\t' << format_g17(value) << '\n';
    return 0;
}

int cmd_ablate(const CLI::App* cmd, const ConfigFlags& flags, const std::string& sweep,
               const std::vector<double>& values, std::string condition_name) {
    RunConfig cfg = build_config(cmd, flags);
    if (condition_name.empty())
        condition_name = sweep == "meta_iterations" ? "gcn-rl" : "gcn-no-rl";
    Condition condition = condition_from_string(condition_name);
    const fs::path base = cfg.output_dir;
    cfg.output_dir = base / ("ablate-" + sweep);
    cfg.validate();

    std::string table = run_ablation(sweep, values, cfg, condition);
    fs::create_directories(base);
    const fs::path table_path = base / ("ablation-" + sweep + ".tsv");
    write_file_atomic(table_path, table);
    std::cout << table;
    std::cout << "table: " << table_path.string() << "\n";
    return 0;
}

int cmd_compare(const std::vector<std::string>& run_dirs) {
    std::cout << "condition\tppl\tkf1\tbleu4\toov_rate\n";
    for (const std::string& run_dir : run_dirs) {
        const fs::path dir = run_dir;
        json snapshot;
        try {
            snapshot = json::parse(read_file(dir / "config.json"));
        } catch (const json::exception& e) {
            throw ParseError(run_dir + "/config.json: " + e.what());
        }
        const std::string condition = snapshot.value("condition", std::string("?"));

        std::map<std::string, std::string> means;
        std::istringstream lines(read_file(dir / "report.txt"));
        std::string line;
        while (std::getline(lines, line)) {
            std::istringstream cells(line);
            std::string key, mean;
            if (std::getline(cells, key, '\t') && std::getline(cells, mean, '\t'))
                means[key] = mean;
        }
        auto cell = [&](const char* key) {
            auto it = means.find(key);
            return it == means.end() ? std::string("-") : it->second;
        };
        std::cout << condition << '\t' << cell("perplexity") << '\t' << cell("kf1") << '\t'
                  << cell("bleu4") << '\t' << cell("oov_rate") << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conversational data generation: train a response generator against learner "
                 "feedback, then measure the learners it teaches."};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth-corpus", "generate a template-grammar desk corpus");
    std::string synth_out;
    SynthCorpusSpec synth_spec;
    synth->add_option("--out", synth_out, "corpus file to write")->required();
    synth->add_option("--dialogues", synth_spec.num_dialogues, "number of dialogues");
    synth->add_option("--facts", synth_spec.fact_bank_size, "knowledge bank size");
    synth->add_option("--min-facts", synth_spec.min_facts_per_dialogue, "facts per dialogue, low");
    synth->add_option("--max-facts", synth_spec.max_facts_per_dialogue, "facts per dialogue, high");
    synth->add_option("--seed", synth_spec.rng_seed, "corpus rng seed");

    auto* train = app.add_subcommand("train", "run one training condition end to end");
    ConfigFlags train_flags;
    std::string condition_name;
    train->add_option("--condition", condition_name, "training condition")
        ->required()
        ->check(CLI::IsMember({"baseline", "gcn-no-rl", "gcn-rl"}));
    add_config_flags(train, train_flags);

    auto* evaluate = app.add_subcommand("evaluate", "score a finished run on a held-out split");
    std::string eval_run, eval_split = "test";
    int eval_index = 0;
    evaluate->add_option("--run", eval_run, "run directory")->required();
    evaluate->add_option("--split", eval_split, "split to score")
        ->check(CLI::IsMember({"val", "test"}));
    evaluate->add_option("--run-index", eval_index, "which averaged run's learner to score")
        ->check(CLI::NonNegativeNumber);

    auto* ablate = app.add_subcommand("ablate", "sweep one knob, one pipeline per value");
    ConfigFlags ablate_flags;
    std::string sweep, ablate_condition;
    std::vector<double> values;
    ablate->add_option("--sweep", sweep, "knob to sweep")
        ->required()
        ->check(CLI::IsMember({"meta_iterations", "data_multiplier", "seed_fraction"}));
    ablate->add_option("--values", values, "comma-separated sweep values")
        ->required()
        ->delimiter(',');
    ablate->add_option("--condition", ablate_condition,
                       "condition per value (default: gcn-rl for meta_iterations, else gcn-no-rl)")
        ->check(CLI::IsMember({"baseline", "gcn-no-rl", "gcn-rl"}));
    add_config_flags(ablate, ablate_flags);

    auto* compare = app.add_subcommand("compare", "tabulate finished runs side by side");
    std::vector<std::string> compare_runs;
    compare->add_option("--runs", compare_runs, "run directories")->required()->take_all();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth_corpus(synth_out, synth_spec);
        if (train->parsed()) return cmd_train(train, train_flags, condition_name);
        if (evaluate->parsed()) return cmd_evaluate(eval_run, eval_split, eval_index);
        if (ablate->parsed())
            return cmd_ablate(ablate, ablate_flags, sweep, values, ablate_condition);
        if (compare->parsed()) return cmd_compare(compare_runs);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
