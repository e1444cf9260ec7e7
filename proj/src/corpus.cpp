#include "gcn/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "gcn/retriever.hpp"
#include "json.hpp"

namespace gcn {

using nlohmann::json;

std::string to_string(Mode m) {
    return m == Mode::open_domain ? "open_domain" : "knowledge_grounded";
}

Mode mode_from_string(const std::string& s) {
    if (s == "open_domain") return Mode::open_domain;
    if (s == "knowledge_grounded") return Mode::knowledge_grounded;
    throw ConfigError("unknown mode: " + s);
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            flush();
        } else if (c < 0x80 && std::ispunct(c)) {
            flush();
            tokens.emplace_back(1, static_cast<char>(c));
        } else {
            word.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return tokens;
}

std::string join_tokens(std::span<const std::string> tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

Utterance Utterance::from_text(Speaker s, std::string text) {
    Utterance u;
    u.speaker = s;
    u.tokens = tokenize(text);
    u.raw_text = std::move(text);
    return u;
}

// --- Vocabulary ---------------------------------------------------------

namespace {
const std::vector<std::string> kReservedTokens = {
    "<pad>", "<bos>", "<eos>", "<ctx>", "<knw>", "<rsp>", "<unk>",
};
}

bool is_reserved_marker(const std::string& token) {
    return std::find(kReservedTokens.begin(), kReservedTokens.end(), token) !=
           kReservedTokens.end();
}

Vocabulary::Vocabulary() {
    id_to_token_ = kReservedTokens;
    for (int i = 0; i < kNumReserved; ++i) token_to_id_[id_to_token_[i]] = i;
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    if (id < 0 || id >= size()) throw DataError("token id out of range: " + std::to_string(id));
    return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
    return token_to_id_.count(token) > 0;
}

uint64_t Vocabulary::hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : id_to_token_) {
        h = splitmix64(h ^ fnv1a64(t));
    }
    return h;
}

Vocabulary Vocabulary::from_ordered_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (const auto& t : tokens) {
        if (v.token_to_id_.count(t)) throw DataError("duplicate vocabulary token: " + t);
        v.token_to_id_[t] = v.size();
        v.id_to_token_.push_back(t);
    }
    return v;
}

void count_tokens(std::span<const std::string> tokens, TokenCounts& counts) {
    for (const auto& t : tokens) ++counts[t];
}

TokenCounts count_datapoint_tokens(std::span<const DataPoint> datapoints) {
    TokenCounts counts;
    for (const auto& dp : datapoints) {
        for (const auto& u : dp.context) count_tokens(u.tokens, counts);
        for (const auto& k : dp.knowledge) count_tokens(k.tokens, counts);
        count_tokens(dp.response.tokens, counts);
    }
    return counts;
}

TokenCounts count_dialogue_tokens(std::span<const Dialogue> dialogues) {
    TokenCounts counts;
    for (const auto& d : dialogues)
        for (const auto& u : d.turns) count_tokens(u.tokens, counts);
    return counts;
}

TokenCounts count_piece_tokens(std::span<const KnowledgePiece> pieces) {
    TokenCounts counts;
    for (const auto& p : pieces) count_tokens(p.tokens, counts);
    return counts;
}

Vocabulary build_vocabulary(const TokenCounts& counts, int min_count) {
    std::vector<std::pair<std::string, long>> kept;
    for (const auto& [tok, n] : counts)
        if (n >= min_count) kept.emplace_back(tok, n);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> ordered;
    ordered.reserve(kept.size());
    for (auto& [tok, n] : kept) ordered.push_back(std::move(tok));
    return Vocabulary::from_ordered_tokens(ordered);
}

Vocabulary build_vocabulary(std::span<const DataPoint> datapoints, int min_count) {
    return build_vocabulary(count_datapoint_tokens(datapoints), min_count);
}

// --- Corpus file I/O ----------------------------------------------------

namespace {

Utterance parse_turn(const json& jt, const std::string& where) {
    if (!jt.is_object() || !jt.contains("speaker") || !jt.contains("text"))
        throw ParseError(where + ": turn must have speaker and text");
    std::string sp = jt.at("speaker").get<std::string>();
    if (sp != "A" && sp != "B") throw ParseError(where + ": speaker must be A or B");
    auto u = Utterance::from_text(sp == "A" ? Speaker::A : Speaker::B,
                                  jt.at("text").get<std::string>());
    if (u.tokens.empty()) throw ParseError(where + ": turn text has no tokens");
    return u;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file: " + path.string());

    Corpus corpus;
    std::set<std::string> dialogue_ids;
    std::set<std::string> piece_ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = path.filename().string() + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(where + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("type"))
            throw ParseError(where + ": record must be an object with a type field");
        std::string type = j.at("type").get<std::string>();
        if (type == "fact") {
            KnowledgePiece p;
            p.id = j.at("id").get<std::string>();
            p.text = j.at("text").get<std::string>();
            p.tokens = tokenize(p.text);
            if (p.tokens.empty()) throw ParseError(where + ": fact text has no tokens");
            if (!piece_ids.insert(p.id).second)
                throw DataError(where + ": duplicate fact id " + p.id);
            corpus.pieces.push_back(std::move(p));
        } else if (type == "dialogue") {
            Dialogue d;
            d.id = j.at("id").get<std::string>();
            if (!j.contains("turns") || !j.at("turns").is_array())
                throw ParseError(where + ": dialogue must have a turns array");
            for (const auto& jt : j.at("turns")) d.turns.push_back(parse_turn(jt, where));
            if (d.turns.size() < 2) throw ParseError(where + ": dialogue needs at least 2 turns");
            for (std::size_t i = 1; i < d.turns.size(); ++i)
                if (d.turns[i].speaker == d.turns[i - 1].speaker)
                    throw ParseError(where + ": turns must alternate speakers");
            if (j.contains("knowledge_refs"))
                d.knowledge_refs = j.at("knowledge_refs").get<std::vector<std::string>>();
            if (!dialogue_ids.insert(d.id).second)
                throw DataError(where + ": duplicate dialogue id " + d.id);
            corpus.dialogues.push_back(std::move(d));
        } else {
            throw ParseError(where + ": unknown record type " + type);
        }
    }

    for (const auto& d : corpus.dialogues)
        for (const auto& ref : d.knowledge_refs)
            if (!piece_ids.count(ref))
                throw DataError("dialogue " + d.id + " references unknown knowledge piece " + ref);
    return corpus;
}

namespace {

json turn_to_json(const Utterance& u) {
    return json{{"speaker", u.speaker == Speaker::A ? "A" : "B"}, {"text", u.raw_text}};
}

std::string dialogue_line(const Dialogue& d) {
    json turns = json::array();
    for (const auto& u : d.turns) turns.push_back(turn_to_json(u));
    json j{{"type", "dialogue"}, {"id", d.id}, {"turns", turns},
           {"knowledge_refs", d.knowledge_refs}};
    return j.dump();
}

}  // namespace

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
    std::ostringstream out;
    for (const auto& p : corpus.pieces) {
        json j{{"type", "fact"}, {"id", p.id}, {"text", p.text}};
        out << j.dump() << "\n";
    }
    for (const auto& d : corpus.dialogues) out << dialogue_line(d) << "\n";
    write_file_atomic(path, out.str());
}

void save_datapoints(const std::filesystem::path& path, std::span<const DataPoint> datapoints,
                     const std::string& origin_note, int skipped) {
    std::ostringstream out;
    int idx = 0;
    for (const auto& dp : datapoints) {
        Dialogue d;
        d.id = "dp" + std::to_string(idx++);
        d.turns = dp.context;
        d.turns.push_back(dp.response);
        for (const auto& k : dp.knowledge) d.knowledge_refs.push_back(k.id);
        out << dialogue_line(d) << "\n";
    }
    write_file_atomic(path, out.str());

    json manifest{{"origin", origin_note},
                  {"count", datapoints.size()},
                  {"skipped", skipped},
                  {"format", "corpus-jsonl"}};
    auto mpath = path;
    mpath += ".manifest.json";
    write_file_atomic(mpath, manifest.dump(2) + "\n");
}

// --- Split and extraction ----------------------------------------------

Split split(const std::vector<Dialogue>& dialogues, const SplitSpec& spec) {
    if (spec.seed_fraction <= 0.0 || spec.seed_fraction > 1.0)
        throw ConfigError("seed_fraction must be in (0,1]");
    if (spec.val_fraction < 0.0 || spec.seed_fraction + spec.val_fraction > 1.0)
        throw ConfigError("seed_fraction + val_fraction must not exceed 1");

    const std::size_t total = dialogues.size();
    const auto n_seed = static_cast<std::size_t>(spec.seed_fraction * static_cast<double>(total));
    const auto n_val = static_cast<std::size_t>(spec.val_fraction * static_cast<double>(total));
    if (n_seed == 0)
        throw ConfigError("seed_fraction " + std::to_string(spec.seed_fraction) + " yields zero seed dialogues on " +
                          std::to_string(total) + " dialogues");

    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    Rng rng(derive_seed(spec.rng_seed, "split"));
    rng.shuffle(order);

    Split out;
    for (std::size_t i = 0; i < total; ++i) {
        const Dialogue& d = dialogues[order[i]];
        if (i < n_seed)
            out.seed.push_back(d);
        else if (i < n_seed + n_val)
            out.val.push_back(d);
        else
            out.test.push_back(d);
    }
    return out;
}

ExtractResult extract_datapoints(std::span<const Dialogue> dialogues, int context_turns, Mode mode,
                                 const TfidfIndex* retriever, int top_m) {
    if (context_turns < 1) throw ConfigError("context_turns must be >= 1");
    if (mode == Mode::knowledge_grounded && retriever == nullptr)
        throw ConfigError("knowledge_grounded extraction requires a retriever index");

    ExtractResult out;
    const auto t = static_cast<std::size_t>(context_turns);
    for (const auto& d : dialogues) {
        if (d.turns.size() < t + 1) {
            ++out.skipped_dialogues;
            continue;
        }
        for (std::size_t i = t; i < d.turns.size(); ++i) {
            DataPoint dp;
            dp.context.assign(d.turns.begin() + static_cast<std::ptrdiff_t>(i - t),
                              d.turns.begin() + static_cast<std::ptrdiff_t>(i));
            dp.response = d.turns[i];
            dp.origin = Origin::seed;
            dp.dialogue_id = d.id;
            dp.response_turn_index = static_cast<int>(i);
            dp.gold_knowledge_refs = d.knowledge_refs;
            if (mode == Mode::knowledge_grounded) {
                for (auto& scored : retriever->top_m(dp.context, top_m))
                    dp.knowledge.push_back(std::move(scored.piece));
            }
            out.datapoints.push_back(std::move(dp));
        }
    }
    return out;
}

}  // namespace gcn
