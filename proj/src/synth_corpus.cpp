#include "gcn/synth_corpus.hpp"

#include <array>
#include <map>
#include <set>
#include <string>

namespace gcn {

namespace {

constexpr std::array kAdjectives = {
    "old",    "glass",  "stone",   "copper", "marble", "wooden",
    "silver", "granite", "iron",   "velvet", "royal",  "ancient",
    "coastal", "painted", "hidden", "narrow", "golden", "quiet",
};

constexpr std::array kNouns = {
    "lighthouse", "museum",  "bridge",  "observatory", "railway", "windmill",
    "aquarium",   "library", "theatre", "fountain",    "foundry", "orchard",
    "harbor",     "garden",  "mill",    "tower",       "quarry",  "market",
};

constexpr std::array kMainPredicates = {
    "was built in %Y",
    "was discovered in %Y",
    "was restored in %Y",
    "opened to visitors in %Y",
    "was founded in %Y",
    "first appeared on maps in %Y",
};

constexpr std::array kSecondaryClauses = {
    "attracts nearly %N visitors every %S",
    "holds about %N rare %A",
    "spans almost %N meters across the %T",
    "welcomes travelers through the long %S months",
    "employs around %N local guides",
    "stores over %N antique %A",
};

constexpr std::array kNumbers = {"40", "90", "120", "250", "400", "700", "1500", "3000", "6000", "9000"};
constexpr std::array kSeasons = {"spring", "summer", "autumn", "winter"};
constexpr std::array kArtifacts = {"maps", "coins", "fossils", "paintings", "lanterns", "manuscripts", "sculptures", "banners"};
constexpr std::array kTerrains = {"valley", "canyon", "marsh", "delta"};

constexpr std::array kOpeners = {
    "hello there , how are you doing today ?",
    "hey , good to see you again .",
    "hi friend , what have you been up to ?",
};

constexpr std::array kOpenerReplies = {
    "i am doing well , thanks for asking .",
    "pretty good , i have been reading a lot lately .",
    "not bad at all , just enjoying the day .",
};

constexpr std::array kQuestions = {
    "have you heard about the %X ?",
    "do you know anything about the %X ?",
    "what can you tell me about the %X ?",
    "someone mentioned the %X yesterday , do you know it ?",
};

// %M = main clause, %C = secondary clause of the grounding fact.
constexpr std::array kGroundedReplies = {
    "i read that the %X %M .",
    "apparently the %X %C .",
    "i heard the %X %M and %C .",
    "well , the %X %C , which is quite impressive .",
};

struct FactParts {
    std::string subject;
    std::string main_clause;
    std::string secondary_clause;
    std::string text() const { return "the " + subject + " " + main_clause + " and " + secondary_clause + " ."; }
};

template <class Arr>
const char* pick(Rng& rng, const Arr& options) {
    return options[rng.below(options.size())];
}

void replace_all(std::string& s, std::string_view key, std::string_view value) {
    for (std::size_t pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos))
        s.replace(pos, key.size(), value);
}

std::string fill(std::string tmpl, Rng& rng) {
    replace_all(tmpl, "%Y", std::to_string(1650 + rng.below(350)));
    replace_all(tmpl, "%N", pick(rng, kNumbers));
    replace_all(tmpl, "%S", pick(rng, kSeasons));
    replace_all(tmpl, "%A", pick(rng, kArtifacts));
    replace_all(tmpl, "%T", pick(rng, kTerrains));
    return tmpl;
}

FactParts make_fact(Rng& rng, const std::string& subject) {
    FactParts f;
    f.subject = subject;
    f.main_clause = fill(pick(rng, kMainPredicates), rng);
    f.secondary_clause = fill(pick(rng, kSecondaryClauses), rng);
    return f;
}

}  // namespace

void SynthCorpusSpec::validate() const {
    if (num_dialogues < 1) throw ConfigError("num_dialogues must be >= 1");
    if (fact_bank_size < 1) throw ConfigError("fact_bank_size must be >= 1");
    if (min_facts_per_dialogue < 1 || max_facts_per_dialogue < min_facts_per_dialogue)
        throw ConfigError("facts per dialogue range is invalid");
    if (max_facts_per_dialogue > fact_bank_size)
        throw ConfigError("max_facts_per_dialogue exceeds fact bank size");
    if (static_cast<std::size_t>(fact_bank_size) > kAdjectives.size() * kNouns.size())
        throw ConfigError("fact bank size exceeds distinct subject combinations");
}

double token_overlap_fraction(std::span<const std::string> tokens,
                              std::span<const std::string> reference) {
    if (tokens.empty()) return 0.0;
    std::map<std::string, int> avail;
    for (const auto& t : reference) ++avail[t];
    int hit = 0;
    for (const auto& t : tokens) {
        auto it = avail.find(t);
        if (it != avail.end() && it->second > 0) {
            --it->second;
            ++hit;
        }
    }
    return static_cast<double>(hit) / static_cast<double>(tokens.size());
}

Corpus generate_synthetic_corpus(const SynthCorpusSpec& spec) {
    spec.validate();
    Corpus corpus;

    // Distinct subjects so facts are separable by the retriever.
    Rng fact_rng(derive_seed(spec.rng_seed, "fact-bank"));
    std::vector<std::size_t> combos(kAdjectives.size() * kNouns.size());
    for (std::size_t i = 0; i < combos.size(); ++i) combos[i] = i;
    fact_rng.shuffle(combos);

    std::vector<FactParts> facts;
    for (int i = 0; i < spec.fact_bank_size; ++i) {
        auto combo = combos[static_cast<std::size_t>(i)];
        std::string subject = std::string(kAdjectives[combo / kNouns.size()]) + " " +
                              kNouns[combo % kNouns.size()];
        facts.push_back(make_fact(fact_rng, subject));
        KnowledgePiece p;
        p.id = "f" + std::to_string(i);
        p.text = facts.back().text();
        p.tokens = tokenize(p.text);
        corpus.pieces.push_back(std::move(p));
    }

    for (int di = 0; di < spec.num_dialogues; ++di) {
        Rng rng(derive_seed(spec.rng_seed, "dialogue", static_cast<uint64_t>(di)));
        Dialogue d;
        d.id = "d" + std::to_string(di);

        const int span = spec.max_facts_per_dialogue - spec.min_facts_per_dialogue + 1;
        const int n_facts = spec.min_facts_per_dialogue + static_cast<int>(rng.below(static_cast<std::size_t>(span)));
        std::set<std::size_t> chosen;
        while (static_cast<int>(chosen.size()) < n_facts)
            chosen.insert(rng.below(facts.size()));

        d.turns.push_back(Utterance::from_text(Speaker::A, pick(rng, kOpeners)));
        d.turns.push_back(Utterance::from_text(Speaker::B, pick(rng, kOpenerReplies)));

        for (std::size_t fi : chosen) {
            const FactParts& f = facts[fi];
            d.knowledge_refs.push_back(corpus.pieces[fi].id);

            std::string q = pick(rng, kQuestions);
            replace_all(q, "%X", f.subject);
            d.turns.push_back(Utterance::from_text(Speaker::A, q));

            std::string a = pick(rng, kGroundedReplies);
            replace_all(a, "%X", f.subject);
            replace_all(a, "%M", f.main_clause);
            replace_all(a, "%C", f.secondary_clause);
            auto reply = Utterance::from_text(Speaker::B, a);
            if (token_overlap_fraction(reply.tokens, corpus.pieces[fi].tokens) < 0.3)
                throw DataError("grammar produced a reply below the grounding overlap floor");
            d.turns.push_back(std::move(reply));
        }
        corpus.dialogues.push_back(std::move(d));
    }
    return corpus;
}

}  // namespace gcn
