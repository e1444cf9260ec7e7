#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "gcn/corpus.hpp"
#include "gcn/retriever.hpp"

using namespace gcn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "gcn_test_corpus";
    fs::create_directories(dir);
    return dir;
}

Dialogue make_dialogue(const std::string& id, const std::vector<std::string>& texts,
                       std::vector<std::string> refs = {}) {
    Dialogue d;
    d.id = id;
    for (std::size_t i = 0; i < texts.size(); ++i)
        d.turns.push_back(Utterance::from_text(i % 2 == 0 ? Speaker::A : Speaker::B, texts[i]));
    d.knowledge_refs = std::move(refs);
    return d;
}

}  // namespace

TEST_CASE("tokenize lowercases and isolates punctuation") {
    CHECK(tokenize("Hello, do you watch football?") ==
          std::vector<std::string>{"hello", ",", "do", "you", "watch", "football", "?"});
    CHECK(tokenize("") == std::vector<std::string>{});
    CHECK(tokenize(" \t\n ") == std::vector<std::string>{});
    CHECK(tokenize("ABC") == std::vector<std::string>{"abc"});
    CHECK(tokenize("don't stop") == std::vector<std::string>{"don", "'", "t", "stop"});
}

TEST_CASE("tokenize is idempotent under join") {
    for (const char* s : {"Hello, World!", "a  b\tc", "x...y", "MiXeD CaSe?", "one"}) {
        auto once = tokenize(s);
        CHECK(tokenize(join_tokens(once)) == once);
    }
}

TEST_CASE("utterance tokens always derive from raw text") {
    auto u = Utterance::from_text(Speaker::B, "What A Day!");
    CHECK(u.speaker == Speaker::B);
    CHECK(u.raw_text == "What A Day!");
    CHECK(u.tokens == tokenize(u.raw_text));
}

TEST_CASE("corpus file round trip") {
    auto path = temp_dir() / "mini.jsonl";
    {
        std::ofstream out(path);
        out << R"({"type":"fact","id":"f1","text":"the sky is blue"})" << "\n";
        out << R"({"type":"dialogue","id":"d1","turns":[{"speaker":"A","text":"Hi there"},{"speaker":"B","text":"Hello friend"}],"knowledge_refs":["f1"]})"
            << "\n";
    }
    auto corpus = load_corpus(path);
    REQUIRE(corpus.dialogues.size() == 1);
    REQUIRE(corpus.pieces.size() == 1);
    CHECK(corpus.dialogues[0].id == "d1");
    CHECK(corpus.dialogues[0].turns.size() == 2);
    CHECK(corpus.dialogues[0].knowledge_refs == std::vector<std::string>{"f1"});
    CHECK(corpus.pieces[0].tokens == tokenize("the sky is blue"));

    auto copy_path = temp_dir() / "mini_copy.jsonl";
    save_corpus(copy_path, corpus);
    auto reread = load_corpus(copy_path);
    CHECK(reread.dialogues.size() == 1);
    CHECK(reread.dialogues[0].turns[1].raw_text == "Hello friend");
    CHECK(reread.pieces[0].id == "f1");
}

TEST_CASE("empty corpus file loads as empty corpus") {
    auto path = temp_dir() / "empty.jsonl";
    std::ofstream(path).close();
    auto corpus = load_corpus(path);
    CHECK(corpus.dialogues.empty());
    CHECK(corpus.pieces.empty());
}

TEST_CASE("malformed corpus line reports its line number") {
    auto path = temp_dir() / "bad.jsonl";
    {
        std::ofstream out(path);
        out << R"({"type":"fact","id":"f1","text":"ok"})" << "\n";
        out << "not json at all\n";
    }
    try {
        load_corpus(path);
        FAIL("expected parse error");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
}

TEST_CASE("duplicate ids and dangling references are rejected") {
    auto dir = temp_dir();
    {
        std::ofstream out(dir / "dup.jsonl");
        out << R"({"type":"dialogue","id":"d1","turns":[{"speaker":"A","text":"a"},{"speaker":"B","text":"b"}],"knowledge_refs":[]})"
            << "\n";
        out << R"({"type":"dialogue","id":"d1","turns":[{"speaker":"A","text":"a"},{"speaker":"B","text":"b"}],"knowledge_refs":[]})"
            << "\n";
    }
    CHECK_THROWS_AS(load_corpus(dir / "dup.jsonl"), DataError);

    {
        std::ofstream out(dir / "dangle.jsonl");
        out << R"({"type":"dialogue","id":"d1","turns":[{"speaker":"A","text":"a"},{"speaker":"B","text":"b"}],"knowledge_refs":["missing"]})"
            << "\n";
    }
    CHECK_THROWS_AS(load_corpus(dir / "dangle.jsonl"), DataError);
}

TEST_CASE("split sizes follow the floor rule with remainder to test") {
    std::vector<Dialogue> dialogues;
    for (int i = 0; i < 100; ++i)
        dialogues.push_back(make_dialogue("d" + std::to_string(i), {"hi", "yo"}));

    SplitSpec spec;
    spec.seed_fraction = 0.10;
    spec.val_fraction = 0.10;
    spec.rng_seed = 42;
    auto parts = split(dialogues, spec);
    CHECK(parts.seed.size() == 10);
    CHECK(parts.val.size() == 10);
    CHECK(parts.test.size() == 80);

    // Partition: disjoint and exhaustive.
    std::set<std::string> ids;
    for (auto* group : {&parts.seed, &parts.val, &parts.test})
        for (auto& d : *group) CHECK(ids.insert(d.id).second);
    CHECK(ids.size() == 100);
}

TEST_CASE("split is deterministic in its seed") {
    std::vector<Dialogue> dialogues;
    for (int i = 0; i < 37; ++i)
        dialogues.push_back(make_dialogue("d" + std::to_string(i), {"hi", "yo"}));
    SplitSpec spec;
    spec.rng_seed = 9;
    auto a = split(dialogues, spec);
    auto b = split(dialogues, spec);
    for (std::size_t i = 0; i < a.seed.size(); ++i) CHECK(a.seed[i].id == b.seed[i].id);
    for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(a.test[i].id == b.test[i].id);

    spec.rng_seed = 10;
    auto c = split(dialogues, spec);
    bool same = true;
    for (std::size_t i = 0; i < a.seed.size() && same; ++i) same = a.seed[i].id == c.seed[i].id;
    CHECK_FALSE(same);  // ludicrously unlikely to collide
}

TEST_CASE("split rejects fractions that floor to zero seed dialogues") {
    std::vector<Dialogue> dialogues;
    for (int i = 0; i < 86; ++i)
        dialogues.push_back(make_dialogue("d" + std::to_string(i), {"hi", "yo"}));
    SplitSpec spec;
    spec.seed_fraction = 0.01;
    spec.rng_seed = 1;
    CHECK_THROWS_AS(split(dialogues, spec), ConfigError);
}

TEST_CASE("extract yields one datapoint per eligible turn") {
    auto d = make_dialogue("d1", {"one fish", "two fish", "red fish", "blue fish", "new fish"});
    auto res = extract_datapoints(std::span(&d, 1), 2, Mode::open_domain, nullptr, 3);
    CHECK(res.skipped_dialogues == 0);
    REQUIRE(res.datapoints.size() == 3);
    for (auto& dp : res.datapoints) {
        CHECK(dp.context.size() == 2);
        CHECK(dp.knowledge.empty());
        CHECK(dp.dialogue_id == "d1");
    }
    // Context + response reproduce a contiguous window of the dialogue.
    for (auto& dp : res.datapoints) {
        int i = dp.response_turn_index;
        CHECK(dp.context[0].raw_text == d.turns[i - 2].raw_text);
        CHECK(dp.context[1].raw_text == d.turns[i - 1].raw_text);
        CHECK(dp.response.raw_text == d.turns[i].raw_text);
    }
}

TEST_CASE("short dialogues are skipped and counted") {
    auto d = make_dialogue("d1", {"hi", "yo"});
    auto res = extract_datapoints(std::span(&d, 1), 2, Mode::open_domain, nullptr, 3);
    CHECK(res.datapoints.empty());
    CHECK(res.skipped_dialogues == 1);
}

TEST_CASE("knowledge grounded extraction caps pieces at m") {
    std::vector<KnowledgePiece> pieces;
    for (int i = 0; i < 5; ++i) {
        KnowledgePiece p;
        p.id = "f" + std::to_string(i);
        p.text = "fact number " + std::to_string(i);
        p.tokens = tokenize(p.text);
        pieces.push_back(p);
    }
    auto index = TfidfIndex::build(pieces);
    auto d = make_dialogue("d1", {"fact number 1", "fact number 2", "what fact", "fact number 3"});
    auto res = extract_datapoints(std::span(&d, 1), 2, Mode::knowledge_grounded, &index, 3);
    REQUIRE(res.datapoints.size() == 2);
    for (auto& dp : res.datapoints) {
        CHECK(dp.knowledge.size() <= 3);
        CHECK(!dp.knowledge.empty());
    }
}

TEST_CASE("vocabulary honours min count and deterministic order") {
    TokenCounts counts;
    count_tokens(tokenize("a a b"), counts);
    auto v2 = build_vocabulary(counts, 2);
    CHECK(v2.contains("a"));
    CHECK_FALSE(v2.contains("b"));
    auto v1 = build_vocabulary(counts, 1);
    CHECK(v1.contains("a"));
    CHECK(v1.contains("b"));

    // Same multiset of tokens, different arrival order → identical vocabulary.
    TokenCounts other;
    count_tokens(tokenize("b a a"), other);
    auto v3 = build_vocabulary(other, 1);
    CHECK(v1.hash() == v3.hash());
    CHECK(v1.size() == v3.size());

    // Frequency descending, lexicographic ties, after the reserved block.
    CHECK(v1.id_of("a") == kNumReserved);
    CHECK(v1.id_of("b") == kNumReserved + 1);
}

TEST_CASE("vocabulary reserved ids are fixed") {
    Vocabulary v;
    CHECK(v.size() == kNumReserved);
    CHECK(v.id_of("<pad>") == kPad);
    CHECK(v.id_of("<eos>") == kEos);
    CHECK(v.id_of("<unk>") == kUnk);
    CHECK(v.id_of("anything else") == kUnk);
    CHECK(v.token_of(kSepRsp) == "<rsp>");
    CHECK(is_reserved_marker("<knw>"));
    CHECK_FALSE(is_reserved_marker("knw"));
}
