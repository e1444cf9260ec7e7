#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gcn/common.hpp"

namespace gcn {

enum class Speaker { A, B };
enum class Origin { seed, synthetic };
enum class Mode { open_domain, knowledge_grounded };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

/// Lowercase whitespace/punctuation tokenization; punctuation marks become
/// single-character tokens. Idempotent under join-with-spaces.
std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

struct Utterance {
    Speaker speaker = Speaker::A;
    std::vector<std::string> tokens;  // always tokenize(raw_text)
    std::string raw_text;

    static Utterance from_text(Speaker s, std::string text);
};

struct Dialogue {
    std::string id;
    std::vector<Utterance> turns;  // alternating speakers, length >= 2
    std::vector<std::string> knowledge_refs;
};

struct KnowledgePiece {
    std::string id;
    std::string text;
    std::vector<std::string> tokens;
};

struct DataPoint {
    std::vector<Utterance> context;
    std::vector<KnowledgePiece> knowledge;  // empty in open-domain mode
    Utterance response;
    Origin origin = Origin::seed;
    // Provenance, used for evaluation and round-trip checks.
    std::string dialogue_id;
    int response_turn_index = -1;
    std::vector<std::string> gold_knowledge_refs;
};

struct SplitSpec {
    double seed_fraction = 0.10;
    double val_fraction = 0.10;
    uint64_t rng_seed = 0;
};

struct Corpus {
    std::vector<Dialogue> dialogues;
    std::vector<KnowledgePiece> pieces;
};

// Reserved token ids are fixed so encodings are stable across vocabularies.
enum ReservedId : int {
    kPad = 0,
    kBos = 1,
    kEos = 2,
    kSepCtx = 3,
    kSepKnw = 4,
    kSepRsp = 5,
    kUnk = 6,
    kNumReserved = 7,
};

/// True for the seven fixed marker strings ("<pad>" ... "<unk>").
bool is_reserved_marker(const std::string& token);

class Vocabulary {
public:
    Vocabulary();

    int id_of(const std::string& token) const;  // kUnk when absent
    const std::string& token_of(int id) const;
    bool contains(const std::string& token) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }

    /// Order-sensitive content hash; stored in checkpoints to catch mismatches.
    uint64_t hash() const;

    /// tokens must be the non-reserved vocabulary in final id order.
    static Vocabulary from_ordered_tokens(const std::vector<std::string>& tokens);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

using TokenCounts = std::map<std::string, long>;

void count_tokens(std::span<const std::string> tokens, TokenCounts& counts);
TokenCounts count_datapoint_tokens(std::span<const DataPoint> datapoints);
TokenCounts count_dialogue_tokens(std::span<const Dialogue> dialogues);
TokenCounts count_piece_tokens(std::span<const KnowledgePiece> pieces);

/// Frequency-descending, then lexicographic; tokens below min_count dropped.
Vocabulary build_vocabulary(const TokenCounts& counts, int min_count);
Vocabulary build_vocabulary(std::span<const DataPoint> datapoints, int min_count);

Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);

/// Writes generated datapoints in the corpus line format plus a sidecar
/// manifest (<path>.manifest.json) marking their origin.
void save_datapoints(const std::filesystem::path& path, std::span<const DataPoint> datapoints,
                     const std::string& origin_note, int skipped);

struct Split {
    std::vector<Dialogue> seed;
    std::vector<Dialogue> val;
    std::vector<Dialogue> test;
};

/// Dialogue-level split: floor(fraction * total) each for seed and val,
/// remainder to test. Deterministic in spec.rng_seed.
Split split(const std::vector<Dialogue>& dialogues, const SplitSpec& spec);

class TfidfIndex;

struct ExtractResult {
    std::vector<DataPoint> datapoints;
    int skipped_dialogues = 0;
};

/// One datapoint per turn with at least context_turns turns before it.
/// retriever may be null in open-domain mode.
ExtractResult extract_datapoints(std::span<const Dialogue> dialogues, int context_turns, Mode mode,
                                 const TfidfIndex* retriever, int top_m);

}  // namespace gcn
