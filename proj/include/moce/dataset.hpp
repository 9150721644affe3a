// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0
//
// Instruction/response records, the whitespace vocabulary, and the
// synthetic corpora used by the toy runs.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace moce {

struct InstructionRecord {
    std::string id;
    std::string instruction;
    std::string response;
    std::optional<std::string> source;

    bool operator==(const InstructionRecord&) const = default;
};

/// One JSON object per line with string fields `id`, `instruction`,
/// `response` and optional `source`. Blank lines are skipped.
std::vector<InstructionRecord> read_jsonl(std::istream& is, const std::string& origin);
std::vector<InstructionRecord> ingest_dataset(const std::string& path);
void write_jsonl(std::ostream& os, const std::vector<InstructionRecord>& records);
void save_dataset(const std::string& path, const std::vector<InstructionRecord>& records);

/// Whitespace tokens with a byte fallback: a word missing from the table is
/// spelled with `<0xNN>` tokens, and bytes missing too become `<unk>`.
class Vocabulary {
public:
    static constexpr std::size_t kPad = 0, kBos = 1, kSep = 2, kEos = 3, kUnk = 4;

    Vocabulary();
    /// Words and bytes seen in instructions and responses, in sorted order
    /// after the special tokens.
    static Vocabulary build(const std::vector<InstructionRecord>& records);

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(std::size_t id) const { return tokens_.at(id); }
    std::optional<std::size_t> find(const std::string& token) const;

    std::vector<std::size_t> encode(std::string_view text) const;
    std::string decode(const std::vector<std::size_t>& ids) const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    void add(const std::string& token);

    std::vector<std::string> tokens_;
    std::map<std::string, std::size_t> index_;
};

/// `<bos> instruction <sep> response <eos>` shifted into next-token pairs.
struct Example {
    std::vector<std::size_t> inputs;  // all tokens but the last
    std::vector<std::size_t> targets; // all tokens but the first
    std::vector<bool> supervised;     // targets inside the response span
    std::vector<std::size_t> prompt;  // `<bos> instruction <sep>`
    std::vector<std::size_t> response; // response tokens without `<eos>`
};

Example encode_example(const Vocabulary& vocab, const InstructionRecord& record);

/// Two disjoint dialects. Dialect A ("shift a3 a5 ..." -> each digit plus
/// one, mod 10) uses tokens a0..a9; dialect B ("reverse b2 b7 ..." -> the
/// reversed list) uses b0..b9. Each record picks a dialect with equal odds.
std::vector<InstructionRecord> make_two_dialect_corpus(std::size_t count, std::uint64_t seed,
                                                       std::size_t min_len = 2,
                                                       std::size_t max_len = 5);

/// Dialect-A copy records whose tokens are mostly `a0`, so identical token
/// states dominate every batch.
std::vector<InstructionRecord> make_skewed_corpus(std::size_t count, std::uint64_t seed,
                                                  double dominant_share = 0.8);

} // namespace moce
