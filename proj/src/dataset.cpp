// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/dataset.hpp"

#include "moce/error.hpp"
#include "moce/random.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace moce {

namespace {

std::vector<std::string> split_words(std::string_view text)
{
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            if (!cur.empty())
                words.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty())
        words.push_back(std::move(cur));
    return words;
}

std::string byte_token(unsigned char b)
{
    char buf[8];
    std::snprintf(buf, sizeof(buf), "<0x%02X>", b);
    return buf;
}

std::string string_field(const nlohmann::json& obj, const char* name, const std::string& where,
                         bool required)
{
    const auto it = obj.find(name);
    if (it == obj.end()) {
        if (required)
            throw FormatError(where + ": missing field '" + name + "'");
        return {};
    }
    if (!it->is_string())
        throw FormatError(where + ": field '" + name + "' must be a string");
    return it->get<std::string>();
}

} // namespace

std::vector<InstructionRecord> read_jsonl(std::istream& is, const std::string& origin)
{
    std::vector<InstructionRecord> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(is, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const std::string where = origin + ": line " + std::to_string(number);
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(where + ": invalid JSON (" + e.what() + ")");
        }
        if (!obj.is_object())
            throw FormatError(where + ": expected a JSON object");
        InstructionRecord r;
        r.id = string_field(obj, "id", where, true);
        r.instruction = string_field(obj, "instruction", where, true);
        r.response = string_field(obj, "response", where, true);
        if (obj.contains("source"))
            r.source = string_field(obj, "source", where, true);
        if (split_words(r.instruction).empty())
            throw FormatError(where + ": empty instruction");
        out.push_back(std::move(r));
    }
    if (out.empty())
        throw ContractError(origin + ": no records");
    return out;
}

std::vector<InstructionRecord> ingest_dataset(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw FormatError("dataset: cannot open " + path);
    return read_jsonl(is, path);
}

void write_jsonl(std::ostream& os, const std::vector<InstructionRecord>& records)
{
    for (const auto& r : records) {
        nlohmann::ordered_json obj;
        obj["id"] = r.id;
        obj["instruction"] = r.instruction;
        obj["response"] = r.response;
        if (r.source)
            obj["source"] = *r.source;
        os << obj.dump() << '\n';
    }
}

void save_dataset(const std::string& path, const std::vector<InstructionRecord>& records)
{
    std::ofstream os(path);
    if (!os)
        throw FormatError("dataset: cannot write " + path);
    write_jsonl(os, records);
}

Vocabulary::Vocabulary()
{
    for (const char* s : {"<pad>", "<bos>", "<sep>", "<eos>", "<unk>"})
        add(s);
}

void Vocabulary::add(const std::string& token)
{
    if (index_.emplace(token, tokens_.size()).second)
        tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<InstructionRecord>& records)
{
    std::set<std::string> words;
    std::set<unsigned char> bytes;
    for (const auto& r : records)
        for (const std::string* text : {&r.instruction, &r.response})
            for (auto& w : split_words(*text)) {
                for (char c : w)
                    bytes.insert(static_cast<unsigned char>(c));
                words.insert(std::move(w));
            }
    Vocabulary v;
    for (const auto& w : words)
        v.add(w);
    for (unsigned char b : bytes)
        v.add(byte_token(b));
    return v;
}

std::optional<std::size_t> Vocabulary::find(const std::string& token) const
{
    const auto it = index_.find(token);
    if (it == index_.end())
        return std::nullopt;
    return it->second;
}

std::vector<std::size_t> Vocabulary::encode(std::string_view text) const
{
    std::vector<std::size_t> ids;
    for (const auto& w : split_words(text)) {
        if (const auto id = find(w)) {
            ids.push_back(*id);
            continue;
        }
        for (char c : w)
            ids.push_back(find(byte_token(static_cast<unsigned char>(c))).value_or(kUnk));
    }
    return ids;
}

std::string Vocabulary::decode(const std::vector<std::size_t>& ids) const
{
    std::string out;
    bool in_bytes = false;
    for (std::size_t id : ids) {
        const std::string& t = token(id);
        const bool is_byte = t.size() == 6 && t.rfind("<0x", 0) == 0;
        if (is_byte) {
            if (!in_bytes && !out.empty())
                out.push_back(' ');
            out.push_back(static_cast<char>(std::stoi(t.substr(3, 2), nullptr, 16)));
        } else {
            if (!out.empty())
                out.push_back(' ');
            out += t;
        }
        in_bytes = is_byte;
    }
    return out;
}

void Vocabulary::save(const std::string& path) const
{
    std::ofstream os(path);
    if (!os)
        throw FormatError("vocabulary: cannot write " + path);
    for (const auto& t : tokens_)
        os << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw FormatError("vocabulary: cannot open " + path);
    Vocabulary v;
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        if (n < v.tokens_.size()) {
            if (line != v.tokens_[n])
                throw FormatError("vocabulary: " + path + " line " + std::to_string(n + 1) +
                                  " should be the special token " + v.tokens_[n]);
        } else {
            if (line.empty() || v.index_.count(line))
                throw FormatError("vocabulary: " + path + " line " + std::to_string(n + 1) +
                                  " is empty or repeated");
            v.add(line);
        }
        ++n;
    }
    if (n < 5)
        throw FormatError("vocabulary: " + path + " is missing the special tokens");
    return v;
}

Example encode_example(const Vocabulary& vocab, const InstructionRecord& record)
{
    Example ex;
    ex.prompt.push_back(Vocabulary::kBos);
    for (std::size_t id : vocab.encode(record.instruction))
        ex.prompt.push_back(id);
    ex.prompt.push_back(Vocabulary::kSep);
    ex.response = vocab.encode(record.response);
    std::vector<std::size_t> all = ex.prompt;
    all.insert(all.end(), ex.response.begin(), ex.response.end());
    all.push_back(Vocabulary::kEos);
    ex.inputs.assign(all.begin(), all.end() - 1);
    ex.targets.assign(all.begin() + 1, all.end());
    // target i is token i+1; the response starts right after <sep>
    for (std::size_t i = 0; i < ex.targets.size(); ++i)
        ex.supervised.push_back(i + 1 >= ex.prompt.size());
    return ex;
}

std::vector<InstructionRecord> make_two_dialect_corpus(std::size_t count, std::uint64_t seed,
                                                       std::size_t min_len, std::size_t max_len)
{
    if (min_len == 0 || max_len < min_len)
        throw ContractError("two-dialect corpus: need 1 <= min_len <= max_len");
    Rng rng(derive_seed(seed, "corpus/two-dialect"));
    std::vector<InstructionRecord> out;
    for (std::size_t i = 0; i < count; ++i) {
        const bool a = rng.uniform() < 0.5;
        const std::size_t len = min_len + rng.index(max_len - min_len + 1);
        std::vector<std::size_t> digits(len);
        for (auto& d : digits)
            d = rng.index(10);
        const char p = a ? 'a' : 'b';
        InstructionRecord r;
        r.id = std::string(1, a ? 'A' : 'B') + "-" + std::to_string(i);
        r.source = a ? "A" : "B";
        r.instruction = a ? "shift" : "reverse";
        for (std::size_t d : digits)
            r.instruction += std::string(" ") + p + std::to_string(d);
        for (std::size_t j = 0; j < len; ++j) {
            const std::size_t d = a ? (digits[j] + 1) % 10 : digits[len - 1 - j];
            r.response += (j ? " " : "") + std::string(1, p) + std::to_string(d);
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<InstructionRecord> make_skewed_corpus(std::size_t count, std::uint64_t seed,
                                                  double dominant_share)
{
    Rng rng(derive_seed(seed, "corpus/skewed"));
    std::vector<InstructionRecord> out;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t len = 3 + rng.index(3);
        InstructionRecord r;
        r.id = "S-" + std::to_string(i);
        r.source = "S";
        r.instruction = "copy";
        for (std::size_t j = 0; j < len; ++j) {
            const std::size_t d = rng.uniform() < dominant_share ? 0 : 1 + rng.index(9);
            const std::string tok = "a" + std::to_string(d);
            r.instruction += " " + tok;
            r.response += (j ? " " : "") + tok;
        }
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace moce
