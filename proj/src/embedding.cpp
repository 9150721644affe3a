// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/embedding.hpp"

#include "moce/error.hpp"
#include "moce/random.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace moce {

namespace {

constexpr std::uint64_t kBigramSalt = 0x6a09e667f3bcc909ULL;

void add_feature(std::vector<double>& acc, std::uint64_t key, std::uint64_t seed)
{
    const std::uint64_t h = mix64(seed ^ key);
    const std::size_t bucket = static_cast<std::size_t>(h % acc.size());
    acc[bucket] += (h >> 63) ? 1.0 : -1.0;
}

} // namespace

std::vector<std::vector<double>> EmbeddingSet::vectors() const
{
    std::vector<std::vector<double>> out;
    out.reserve(items.size());
    for (const auto& e : items)
        out.push_back(e.vector);
    return out;
}

void EmbeddingSet::push_back(SequenceEmbedding embedding)
{
    if (items.empty() && dim == 0)
        dim = embedding.vector.size();
    if (embedding.vector.size() != dim)
        throw ShapeError("embedding set: vector of dimension " +
                         std::to_string(embedding.vector.size()) + " in a set of dimension " +
                         std::to_string(dim));
    items.push_back(std::move(embedding));
}

std::vector<HashedToken> hash_words(std::string_view text)
{
    std::vector<HashedToken> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])))
            ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])))
            ++j;
        if (j > i)
            out.push_back(fnv1a64(text.substr(i, j - i)));
        i = j;
    }
    return out;
}

void l2_normalize(std::vector<double>& v)
{
    double ss = 0.0;
    for (double x : v)
        ss += x * x;
    const double norm = std::sqrt(ss);
    if (!(norm > 0.0) || !std::isfinite(norm))
        throw NumericError("l2_normalize: vector has zero or non-finite norm");
    for (double& x : v)
        x /= norm;
}

std::vector<double> embed_sequence(std::span<const HashedToken> tokens, std::size_t dim,
                                   std::uint64_t seed)
{
    if (tokens.empty())
        throw ContractError("embed_sequence: empty token list");
    if (dim == 0)
        throw ContractError("embed_sequence: dimension must be positive");
    std::vector<double> acc(dim, 0.0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        add_feature(acc, mix64(tokens[i]), seed);
        if (i > 0)
            add_feature(acc, mix64(mix64(tokens[i - 1] ^ kBigramSalt) + tokens[i]), seed);
    }
    const double features = static_cast<double>(2 * tokens.size() - 1);
    for (double& x : acc)
        x /= features;
    // An odd number of +-1 features can never cancel to the zero vector.
    l2_normalize(acc);
    return acc;
}

SequenceEmbedding embed_text(std::string_view text, std::string source_id, std::size_t dim,
                             std::uint64_t seed)
{
    const auto tokens = hash_words(text);
    if (tokens.empty())
        throw ContractError("embed_text: sequence '" + source_id + "' has no tokens");
    return {embed_sequence(tokens, dim, seed), std::move(source_id)};
}

void write_embeddings(std::ostream& os, const EmbeddingSet& set)
{
    os << "MOCE-EMB v1 " << set.items.size() << ' ' << set.dim << '\n';
    char buf[32];
    for (const auto& e : set.items) {
        if (e.source_id.empty() || e.source_id.find_first_of(" \t\r\n") != std::string::npos)
            throw FormatError("embeddings: source id '" + e.source_id +
                              "' must be non-empty and free of whitespace");
        os << e.source_id;
        for (double x : e.vector) {
            std::snprintf(buf, sizeof(buf), " %.9g", x);
            os << buf;
        }
        os << '\n';
    }
}

EmbeddingSet read_embeddings(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line))
        throw FormatError("embeddings: missing header");
    std::istringstream header(line);
    std::string magic, version;
    long long count = -1, dim = -1;
    header >> magic >> version >> count >> dim;
    if (magic != "MOCE-EMB" || version != "v1" || !header || count < 0 || dim <= 0)
        throw FormatError("embeddings: bad header '" + line + "'");
    EmbeddingSet set;
    set.dim = static_cast<std::size_t>(dim);
    for (long long row = 0; row < count; ++row) {
        if (!std::getline(is, line))
            throw FormatError("embeddings: expected " + std::to_string(count) + " rows, found " +
                              std::to_string(row));
        std::istringstream fields(line);
        SequenceEmbedding e;
        fields >> e.source_id;
        std::string tok;
        while (fields >> tok) {
            char* end = nullptr;
            const double v = std::strtod(tok.c_str(), &end);
            if (end == tok.c_str() || *end != '\0')
                throw FormatError("embeddings: row " + std::to_string(row) + ": '" + tok +
                                  "' is not a number");
            if (!std::isfinite(v))
                throw NumericError("embeddings: row " + std::to_string(row) +
                                   " holds a non-finite value");
            e.vector.push_back(v);
        }
        if (e.vector.size() != set.dim)
            throw FormatError("embeddings: row " + std::to_string(row) + " ('" + e.source_id +
                              "') has " + std::to_string(e.vector.size()) + " values, expected " +
                              std::to_string(set.dim));
        l2_normalize(e.vector);
        set.items.push_back(std::move(e));
    }
    return set;
}

void save_embeddings(const std::string& path, const EmbeddingSet& set)
{
    std::ofstream os(path);
    if (!os)
        throw FormatError("embeddings: cannot write " + path);
    write_embeddings(os, set);
}

EmbeddingSet load_embeddings(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw FormatError("embeddings: cannot open " + path);
    return read_embeddings(is);
}

} // namespace moce
