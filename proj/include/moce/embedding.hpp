// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0
//
// Sequence embeddings: a feature-hashing embedder for whole token sequences
// and a text file format for embeddings produced by external encoders.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace moce {

using HashedToken = std::uint64_t;

inline constexpr std::size_t kDefaultEmbeddingDim = 64;

struct SequenceEmbedding {
    std::vector<double> vector; // unit L2 norm
    std::string source_id;
};

struct EmbeddingSet {
    std::size_t dim = 0;
    std::vector<SequenceEmbedding> items;

    std::size_t size() const { return items.size(); }
    /// Vectors only, in order.
    std::vector<std::vector<double>> vectors() const;
    /// Appends, checking the dimension.
    void push_back(SequenceEmbedding embedding);
};

/// Whitespace-delimited words hashed to stable ids. Case and order
/// sensitive; independent of any model vocabulary.
std::vector<HashedToken> hash_words(std::string_view text);

/// Signed feature hashing of every unigram and bigram into `dim` buckets,
/// mean-pooled and L2-normalized. Pure function of its arguments.
std::vector<double> embed_sequence(std::span<const HashedToken> tokens, std::size_t dim,
                                   std::uint64_t seed);

SequenceEmbedding embed_text(std::string_view text, std::string source_id, std::size_t dim,
                             std::uint64_t seed);

/// Scales `v` to unit norm in place; throws NumericError on a zero or
/// non-finite vector.
void l2_normalize(std::vector<double>& v);

// File format:
//   MOCE-EMB v1 <count> <dim>
//   <source_id> <dim space-separated decimals>      (count lines)
// Values are written with 9 significant digits (32-bit precision).
void write_embeddings(std::ostream& os, const EmbeddingSet& set);
EmbeddingSet read_embeddings(std::istream& is);
void save_embeddings(const std::string& path, const EmbeddingSet& set);
EmbeddingSet load_embeddings(const std::string& path);

} // namespace moce
