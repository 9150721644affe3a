// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/embedding.hpp"
#include "moce/error.hpp"
#include "moce/random.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace moce;

namespace {

constexpr double kDisjointCosineFixture = 0.0026424829497906227;

double norm(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v)
        s += x * x;
    return std::sqrt(s);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s / (norm(a) * norm(b));
}

std::vector<HashedToken> random_tokens(Rng& rng, HashedToken lo, HashedToken hi)
{
    std::vector<HashedToken> out(5 + rng.index(16));
    for (auto& t : out)
        t = lo + rng.index(hi - lo);
    return out;
}

// Mean cosine between sequences over disjoint token ranges, 100 pairs.
double disjoint_mean_cosine()
{
    Rng rng(2024);
    double total = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto a = random_tokens(rng, 0, 1000);
        const auto b = random_tokens(rng, 1000, 2000);
        total += cosine(embed_sequence(a, 64, 7), embed_sequence(b, 64, 7));
    }
    return total / 100.0;
}

} // namespace

TEST_CASE("embedding is deterministic and unit norm")
{
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const auto tokens = random_tokens(rng, 0, 500);
        const auto a = embed_sequence(tokens, 64, 3);
        const auto b = embed_sequence(tokens, 64, 3);
        CHECK(a == b);
        CHECK(std::abs(norm(a) - 1.0) <= 1e-9);
    }
    const std::vector<HashedToken> single{42};
    CHECK(std::abs(norm(embed_sequence(single, 8, 0)) - 1.0) <= 1e-9);
}

TEST_CASE("disjoint vocabularies embed far apart")
{
    const double mean = disjoint_mean_cosine();
    CHECK(mean < 0.5);
    // measured once and pinned
    CHECK(mean == doctest::Approx(kDisjointCosineFixture).epsilon(1e-12));
}

TEST_CASE("embedding is sensitive to order, casing and seed")
{
    const auto base = embed_text("copy a1 a2 a3", "x", 64, 5).vector;
    CHECK(base != embed_text("copy a3 a2 a1", "x", 64, 5).vector);
    CHECK(base != embed_text("Copy a1 a2 a3", "x", 64, 5).vector);
    CHECK(base != embed_text("copy a1 a2 a3", "x", 64, 6).vector);
    CHECK(base == embed_text("copy  a1\ta2 a3", "x", 64, 5).vector);
}

TEST_CASE("empty sequences are rejected")
{
    CHECK_THROWS_AS(embed_sequence(std::vector<HashedToken>{}, 64, 0), ContractError);
    CHECK_THROWS_AS(embed_text("   ", "blank", 64, 0), ContractError);
}

TEST_CASE("loading a small embedding file")
{
    std::istringstream in("MOCE-EMB v1 2 4\nfirst 1 0 0 0\nsecond 3 4 0 0\n");
    const EmbeddingSet set = read_embeddings(in);
    CHECK(set.dim == 4);
    CHECK(set.size() == 2);
    CHECK(set.items[1].source_id == "second");
    CHECK(set.items[1].vector[0] == doctest::Approx(0.6));
    CHECK(set.items[1].vector[1] == doctest::Approx(0.8));
}

TEST_CASE("a row of the wrong length names the row")
{
    std::istringstream in("MOCE-EMB v1 3 4\na 1 0 0 0\nb 1 0 0\nc 0 1 0 0\n");
    try {
        read_embeddings(in);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }
}

TEST_CASE("non-finite values are numeric errors")
{
    std::istringstream in("MOCE-EMB v1 1 2\na nan 1\n");
    CHECK_THROWS_AS(read_embeddings(in), NumericError);
    std::istringstream bad_header("MOCE-EMB v2 1 2\na 0 1\n");
    CHECK_THROWS_AS(read_embeddings(bad_header), FormatError);
}

TEST_CASE("write then read round-trips")
{
    Rng rng(9);
    EmbeddingSet set;
    set.dim = 64;
    for (int i = 0; i < 40; ++i)
        set.push_back({embed_sequence(random_tokens(rng, 0, 3000), 64, 1), "s" + std::to_string(i)});
    std::stringstream buf;
    write_embeddings(buf, set);
    const EmbeddingSet back = read_embeddings(buf);
    REQUIRE(back.size() == set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        CHECK(back.items[i].source_id == set.items[i].source_id);
        for (std::size_t j = 0; j < 64; ++j)
            CHECK(std::abs(back.items[i].vector[j] - set.items[i].vector[j]) <= 1e-7);
    }
}
