// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0
//
// K-means over sequence embeddings and elbow selection of the cluster count.
// The fitted model maps each sequence to the expert group it activates.

#pragma once

#include "moce/embedding.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace moce {

using Point = std::vector<double>;

struct KMeansModel {
    std::vector<Point> centroids; // k rows of `dim` values
    std::uint64_t seed = 0;
    double final_sse = 0.0;
    std::size_t iterations_run = 0;

    std::size_t k() const { return centroids.size(); }
    std::size_t dim() const { return centroids.empty() ? 0 : centroids.front().size(); }
};

struct ClusterAssignment {
    std::vector<std::size_t> labels;
    std::vector<std::size_t> counts;
};

struct KMeansFit {
    KMeansModel model;
    ClusterAssignment assignment;
    /// SSE after every Lloyd update, in order. Never increases.
    std::vector<double> sse_trace;
    bool converged = false;
};

/// Lloyd iterations from a k-means++ start. Stops when the assignment repeats
/// (or, with tol > 0, when the relative SSE improvement falls below tol) or
/// after max_iters. A cluster left empty takes over the point farthest from
/// its current centroid. Runs n_init starts and keeps the lowest final SSE
/// (first start wins ties); the trace is that run's.
KMeansFit kmeans_fit(std::span<const Point> points, std::size_t k, std::uint64_t seed,
                     std::size_t max_iters = 100, double tol = 0.0, std::size_t n_init = 10);
KMeansFit kmeans_fit(const EmbeddingSet& embeddings, std::size_t k, std::uint64_t seed,
                     std::size_t max_iters = 100, double tol = 0.0, std::size_t n_init = 10);

/// Index of the nearest centroid; ties go to the lowest index.
std::size_t kmeans_predict(const KMeansModel& model, std::span<const double> e);

/// Sum over points of the squared distance to the assigned centroid.
double sse(const KMeansModel& model, std::span<const Point> points,
           const ClusterAssignment& assignment);

struct ElbowReport {
    std::vector<double> sse_curve;  // index k-1
    std::vector<double> curvature;  // index k-1; NaN where undefined (k=1, k=k_max)
    std::size_t selected_k = 0;
    /// False when some SSE(k+1) > SSE(k); the curve is reported as measured.
    bool monotone = true;
    std::vector<KMeansModel> models; // best fit per k, index k-1

    void write_csv(std::ostream& os) const;
};

/// Fits k = 1..k_max (each with the default restarts), scores
/// s(k) = SSE(k-1) - 2 SSE(k) + SSE(k+1) for 2 <= k < k_max and selects
/// the largest score; ties go to the smaller k.
ElbowReport elbow_select(std::span<const Point> points, std::size_t k_max, std::uint64_t seed);
ElbowReport elbow_select(const EmbeddingSet& embeddings, std::size_t k_max, std::uint64_t seed);

/// Number of distinct points (exact comparison).
std::size_t count_distinct(std::span<const Point> points);

// Persistence:
//   MOCE-KMEANS v1 <k> <dim> <seed>
//   <dim decimals>            (k lines, 17 significant digits)
void write_kmeans(std::ostream& os, const KMeansModel& model);
KMeansModel read_kmeans(std::istream& is);
void save_kmeans(const std::string& path, const KMeansModel& model);
KMeansModel load_kmeans(const std::string& path);

} // namespace moce
