// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/clustering.hpp"

#include "moce/error.hpp"
#include "moce/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace moce {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

std::size_t nearest(std::span<const Point> centroids, std::span<const double> p)
{
    std::size_t best = 0;
    double best_d = squared_distance(centroids[0], p);
    for (std::size_t c = 1; c < centroids.size(); ++c) {
        const double d = squared_distance(centroids[c], p);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

std::vector<Point> plus_plus_init(std::span<const Point> points, std::size_t k, Rng& rng)
{
    std::vector<Point> centroids;
    centroids.push_back(points[rng.index(points.size())]);
    std::vector<double> d2(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        d2[i] = squared_distance(points[i], centroids[0]);
    while (centroids.size() < k) {
        double total = 0.0;
        for (double d : d2)
            total += d;
        std::size_t pick = 0;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double run = 0.0;
            pick = points.size() - 1;
            for (std::size_t i = 0; i < points.size(); ++i) {
                run += d2[i];
                if (run > target && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.index(points.size());
        }
        centroids.push_back(points[pick]);
        for (std::size_t i = 0; i < points.size(); ++i)
            d2[i] = std::min(d2[i], squared_distance(points[i], centroids.back()));
    }
    return centroids;
}

// Moves the worst-served point of a multi-member cluster into each empty one.
void repair_empty(std::span<const Point> points, std::vector<Point>& centroids,
                  std::vector<std::size_t>& labels, std::vector<std::size_t>& counts)
{
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        if (counts[c] > 0)
            continue;
        std::size_t far = points.size();
        double far_d = -1.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (counts[labels[i]] < 2)
                continue;
            const double d = squared_distance(points[i], centroids[labels[i]]);
            if (d > far_d) {
                far_d = d;
                far = i;
            }
        }
        if (far == points.size())
            throw StateError("kmeans: no point available to repair an empty cluster");
        --counts[labels[far]];
        labels[far] = c;
        counts[c] = 1;
        centroids[c] = points[far];
    }
}

void recompute_means(std::span<const Point> points, const std::vector<std::size_t>& labels,
                     std::vector<Point>& centroids)
{
    const std::size_t dim = centroids.front().size();
    std::vector<Point> sums(centroids.size(), Point(dim, 0.0));
    std::vector<std::size_t> counts(centroids.size(), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        auto& s = sums[labels[i]];
        for (std::size_t d = 0; d < dim; ++d)
            s[d] += points[i][d];
        ++counts[labels[i]];
    }
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        if (counts[c] == 0)
            continue;
        for (std::size_t d = 0; d < dim; ++d)
            centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
    }
}

double assignment_sse(std::span<const Point> points, std::span<const Point> centroids,
                      const std::vector<std::size_t>& labels)
{
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
        total += squared_distance(points[i], centroids[labels[i]]);
    return total;
}

void check_points(std::span<const Point> points)
{
    if (points.empty())
        throw ContractError("kmeans: no points");
    const std::size_t dim = points.front().size();
    if (dim == 0)
        throw ContractError("kmeans: zero-dimensional points");
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].size() != dim)
            throw ShapeError("kmeans: point " + std::to_string(i) + " has dimension " +
                             std::to_string(points[i].size()) + ", expected " +
                             std::to_string(dim));
        for (double v : points[i])
            if (!std::isfinite(v))
                throw NumericError("kmeans: point " + std::to_string(i) + " is not finite");
    }
}

KMeansFit lloyd(std::span<const Point> points, std::size_t k, std::uint64_t seed,
                std::size_t max_iters, double tol)
{
    Rng rng(seed);
    KMeansFit fit;
    fit.model.seed = seed;
    auto& centroids = fit.model.centroids;
    centroids = plus_plus_init(points, k, rng);

    std::vector<std::size_t> labels(points.size(), 0), previous;
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            labels[i] = nearest(centroids, points[i]);
            ++counts[labels[i]];
        }
        repair_empty(points, centroids, labels, counts);
        fit.model.iterations_run = iter + 1;
        if (labels == previous) {
            fit.converged = true;
            break;
        }
        recompute_means(points, labels, centroids);
        fit.sse_trace.push_back(assignment_sse(points, centroids, labels));
        previous = labels;
        const std::size_t n = fit.sse_trace.size();
        if (tol > 0.0 && n >= 2) {
            const double prev = fit.sse_trace[n - 2];
            if (prev - fit.sse_trace[n - 1] <= tol * prev) {
                fit.converged = true;
                break;
            }
        }
    }
    fit.assignment.labels = previous.empty() ? labels : previous;
    fit.assignment.counts.assign(k, 0);
    for (std::size_t l : fit.assignment.labels)
        ++fit.assignment.counts[l];
    fit.model.final_sse = assignment_sse(points, centroids, fit.assignment.labels);
    return fit;
}

} // namespace

KMeansFit kmeans_fit(std::span<const Point> points, std::size_t k, std::uint64_t seed,
                     std::size_t max_iters, double tol, std::size_t n_init)
{
    if (k == 0)
        throw ContractError("kmeans_fit: k must be at least 1");
    check_points(points);
    if (k > points.size())
        throw ContractError("kmeans_fit: k=" + std::to_string(k) + " exceeds " +
                            std::to_string(points.size()) + " points");
    if (max_iters == 0)
        throw ContractError("kmeans_fit: max_iters must be positive");

    if (n_init == 0)
        throw ContractError("kmeans_fit: n_init must be positive");

    KMeansFit best = lloyd(points, k, seed, max_iters, tol);
    for (std::size_t r = 1; r < n_init; ++r) {
        KMeansFit fit =
            lloyd(points, k, derive_seed(seed, "restart/" + std::to_string(r)), max_iters, tol);
        if (fit.model.final_sse < best.model.final_sse)
            best = std::move(fit);
    }
    best.model.seed = seed;
    return best;
}

KMeansFit kmeans_fit(const EmbeddingSet& embeddings, std::size_t k, std::uint64_t seed,
                     std::size_t max_iters, double tol, std::size_t n_init)
{
    const auto points = embeddings.vectors();
    return kmeans_fit(std::span<const Point>(points), k, seed, max_iters, tol, n_init);
}

std::size_t kmeans_predict(const KMeansModel& model, std::span<const double> e)
{
    if (model.k() == 0)
        throw StateError("kmeans_predict: empty model");
    if (e.size() != model.dim())
        throw ShapeError("kmeans_predict: embedding of dimension " + std::to_string(e.size()) +
                         " for a model of dimension " + std::to_string(model.dim()));
    return nearest(model.centroids, e);
}

double sse(const KMeansModel& model, std::span<const Point> points,
           const ClusterAssignment& assignment)
{
    if (assignment.labels.size() != points.size())
        throw ShapeError("sse: " + std::to_string(assignment.labels.size()) + " labels for " +
                         std::to_string(points.size()) + " points");
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const std::size_t c = assignment.labels[i];
        if (c >= model.k())
            throw ShapeError("sse: label " + std::to_string(c) + " out of range");
        if (points[i].size() != model.dim())
            throw ShapeError("sse: point " + std::to_string(i) + " has dimension " +
                             std::to_string(points[i].size()));
        total += squared_distance(points[i], model.centroids[c]);
    }
    return total;
}

std::size_t count_distinct(std::span<const Point> points)
{
    std::set<Point> unique(points.begin(), points.end());
    return unique.size();
}

ElbowReport elbow_select(std::span<const Point> points, std::size_t k_max, std::uint64_t seed)
{
    if (k_max < 3)
        throw ContractError("elbow_select: k_max must be at least 3");
    if (points.size() < k_max)
        throw ContractError("elbow_select: " + std::to_string(points.size()) +
                            " points cannot support k_max=" + std::to_string(k_max));
    ElbowReport report;
    for (std::size_t k = 1; k <= k_max; ++k) {
        KMeansFit fit = kmeans_fit(points, k, derive_seed(seed, "elbow/k" + std::to_string(k)));
        report.sse_curve.push_back(fit.model.final_sse);
        report.models.push_back(std::move(fit.model));
    }
    report.curvature.assign(k_max, std::numeric_limits<double>::quiet_NaN());
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 2; k < k_max; ++k) {
        const auto& s = report.sse_curve;
        const double score = s[k - 2] - 2.0 * s[k - 1] + s[k];
        report.curvature[k - 1] = score;
        if (score > best_score) {
            best_score = score;
            report.selected_k = k;
        }
    }
    for (std::size_t k = 1; k < k_max; ++k)
        if (report.sse_curve[k] > report.sse_curve[k - 1])
            report.monotone = false;
    return report;
}

ElbowReport elbow_select(const EmbeddingSet& embeddings, std::size_t k_max, std::uint64_t seed)
{
    const auto points = embeddings.vectors();
    return elbow_select(std::span<const Point>(points), k_max, seed);
}

void ElbowReport::write_csv(std::ostream& os) const
{
    os << "k,sse,curvature\n";
    char buf[64];
    for (std::size_t i = 0; i < sse_curve.size(); ++i) {
        os << (i + 1);
        std::snprintf(buf, sizeof(buf), ",%.17g,", sse_curve[i]);
        os << buf;
        if (!std::isnan(curvature[i])) {
            std::snprintf(buf, sizeof(buf), "%.17g", curvature[i]);
            os << buf;
        }
        os << '\n';
    }
}

void write_kmeans(std::ostream& os, const KMeansModel& model)
{
    os << "MOCE-KMEANS v1 " << model.k() << ' ' << model.dim() << ' ' << model.seed << '\n';
    char buf[32];
    for (const auto& c : model.centroids) {
        for (std::size_t d = 0; d < c.size(); ++d) {
            std::snprintf(buf, sizeof(buf), "%s%.17g", d ? " " : "", c[d]);
            os << buf;
        }
        os << '\n';
    }
}

KMeansModel read_kmeans(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line))
        throw FormatError("kmeans: missing header");
    std::istringstream header(line);
    std::string magic, version;
    long long k = -1, dim = -1;
    std::uint64_t seed = 0;
    header >> magic >> version >> k >> dim >> seed;
    if (magic != "MOCE-KMEANS" || version != "v1" || !header || k <= 0 || dim <= 0)
        throw FormatError("kmeans: bad header '" + line + "'");
    KMeansModel model;
    model.seed = seed;
    for (long long c = 0; c < k; ++c) {
        if (!std::getline(is, line))
            throw FormatError("kmeans: missing centroid row " + std::to_string(c));
        std::istringstream fields(line);
        Point row;
        std::string tok;
        while (fields >> tok) {
            char* end = nullptr;
            const double v = std::strtod(tok.c_str(), &end);
            if (end == tok.c_str() || *end != '\0')
                throw FormatError("kmeans: centroid row " + std::to_string(c) + ": '" + tok +
                                  "' is not a number");
            if (!std::isfinite(v))
                throw NumericError("kmeans: centroid row " + std::to_string(c) +
                                   " is not finite");
            row.push_back(v);
        }
        if (row.size() != static_cast<std::size_t>(dim))
            throw FormatError("kmeans: centroid row " + std::to_string(c) + " has " +
                              std::to_string(row.size()) + " values, expected " +
                              std::to_string(dim));
        model.centroids.push_back(std::move(row));
    }
    return model;
}

void save_kmeans(const std::string& path, const KMeansModel& model)
{
    std::ofstream os(path);
    if (!os)
        throw FormatError("kmeans: cannot write " + path);
    write_kmeans(os, model);
}

KMeansModel load_kmeans(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw FormatError("kmeans: cannot open " + path);
    return read_kmeans(is);
}

} // namespace moce
