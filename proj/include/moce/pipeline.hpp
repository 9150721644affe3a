// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end flow: embed instructions, cluster them, bind each cluster to an
// expert group, upcycle a dense base and train adapters and routers; then
// evaluate, report routing statistics, and run ablation grids.

#pragma once

#include "moce/clustering.hpp"
#include "moce/config.hpp"
#include "moce/dataset.hpp"
#include "moce/embedding.hpp"
#include "moce/model.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace moce {

struct EmbedSettings {
    EmbeddingSource source = EmbeddingSource::kToy;
    std::size_t dim = kDefaultEmbeddingDim;
    std::uint64_t seed = 0;
    bool include_response = false;
};

EmbedSettings embed_settings(const RunConfig& config);

/// Toy embeddings of every record, or the rows of `file` matched by id.
EmbeddingSet embed_records(const EmbedSettings& settings,
                           const std::vector<InstructionRecord>& records,
                           const EmbeddingSet* file = nullptr);

struct StepMetrics {
    std::size_t step = 0;
    double loss = 0.0;         // lm_loss + lambda * balance
    double lm_loss = 0.0;
    double balance_loss = 0.0; // unscaled sum over routers
    double max_load = 0.0;     // largest top-1 fraction of any router in the batch
};

struct TrainResult {
    MoceModel model;
    KMeansModel clustering;
    Vocabulary vocab;
    EmbedSettings embed;
    std::optional<ElbowReport> elbow;
    std::vector<std::size_t> groups; // predicted group per training record
    std::vector<double> pretrain_losses;
    std::vector<StepMetrics> steps;
};

/// Dense base trained for config.pretrain_steps on the examples (all
/// parameters trainable). Zero steps leaves the random initialisation.
DenseModel pretrain_dense(const RunConfig& config, const Vocabulary& vocab,
                          const std::vector<Example>& examples,
                          std::vector<double>* losses = nullptr);

/// Full training run. `dense` may supply an already pretrained base built
/// from the same config, seed and vocabulary. Writes the checkpoint and
/// metrics under config.out_dir when it is set.
TrainResult pipeline_train(const RunConfig& config, const std::vector<InstructionRecord>& records,
                           const DenseModel* dense = nullptr,
                           const EmbeddingSet* file_embeddings = nullptr);
TrainResult pipeline_train(const RunConfig& config);

/// Checkpoint directory layout written by pipeline_train.
void save_run(const std::string& dir, const TrainResult& run);
struct LoadedRun {
    MoceModel model;
    KMeansModel clustering;
    Vocabulary vocab;
    EmbedSettings embed;
    std::size_t step = 0;
};
LoadedRun load_run(const std::string& dir);

struct EvalReport {
    std::size_t count = 0;
    double exact_match = 0.0;
    double mean_nll = 0.0; // per supervised token
    double perplexity = 0.0;
    std::vector<std::size_t> group_counts;
    std::size_t active_experts_per_token = 0;
    /// Expert forward passes per token per layer, measured.
    double expert_forwards_per_token = 0.0;

    void write_json(std::ostream& os) const;
};

/// Greedy decoding with the group predicted once per prompt. A clustering
/// model whose k differs from the model's group count is a ConfigError.
EvalReport evaluate(const MoceModel& model, const KMeansModel& clustering, const Vocabulary& vocab,
                    const EmbedSettings& embed, const std::vector<InstructionRecord>& records,
                    const EmbeddingSet* file_embeddings = nullptr);
EvalReport pipeline_eval(const std::string& checkpoint_dir, const std::string& dataset_path,
                         const std::string& embeddings_path = "");

struct RouterStats {
    std::size_t layer = 0;
    std::string router; // group index or "gen"
    std::size_t tokens = 0;
    std::vector<double> load_fractions;
    std::vector<double> mean_probabilities;
};

struct RouteStats {
    std::vector<std::size_t> cluster_histogram;
    std::vector<std::size_t> group_tokens;
    std::size_t total_tokens = 0;
    std::vector<RouterStats> routers;
    RoutingRecord record;

    /// Largest top-1 fraction over every router.
    double max_load() const;
    void write_json(std::ostream& os) const;
    void write_cluster_csv(std::ostream& os) const;
    void write_expert_csv(std::ostream& os) const;
};

RouteStats route_stats(const MoceModel& model, const KMeansModel& clustering,
                       const Vocabulary& vocab, const EmbedSettings& embed,
                       const std::vector<InstructionRecord>& records,
                       const EmbeddingSet* file_embeddings = nullptr);
/// Writes clusters.csv, experts.csv, routes.csv and route_stats.json to
/// out_dir.
RouteStats pipeline_route_stats(const std::string& checkpoint_dir, const std::string& dataset_path,
                                const std::string& out_dir,
                                const std::string& embeddings_path = "");

struct AblationRow {
    std::string table;     // "routing" or "experts"
    std::string routing;   // top-1, top-2, soft
    std::string structure; // dual-stage, w/o clustering, w/o token routing
    std::uint64_t seed = 0;
    std::size_t groups = 0, experts = 0, top_k = 0;
    double final_train_loss = 0.0;
    double heldout_loss = 0.0;
    double exact_match = 0.0;
    double expert_forwards_per_token = 0.0;
};

/// The routing grid {top-1, top-2, soft} x {dual-stage, w/o clustering,
/// w/o token routing} and the expert-count rows N = 1, 2, 4 (dual-stage,
/// top-2 where N allows), for every seed.
std::vector<AblationRow> ablation_run(const RunConfig& base,
                                      const std::vector<InstructionRecord>& train,
                                      const std::vector<InstructionRecord>& heldout,
                                      const std::vector<std::uint64_t>& seeds);
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

} // namespace moce
