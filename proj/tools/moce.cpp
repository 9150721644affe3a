// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: corpus generation, embedding, clustering,
// training, evaluation, routing statistics and ablations.

#include "moce/clustering.hpp"
#include "moce/config.hpp"
#include "moce/dataset.hpp"
#include "moce/embedding.hpp"
#include "moce/error.hpp"
#include "moce/pipeline.hpp"
#include "moce/random.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

using namespace moce;

std::ofstream open_out(const std::string& path)
{
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty())
        std::filesystem::create_directories(parent);
    std::ofstream os(path);
    if (!os)
        throw ConfigError("cannot write " + path);
    return os;
}

int run(int argc, char** argv)
{
    CLI::App app{"Mixture of clustered experts: a desk-scale toolkit"};
    app.require_subcommand(1);

    // corpus
    std::string corpus_kind = "two-dialect", corpus_out;
    std::size_t corpus_count = 1000;
    std::uint64_t corpus_seed = 0;
    double corpus_share = 0.8;
    auto* corpus = app.add_subcommand("corpus", "Write a synthetic instruction corpus as JSONL");
    corpus->add_option("--kind", corpus_kind, "two-dialect or skewed")
        ->check(CLI::IsMember({"two-dialect", "skewed"}));
    corpus->add_option("--count", corpus_count, "Number of records");
    corpus->add_option("--seed", corpus_seed, "Generator seed");
    corpus->add_option("--dominant-share", corpus_share, "Share of the dominant token (skewed)");
    corpus->add_option("--out", corpus_out, "Output JSONL path")->required();

    // embed
    std::string embed_data, embed_out;
    std::size_t embed_dim = kDefaultEmbeddingDim;
    std::uint64_t embed_seed = 0;
    bool embed_response = false;
    auto* embed = app.add_subcommand("embed", "Embed every record with the hashing embedder");
    embed->add_option("--data", embed_data, "Input JSONL")->required();
    embed->add_option("--out", embed_out, "Output embedding file")->required();
    embed->add_option("--dim", embed_dim, "Embedding dimension");
    embed->add_option("--seed", embed_seed, "Master seed (the embedder seed is derived from it)");
    embed->add_flag("--with-response", embed_response, "Embed the response as well");

    // cluster
    std::string cluster_in, cluster_out;
    std::size_t cluster_k = 0, cluster_k_max = 0;
    std::uint64_t cluster_seed = 0;
    bool cluster_elbow = false;
    auto* cluster = app.add_subcommand("cluster", "Fit k-means to sequence embeddings");
    cluster->add_option("--embeddings", cluster_in, "Embedding file")->required();
    auto* k_opt = cluster->add_option("--k", cluster_k, "Number of clusters");
    auto* elbow_flag = cluster->add_flag("--elbow", cluster_elbow, "Choose k by the elbow rule");
    cluster->add_option("--k-max", cluster_k_max, "Largest k tried by --elbow");
    k_opt->excludes(elbow_flag);
    cluster->add_option("--seed", cluster_seed, "Clustering seed");
    cluster->add_option("--out", cluster_out, "Output directory")->required();

    // elbow
    std::string elbow_in, elbow_out;
    std::size_t elbow_k_max = 10;
    std::uint64_t elbow_seed = 0;
    auto* elbow = app.add_subcommand("elbow", "Write the SSE curve for k = 1..k_max as CSV");
    elbow->add_option("--embeddings", elbow_in, "Embedding file")->required();
    elbow->add_option("--k-max", elbow_k_max, "Largest k");
    elbow->add_option("--seed", elbow_seed, "Clustering seed");
    elbow->add_option("--out", elbow_out, "Output CSV (stdout when omitted)");

    // train
    std::string train_config, train_data, train_out, train_embeddings;
    std::optional<std::size_t> train_steps;
    std::optional<std::uint64_t> train_seed;
    auto* train = app.add_subcommand("train", "Cluster, upcycle and train a model");
    train->add_option("--config", train_config, "Run configuration (key = value)")->required();
    train->add_option("--data", train_data, "Training JSONL (overrides train_path)");
    train->add_option("--out", train_out, "Output directory (overrides out_dir)");
    train->add_option("--embeddings", train_embeddings, "Embedding file (selects file source)");
    train->add_option("--steps", train_steps, "Override the step count");
    train->add_option("--seed", train_seed, "Override the master seed");

    // eval
    std::string eval_ckpt, eval_data, eval_embeddings, eval_out;
    auto* eval = app.add_subcommand("eval", "Greedy-decode and score a dataset");
    eval->add_option("--checkpoint", eval_ckpt, "Run or checkpoint directory")->required();
    eval->add_option("--data", eval_data, "Evaluation JSONL")->required();
    eval->add_option("--embeddings", eval_embeddings, "Embedding file for file-source runs");
    eval->add_option("--out", eval_out, "Write the JSON report here as well");

    // route-stats
    std::string rs_ckpt, rs_data, rs_embeddings, rs_out;
    auto* rs = app.add_subcommand("route-stats", "Cluster and expert usage over a dataset");
    rs->add_option("--checkpoint", rs_ckpt, "Run or checkpoint directory")->required();
    rs->add_option("--data", rs_data, "Dataset JSONL")->required();
    rs->add_option("--embeddings", rs_embeddings, "Embedding file for file-source runs");
    rs->add_option("--out", rs_out, "Output directory")->required();

    // ablate
    std::string ab_config, ab_train, ab_heldout, ab_out;
    std::vector<std::uint64_t> ab_seeds{1, 2, 3, 4, 5};
    auto* ablate = app.add_subcommand("ablate", "Routing and expert-count ablation grid");
    ablate->add_option("--config", ab_config, "Base run configuration")->required();
    ablate->add_option("--train", ab_train, "Training JSONL")->required();
    ablate->add_option("--heldout", ab_heldout, "Held-out JSONL")->required();
    ablate->add_option("--seeds", ab_seeds, "Seeds")->delimiter(',');
    ablate->add_option("--out", ab_out, "Output CSV (stdout when omitted)");

    CLI11_PARSE(app, argc, argv);

    if (*corpus) {
        const auto records = corpus_kind == "skewed"
                                 ? make_skewed_corpus(corpus_count, corpus_seed, corpus_share)
                                 : make_two_dialect_corpus(corpus_count, corpus_seed);
        save_dataset(corpus_out, records);
        std::cout << "wrote " << records.size() << " records to " << corpus_out << '\n';
    } else if (*embed) {
        const EmbedSettings s{EmbeddingSource::kToy, embed_dim, derive_seed(embed_seed, "embedder"),
                              embed_response};
        const EmbeddingSet set = embed_records(s, ingest_dataset(embed_data));
        save_embeddings(embed_out, set);
        std::cout << "wrote " << set.size() << " embeddings of dim " << set.dim << " to "
                  << embed_out << '\n';
    } else if (*cluster) {
        const EmbeddingSet set = load_embeddings(cluster_in);
        std::filesystem::create_directories(cluster_out);
        KMeansModel model;
        if (cluster_elbow) {
            if (cluster_k_max == 0)
                throw ConfigError("cluster: --elbow needs --k-max");
            const ElbowReport report = elbow_select(set, cluster_k_max, cluster_seed);
            auto os = open_out(cluster_out + "/elbow.csv");
            report.write_csv(os);
            model = report.models[report.selected_k - 1];
        } else {
            if (cluster_k == 0)
                throw ConfigError("cluster: give --k or --elbow");
            model = kmeans_fit(set, cluster_k, cluster_seed).model;
        }
        save_kmeans(cluster_out + "/kmeans.txt", model);
        auto os = open_out(cluster_out + "/assignments.csv");
        os << "source_id,cluster\n";
        for (const auto& item : set.items)
            os << item.source_id << ',' << kmeans_predict(model, item.vector) << '\n';
        std::cout << "k = " << model.k() << '\n';
    } else if (*elbow) {
        const ElbowReport report = elbow_select(load_embeddings(elbow_in), elbow_k_max, elbow_seed);
        if (elbow_out.empty()) {
            report.write_csv(std::cout);
        } else {
            auto os = open_out(elbow_out);
            report.write_csv(os);
        }
        std::cerr << "selected k = " << report.selected_k << '\n';
    } else if (*train) {
        RunConfig c = RunConfig::load(train_config);
        if (!train_data.empty())
            c.train_path = train_data;
        if (!train_out.empty())
            c.out_dir = train_out;
        if (!train_embeddings.empty()) {
            c.embedding_source = EmbeddingSource::kFile;
            c.embedding_path = train_embeddings;
        }
        if (train_steps)
            c.steps = *train_steps;
        if (train_seed)
            c.seed = *train_seed;
        if (c.out_dir.empty())
            throw ConfigError("train: no output directory (out_dir or --out)");
        const TrainResult result = pipeline_train(c);
        c.save(c.out_dir + "/config.txt");
        std::cout << "groups " << result.model.num_groups() << ", steps " << result.steps.size();
        if (!result.steps.empty())
            std::cout << ", loss " << result.steps.front().lm_loss << " -> "
                      << result.steps.back().lm_loss;
        std::cout << "\nwrote " << c.out_dir << '\n';
    } else if (*eval) {
        const EvalReport report = pipeline_eval(eval_ckpt, eval_data, eval_embeddings);
        report.write_json(std::cout);
        if (!eval_out.empty()) {
            auto os = open_out(eval_out);
            report.write_json(os);
        }
    } else if (*rs) {
        const RouteStats stats = pipeline_route_stats(rs_ckpt, rs_data, rs_out, rs_embeddings);
        std::cout << "clusters:";
        for (std::size_t n : stats.cluster_histogram)
            std::cout << ' ' << n;
        std::cout << "\nmax expert load " << stats.max_load() << "\nwrote " << rs_out << '\n';
    } else if (*ablate) {
        const RunConfig base = RunConfig::load(ab_config);
        const auto rows =
            ablation_run(base, ingest_dataset(ab_train), ingest_dataset(ab_heldout), ab_seeds);
        if (ab_out.empty()) {
            write_ablation_csv(std::cout, rows);
        } else {
            auto os = open_out(ab_out);
            write_ablation_csv(os, rows);
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const moce::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const moce::FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return 3;
    } catch (const moce::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
