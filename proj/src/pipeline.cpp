// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/pipeline.hpp"

#include "moce/checkpoint.hpp"
#include "moce/error.hpp"
#include "moce/optim.hpp"
#include "moce/random.hpp"
#include "moce/routing.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

namespace moce {

namespace {

std::string embedding_text(const EmbedSettings& s, const InstructionRecord& r)
{
    return s.include_response ? r.instruction + " " + r.response : r.instruction;
}

std::vector<Example> encode_all(const Vocabulary& vocab,
                                const std::vector<InstructionRecord>& records)
{
    std::vector<Example> out;
    for (const auto& r : records)
        out.push_back(encode_example(vocab, r));
    return out;
}

// Epoch-wise shuffled index stream.
class BatchStream {
public:
    BatchStream(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) { reshuffle(); }

    std::vector<std::size_t> next(std::size_t batch)
    {
        std::vector<std::size_t> out;
        while (out.size() < batch) {
            if (pos_ == order_.size())
                reshuffle();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void reshuffle()
    {
        order_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i)
            order_[i] = i;
        for (std::size_t i = n_; i > 1; --i)
            std::swap(order_[i - 1], order_[rng_.index(i)]);
        pos_ = 0;
    }

    std::size_t n_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

std::size_t total_steps(const RunConfig& c, std::size_t n)
{
    if (c.steps)
        return c.steps;
    return c.epochs * ((n + c.batch_size - 1) / c.batch_size);
}

double supervised_count(const std::vector<bool>& mask)
{
    return static_cast<double>(std::count(mask.begin(), mask.end(), true));
}

double record_balance(const RoutingRecord& rec, double* max_load)
{
    double total = 0.0;
    double worst = 0.0;
    for (const auto& [key, log] : rec.routers()) {
        if (log.tokens == 0)
            continue;
        const auto f = log.load_fractions();
        total += balance_value(f, log.mean_probabilities());
        worst = std::max(worst, *std::max_element(f.begin(), f.end()));
    }
    if (max_load)
        *max_load = worst;
    return total;
}

std::vector<Tensor> tensors_of(const NamedTensors& named)
{
    std::vector<Tensor> out;
    for (const auto& [name, t] : named)
        out.push_back(t);
    return out;
}

void check_training_records(const std::vector<InstructionRecord>& records)
{
    if (records.empty())
        throw ContractError("pipeline_train: no training records");
    for (const auto& r : records)
        if (r.response.find_first_not_of(" \t\r\n") == std::string::npos)
            throw FormatError("pipeline_train: record '" + r.id + "' has an empty response");
}

nlohmann::ordered_json step_json(const char* phase, const StepMetrics& m)
{
    nlohmann::ordered_json j;
    j["phase"] = phase;
    j["step"] = m.step;
    j["loss"] = m.loss;
    j["lm_loss"] = m.lm_loss;
    j["balance_loss"] = m.balance_loss;
    j["max_load"] = m.max_load;
    return j;
}

std::string router_label(std::size_t router)
{
    return router == kGeneralRouter ? "gen" : std::to_string(router);
}

} // namespace

EmbedSettings embed_settings(const RunConfig& config)
{
    return {config.embedding_source, config.embed_dim, derive_seed(config.seed, "embedder"),
            config.embed_response};
}

EmbeddingSet embed_records(const EmbedSettings& settings,
                           const std::vector<InstructionRecord>& records, const EmbeddingSet* file)
{
    EmbeddingSet set;
    if (settings.source == EmbeddingSource::kFile) {
        if (!file)
            throw ConfigError("embeddings: file source selected but no embedding file given");
        std::map<std::string, const SequenceEmbedding*> by_id;
        for (const auto& e : file->items)
            by_id[e.source_id] = &e;
        set.dim = file->dim;
        for (const auto& r : records) {
            const auto it = by_id.find(r.id);
            if (it == by_id.end())
                throw FormatError("embeddings: no vector for record '" + r.id + "'");
            set.push_back(*it->second);
        }
        return set;
    }
    set.dim = settings.dim;
    for (const auto& r : records)
        set.push_back(embed_text(embedding_text(settings, r), r.id, settings.dim, settings.seed));
    return set;
}

DenseModel pretrain_dense(const RunConfig& config, const Vocabulary& vocab,
                          const std::vector<Example>& examples, std::vector<double>* losses)
{
    ModelConfig mc = config.model_config(vocab.size(), 1);
    mc.seed = derive_seed(config.seed, "model/dense");
    DenseModel dense = DenseModel::init(mc);
    if (config.pretrain_steps == 0)
        return dense;
    Adam opt(tensors_of(dense.named_parameters()), {config.pretrain_lr, 0.9, 0.999, 1e-8,
                                                    config.clip_norm});
    BatchStream stream(examples.size(), derive_seed(config.seed, "data/pretrain"));
    for (std::size_t step = 0; step < config.pretrain_steps; ++step) {
        const auto batch = stream.next(config.batch_size);
        Tape tape;
        Tensor total;
        for (std::size_t j = 0; j < batch.size(); ++j) {
            const Example& ex = examples[batch[j]];
            const Tensor l = lm_loss(tape, dense_forward(tape, dense, ex.inputs), ex.targets,
                                     ex.supervised);
            total = j ? add(tape, total, l) : l;
        }
        total = scale(tape, total, 1.0 / static_cast<double>(batch.size()));
        if (!std::isfinite(total.item()))
            throw NumericError("pretrain: non-finite loss at step " + std::to_string(step));
        if (losses)
            losses->push_back(total.item());
        tape.backward(total);
        opt.step();
    }
    return dense;
}

TrainResult pipeline_train(const RunConfig& config, const std::vector<InstructionRecord>& records,
                           const DenseModel* dense, const EmbeddingSet* file_embeddings)
{
    config.validate();
    check_training_records(records);

    TrainResult run;
    run.vocab = Vocabulary::build(records);
    run.embed = embed_settings(config);
    const std::vector<Example> examples = encode_all(run.vocab, records);
    for (const auto& ex : examples)
        if (ex.inputs.size() > config.max_seq_len)
            throw ConfigError("pipeline_train: a record needs " + std::to_string(ex.inputs.size()) +
                              " positions, max_seq_len is " + std::to_string(config.max_seq_len));

    // embed and cluster
    const EmbeddingSet embeddings = embed_records(run.embed, records, file_embeddings);
    const auto points = embeddings.vectors();
    const std::uint64_t cluster_seed = derive_seed(config.seed, "clustering");
    std::size_t m = 1;
    if (!config.no_clustering) {
        if (config.k_max) {
            if (points.size() < config.k_max)
                throw ConfigError("pipeline_train: " + std::to_string(points.size()) +
                                  " records cannot support k_max=" + std::to_string(config.k_max));
            run.elbow = elbow_select(points, config.k_max, cluster_seed);
            m = run.elbow->selected_k;
        } else {
            m = config.groups;
        }
    }
    const std::size_t distinct = count_distinct(points);
    if (distinct < m)
        throw ConfigError("pipeline_train: " + std::to_string(m) + " clusters requested but only " +
                          std::to_string(distinct) + " distinct sequence embeddings exist");
    if (run.elbow && m == run.elbow->selected_k)
        run.clustering = run.elbow->models[m - 1];
    else
        run.clustering = kmeans_fit(points, m, cluster_seed).model;
    for (const auto& p : points)
        run.groups.push_back(kmeans_predict(run.clustering, p));

    // dense base and upcycling
    DenseModel base = dense ? *dense : pretrain_dense(config, run.vocab, examples, &run.pretrain_losses);
    if (base.config().vocab_size != run.vocab.size())
        throw ConfigError("pipeline_train: dense base vocabulary differs from the corpus");
    run.model = upcycle_init(base, config.model_config(run.vocab.size(), m));

    // train
    Adam opt(tensors_of(run.model.trainable_parameters()),
             {config.lr, 0.9, 0.999, 1e-8, config.clip_norm});
    BatchStream stream(examples.size(), derive_seed(config.seed, "data/order"));
    const std::size_t steps = total_steps(config, examples.size());
    for (std::size_t step = 0; step < steps; ++step) {
        auto batch = stream.next(config.batch_size);
        // per-group micro-batches, in group order
        std::stable_sort(batch.begin(), batch.end(), [&](std::size_t a, std::size_t b) {
            return run.groups[a] < run.groups[b];
        });
        Tape tape;
        RoutingRecord record;
        Tensor lm;
        for (std::size_t j = 0; j < batch.size(); ++j) {
            const Example& ex = examples[batch[j]];
            const Tensor logits =
                model_forward(tape, run.model, ex.inputs, run.groups[batch[j]], record);
            const Tensor l = lm_loss(tape, logits, ex.targets, ex.supervised);
            lm = j ? add(tape, lm, l) : l;
        }
        lm = scale(tape, lm, 1.0 / static_cast<double>(batch.size()));
        StepMetrics sm;
        sm.step = step;
        sm.lm_loss = lm.item();
        sm.balance_loss = record_balance(record, &sm.max_load);
        Tensor total = lm;
        if (config.lambda > 0.0)
            total = add(tape, lm, load_balance_loss(tape, record, config.lambda));
        sm.loss = total.item();
        if (!std::isfinite(sm.loss))
            throw NumericError("pipeline_train: non-finite loss at step " + std::to_string(step));
        tape.backward(total);
        opt.step();
        run.steps.push_back(sm);
    }

    if (!config.out_dir.empty())
        save_run(config.out_dir, run);
    return run;
}

TrainResult pipeline_train(const RunConfig& config)
{
    config.validate();
    if (config.train_path.empty())
        throw ConfigError("pipeline_train: train_path is not set");
    const auto records = ingest_dataset(config.train_path);
    std::optional<EmbeddingSet> file;
    if (config.embedding_source == EmbeddingSource::kFile) {
        if (config.embedding_path.empty())
            throw ConfigError("run config: embedding_source = file needs embedding_path");
        file = load_embeddings(config.embedding_path);
    }
    return pipeline_train(config, records, nullptr, file ? &*file : nullptr);
}

void save_run(const std::string& dir, const TrainResult& run)
{
    namespace fs = std::filesystem;
    const std::string ck = dir + "/checkpoint";
    fs::create_directories(ck);
    KeyValues meta;
    meta["step"] = std::to_string(run.steps.size());
    meta["seed"] = std::to_string(run.model.config().seed);
    meta["clustering"] = "kmeans.txt";
    meta["vocab"] = "vocab.txt";
    meta["embed.source"] = run.embed.source == EmbeddingSource::kToy ? "toy" : "file";
    meta["embed.dim"] = std::to_string(run.embed.dim);
    meta["embed.seed"] = std::to_string(run.embed.seed);
    meta["embed.response"] = run.embed.include_response ? "true" : "false";
    save_checkpoint(ck, run.model, meta);
    save_kmeans(ck + "/kmeans.txt", run.clustering);
    run.vocab.save(ck + "/vocab.txt");

    if (run.elbow) {
        std::ofstream elbow(dir + "/elbow.csv");
        run.elbow->write_csv(elbow);
    }
    std::ofstream metrics(dir + "/metrics.jsonl");
    for (std::size_t i = 0; i < run.pretrain_losses.size(); ++i) {
        StepMetrics m;
        m.step = i;
        m.loss = m.lm_loss = run.pretrain_losses[i];
        metrics << step_json("pretrain", m).dump() << '\n';
    }
    for (const auto& m : run.steps)
        metrics << step_json("train", m).dump() << '\n';

    std::ofstream summary(dir + "/summary.csv");
    summary << "metric,value\n";
    summary << "steps," << run.steps.size() << '\n';
    if (!run.steps.empty()) {
        summary << "initial_loss," << format_double(run.steps.front().lm_loss) << '\n';
        summary << "final_loss," << format_double(run.steps.back().lm_loss) << '\n';
    }
    const ModelConfig& c = run.model.config();
    summary << "groups," << c.groups << '\n';
    summary << "experts," << c.experts << '\n';
    summary << "top_k," << c.top_k << '\n';
    summary << "mode," << to_string(c.mode) << '\n';
    summary << "variant," << (c.variant ? "true" : "false") << '\n';
    summary << "active_experts_per_token," << run.model.layers.front().active_experts_per_token()
            << '\n';
    std::vector<std::size_t> counts(c.groups, 0);
    for (std::size_t g : run.groups)
        ++counts[g];
    for (std::size_t g = 0; g < counts.size(); ++g)
        summary << "group" << g << "_records," << counts[g] << '\n';
}

LoadedRun load_run(const std::string& dir)
{
    const std::string ck = dir + "/checkpoint";
    const std::string base = std::filesystem::exists(ck + "/manifest.txt") ? ck : dir;
    Checkpoint loaded = load_checkpoint(base);
    auto get = [&](const std::string& key) {
        const auto it = loaded.meta.find(key);
        if (it == loaded.meta.end())
            throw FormatError("checkpoint: manifest lacks '" + key + "'");
        return it->second;
    };
    LoadedRun run{loaded.model, load_kmeans(base + "/" + get("clustering")),
                  Vocabulary::load(base + "/" + get("vocab")), {}, parse_size("step", get("step"))};
    const std::string source = get("embed.source");
    if (source != "toy" && source != "file")
        throw FormatError("checkpoint: unknown embedding source '" + source + "'");
    run.embed.source = source == "toy" ? EmbeddingSource::kToy : EmbeddingSource::kFile;
    run.embed.dim = parse_size("embed.dim", get("embed.dim"));
    run.embed.seed = parse_u64("embed.seed", get("embed.seed"));
    run.embed.include_response = parse_bool("embed.response", get("embed.response"));
    if (run.vocab.size() != run.model.config().vocab_size)
        throw FormatError("checkpoint: vocabulary size differs from the model");
    return run;
}

void EvalReport::write_json(std::ostream& os) const
{
    nlohmann::ordered_json j;
    j["count"] = count;
    j["exact_match"] = exact_match;
    j["mean_nll"] = mean_nll;
    j["perplexity"] = perplexity;
    j["group_counts"] = group_counts;
    j["active_experts_per_token"] = active_experts_per_token;
    j["expert_forwards_per_token"] = expert_forwards_per_token;
    os << j.dump(2) << '\n';
}

namespace {

void check_binding(const MoceModel& model, const KMeansModel& clustering)
{
    if (clustering.k() != model.num_groups())
        throw ConfigError("clustering model has k=" + std::to_string(clustering.k()) +
                          " but the checkpoint has " + std::to_string(model.num_groups()) +
                          " expert groups");
}

} // namespace

EvalReport evaluate(const MoceModel& model, const KMeansModel& clustering, const Vocabulary& vocab,
                    const EmbedSettings& embed, const std::vector<InstructionRecord>& records,
                    const EmbeddingSet* file_embeddings)
{
    check_binding(model, clustering);
    if (records.empty())
        throw ContractError("evaluate: empty evaluation set");
    const EmbeddingSet embeddings = embed_records(embed, records, file_embeddings);
    if (embeddings.dim != clustering.dim())
        throw ConfigError("evaluate: embedding dimension " + std::to_string(embeddings.dim) +
                          " differs from the clustering model's " +
                          std::to_string(clustering.dim()));
    EvalReport report;
    report.count = records.size();
    report.group_counts.assign(model.num_groups(), 0);
    report.active_experts_per_token = model.layers.front().active_experts_per_token();
    double nll = 0.0, supervised = 0.0, forwards = 0.0, token_layers = 0.0;
    std::size_t exact = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::size_t g = kmeans_predict(clustering, embeddings.items[i].vector);
        ++report.group_counts[g];
        const Example ex = encode_example(vocab, records[i]);
        Tape tape(Tape::Mode::kInference);
        RoutingRecord rec;
        const Tensor logits = model_forward(tape, model, ex.inputs, g, rec);
        const double n = supervised_count(ex.supervised);
        nll += lm_loss(tape, logits, ex.targets, ex.supervised).item() * n;
        supervised += n;
        for (const auto& [key, log] : rec.routers()) {
            for (std::size_t f : log.expert_forwards)
                forwards += static_cast<double>(f);
        }
        token_layers += static_cast<double>(ex.inputs.size() * model.layers.size());
        const auto generated =
            greedy_decode(model, ex.prompt, g, Vocabulary::kEos, ex.response.size() + 1);
        if (generated == ex.response)
            ++exact;
    }
    report.exact_match = static_cast<double>(exact) / static_cast<double>(records.size());
    report.mean_nll = nll / supervised;
    report.perplexity = std::exp(report.mean_nll);
    report.expert_forwards_per_token = forwards / token_layers;
    return report;
}

EvalReport pipeline_eval(const std::string& checkpoint_dir, const std::string& dataset_path,
                         const std::string& embeddings_path)
{
    const LoadedRun run = load_run(checkpoint_dir);
    const auto records = ingest_dataset(dataset_path);
    std::optional<EmbeddingSet> file;
    if (!embeddings_path.empty())
        file = load_embeddings(embeddings_path);
    return evaluate(run.model, run.clustering, run.vocab, run.embed, records,
                    file ? &*file : nullptr);
}

double RouteStats::max_load() const
{
    double worst = 0.0;
    for (const auto& r : routers)
        for (double f : r.load_fractions)
            worst = std::max(worst, f);
    return worst;
}

void RouteStats::write_json(std::ostream& os) const
{
    nlohmann::ordered_json j;
    j["total_tokens"] = total_tokens;
    j["cluster_histogram"] = cluster_histogram;
    j["group_tokens"] = group_tokens;
    auto routers_json = nlohmann::ordered_json::array();
    for (const auto& r : routers) {
        nlohmann::ordered_json rj;
        rj["layer"] = r.layer;
        rj["router"] = r.router;
        rj["tokens"] = r.tokens;
        rj["load_fractions"] = r.load_fractions;
        rj["mean_probabilities"] = r.mean_probabilities;
        routers_json.push_back(rj);
    }
    j["routers"] = routers_json;
    os << j.dump(2) << '\n';
}

void RouteStats::write_cluster_csv(std::ostream& os) const
{
    std::size_t total = 0;
    for (std::size_t c : cluster_histogram)
        total += c;
    os << "cluster,count,fraction\n";
    for (std::size_t c = 0; c < cluster_histogram.size(); ++c)
        os << c << ',' << cluster_histogram[c] << ','
           << format_double(total ? static_cast<double>(cluster_histogram[c]) /
                                        static_cast<double>(total)
                                  : 0.0)
           << '\n';
}

void RouteStats::write_expert_csv(std::ostream& os) const
{
    os << "layer,router,expert,tokens,load_fraction,mean_probability\n";
    for (const auto& r : routers)
        for (std::size_t i = 0; i < r.load_fractions.size(); ++i)
            os << r.layer << ',' << r.router << ',' << i << ',' << r.tokens << ','
               << format_double(r.load_fractions[i]) << ','
               << format_double(r.mean_probabilities[i]) << '\n';
}

RouteStats route_stats(const MoceModel& model, const KMeansModel& clustering,
                       const Vocabulary& vocab, const EmbedSettings& embed,
                       const std::vector<InstructionRecord>& records,
                       const EmbeddingSet* file_embeddings)
{
    check_binding(model, clustering);
    if (records.empty())
        throw ContractError("route_stats: empty dataset");
    const EmbeddingSet embeddings = embed_records(embed, records, file_embeddings);
    RouteStats stats;
    stats.cluster_histogram.assign(model.num_groups(), 0);
    stats.group_tokens.assign(model.num_groups(), 0);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::size_t g = kmeans_predict(clustering, embeddings.items[i].vector);
        ++stats.cluster_histogram[g];
        const Example ex = encode_example(vocab, records[i]);
        stats.group_tokens[g] += ex.inputs.size();
        stats.total_tokens += ex.inputs.size();
        Tape tape(Tape::Mode::kInference);
        model_forward(tape, model, ex.inputs, g, stats.record);
    }
    stats.record.release_gates();
    for (const auto& [key, log] : stats.record.routers())
        stats.routers.push_back({key.first, router_label(key.second), log.tokens,
                                 log.load_fractions(), log.mean_probabilities()});
    return stats;
}

RouteStats pipeline_route_stats(const std::string& checkpoint_dir, const std::string& dataset_path,
                                const std::string& out_dir, const std::string& embeddings_path)
{
    const LoadedRun run = load_run(checkpoint_dir);
    const auto records = ingest_dataset(dataset_path);
    std::optional<EmbeddingSet> file;
    if (!embeddings_path.empty())
        file = load_embeddings(embeddings_path);
    RouteStats stats =
        route_stats(run.model, run.clustering, run.vocab, run.embed, records, file ? &*file : nullptr);
    std::filesystem::create_directories(out_dir);
    std::ofstream json(out_dir + "/route_stats.json");
    stats.write_json(json);
    std::ofstream clusters(out_dir + "/clusters.csv");
    stats.write_cluster_csv(clusters);
    std::ofstream experts(out_dir + "/experts.csv");
    stats.write_expert_csv(experts);
    std::ofstream routes(out_dir + "/routes.csv");
    stats.record.write_csv(routes);
    return stats;
}

std::vector<AblationRow> ablation_run(const RunConfig& base,
                                      const std::vector<InstructionRecord>& train,
                                      const std::vector<InstructionRecord>& heldout,
                                      const std::vector<std::uint64_t>& seeds)
{
    base.validate();
    struct Variant {
        std::string table, routing, structure;
        std::size_t experts, top_k;
        RoutingMode mode;
        bool no_clustering, no_token_routing;
    };
    const std::size_t n = base.experts;
    std::vector<Variant> variants;
    const std::vector<std::pair<std::string, std::pair<std::size_t, RoutingMode>>> routings = {
        {"top-1", {1, RoutingMode::kTopK}},
        {"top-2", {std::min<std::size_t>(2, n), RoutingMode::kTopK}},
        {"soft", {n, RoutingMode::kSoft}}};
    for (const auto& [label, rk] : routings) {
        variants.push_back({"routing", label, "dual-stage", n, rk.first, rk.second, false, false});
        variants.push_back(
            {"routing", label, "w/o clustering", n, rk.first, rk.second, true, false});
        variants.push_back(
            {"routing", label, "w/o token routing", n, 1, RoutingMode::kTopK, false, true});
    }
    for (std::size_t e : {1, 2, 4})
        variants.push_back({"experts", "top-2", "dual-stage", e, std::min<std::size_t>(2, e),
                            RoutingMode::kTopK, false, false});

    std::vector<AblationRow> rows;
    for (std::uint64_t seed : seeds) {
        RunConfig seeded = base;
        seeded.seed = seed;
        seeded.out_dir.clear();
        const Vocabulary vocab = Vocabulary::build(train);
        const DenseModel dense = pretrain_dense(seeded, vocab, encode_all(vocab, train));
        // rows that resolve to the same model share one run
        std::map<std::string, std::pair<TrainResult, EvalReport>> done;
        for (const auto& v : variants) {
            RunConfig c = seeded;
            c.experts = v.experts;
            c.top_k = v.top_k;
            c.mode = v.mode;
            c.no_clustering = v.no_clustering;
            c.no_token_routing = v.no_token_routing;
            const std::string key = std::to_string(c.effective_experts()) + "/" +
                                    std::to_string(c.effective_top_k()) + "/" + to_string(c.mode) +
                                    "/" + (c.no_clustering ? "1" : "0");
            auto it = done.find(key);
            if (it == done.end()) {
                TrainResult trained = pipeline_train(c, train, &dense);
                EvalReport report =
                    evaluate(trained.model, trained.clustering, trained.vocab, trained.embed, heldout);
                it = done.emplace(key, std::make_pair(std::move(trained), std::move(report))).first;
            }
            const TrainResult& run = it->second.first;
            const EvalReport& eval = it->second.second;
            AblationRow row;
            row.table = v.table;
            row.routing = v.routing;
            row.structure = v.structure;
            row.seed = seed;
            row.groups = run.model.config().groups;
            row.experts = run.model.config().experts;
            row.top_k = v.mode == RoutingMode::kSoft ? run.model.config().experts
                                                     : run.model.config().top_k;
            row.final_train_loss = run.steps.empty() ? 0.0 : run.steps.back().lm_loss;
            row.heldout_loss = eval.mean_nll;
            row.exact_match = eval.exact_match;
            row.expert_forwards_per_token = eval.expert_forwards_per_token;
            rows.push_back(row);
        }
    }
    return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows)
{
    os << "table,routing,structure,seed,groups,experts,top_k,final_train_loss,heldout_loss,"
          "exact_match,expert_forwards_per_token\n";
    for (const auto& r : rows)
        os << r.table << ',' << r.routing << ',' << r.structure << ',' << r.seed << ','
           << r.groups << ',' << r.experts << ',' << r.top_k << ','
           << format_double(r.final_train_loss) << ',' << format_double(r.heldout_loss) << ','
           << format_double(r.exact_match) << ',' << format_double(r.expert_forwards_per_token)
           << '\n';
}

} // namespace moce
