// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/config.hpp"

#include "moce/error.hpp"
#include "moce/random.hpp"

#include <fstream>
#include <functional>

namespace moce {

namespace {

// Field table shared by the reader and the writer.
struct Field {
    std::function<void(RunConfig&, const std::string&, const std::string&)> read;
    std::function<std::string(const RunConfig&)> write;
};

std::string str(bool b)
{
    return b ? "true" : "false";
}

template <typename T>
Field size_field(T RunConfig::*member)
{
    return {[member](RunConfig& c, const std::string& k, const std::string& v) {
                c.*member = parse_size(k, v);
            },
            [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(double RunConfig::*member)
{
    return {[member](RunConfig& c, const std::string& k, const std::string& v) {
                c.*member = parse_double(k, v);
            },
            [member](const RunConfig& c) { return format_double(c.*member); }};
}

Field bool_field(bool RunConfig::*member)
{
    return {[member](RunConfig& c, const std::string& k, const std::string& v) {
                c.*member = parse_bool(k, v);
            },
            [member](const RunConfig& c) { return str(c.*member); }};
}

Field string_field(std::string RunConfig::*member)
{
    return {[member](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; },
            [member](const RunConfig& c) { return c.*member; }};
}

const std::map<std::string, Field>& fields()
{
    static const std::map<std::string, Field> table = {
        {"train_path", string_field(&RunConfig::train_path)},
        {"eval_path", string_field(&RunConfig::eval_path)},
        {"out_dir", string_field(&RunConfig::out_dir)},
        {"embedding_source",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "toy")
                  c.embedding_source = EmbeddingSource::kToy;
              else if (v == "file")
                  c.embedding_source = EmbeddingSource::kFile;
              else
                  throw ConfigError("'" + k + "': expected toy or file, got '" + v + "'");
          },
          [](const RunConfig& c) {
              return std::string(c.embedding_source == EmbeddingSource::kToy ? "toy" : "file");
          }}},
        {"embedding_path", string_field(&RunConfig::embedding_path)},
        {"embed_dim", size_field(&RunConfig::embed_dim)},
        {"embed_response", bool_field(&RunConfig::embed_response)},
        {"k_max", size_field(&RunConfig::k_max)},
        {"groups", size_field(&RunConfig::groups)},
        {"d_model", size_field(&RunConfig::d_model)},
        {"n_layers", size_field(&RunConfig::n_layers)},
        {"n_heads", size_field(&RunConfig::n_heads)},
        {"d_ff", size_field(&RunConfig::d_ff)},
        {"max_seq_len", size_field(&RunConfig::max_seq_len)},
        {"adapter_rank", size_field(&RunConfig::adapter_rank)},
        {"experts", size_field(&RunConfig::experts)},
        {"top_k", size_field(&RunConfig::top_k)},
        {"mode",
         {[](RunConfig& c, const std::string&, const std::string& v) {
              c.mode = parse_routing_mode(v);
          },
          [](const RunConfig& c) { return to_string(c.mode); }}},
        {"variant", bool_field(&RunConfig::variant)},
        {"activation",
         {[](RunConfig& c, const std::string&, const std::string& v) {
              c.activation = parse_activation(v);
          },
          [](const RunConfig& c) { return to_string(c.activation); }}},
        {"renormalize", bool_field(&RunConfig::renormalize)},
        {"moe_scale", double_field(&RunConfig::moe_scale)},
        {"train_attention", bool_field(&RunConfig::train_attention)},
        {"router_init_std", double_field(&RunConfig::router_init_std)},
        {"lr", double_field(&RunConfig::lr)},
        {"batch_size", size_field(&RunConfig::batch_size)},
        {"epochs", size_field(&RunConfig::epochs)},
        {"steps", size_field(&RunConfig::steps)},
        {"lambda", double_field(&RunConfig::lambda)},
        {"clip_norm", double_field(&RunConfig::clip_norm)},
        {"pretrain_steps", size_field(&RunConfig::pretrain_steps)},
        {"pretrain_lr", double_field(&RunConfig::pretrain_lr)},
        {"seed",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              c.seed = parse_u64(k, v);
          },
          [](const RunConfig& c) { return std::to_string(c.seed); }}},
        {"no_clustering", bool_field(&RunConfig::no_clustering)},
        {"no_token_routing", bool_field(&RunConfig::no_token_routing)},
    };
    return table;
}

} // namespace

void RunConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw ConfigError("run config: " + msg); };
    if ((k_max == 0) == (groups == 0))
        fail("set exactly one of k_max and groups");
    if (k_max != 0 && k_max < 3)
        fail("k_max must be at least 3");
    if (embed_dim == 0)
        fail("embed_dim must be positive");
    if (batch_size == 0)
        fail("batch_size must be positive");
    if (steps == 0 && epochs == 0)
        fail("set steps or epochs");
    if (!(lr > 0.0) || !(pretrain_lr > 0.0))
        fail("learning rates must be positive");
    if (lambda < 0.0)
        fail("lambda must be non-negative");
    if (clip_norm < 0.0)
        fail("clip_norm must be non-negative");
    if (experts == 0)
        fail("experts must be positive");
    if (!no_token_routing && (top_k == 0 || top_k > experts))
        fail("top_k=" + std::to_string(top_k) + " outside [1, experts=" + std::to_string(experts) +
             "]");
    if (no_token_routing && mode == RoutingMode::kSoft && experts > 1)
        fail("no_token_routing replaces soft merging; use mode = topk");
    model_config(2, 1).validate();
}

KeyValues RunConfig::to_map() const
{
    KeyValues kv;
    for (const auto& [k, f] : fields())
        kv[k] = f.write(*this);
    return kv;
}

RunConfig RunConfig::from_map(const KeyValues& kv)
{
    RunConfig c;
    const auto& table = fields();
    for (const auto& [k, v] : kv) {
        const auto it = table.find(k);
        if (it == table.end())
            throw ConfigError("run config: unknown key '" + k + "'");
        it->second.read(c, k, v);
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw ConfigError("run config: cannot open " + path);
    RunConfig c = from_map(read_key_values(is, path));
    c.validate();
    return c;
}

void RunConfig::save(const std::string& path) const
{
    std::ofstream os(path);
    if (!os)
        throw ConfigError("run config: cannot write " + path);
    write_key_values(os, to_map());
}

ModelConfig RunConfig::model_config(std::size_t vocab, std::size_t m) const
{
    ModelConfig mc;
    mc.vocab_size = vocab;
    mc.d_model = d_model;
    mc.n_layers = n_layers;
    mc.n_heads = n_heads;
    mc.d_ff = d_ff;
    mc.max_seq_len = max_seq_len;
    mc.adapter_rank = adapter_rank;
    mc.groups = m;
    mc.experts = effective_experts();
    mc.top_k = effective_top_k();
    mc.mode = mode;
    mc.variant = variant;
    mc.activation = activation;
    mc.renormalize = renormalize;
    mc.moe_scale = moe_scale;
    mc.train_attention = train_attention;
    mc.router_init_std = router_init_std;
    mc.seed = derive_seed(seed, "model/upcycle");
    return mc;
}

} // namespace moce
