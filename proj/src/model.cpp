// Copyright (c) 2026, the moce authors
// SPDX-License-Identifier: Apache-2.0

#include "moce/model.hpp"

#include "moce/error.hpp"
#include "moce/kv.hpp"
#include "moce/random.hpp"

#include <algorithm>
#include <cmath>

namespace moce {

void ModelConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (vocab_size < 2)
        fail("vocab_size must be at least 2");
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq_len == 0)
        fail("dimensions must be positive");
    if (d_model % n_heads != 0)
        fail("d_model=" + std::to_string(d_model) + " is not divisible by n_heads=" +
             std::to_string(n_heads));
    if (adapter_rank == 0 || groups == 0 || experts == 0)
        fail("adapter_rank, groups and experts must be positive");
    if (top_k == 0 || top_k > experts)
        fail("top_k=" + std::to_string(top_k) + " outside [1, " + std::to_string(experts) + "]");
    if (!(moe_scale > 0.0) || !std::isfinite(moe_scale))
        fail("moe_scale must be positive");
    if (!(router_init_std >= 0.0))
        fail("router_init_std must be non-negative");
}

std::map<std::string, std::string> ModelConfig::to_map() const
{
    return {
        {"vocab_size", std::to_string(vocab_size)},
        {"d_model", std::to_string(d_model)},
        {"n_layers", std::to_string(n_layers)},
        {"n_heads", std::to_string(n_heads)},
        {"d_ff", std::to_string(d_ff)},
        {"max_seq_len", std::to_string(max_seq_len)},
        {"adapter_rank", std::to_string(adapter_rank)},
        {"groups", std::to_string(groups)},
        {"experts", std::to_string(experts)},
        {"top_k", std::to_string(top_k)},
        {"mode", to_string(mode)},
        {"variant", variant ? "true" : "false"},
        {"activation", to_string(activation)},
        {"renormalize", renormalize ? "true" : "false"},
        {"moe_scale", format_double(moe_scale)},
        {"train_attention", train_attention ? "true" : "false"},
        {"router_init_std", format_double(router_init_std)},
        {"seed", std::to_string(seed)},
    };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv)
{
    ModelConfig c;
    for (const auto& [k, v] : kv) {
        if (k == "vocab_size")
            c.vocab_size = parse_size(k, v);
        else if (k == "d_model")
            c.d_model = parse_size(k, v);
        else if (k == "n_layers")
            c.n_layers = parse_size(k, v);
        else if (k == "n_heads")
            c.n_heads = parse_size(k, v);
        else if (k == "d_ff")
            c.d_ff = parse_size(k, v);
        else if (k == "max_seq_len")
            c.max_seq_len = parse_size(k, v);
        else if (k == "adapter_rank")
            c.adapter_rank = parse_size(k, v);
        else if (k == "groups")
            c.groups = parse_size(k, v);
        else if (k == "experts")
            c.experts = parse_size(k, v);
        else if (k == "top_k")
            c.top_k = parse_size(k, v);
        else if (k == "mode")
            c.mode = parse_routing_mode(v);
        else if (k == "variant")
            c.variant = parse_bool(k, v);
        else if (k == "activation")
            c.activation = parse_activation(v);
        else if (k == "renormalize")
            c.renormalize = parse_bool(k, v);
        else if (k == "moe_scale")
            c.moe_scale = parse_double(k, v);
        else if (k == "train_attention")
            c.train_attention = parse_bool(k, v);
        else if (k == "router_init_std")
            c.router_init_std = parse_double(k, v);
        else if (k == "seed")
            c.seed = parse_u64(k, v);
        else
            throw ConfigError("model config: unknown key '" + k + "'");
    }
    return c;
}

namespace {

Tensor gaussian(Rng& rng, Shape shape, double sd)
{
    Tensor t(std::move(shape), true);
    for (double& v : t.values())
        v = rng.normal(0.0, sd);
    return t;
}

Tensor ones(std::size_t n)
{
    return Tensor(Shape{n}, std::vector<double>(n, 1.0), true);
}

std::string layer_name(std::size_t l)
{
    return "layer" + std::to_string(l);
}

void add_attention(NamedTensors& out, const std::string& prefix, const AttentionBlock& a)
{
    out.emplace_back(prefix + ".attn.norm", a.norm);
    out.emplace_back(prefix + ".attn.wq", a.wq);
    out.emplace_back(prefix + ".attn.wk", a.wk);
    out.emplace_back(prefix + ".attn.wv", a.wv);
    out.emplace_back(prefix + ".attn.wo", a.wo);
}

Tensor embed(Tape& tape, const Tensor& tokens, const Tensor& positions, std::size_t max_len,
             std::span<const std::size_t> ids)
{
    if (ids.empty())
        throw ContractError("model_forward: empty token sequence");
    if (ids.size() > max_len)
        throw ContractError("model_forward: sequence of " + std::to_string(ids.size()) +
                            " tokens exceeds max_seq_len=" + std::to_string(max_len));
    for (std::size_t id : ids)
        if (id >= tokens.rows())
            throw ContractError("model_forward: token id " + std::to_string(id) +
                                " outside the vocabulary of " + std::to_string(tokens.rows()));
    std::vector<std::size_t> pos(ids.size());
    for (std::size_t i = 0; i < pos.size(); ++i)
        pos[i] = i;
    return add(tape, gather_rows(tape, tokens, ids), gather_rows(tape, positions, pos));
}

// Causal multi-head self-attention on the normalised residual stream.
Tensor attend(Tape& tape, const AttentionBlock& a, const Tensor& h, std::size_t heads)
{
    const Tensor x = rms_norm(tape, h, a.norm);
    const Tensor q = matmul(tape, x, a.wq);
    const Tensor k = matmul(tape, x, a.wk);
    const Tensor v = matmul(tape, x, a.wv);
    const std::size_t dh = x.cols() / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    for (std::size_t i = 0; i < heads; ++i) {
        const Tensor qi = slice_cols(tape, q, i * dh, dh);
        const Tensor ki = slice_cols(tape, k, i * dh, dh);
        const Tensor vi = slice_cols(tape, v, i * dh, dh);
        const Tensor scores = scale(tape, matmul(tape, qi, transpose(tape, ki)), inv);
        outs.push_back(matmul(tape, causal_softmax(tape, scores), vi));
    }
    const Tensor merged = heads == 1 ? outs.front() : concat_cols(tape, outs);
    return matmul(tape, merged, a.wo);
}

Tensor head(Tape& tape, const Tensor& h, const Tensor& norm, const Tensor& lm_head)
{
    return matmul(tape, rms_norm(tape, h, norm), lm_head);
}

} // namespace

DenseModel DenseModel::init(const ModelConfig& config)
{
    config.validate();
    DenseModel m;
    m.config_ = config;
    const std::size_t d = config.d_model;
    Rng rng(derive_seed(config.seed, "dense/init"));
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double resid = sd / std::sqrt(2.0 * static_cast<double>(config.n_layers));
    m.token_embedding = gaussian(rng, {config.vocab_size, d}, 1.0);
    m.position_embedding = gaussian(rng, {config.max_seq_len, d}, 0.5);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        DenseBlock b;
        b.attention.norm = ones(d);
        b.attention.wq = gaussian(rng, {d, d}, sd);
        b.attention.wk = gaussian(rng, {d, d}, sd);
        b.attention.wv = gaussian(rng, {d, d}, sd);
        b.attention.wo = gaussian(rng, {d, d}, resid);
        b.ffn_norm = ones(d);
        b.ffn.w_in = gaussian(rng, {d, config.d_ff}, sd);
        b.ffn.w_out = gaussian(rng, {config.d_ff, d},
                               1.0 / std::sqrt(static_cast<double>(config.d_ff)) /
                                   std::sqrt(2.0 * static_cast<double>(config.n_layers)));
        b.ffn.activation = config.activation;
        m.blocks.push_back(std::move(b));
    }
    m.final_norm = ones(d);
    m.lm_head = gaussian(rng, {d, config.vocab_size}, sd);
    return m;
}

NamedTensors DenseModel::named_parameters() const
{
    NamedTensors out{{"tok_emb", token_embedding}, {"pos_emb", position_embedding}};
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const std::string p = layer_name(l);
        add_attention(out, p, blocks[l].attention);
        out.emplace_back(p + ".ffn.norm", blocks[l].ffn_norm);
        out.emplace_back(p + ".ffn.w_in", blocks[l].ffn.w_in);
        out.emplace_back(p + ".ffn.w_out", blocks[l].ffn.w_out);
    }
    out.emplace_back("final.norm", final_norm);
    out.emplace_back("lm_head", lm_head);
    return out;
}

MoceModel MoceModel::skeleton(const ModelConfig& config)
{
    config.validate();
    MoceModel m;
    m.config_ = config;
    const std::size_t d = config.d_model;
    auto frozen = [](Shape s) { return Tensor(std::move(s), false); };
    m.token_embedding = frozen({config.vocab_size, d});
    m.position_embedding = frozen({config.max_seq_len, d});
    auto make_group = [&]() {
        ExpertGroup g;
        for (std::size_t i = 0; i < config.experts; ++i)
            g.experts.push_back({Tensor(Shape{d, config.adapter_rank}, true),
                                 Tensor(Shape{config.adapter_rank, d}, true)});
        g.router = Tensor(Shape{d, config.experts}, true);
        return g;
    };
    MoceLayerOptions options;
    options.top_k = config.top_k;
    options.mode = config.mode;
    options.renormalize = config.renormalize;
    options.scale = config.moe_scale;
    options.activation = config.activation;
    options.combine = CombineForm::kDenseResidual;
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        AttentionBlock a{frozen({d}), frozen({d, d}), frozen({d, d}), frozen({d, d}),
                         frozen({d, d})};
        if (config.train_attention)
            for (Tensor* t : {&a.norm, &a.wq, &a.wk, &a.wv, &a.wo})
                t->set_requires_grad(true);
        m.attention.push_back(a);
        m.ffn_norms.push_back(frozen({d}));
        FeedForward base{frozen({d, config.d_ff}), frozen({config.d_ff, d}), config.activation};
        std::vector<ExpertGroup> groups;
        for (std::size_t g = 0; g < config.groups; ++g)
            groups.push_back(make_group());
        std::optional<ExpertGroup> general;
        if (config.variant)
            general = make_group();
        m.layers.emplace_back(base, std::move(groups), std::move(general), options);
    }
    m.final_norm = frozen({d});
    m.lm_head = frozen({d, config.vocab_size});
    return m;
}

NamedTensors MoceModel::named_parameters() const
{
    NamedTensors out{{"tok_emb", token_embedding}, {"pos_emb", position_embedding}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = layer_name(l);
        add_attention(out, p, attention[l]);
        out.emplace_back(p + ".ffn.norm", ffn_norms[l]);
        out.emplace_back(p + ".ffn.w_in", layers[l].base().w_in);
        out.emplace_back(p + ".ffn.w_out", layers[l].base().w_out);
        for (auto& named : layers[l].named_parameters(p + ".moce."))
            out.push_back(std::move(named));
    }
    out.emplace_back("final.norm", final_norm);
    out.emplace_back("lm_head", lm_head);
    return out;
}

NamedTensors MoceModel::trainable_parameters() const
{
    NamedTensors out;
    for (auto& named : named_parameters())
        if (named.second.requires_grad())
            out.push_back(std::move(named));
    return out;
}

MoceModel upcycle_init(const DenseModel& dense, const ModelConfig& config)
{
    const ModelConfig& dc = dense.config();
    auto mismatch = [](const std::string& what) {
        throw ConfigError("upcycle_init: " + what + " differs between dense base and config");
    };
    if (dc.vocab_size != config.vocab_size)
        mismatch("vocab_size");
    if (dc.d_model != config.d_model)
        mismatch("d_model");
    if (dc.n_layers != config.n_layers)
        mismatch("n_layers");
    if (dc.n_heads != config.n_heads)
        mismatch("n_heads");
    if (dc.max_seq_len != config.max_seq_len)
        mismatch("max_seq_len");
    for (std::size_t l = 0; l < dense.blocks.size(); ++l)
        if (dense.blocks[l].ffn.w_in.cols() != config.d_ff)
            throw ConfigError("upcycle_init: layer " + std::to_string(l) + " has d_ff=" +
                              std::to_string(dense.blocks[l].ffn.w_in.cols()) +
                              ", config says " + std::to_string(config.d_ff));

    MoceModel m = MoceModel::skeleton(config);
    auto copy = [](Tensor& dst, const Tensor& src, const std::string& name) {
        if (dst.shape() != src.shape())
            throw ConfigError("upcycle_init: " + name + " has shape " + to_string(src.shape()) +
                              ", expected " + to_string(dst.shape()));
        std::copy(src.values().begin(), src.values().end(), dst.values().begin());
    };
    copy(m.token_embedding, dense.token_embedding, "tok_emb");
    copy(m.position_embedding, dense.position_embedding, "pos_emb");
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        const DenseBlock& b = dense.blocks[l];
        const std::string p = layer_name(l);
        copy(m.attention[l].norm, b.attention.norm, p + ".attn.norm");
        copy(m.attention[l].wq, b.attention.wq, p + ".attn.wq");
        copy(m.attention[l].wk, b.attention.wk, p + ".attn.wk");
        copy(m.attention[l].wv, b.attention.wv, p + ".attn.wv");
        copy(m.attention[l].wo, b.attention.wo, p + ".attn.wo");
        copy(m.ffn_norms[l], b.ffn_norm, p + ".ffn.norm");
        MoceLayer& layer = m.layers[l];
        copy(layer.base().w_in, b.ffn.w_in, p + ".ffn.w_in");
        copy(layer.base().w_out, b.ffn.w_out, p + ".ffn.w_out");
        if (b.ffn.activation != config.activation)
            throw ConfigError("upcycle_init: " + p + " base activation differs from config");

        const double down_std = 1.0 / std::sqrt(static_cast<double>(config.d_model));
        auto init_group = [&](ExpertGroup& g, const std::string& name) {
            Rng rng(derive_seed(config.seed, "upcycle/" + p + "/" + name));
            for (auto& e : g.experts)
                e = AdapterExpert::identity_init(config.d_model, config.adapter_rank, down_std,
                                                 rng);
            for (double& v : g.router.values())
                v = rng.normal(0.0, config.router_init_std);
        };
        for (std::size_t g = 0; g < config.groups; ++g)
            init_group(layer.group(g), "group" + std::to_string(g));
        if (config.variant)
            init_group(layer.general(), "general");
    }
    copy(m.final_norm, dense.final_norm, "final.norm");
    copy(m.lm_head, dense.lm_head, "lm_head");
    return m;
}

Tensor dense_forward(Tape& tape, const DenseModel& model, std::span<const std::size_t> ids)
{
    const ModelConfig& c = model.config();
    Tensor h = embed(tape, model.token_embedding, model.position_embedding, c.max_seq_len, ids);
    for (const DenseBlock& b : model.blocks) {
        h = add(tape, h, attend(tape, b.attention, h, c.n_heads));
        h = add(tape, h, feed_forward(tape, b.ffn, rms_norm(tape, h, b.ffn_norm)));
    }
    return head(tape, h, model.final_norm, model.lm_head);
}

Tensor model_forward(Tape& tape, const MoceModel& model, std::span<const std::size_t> ids,
                     std::size_t group, RoutingRecord& record)
{
    const ModelConfig& c = model.config();
    if (group >= c.groups)
        throw ContractError("model_forward: group " + std::to_string(group) + " outside [0, " +
                            std::to_string(c.groups) + ")");
    Tensor h = embed(tape, model.token_embedding, model.position_embedding, c.max_seq_len, ids);
    record.begin_sequence(group, ids.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        h = add(tape, h, attend(tape, model.attention[l], h, c.n_heads));
        const Tensor x = rms_norm(tape, h, model.ffn_norms[l]);
        h = add(tape, h, model.layers[l].forward(tape, x, group, record, l));
    }
    return head(tape, h, model.final_norm, model.lm_head);
}

Tensor lm_loss(Tape& tape, const Tensor& logits, std::span<const std::size_t> targets,
               const std::vector<bool>& supervised)
{
    return cross_entropy(tape, logits, targets, supervised);
}

std::vector<std::size_t> greedy_decode(const MoceModel& model, std::vector<std::size_t> prompt,
                                       std::size_t group, std::size_t stop, std::size_t max_new)
{
    std::vector<std::size_t> generated;
    while (generated.size() < max_new && prompt.size() < model.config().max_seq_len) {
        Tape tape(Tape::Mode::kInference);
        RoutingRecord scratch;
        const Tensor logits = model_forward(tape, model, prompt, group, scratch);
        const auto last = logits.values().subspan((logits.rows() - 1) * logits.cols(),
                                                  logits.cols());
        const std::size_t next = top_k_indices(last, 1).front();
        if (next == stop)
            break;
        generated.push_back(next);
        prompt.push_back(next);
    }
    return generated;
}

} // namespace moce
