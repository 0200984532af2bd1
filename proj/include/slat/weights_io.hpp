#pragma once
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "mlp.hpp"
#include "nn.hpp"
#include "tensor.hpp"
#include "transformer.hpp"
#include "unet3d.hpp"

// Weight archive: a directory of named "DNSE" tensors plus a JSON manifest
// listing tensor shapes and the model hyperparameters needed to rebuild it.

namespace slat {

struct WeightArchive {
    nlohmann::json meta;
    std::map<std::string, Tensor> tensors;  // ordered for deterministic writes

    void put(const std::string& name, Tensor t) { tensors[name] = std::move(t); }

    void put_vector(const std::string& name, const std::vector<double>& v) {
        Tensor t({v.size()});
        std::copy(v.begin(), v.end(), t.data());
        tensors[name] = std::move(t);
    }

    const Tensor& get(const std::string& name) const {
        const auto it = tensors.find(name);
        if (it == tensors.end()) throw InputError("weight archive: missing tensor " + name);
        return it->second;
    }

    std::vector<double> get_vector(const std::string& name) const {
        const Tensor& t = get(name);
        return {t.data(), t.data() + t.size()};
    }

    static std::string file_name(const std::string& tensor_name) {
        std::string s = tensor_name;
        for (char& c : s)
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_' && c != '-')
                c = '_';
        return s + ".dnse";
    }

    void save(const std::string& dir) const {
        std::filesystem::create_directories(dir);
        nlohmann::json manifest;
        manifest["format"] = "slat-weights";
        manifest["version"] = 1;
        manifest["meta"] = meta;
        nlohmann::json tj = nlohmann::json::object();
        for (const auto& [name, tensor] : tensors) {
            const std::string file = file_name(name);
            save_dnse((std::filesystem::path(dir) / file).string(), tensor);
            tj[name] = {{"file", file}, {"shape", tensor.shape()}};
        }
        manifest["tensors"] = tj;
        std::ofstream os(std::filesystem::path(dir) / "manifest.json");
        if (!os) throw InputError("weight archive: cannot write manifest in " + dir);
        os << manifest.dump(2) << "\n";
    }

    static WeightArchive load(const std::string& dir) {
        std::ifstream is(std::filesystem::path(dir) / "manifest.json");
        if (!is) throw InputError("weight archive: cannot open manifest in " + dir);
        nlohmann::json manifest;
        is >> manifest;
        if (manifest.value("format", "") != "slat-weights")
            throw InputError("weight archive: unrecognized manifest format in " + dir);
        WeightArchive a;
        a.meta = manifest.value("meta", nlohmann::json::object());
        for (const auto& [name, entry] : manifest.at("tensors").items())
            a.tensors[name] =
                load_dnse((std::filesystem::path(dir) / entry.at("file").get<std::string>())
                              .string());
        return a;
    }
};

// ---------------------------------------------------------------------------
// Per-layer helpers

inline void put_linear(WeightArchive& a, const std::string& name, const Linear& l) {
    a.put(name + ".w", l.w);
    a.put_vector(name + ".b", l.b);
}

inline Linear get_linear(const WeightArchive& a, const std::string& name) {
    Linear l;
    l.w = a.get(name + ".w");
    l.b = a.get_vector(name + ".b");
    return l;
}

inline void put_layer_norm(WeightArchive& a, const std::string& name, const LayerNormParams& p) {
    a.put_vector(name + ".gamma", p.gamma);
    a.put_vector(name + ".beta", p.beta);
}

inline LayerNormParams get_layer_norm(const WeightArchive& a, const std::string& name) {
    return {a.get_vector(name + ".gamma"), a.get_vector(name + ".beta")};
}

inline void put_attention(WeightArchive& a, const std::string& name, const AttentionWeights& w) {
    put_linear(a, name + ".q", w.q);
    put_linear(a, name + ".k", w.k);
    put_linear(a, name + ".v", w.v);
    put_linear(a, name + ".proj", w.o);
    a.put_vector(name + ".q_gain", w.q_gain);
    a.put_vector(name + ".k_gain", w.k_gain);
}

inline AttentionWeights get_attention(const WeightArchive& a, const std::string& name, int dim,
                                      int heads, bool qk_norm) {
    AttentionWeights w;
    w.dim = dim;
    w.heads = heads;
    w.qk_norm = qk_norm;
    w.q = get_linear(a, name + ".q");
    w.k = get_linear(a, name + ".k");
    w.v = get_linear(a, name + ".v");
    w.o = get_linear(a, name + ".proj");
    w.q_gain = a.get_vector(name + ".q_gain");
    w.k_gain = a.get_vector(name + ".k_gain");
    return w;
}

inline void put_conv3d(WeightArchive& a, const std::string& name, const Conv3dWeights& c) {
    a.put(name + ".w", c.w);
    a.put_vector(name + ".b", c.b);
}

inline Conv3dWeights get_conv3d(const WeightArchive& a, const std::string& name, int stride = 1) {
    Conv3dWeights c;
    c.w = a.get(name + ".w");
    c.b = a.get_vector(name + ".b");
    c.stride = stride;
    return c;
}

inline void put_ffn(WeightArchive& a, const std::string& name, const FeedForward& f) {
    put_linear(a, name + ".ffn1", f.fc1);
    put_linear(a, name + ".ffn2", f.fc2);
}

inline FeedForward get_ffn(const WeightArchive& a, const std::string& name) {
    return {get_linear(a, name + ".ffn1"), get_linear(a, name + ".ffn2")};
}

// ---------------------------------------------------------------------------
// Models

inline WeightArchive to_archive(const TinyMlp& m) {
    WeightArchive a;
    const auto& c = m.config();
    a.meta = {{"model", "tiny_mlp"},
              {"in_dim", c.in_dim},
              {"out_dim", c.out_dim},
              {"hidden", c.hidden},
              {"hidden_layers", c.hidden_layers},
              {"cond_dim", c.cond_dim}};
    a.put_vector("params", m.params());
    return a;
}

inline TinyMlp tiny_mlp_from_archive(const WeightArchive& a) {
    TinyMlpConfig c;
    c.in_dim = a.meta.at("in_dim").get<int>();
    c.out_dim = a.meta.at("out_dim").get<int>();
    c.hidden = a.meta.at("hidden").get<int>();
    c.hidden_layers = a.meta.at("hidden_layers").get<int>();
    c.cond_dim = a.meta.at("cond_dim").get<int>();
    Rng rng(0);
    TinyMlp m = TinyMlp::init(c, rng);
    const auto params = a.get_vector("params");
    if (params.size() != m.param_count())
        throw InputError("weight archive: tiny_mlp parameter count mismatch");
    m.params() = params;
    return m;
}

inline nlohmann::json flow_transformer_config_json(const FlowTransformerConfig& c) {
    return {{"layers", c.layers},   {"dim", c.dim},
            {"heads", c.heads},     {"channels", c.channels},
            {"cond_dim", c.cond_dim}, {"temb_dim", c.temb_dim},
            {"grid_resolution", c.grid_resolution}};
}

inline FlowTransformerConfig flow_transformer_config_from_json(const nlohmann::json& j) {
    FlowTransformerConfig c;
    c.layers = j.at("layers").get<int>();
    c.dim = j.at("dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.channels = j.at("channels").get<int>();
    c.cond_dim = j.at("cond_dim").get<int>();
    c.temb_dim = j.at("temb_dim").get<int>();
    c.grid_resolution = j.at("grid_resolution").get<int>();
    return c;
}

namespace detail {

inline void put_adaln_block(WeightArchive& a, const std::string& name,
                            const AdaLnBlockWeights& b) {
    put_attention(a, name + ".attn", b.self_attn);
    if (b.cross_attn) put_attention(a, name + ".xattn", *b.cross_attn);
    put_ffn(a, name, b.ffn);
    put_linear(a, name + ".adaln", b.modulation);
}

inline AdaLnBlockWeights get_adaln_block(const WeightArchive& a, const std::string& name, int dim,
                                         int heads, int cond_dim) {
    AdaLnBlockWeights b;
    b.dim = dim;
    b.self_attn = get_attention(a, name + ".attn", dim, heads, true);
    if (cond_dim > 0) b.cross_attn = get_attention(a, name + ".xattn", dim, heads, true);
    b.ffn = get_ffn(a, name);
    b.modulation = get_linear(a, name + ".adaln");
    return b;
}

inline void put_temb(WeightArchive& a, const std::string& name, const TimestepEmbedder& t) {
    put_linear(a, name + ".fc1", t.fc1);
    put_linear(a, name + ".fc2", t.fc2);
}

inline TimestepEmbedder get_temb(const WeightArchive& a, const std::string& name, int sin_dim) {
    TimestepEmbedder t;
    t.sin_dim = sin_dim;
    t.fc1 = get_linear(a, name + ".fc1");
    t.fc2 = get_linear(a, name + ".fc2");
    return t;
}

inline void put_sparse_res_block(WeightArchive& a, const std::string& name,
                                 const SparseResBlockWeights& r) {
    a.put(name + ".conv1.w", r.conv1_w);
    a.put_vector(name + ".conv1.b", r.conv1_b);
    a.put(name + ".conv2.w", r.conv2_w);
    a.put_vector(name + ".conv2.b", r.conv2_b);
    if (r.has_skip_proj) put_linear(a, name + ".skip", r.skip_proj);
}

inline SparseResBlockWeights get_sparse_res_block(const WeightArchive& a,
                                                  const std::string& name) {
    SparseResBlockWeights r;
    r.conv1_w = a.get(name + ".conv1.w");
    r.conv1_b = a.get_vector(name + ".conv1.b");
    r.conv2_w = a.get(name + ".conv2.w");
    r.conv2_b = a.get_vector(name + ".conv2.b");
    if (a.tensors.count(name + ".skip.w")) {
        r.has_skip_proj = true;
        r.skip_proj = get_linear(a, name + ".skip");
    }
    return r;
}

}  // namespace detail

inline WeightArchive to_archive(const DenseFlowTransformer& m) {
    WeightArchive a;
    a.meta = {{"model", "dense_flow_transformer"},
              {"config", flow_transformer_config_json(m.config)}};
    put_linear(a, "in_proj", m.in_proj);
    detail::put_temb(a, "temb", m.temb);
    for (std::size_t i = 0; i < m.blocks.size(); ++i)
        detail::put_adaln_block(a, "blk" + std::to_string(i), m.blocks[i]);
    put_layer_norm(a, "ln_out", m.ln_out);
    put_linear(a, "out_proj", m.out_proj);
    if (m.config.cond_dim > 0) a.put("null_cond", m.null_cond);
    return a;
}

inline DenseFlowTransformer dense_flow_transformer_from_archive(const WeightArchive& a) {
    DenseFlowTransformer m;
    m.config = flow_transformer_config_from_json(a.meta.at("config"));
    m.in_proj = get_linear(a, "in_proj");
    m.temb = detail::get_temb(a, "temb", m.config.temb_dim);
    for (int i = 0; i < m.config.layers; ++i)
        m.blocks.push_back(detail::get_adaln_block(a, "blk" + std::to_string(i), m.config.dim,
                                                   m.config.heads, m.config.cond_dim));
    m.ln_out = get_layer_norm(a, "ln_out");
    m.out_proj = get_linear(a, "out_proj");
    if (m.config.cond_dim > 0) m.null_cond = a.get("null_cond");
    return m;
}

inline WeightArchive to_archive(const SparseFlowTransformer& m) {
    WeightArchive a;
    a.meta = {{"model", "sparse_flow_transformer"},
              {"config", flow_transformer_config_json(m.config)}};
    detail::put_sparse_res_block(a, "down", m.down);
    detail::put_temb(a, "temb", m.temb);
    for (std::size_t i = 0; i < m.blocks.size(); ++i)
        detail::put_adaln_block(a, "blk" + std::to_string(i), m.blocks[i]);
    put_layer_norm(a, "ln_out", m.ln_out);
    detail::put_sparse_res_block(a, "up", m.up);
    put_linear(a, "out_proj", m.out_proj);
    if (m.config.cond_dim > 0) a.put("null_cond", m.null_cond);
    return a;
}

inline SparseFlowTransformer sparse_flow_transformer_from_archive(const WeightArchive& a) {
    SparseFlowTransformer m;
    m.config = flow_transformer_config_from_json(a.meta.at("config"));
    m.down = detail::get_sparse_res_block(a, "down");
    m.temb = detail::get_temb(a, "temb", m.config.temb_dim);
    for (int i = 0; i < m.config.layers; ++i)
        m.blocks.push_back(detail::get_adaln_block(a, "blk" + std::to_string(i), m.config.dim,
                                                   m.config.heads, m.config.cond_dim));
    m.ln_out = get_layer_norm(a, "ln_out");
    m.up = detail::get_sparse_res_block(a, "up");
    m.out_proj = get_linear(a, "out_proj");
    if (m.config.cond_dim > 0) m.null_cond = a.get("null_cond");
    return m;
}

inline nlohmann::json structure_vae_config_json(const StructureVaeConfig& c) {
    return {{"grid_resolution", c.grid_resolution},
            {"stage_channels", c.stage_channels},
            {"latent_channels", c.latent_channels},
            {"res_blocks_per_stage", c.res_blocks_per_stage}};
}

inline StructureVaeConfig structure_vae_config_from_json(const nlohmann::json& j) {
    StructureVaeConfig c;
    c.grid_resolution = j.at("grid_resolution").get<int>();
    c.stage_channels = j.at("stage_channels").get<std::vector<int>>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.res_blocks_per_stage = j.at("res_blocks_per_stage").get<int>();
    return c;
}

namespace detail {

inline void put_res_block3d(WeightArchive& a, const std::string& name,
                            const ResBlock3dWeights& r) {
    put_layer_norm(a, name + ".ln1", r.ln1);
    put_conv3d(a, name + ".conv1", r.conv1);
    put_layer_norm(a, name + ".ln2", r.ln2);
    put_conv3d(a, name + ".conv2", r.conv2);
    if (r.has_proj) put_conv3d(a, name + ".proj", r.proj);
}

inline ResBlock3dWeights get_res_block3d(const WeightArchive& a, const std::string& name) {
    ResBlock3dWeights r;
    r.ln1 = get_layer_norm(a, name + ".ln1");
    r.conv1 = get_conv3d(a, name + ".conv1");
    r.ln2 = get_layer_norm(a, name + ".ln2");
    r.conv2 = get_conv3d(a, name + ".conv2");
    if (a.tensors.count(name + ".proj.w")) {
        r.has_proj = true;
        r.proj = get_conv3d(a, name + ".proj");
    }
    return r;
}

}  // namespace detail

inline void put_structure_vae(WeightArchive& a, const StructureVaeEncoder& e,
                              const StructureVaeDecoder& d) {
    a.meta["vae_config"] = structure_vae_config_json(e.config);
    put_conv3d(a, "enc.conv_in", e.conv_in);
    for (std::size_t s = 0; s < e.res_stages.size(); ++s) {
        for (std::size_t b = 0; b < e.res_stages[s].size(); ++b)
            detail::put_res_block3d(a, "enc.s" + std::to_string(s) + ".res" + std::to_string(b),
                                    e.res_stages[s][b]);
        if (s < e.down.size()) put_conv3d(a, "enc.s" + std::to_string(s) + ".down", e.down[s]);
    }
    put_layer_norm(a, "enc.ln_out", e.ln_out);
    put_conv3d(a, "enc.mean", e.mean_head);
    put_conv3d(a, "enc.logvar", e.logvar_head);

    put_conv3d(a, "dec.conv_in", d.conv_in);
    for (std::size_t s = 0; s < d.res_stages.size(); ++s) {
        for (std::size_t b = 0; b < d.res_stages[s].size(); ++b)
            detail::put_res_block3d(a, "dec.s" + std::to_string(s) + ".res" + std::to_string(b),
                                    d.res_stages[s][b]);
        if (s < d.up.size()) put_conv3d(a, "dec.s" + std::to_string(s) + ".up", d.up[s]);
    }
    put_layer_norm(a, "dec.ln_out", d.ln_out);
    put_conv3d(a, "dec.head", d.head);
}

inline std::pair<StructureVaeEncoder, StructureVaeDecoder> structure_vae_from_archive(
    const WeightArchive& a) {
    const StructureVaeConfig cfg = structure_vae_config_from_json(a.meta.at("vae_config"));
    StructureVaeEncoder e;
    e.config = cfg;
    e.conv_in = get_conv3d(a, "enc.conv_in");
    const int n_stages = static_cast<int>(cfg.stage_channels.size());
    for (int s = 0; s < n_stages; ++s) {
        std::vector<ResBlock3dWeights> blocks;
        for (int b = 0; b < cfg.res_blocks_per_stage; ++b)
            blocks.push_back(detail::get_res_block3d(
                a, "enc.s" + std::to_string(s) + ".res" + std::to_string(b)));
        e.res_stages.push_back(std::move(blocks));
        if (s + 1 < n_stages) e.down.push_back(get_conv3d(a, "enc.s" + std::to_string(s) + ".down", 2));
    }
    e.ln_out = get_layer_norm(a, "enc.ln_out");
    e.mean_head = get_conv3d(a, "enc.mean");
    e.logvar_head = get_conv3d(a, "enc.logvar");

    StructureVaeDecoder d;
    d.config = cfg;
    d.conv_in = get_conv3d(a, "dec.conv_in");
    for (int s = 0; s < n_stages; ++s) {
        std::vector<ResBlock3dWeights> blocks;
        for (int b = 0; b < cfg.res_blocks_per_stage; ++b)
            blocks.push_back(detail::get_res_block3d(
                a, "dec.s" + std::to_string(s) + ".res" + std::to_string(b)));
        d.res_stages.push_back(std::move(blocks));
        if (s + 1 < n_stages) d.up.push_back(get_conv3d(a, "dec.s" + std::to_string(s) + ".up"));
    }
    d.ln_out = get_layer_norm(a, "dec.ln_out");
    d.head = get_conv3d(a, "dec.head");
    return {std::move(e), std::move(d)};
}

}  // namespace slat
