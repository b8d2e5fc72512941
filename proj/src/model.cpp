#include "emae/model.hpp"

#include <cmath>

#include "emae/errors.hpp"
#include "emae/rng.hpp"

namespace emae {

void ModelConfig::validate() const {
    if (img_h <= 0 || img_w <= 0 || channels <= 0 || patch <= 0) {
        throw ConfigError("image dims and patch size must be positive");
    }
    if (img_h % patch != 0 || img_w % patch != 0) {
        throw ConfigError("patch size " + std::to_string(patch) + " does not divide image " +
                          std::to_string(img_h) + "x" + std::to_string(img_w));
    }
    if (enc_blocks < 1 || dec_blocks < 1 || enc_heads < 1 || dec_heads < 1) {
        throw ConfigError("block and head counts must be >= 1");
    }
    if (d_enc % enc_heads != 0 || d_dec % dec_heads != 0) {
        throw ConfigError("model width must be divisible by the head count");
    }
    if (d_enc % 4 != 0 || d_dec % 4 != 0) {
        throw ConfigError("model widths must be divisible by 4 for the sincos tables");
    }
}

PatchGrid patchify(const Values& image, const ModelConfig& cfg) {
    cfg.validate();
    const int64_t expect = static_cast<int64_t>(cfg.img_h) * cfg.img_w * cfg.channels;
    if (static_cast<int64_t>(image.size()) != expect) {
        throw ShapeError("image has " + std::to_string(image.size()) + " values, config wants " +
                         std::to_string(expect));
    }
    PatchGrid grid;
    grid.img_h = cfg.img_h;
    grid.img_w = cfg.img_w;
    grid.channels = cfg.channels;
    grid.patch = cfg.patch;
    grid.n_patches = cfg.n_patches();
    grid.patch_dim = cfg.patch_dim();
    grid.patches.resize(static_cast<int64_t>(grid.n_patches) * grid.patch_dim);

    const int gw = cfg.img_w / cfg.patch;
    int64_t out = 0;
    for (int pi = 0; pi < grid.n_patches; ++pi) {
        const int py = (pi / gw) * cfg.patch;
        const int px = (pi % gw) * cfg.patch;
        for (int dy = 0; dy < cfg.patch; ++dy) {
            for (int dx = 0; dx < cfg.patch; ++dx) {
                for (int ch = 0; ch < cfg.channels; ++ch) {
                    int64_t src = (static_cast<int64_t>(py + dy) * cfg.img_w + (px + dx)) *
                                      cfg.channels + ch;
                    grid.patches[out++] = image[src];
                }
            }
        }
    }
    return grid;
}

Values unpatchify(const PatchGrid& grid) {
    Values image(static_cast<int64_t>(grid.img_h) * grid.img_w * grid.channels);
    const int gw = grid.img_w / grid.patch;
    int64_t in = 0;
    for (int pi = 0; pi < grid.n_patches; ++pi) {
        const int py = (pi / gw) * grid.patch;
        const int px = (pi % gw) * grid.patch;
        for (int dy = 0; dy < grid.patch; ++dy) {
            for (int dx = 0; dx < grid.patch; ++dx) {
                for (int ch = 0; ch < grid.channels; ++ch) {
                    int64_t dst = (static_cast<int64_t>(py + dy) * grid.img_w + (px + dx)) *
                                      grid.channels + ch;
                    image[dst] = grid.patches[in++];
                }
            }
        }
    }
    return image;
}

namespace {

// 1-d table, [n_pos, dim]: sin(pos * w_i) in the low half, cos in the high
// half, with w_i = 10000^(-2i/dim).
void sincos_1d(int n_pos, int dim, int stride, int offset, Values& out) {
    const int half = dim / 2;
    for (int pos = 0; pos < n_pos; ++pos) {
        for (int i = 0; i < half; ++i) {
            double w = std::pow(10000.0, -2.0 * i / dim);
            out[static_cast<int64_t>(pos) * stride + offset + i] = std::sin(pos * w);
            out[static_cast<int64_t>(pos) * stride + offset + half + i] = std::cos(pos * w);
        }
    }
}

}  // namespace

Values sincos_pos_table(int grid_h, int grid_w, int dim) {
    if (dim % 4 != 0) {
        throw ConfigError("sincos table dim must be divisible by 4, got " + std::to_string(dim));
    }
    // Row and column coordinates each get dim/2 channels; the full table is
    // their per-position concatenation.
    Values rows(static_cast<int64_t>(grid_h) * (dim / 2));
    Values cols(static_cast<int64_t>(grid_w) * (dim / 2));
    sincos_1d(grid_h, dim / 2, dim / 2, 0, rows);
    sincos_1d(grid_w, dim / 2, dim / 2, 0, cols);

    Values table(static_cast<int64_t>(grid_h) * grid_w * dim);
    for (int y = 0; y < grid_h; ++y) {
        for (int x = 0; x < grid_w; ++x) {
            int64_t base = (static_cast<int64_t>(y) * grid_w + x) * dim;
            for (int i = 0; i < dim / 2; ++i) {
                table[base + i] = rows[static_cast<int64_t>(y) * (dim / 2) + i];
                table[base + dim / 2 + i] = cols[static_cast<int64_t>(x) * (dim / 2) + i];
            }
        }
    }
    return table;
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int s = cfg_.patch_dim();

    register_param("patch_embed.w", {s, cfg_.d_enc});
    register_param("patch_embed.b", {cfg_.d_enc});
    for (int b = 0; b < cfg_.enc_blocks; ++b) {
        register_block("enc." + std::to_string(b), cfg_.d_enc);
    }
    register_param("enc.norm.g", {cfg_.d_enc});
    register_param("enc.norm.b", {cfg_.d_enc});

    register_param("dec_embed.w", {cfg_.d_enc, cfg_.d_dec});
    register_param("dec_embed.b", {cfg_.d_dec});
    register_param("mask_token", {1, cfg_.d_dec});
    for (int b = 0; b < cfg_.dec_blocks; ++b) {
        register_block("dec." + std::to_string(b), cfg_.d_dec);
    }
    register_param("dec.norm.g", {cfg_.d_dec});
    register_param("dec.norm.b", {cfg_.d_dec});
    register_param("head.w", {cfg_.d_dec, s});
    register_param("head.b", {s});

    const int gh = cfg_.img_h / cfg_.patch;
    const int gw = cfg_.img_w / cfg_.patch;
    enc_pos_ = sincos_pos_table(gh, gw, cfg_.d_enc);
    dec_pos_ = sincos_pos_table(gh, gw, cfg_.d_dec);
}

void Model::register_param(const std::string& name, Shape shape) {
    auto data = std::make_shared<Values>(shape_numel(shape), 0.0);
    index_[name] = static_cast<int>(params_.size());
    params_.push_back({name, std::move(shape), std::move(data)});
}

void Model::register_block(const std::string& prefix, int dim) {
    register_param(prefix + ".ln1.g", {dim});
    register_param(prefix + ".ln1.b", {dim});
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
        register_param(prefix + ".attn." + std::string(w), {dim, dim});
    }
    for (const char* b : {"bq", "bk", "bv", "bo"}) {
        register_param(prefix + ".attn." + std::string(b), {dim});
    }
    register_param(prefix + ".ln2.g", {dim});
    register_param(prefix + ".ln2.b", {dim});
    register_param(prefix + ".mlp.w1", {dim, 4 * dim});
    register_param(prefix + ".mlp.b1", {4 * dim});
    register_param(prefix + ".mlp.w2", {4 * dim, dim});
    register_param(prefix + ".mlp.b2", {dim});
}

NamedParam& Model::param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return params_[it->second];
}

const NamedParam& Model::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return params_[it->second];
}

void Model::init_params(uint64_t seed) {
    for (size_t i = 0; i < params_.size(); ++i) {
        NamedParam& prm = params_[i];
        CounterRng rng(CounterRng::derive(seed, 0x70617261, i));
        const std::string& n = prm.name;
        const bool norm_scale = n.size() > 2 && n.compare(n.size() - 2, 2, ".g") == 0;
        if (norm_scale) {
            std::fill(prm.data->begin(), prm.data->end(), 1.0);
        } else if (prm.shape.size() == 1) {
            // every rank-1 parameter except norm scales is a bias
            std::fill(prm.data->begin(), prm.data->end(), 0.0);
        } else {
            for (double& v : *prm.data) v = rng.next_trunc_normal(0.02);
        }
    }
}

int64_t Model::param_count() const {
    int64_t total = 0;
    for (const NamedParam& prm : params_) total += shape_numel(prm.shape);
    return total;
}

int64_t Model::expected_param_count(const ModelConfig& cfg) {
    const int64_t s = cfg.patch_dim();
    auto block = [](int64_t d) {
        // 4 attention projections with bias, 2 affine norms, 4x-wide MLP
        return 4 * (d * d + d) + 4 * d + (d * 4 * d + 4 * d) + (4 * d * d + d);
    };
    int64_t total = s * cfg.d_enc + cfg.d_enc;
    total += cfg.enc_blocks * block(cfg.d_enc);
    total += 2 * cfg.d_enc;
    total += cfg.d_enc * static_cast<int64_t>(cfg.d_dec) + cfg.d_dec;
    total += cfg.d_dec;  // mask token
    total += cfg.dec_blocks * block(cfg.d_dec);
    total += 2 * cfg.d_dec;
    total += static_cast<int64_t>(cfg.d_dec) * s + s;
    return total;
}

Tensor Model::p(Graph& g, const std::string& name) {
    const NamedParam& prm = param(name);
    return g.param(prm.shape, prm.data);
}

Tensor Model::affine_norm(Graph& g, const Tensor& x, const std::string& prefix) {
    Tensor y = g.layer_norm(x, 1e-6);
    return g.add(g.mul(y, p(g, prefix + ".g")), p(g, prefix + ".b"));
}

Tensor Model::attention(Graph& g, const Tensor& x, const std::string& prefix, int heads) {
    const int dim = x.shape()[1];
    const int dh = dim / heads;
    Tensor q = g.add(g.matmul(x, p(g, prefix + ".wq")), p(g, prefix + ".bq"));
    Tensor k = g.add(g.matmul(x, p(g, prefix + ".wk")), p(g, prefix + ".bk"));
    Tensor v = g.add(g.matmul(x, p(g, prefix + ".wv")), p(g, prefix + ".bv"));

    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor qh = g.slice(q, 1, h * dh, dh);
        Tensor kh = g.slice(k, 1, h * dh, dh);
        Tensor vh = g.slice(v, 1, h * dh, dh);
        Tensor scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(dh));
        outs.push_back(g.matmul(g.softmax(scores), vh));
    }
    Tensor o = heads == 1 ? outs[0] : g.concat(outs, 1);
    return g.add(g.matmul(o, p(g, prefix + ".wo")), p(g, prefix + ".bo"));
}

Tensor Model::block(Graph& g, const Tensor& x, const std::string& prefix, int heads) {
    Tensor h = g.add(x, attention(g, affine_norm(g, x, prefix + ".ln1"), prefix + ".attn", heads));
    Tensor m = affine_norm(g, h, prefix + ".ln2");
    m = g.add(g.matmul(m, p(g, prefix + ".mlp.w1")), p(g, prefix + ".mlp.b1"));
    m = g.gelu(m);
    m = g.add(g.matmul(m, p(g, prefix + ".mlp.w2")), p(g, prefix + ".mlp.b2"));
    return g.add(h, m);
}

void Model::check_grid(const PatchGrid& grid) const {
    if (grid.n_patches != cfg_.n_patches() || grid.patch_dim != cfg_.patch_dim()) {
        throw ShapeError("grid is [" + std::to_string(grid.n_patches) + "," +
                         std::to_string(grid.patch_dim) + "], model wants [" +
                         std::to_string(cfg_.n_patches()) + "," +
                         std::to_string(cfg_.patch_dim()) + "]");
    }
}

// Embed the given patch rows, attach positions by absolute patch id, run the
// encoder stack. ids drives both the gather and the positional lookup.
Tensor Model::encode_tokens(Graph& g, const Tensor& patch_rows, const std::vector<int>& ids) {
    Tensor xv = g.gather_rows(patch_rows, ids);
    Tensor tok = g.add(g.matmul(xv, p(g, "patch_embed.w")), p(g, "patch_embed.b"));
    Tensor pos_all = g.constant({cfg_.n_patches(), cfg_.d_enc}, enc_pos_);
    tok = g.add(tok, g.gather_rows(pos_all, ids));
    for (int b = 0; b < cfg_.enc_blocks; ++b) {
        tok = block(g, tok, "enc." + std::to_string(b), cfg_.enc_heads);
    }
    visible_tokens_seen += static_cast<int64_t>(ids.size());
    return affine_norm(g, tok, "enc.norm");
}

PartPrediction Model::forward_part(Graph& g, const PatchGrid& grid,
                                   const MaskPartition& partition, int i) {
    if (i < 0 || i >= partition.k_parts) {
        throw ConfigError("part index " + std::to_string(i) + " out of range for k=" +
                          std::to_string(partition.k_parts));
    }
    if (partition.n_patches != grid.n_patches) {
        throw ShapeError("partition covers " + std::to_string(partition.n_patches) +
                         " patches, grid has " + std::to_string(grid.n_patches));
    }
    MaskDraw draw{partition.parts[i], partition.masks[i]};
    return forward_draw(g, grid, draw, i);
}

PartPrediction Model::forward_draw(Graph& g, const PatchGrid& grid, const MaskDraw& draw,
                                   int draw_index) {
    check_grid(grid);
    const int n = cfg_.n_patches();
    if (draw.visible.empty() || static_cast<int>(draw.mask.size()) != n) {
        throw ConfigError("mask draw does not match the patch grid");
    }

    Tensor patch_rows = g.constant({n, cfg_.patch_dim()}, grid.patches);
    Tensor enc = encode_tokens(g, patch_rows, draw.visible);

    Tensor dv = g.add(g.matmul(enc, p(g, "dec_embed.w")), p(g, "dec_embed.b"));

    std::vector<int> masked_ids;
    for (int q = 0; q < n; ++q) {
        if (draw.mask[q]) masked_ids.push_back(q);
    }
    if (masked_ids.empty()) {
        throw ConfigError("mask draw hides no patches; nothing to predict");
    }
    // Tile the mask token by matmul so it stays a graph leaf with gradients.
    Tensor tiled = g.matmul(
        g.constant({static_cast<int>(masked_ids.size()), 1},
                   Values(masked_ids.size(), 1.0)),
        p(g, "mask_token"));

    Tensor full = g.add(g.scatter_rows(dv, draw.visible, n),
                        g.scatter_rows(tiled, masked_ids, n));
    full = g.add(full, g.constant({n, cfg_.d_dec}, dec_pos_));
    for (int b = 0; b < cfg_.dec_blocks; ++b) {
        full = block(g, full, "dec." + std::to_string(b), cfg_.dec_heads);
    }
    full = affine_norm(g, full, "dec.norm");
    Tensor pred = g.add(g.matmul(full, p(g, "head.w")), p(g, "head.b"));

    return {draw_index, pred, draw.mask};
}

std::vector<PartPrediction> Model::forward_all_parts(Graph& g, const PatchGrid& grid,
                                                     const MaskPartition& partition) {
    std::vector<PartPrediction> preds;
    preds.reserve(partition.k_parts);
    for (int i = 0; i < partition.k_parts; ++i) {
        preds.push_back(forward_part(g, grid, partition, i));
    }
    return preds;
}

Tensor Model::encode_features(Graph& g, const PatchGrid& grid) {
    check_grid(grid);
    std::vector<int> all(cfg_.n_patches());
    for (int q = 0; q < cfg_.n_patches(); ++q) all[q] = q;
    Tensor patch_rows = g.constant({cfg_.n_patches(), cfg_.patch_dim()}, grid.patches);
    return encode_tokens(g, patch_rows, all);
}

}  // namespace emae
