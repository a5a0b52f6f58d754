#include "ct/nets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "ct/io.hpp"

namespace ct {

namespace {

// W x + b broadcast over columns, composed from primitives: the bias column
// times a row of ones.
TensorPtr linear_cols(const TensorPtr& w, const TensorPtr& x, const TensorPtr& b) {
    auto wx = matmul(w, x);
    auto ones_row = full({1, x->shape[1]}, 1.0);
    return add(wx, matmul(b, ones_row));
}

TensorPtr gauss_param(std::mt19937_64& rng, std::vector<int> shape, double stddev) {
    std::normal_distribution<double> gauss(0.0, stddev);
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    std::vector<double> data(n);
    for (auto& v : data) v = gauss(rng);
    return make_tensor(std::move(shape), std::move(data), true);
}

TensorPtr zero_param(std::vector<int> shape) {
    auto t = zeros(std::move(shape));
    t->requires_grad = true;
    return t;
}

}  // namespace

TensorPtr cells_of_image(const std::vector<double>& image, const GridGeometry& geom) {
    return cells_of_images({&image}, geom);
}

TensorPtr cells_of_images(const std::vector<const std::vector<double>*>& images,
                          const GridGeometry& geom) {
    const int side = geom.side();
    const int p = geom.cell;
    const int n = geom.num_cells();
    const int dim = geom.cell_dim();
    const int total = n * static_cast<int>(images.size());
    std::vector<double> cells(static_cast<std::size_t>(dim) * total);
    for (std::size_t b = 0; b < images.size(); ++b) {
        const auto& img = *images[b];
        if (static_cast<int>(img.size()) != side * side) {
            throw ShapeError("cells_of_images: image " + std::to_string(b) + " has " +
                             std::to_string(img.size()) + " pixels, expected " +
                             std::to_string(side * side));
        }
        for (int gy = 0; gy < geom.grid; ++gy) {
            for (int gx = 0; gx < geom.grid; ++gx) {
                const int col = static_cast<int>(b) * n + gy * geom.grid + gx;
                for (int i = 0; i < p; ++i) {
                    for (int j = 0; j < p; ++j) {
                        cells[static_cast<std::size_t>(i * p + j) * total + col] =
                            img[static_cast<std::size_t>(gy * p + i) * side + gx * p + j];
                    }
                }
            }
        }
    }
    return make_tensor({dim, total}, std::move(cells));
}

Encoder::Encoder(const GridGeometry& geom, int channels, int d_patch)
    : geom_(geom), channels_(channels), d_patch_(d_patch) {
    if (channels <= 0 || d_patch <= 0) throw ConfigError("Encoder: dims must be positive");
    const int in_dim = geom.cell_dim();
    embed_w = zero_param({d_patch, in_dim});
    embed_b = zero_param({d_patch, 1});
    mix_w1 = zero_param({d_patch, d_patch});
    mix_b1 = zero_param({d_patch, 1});
    mix_w2 = zero_param({channels, d_patch});
    mix_b2 = zero_param({channels, 1});
}

void Encoder::init(std::mt19937_64& rng) {
    const int in_dim = geom_.cell_dim();
    embed_w = gauss_param(rng, {d_patch_, in_dim}, std::sqrt(2.0 / in_dim));
    embed_b = zero_param({d_patch_, 1});
    mix_w1 = gauss_param(rng, {d_patch_, d_patch_}, std::sqrt(2.0 / d_patch_));
    mix_b1 = zero_param({d_patch_, 1});
    mix_w2 = gauss_param(rng, {channels_, d_patch_}, std::sqrt(2.0 / d_patch_));
    mix_b2 = zero_param({channels_, 1});
}

TensorPtr Encoder::forward_cells(const TensorPtr& cells) const {
    if (cells->rank() != 2 || cells->shape[0] != geom_.cell_dim()) {
        throw ShapeError("Encoder: cells must be " + std::to_string(geom_.cell_dim()) +
                         " x M, got " + shape_str(cells->shape));
    }
    auto h0 = linear_cols(embed_w, cells, embed_b);
    auto h1 = relu(linear_cols(mix_w1, h0, mix_b1));
    return relu(linear_cols(mix_w2, h1, mix_b2));
}

NamedParams Encoder::named_params(const std::string& prefix) const {
    return {{prefix + "embed_w", embed_w}, {prefix + "embed_b", embed_b},
            {prefix + "mix_w1", mix_w1},   {prefix + "mix_b1", mix_b1},
            {prefix + "mix_w2", mix_w2},   {prefix + "mix_b2", mix_b2}};
}

TensorPtr encode(const Encoder& model, const std::vector<double>& image) {
    return model.forward_cells(cells_of_image(image, model.geometry()));
}

Classifier::Classifier(int channels, int num_classes, bool use_bias)
    : channels_(channels), num_classes_(num_classes), use_bias_(use_bias) {
    if (num_classes < 2) throw ConfigError("Classifier: need at least two classes");
    weight = zero_param({channels, num_classes});
    if (use_bias_) bias = zero_param({num_classes, 1});
}

void Classifier::init(std::mt19937_64& rng) {
    weight = gauss_param(rng, {channels_, num_classes_}, std::sqrt(1.0 / channels_));
    if (use_bias_) bias = zero_param({num_classes_, 1});
}

TensorPtr Classifier::forward_pooled(const TensorPtr& pooled) const {
    if (pooled->rank() != 2 || pooled->shape[0] != channels_) {
        throw ShapeError("Classifier: pooled features must be " + std::to_string(channels_) +
                         " x M, got " + shape_str(pooled->shape));
    }
    auto logits = matmul(transpose(weight), pooled);
    if (use_bias_) {
        logits = add(logits, matmul(bias, full({1, pooled->shape[1]}, 1.0)));
    }
    return logits;
}

NamedParams Classifier::named_params(const std::string& prefix) const {
    NamedParams out{{prefix + "weight", weight}};
    if (use_bias_) out.emplace_back(prefix + "bias", bias);
    return out;
}

TensorPtr classify(const Classifier& classifier, const TensorPtr& fmap) {
    return classifier.forward_pooled(mean_pool_axis(fmap, 1));
}

FrontDoorHead::FrontDoorHead(int channels, int d_z, int num_classes, bool channel_softmax,
                             bool phi1_aggregate)
    : channels_(channels), d_z_(d_z), num_classes_(num_classes),
      channel_softmax_(channel_softmax), phi1_aggregate_(phi1_aggregate) {
    if (channels % 8 != 0) {
        throw ConfigError("FrontDoorHead: channels must be divisible by 8, got " +
                          std::to_string(channels));
    }
    if (d_z <= 0) throw ConfigError("FrontDoorHead: d_z must be positive");
    const int cq = channels / 8;
    q_proj = zero_param({cq, channels});
    k_proj = zero_param({cq, channels});
    v_proj = zero_param({channels, channels});
    ms_w1 = zero_param({2 * d_z, 2 * channels});
    ms_b1 = zero_param({2 * d_z, 1});
    ms_w2 = zero_param({2 * d_z, 2 * d_z});
    ms_b2 = zero_param({2 * d_z, 1});
    const int phi_in = phi1_aggregate ? d_z + channels : d_z;
    phi1_w = zero_param({num_classes, phi_in});
}

void FrontDoorHead::init(std::mt19937_64& rng) {
    const int cq = channels_ / 8;
    q_proj = gauss_param(rng, {cq, channels_}, std::sqrt(1.0 / channels_));
    k_proj = gauss_param(rng, {cq, channels_}, std::sqrt(1.0 / channels_));
    v_proj = gauss_param(rng, {channels_, channels_}, std::sqrt(1.0 / channels_));
    ms_w1 = gauss_param(rng, {2 * d_z_, 2 * channels_}, std::sqrt(2.0 / (2 * channels_)));
    ms_b1 = zero_param({2 * d_z_, 1});
    ms_w2 = gauss_param(rng, {2 * d_z_, 2 * d_z_}, std::sqrt(1.0 / (2 * d_z_)));
    ms_b2 = zero_param({2 * d_z_, 1});
    const int phi_in = phi1_aggregate_ ? d_z_ + channels_ : d_z_;
    phi1_w = gauss_param(rng, {num_classes_, phi_in}, std::sqrt(1.0 / phi_in));
}

NamedParams FrontDoorHead::named_params(const std::string& prefix) const {
    return {{prefix + "q_proj", q_proj}, {prefix + "k_proj", k_proj},
            {prefix + "v_proj", v_proj}, {prefix + "ms_w1", ms_w1},
            {prefix + "ms_b1", ms_b1},   {prefix + "ms_w2", ms_w2},
            {prefix + "ms_b2", ms_b2},   {prefix + "phi1_w", phi1_w}};
}

FrontDoorOut front_door_forward(const FrontDoorHead& head, const TensorPtr& fmap, RunMode mode,
                                const TensorPtr& noise) {
    if (fmap->rank() != 2 || fmap->shape[0] != head.channels()) {
        throw ShapeError("front_door_forward: feature map must be " +
                         std::to_string(head.channels()) + " x N, got " + shape_str(fmap->shape));
    }
    const int n = fmap->shape[1];

    // Patch branch: P = softmax_rows(Q_R^T K_R), E_{Z|F} Z = V_R P.
    auto kr = matmul(head.k_proj, fmap);
    auto qr = matmul(head.q_proj, fmap);
    auto p_att = softmax_rows(matmul(transpose(qr), kr));  // N x N
    auto vr = matmul(head.v_proj, fmap);
    auto ez = matmul(vr, p_att);  // C x N

    // Channel branch: S over F_R F_R^T, E_F F = S F_R.
    TensorPtr s_att;
    auto gram = matmul(fmap, transpose(fmap));  // C x C
    if (head.channel_softmax()) {
        s_att = softmax_rows(scalar_mul(gram, 1.0 / std::sqrt(static_cast<double>(n))));
    } else {
        s_att = gram;
    }
    auto ef = matmul(s_att, fmap);  // C x N

    FrontDoorOut out;
    out.patch_attention = p_att;
    out.channel_attention = s_att;
    out.deconfounded = mean_pool_axis(add(ez, ef), 1);  // C x 1

    auto concat = concat_axis({mean_pool_axis(ef, 1), mean_pool_axis(ez, 1)}, 0);  // 2C x 1
    auto hidden = relu(add(matmul(head.ms_w1, concat), head.ms_b1));
    auto stats = add(matmul(head.ms_w2, hidden), head.ms_b2);  // 2*d_z x 1

    std::vector<int> mu_rows(head.d_z()), lv_rows(head.d_z());
    std::iota(mu_rows.begin(), mu_rows.end(), 0);
    std::iota(lv_rows.begin(), lv_rows.end(), head.d_z());
    out.mu = gather_rows(stats, mu_rows);
    auto logvar = gather_rows(stats, lv_rows);
    out.sigma = exp(scalar_mul(logvar, 0.5));

    TensorPtr zhat = out.mu;
    if (mode == RunMode::kTrain && noise != nullptr) {
        if (noise->numel() != head.d_z()) {
            throw ContractError("front_door_forward: noise must have length d_z");
        }
        zhat = add(out.mu, mul(out.sigma, noise));
    }
    TensorPtr phi_in = head.phi1_aggregate() ? concat_axis({zhat, out.deconfounded}, 0) : zhat;
    auto logits = matmul(head.phi1_w, phi_in);  // K x 1
    out.probabilities = transpose(softmax_rows(transpose(logits)));
    return out;
}

std::vector<int> select_rare_patches(const TensorPtr& fmap, const TensorPtr& logits, int label,
                                     const Classifier& classifier, int rare_count) {
    const int num_classes = static_cast<int>(logits->numel());
    if (num_classes < 2) throw ContractError("select_rare_patches: need at least two classes");
    if (label < 0 || label >= num_classes) {
        throw ContractError("select_rare_patches: label " + std::to_string(label) +
                            " out of range for " + std::to_string(num_classes) + " classes");
    }
    const int channels = classifier.channels();
    if (rare_count < 1 || rare_count > channels) {
        throw ContractError("select_rare_patches: R must be in [1, C]");
    }
    if (fmap->rank() != 2 || fmap->shape[0] != channels) {
        throw ShapeError("select_rare_patches: feature map must be " + std::to_string(channels) +
                         " x N, got " + shape_str(fmap->shape));
    }

    // Most confusing class: strongest logit excluding the label.
    int confusing = -1;
    for (int c = 0; c < num_classes; ++c) {
        if (c == label) continue;
        if (confusing < 0 || logits->data[c] > logits->data[confusing]) confusing = c;
    }

    // u = W_y - W_y'; pick the R channels with |u| closest to zero.
    const int k = classifier.num_classes();
    std::vector<int> order(channels);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> abs_u(channels);
    for (int ch = 0; ch < channels; ++ch) {
        const double u = classifier.weight->data[static_cast<std::size_t>(ch) * k + label] -
                         classifier.weight->data[static_cast<std::size_t>(ch) * k + confusing];
        abs_u[ch] = std::abs(u);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return abs_u[a] < abs_u[b]; });

    const int n = fmap->shape[1];
    std::vector<int> positions(rare_count);
    for (int r = 0; r < rare_count; ++r) {
        const int ch = order[r];
        const double* row = fmap->data.data() + static_cast<std::size_t>(ch) * n;
        int best = 0;
        for (int j = 1; j < n; ++j) {
            if (row[j] > row[best]) best = j;
        }
        positions[r] = best;
    }
    return positions;
}

TensorPtr embed_patches(const Encoder& model, const std::vector<double>& image,
                        const std::vector<int>& positions) {
    const GridGeometry& geom = model.geometry();
    const int side = geom.side();
    const int p = geom.cell;
    if (static_cast<int>(image.size()) != side * side) {
        throw ShapeError("embed_patches: image has " + std::to_string(image.size()) +
                         " pixels, expected " + std::to_string(side * side));
    }
    if (positions.empty()) throw ContractError("embed_patches: positions must be non-empty");
    const int r = static_cast<int>(positions.size());
    std::vector<double> cells(static_cast<std::size_t>(geom.cell_dim()) * r);
    for (int t = 0; t < r; ++t) {
        const int pos = positions[t];
        if (pos < 0 || pos >= geom.num_cells()) {
            throw ContractError("embed_patches: position " + std::to_string(pos) +
                                " out of range for " + std::to_string(geom.num_cells()) +
                                " cells");
        }
        const int gy = pos / geom.grid;
        const int gx = pos % geom.grid;
        for (int i = 0; i < p; ++i) {
            for (int j = 0; j < p; ++j) {
                cells[static_cast<std::size_t>(i * p + j) * r + t] =
                    image[static_cast<std::size_t>(gy * p + i) * side + gx * p + j];
            }
        }
    }
    auto fmap = model.forward_cells(make_tensor({geom.cell_dim(), r}, std::move(cells)));
    // Each column is a single re-encoded cell; pooling over its one position
    // is the identity, so rows of the transpose are the patch embeddings.
    return l2_normalize_rows(transpose(fmap));
}

Model::Model(const NetConfig& cfg_in)
    : cfg(cfg_in),
      encoder(cfg_in.geom, cfg_in.channels, cfg_in.d_patch),
      classifier(cfg_in.channels, cfg_in.num_classes, cfg_in.classifier_bias),
      head(cfg_in.channels, cfg_in.d_z, cfg_in.num_classes, cfg_in.channel_attention_softmax,
           cfg_in.phi1_consumes_aggregate) {}

void Model::init(std::mt19937_64& rng) {
    encoder.init(rng);
    classifier.init(rng);
    head.init(rng);
}

NamedParams Model::named_params() const {
    NamedParams out = encoder.named_params("encoder.");
    for (auto& p : classifier.named_params("classifier.")) out.push_back(p);
    for (auto& p : head.named_params("head.")) out.push_back(p);
    return out;
}

std::vector<TensorPtr> Model::params() const {
    std::vector<TensorPtr> out;
    for (auto& [name, t] : named_params()) {
        (void)name;
        out.push_back(t);
    }
    return out;
}

void Model::set_requires_grad(bool value) {
    for (auto& t : params()) t->requires_grad = value;
}

ModelPair::ModelPair(Model query_in, double momentum_in)
    : query(std::move(query_in)), key(query.cfg), momentum(momentum_in) {
    if (!(momentum_in > 0.0) || !(momentum_in < 1.0)) {
        throw ConfigError("ModelPair: momentum must lie in (0, 1)");
    }
    const NamedParams src = query.named_params();
    const NamedParams dst = key.named_params();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i].second->data = src[i].second->data;
    }
    key.set_requires_grad(false);
}

void ema_update(ModelPair& pair) {
    const NamedParams q = pair.query.named_params();
    const NamedParams k = pair.key.named_params();
    if (q.size() != k.size()) {
        throw ContractError("ema_update: model parameter lists differ in length");
    }
    const double m = pair.momentum;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i].first != k[i].first || q[i].second->shape != k[i].second->shape) {
            throw ContractError("ema_update: architecture mismatch at parameter " + q[i].first);
        }
        auto& kd = k[i].second->data;
        const auto& qd = q[i].second->data;
        for (std::size_t j = 0; j < kd.size(); ++j) {
            kd[j] = m * kd[j] + (1.0 - m) * qd[j];
        }
    }
}

void save_params(const std::string& path, const NamedParams& params) {
    nlohmann::json doc;
    doc["format"] = "ct-checkpoint";
    doc["version"] = 1;
    auto& list = doc["params"];
    list = nlohmann::json::array();
    for (const auto& [name, t] : params) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = t->shape;
        entry["data"] = t->data;
        list.push_back(std::move(entry));
    }
    write_file_atomic(path, doc.dump());
}

ParamMap load_params(const std::string& path) {
    const auto doc = nlohmann::json::parse(read_file(path));
    if (doc.value("format", "") != "ct-checkpoint") {
        throw ContractError("load_params: " + path + " is not a checkpoint file");
    }
    ParamMap out;
    for (const auto& entry : doc.at("params")) {
        ParamBlob blob;
        blob.shape = entry.at("shape").get<std::vector<int>>();
        blob.values = entry.at("data").get<std::vector<double>>();
        out.emplace(entry.at("name").get<std::string>(), std::move(blob));
    }
    return out;
}

void apply_params(const NamedParams& dest, const ParamMap& src, const std::string& prefix) {
    std::map<std::string, TensorPtr> by_name;
    for (const auto& [name, t] : dest) by_name.emplace(name, t);
    for (const auto& [name, blob] : src) {
        if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw ContractError("apply_params: destination has no parameter named " + name);
        }
        if (it->second->shape != blob.shape) {
            throw ContractError("apply_params: shape mismatch for " + name + ": " +
                                shape_str(it->second->shape) + " vs " + shape_str(blob.shape));
        }
        it->second->data = blob.values;
    }
}

}  // namespace ct
