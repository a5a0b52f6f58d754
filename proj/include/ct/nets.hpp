#pragma once

#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ct/tensor.hpp"

namespace ct {

// Images are square grids of G x G cells, each cell p x p pixels, one
// channel. A "position" indexes a cell in row-major grid order.
struct GridGeometry {
    int grid = 6;
    int cell = 5;

    int side() const { return grid * cell; }
    int num_cells() const { return grid * grid; }
    int cell_dim() const { return cell * cell; }
};

struct NetConfig {
    GridGeometry geom;
    int channels = 32;   // C; must be divisible by 8 for the front-door head
    int d_patch = 16;
    int d_z = 32;
    int num_classes = 4;
    bool classifier_bias = false;
    bool channel_attention_softmax = true;  // false: raw Gram matrix S = F F^T
    bool phi1_consumes_aggregate = false;   // true: phi1 sees [zhat; deconfounded]
};

using NamedParams = std::vector<std::pair<std::string, TensorPtr>>;

// Extracts the flattened cell pixels of one image as a constant
// (p*p) x num_cells tensor, one column per position.
TensorPtr cells_of_image(const std::vector<double>& image, const GridGeometry& geom);

// Same for a batch: columns [i*N, (i+1)*N) belong to image i.
TensorPtr cells_of_images(const std::vector<const std::vector<double>*>& images,
                          const GridGeometry& geom);

// Shared-weight per-cell encoder: linear patch embedding followed by a
// two-layer relu MLP, with a final relu so features are non-negative.
class Encoder {
public:
    Encoder(const GridGeometry& geom, int channels, int d_patch);

    void init(std::mt19937_64& rng);

    // cells: (p*p) x M; returns C x M. Works for any M, which is what lets
    // one call encode a whole batch or a single re-encoded patch cell.
    TensorPtr forward_cells(const TensorPtr& cells) const;

    NamedParams named_params(const std::string& prefix) const;

    const GridGeometry& geometry() const { return geom_; }
    int channels() const { return channels_; }

    TensorPtr embed_w, embed_b;  // d_patch x p*p, d_patch x 1
    TensorPtr mix_w1, mix_b1;    // d_patch x d_patch, d_patch x 1
    TensorPtr mix_w2, mix_b2;    // C x d_patch, C x 1

private:
    GridGeometry geom_;
    int channels_;
    int d_patch_;
};

// FeatureMap C x N for one image.
TensorPtr encode(const Encoder& model, const std::vector<double>& image);

class Classifier {
public:
    Classifier(int channels, int num_classes, bool use_bias);

    void init(std::mt19937_64& rng);

    // pooled: C x M -> logits num_classes x M.
    TensorPtr forward_pooled(const TensorPtr& pooled) const;

    NamedParams named_params(const std::string& prefix) const;

    int channels() const { return channels_; }
    int num_classes() const { return num_classes_; }

    TensorPtr weight;  // C x num_classes (column y is W_y)
    TensorPtr bias;    // num_classes x 1 when enabled

private:
    int channels_;
    int num_classes_;
    bool use_bias_;
};

// logits = W^T mean_pool_positions(fmap) (+ bias).
TensorPtr classify(const Classifier& classifier, const TensorPtr& fmap);

enum class RunMode { kTrain, kEval };

struct FrontDoorOut {
    TensorPtr probabilities;     // num_classes x 1
    TensorPtr mu;                // d_z x 1
    TensorPtr sigma;             // d_z x 1
    TensorPtr deconfounded;      // C x 1; element-wise sum of both expectations, pooled
    TensorPtr patch_attention;   // P, N x N
    TensorPtr channel_attention; // S, C x C
};

// Patch attention (P = softmax(Q_R^T K_R)), channel attention
// (S over F F^T), variational mu/sigma projector and the phi1 classifier.
class FrontDoorHead {
public:
    FrontDoorHead(int channels, int d_z, int num_classes, bool channel_softmax,
                  bool phi1_aggregate);

    void init(std::mt19937_64& rng);

    NamedParams named_params(const std::string& prefix) const;

    int channels() const { return channels_; }
    int d_z() const { return d_z_; }

    TensorPtr q_proj, k_proj;   // (C/8) x C
    TensorPtr v_proj;           // C x C
    TensorPtr ms_w1, ms_b1;     // 2*d_z x 2C, 2*d_z x 1
    TensorPtr ms_w2, ms_b2;     // 2*d_z x 2*d_z, 2*d_z x 1
    TensorPtr phi1_w;           // num_classes x (d_z [+ C])

    bool channel_softmax() const { return channel_softmax_; }
    bool phi1_aggregate() const { return phi1_aggregate_; }

private:
    int channels_;
    int d_z_;
    int num_classes_;
    bool channel_softmax_;
    bool phi1_aggregate_;
};

// In train mode with a noise vector (d_z x 1), zhat = mu + sigma*noise;
// otherwise zhat = mu. Probabilities always sum to 1.
FrontDoorOut front_door_forward(const FrontDoorHead& head, const TensorPtr& fmap, RunMode mode,
                                const TensorPtr& noise = nullptr);

// Channel-importance patch selection: u = W_y - W_y' with y' the strongest
// wrong class; returns the argmax positions of the R channels with smallest
// |u|, in ascending |u| order.
std::vector<int> select_rare_patches(const TensorPtr& fmap, const TensorPtr& logits, int label,
                                     const Classifier& classifier, int rare_count);

// Re-encodes the image cell at each position and returns the R x C block of
// unit-normalized patch embeddings.
TensorPtr embed_patches(const Encoder& model, const std::vector<double>& image,
                        const std::vector<int>& positions);

// Query/key twin used for momentum contrast.
struct Model {
    NetConfig cfg;
    Encoder encoder;
    Classifier classifier;
    FrontDoorHead head;

    explicit Model(const NetConfig& cfg_in);

    void init(std::mt19937_64& rng);
    NamedParams named_params() const;
    std::vector<TensorPtr> params() const;
    void set_requires_grad(bool value);
};

struct ModelPair {
    Model query;
    Model key;
    double momentum;

    ModelPair(Model query_in, double momentum_in);
};

// theta_k <- m*theta_k + (1-m)*theta_q, exactly; never touches theta_q.
void ema_update(ModelPair& pair);

// ---------------------------------------------------------------------------
// Checkpoints: flat list of (name, shape, row-major values) as JSON; doubles
// round-trip bit-exactly.

struct ParamBlob {
    std::vector<int> shape;
    std::vector<double> values;
};
using ParamMap = std::map<std::string, ParamBlob>;

void save_params(const std::string& path, const NamedParams& params);
ParamMap load_params(const std::string& path);

// Copies every blob whose name starts with `prefix` into the matching
// destination parameter; shape mismatch or missing destination is an error.
void apply_params(const NamedParams& dest, const ParamMap& src, const std::string& prefix = "");

}  // namespace ct
