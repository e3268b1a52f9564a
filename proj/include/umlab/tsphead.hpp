#pragma once

#include "umlab/rng.hpp"
#include "umlab/simcore.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace umlab {

struct TspHeadConfig {
    int heads = 8;
    int layers = 1;
    double dropout = 0.1;
    bool layer_norm = true;
    /// Adds the layer input to the attention output before L. Off by default.
    bool residual = false;
    /// Initialize the final linear projection of L to the identity.
    bool identity_projection = false;

    void validate() const;
};

/// One set-to-set attention layer followed by L = layer norm -> dropout ->
/// linear projection. Projections act on row vectors: the query of element x
/// is x * wq[h], matching W_Q^T x for column vectors.
struct TspLayer {
    std::vector<Matrix> wq, wk, wv;  // heads x (d x d)
    Matrix wo;                       // (heads*d) x d
    Vector ln_gain, ln_bias;         // d
    Matrix wl;                       // d x d
    Vector bl;                       // d
};

struct TspHeadParams {
    int d = 0;
    TspHeadConfig cfg;
    std::vector<TspLayer> layers;

    int heads() const { return cfg.heads; }

    /// Projections uniform in [-1/sqrt(d), 1/sqrt(d)], layer-norm gain 1 and bias 0.
    static TspHeadParams init(int d, const TspHeadConfig& cfg, std::uint64_t seed);
    /// One head, W_Q = W_K = W_V = W_O = W_L = I, no layer norm, no dropout.
    /// Maps a singleton set to itself; with `residual` and zero W_V it maps
    /// every set to itself.
    static TspHeadParams identity(int d, bool residual = false);

    std::size_t size() const;
    Vector flatten() const;
    void assign(const Eigen::Ref<const Vector>& flat);
    void validate() const;
};

/// α over the set for head `head` (0-based) of the first layer.
Vector attention_weights(const TspHeadParams& params, int head, const Eigen::Ref<const Vector>& x_emb,
                         const Matrix& set_embs);

/// Intermediates kept by the forward pass for the backward pass.
struct TspCache {
    struct Layer {
        Matrix input;
        std::vector<Matrix> q, k, v, attn;
        Matrix concat;
        Matrix z;
        Matrix xhat;
        Vector inv_std;
        Matrix normed;
        Matrix mask;  // empty when dropout is inactive
        Matrix dropped;
    };
    std::vector<Layer> layers;
};

/// ψ for every element of the set; row order matches the input. Dropout is
/// drawn from rng.substream(layer) and only when `training`.
Matrix transform_set(const TspHeadParams& params, const Matrix& set_embs, const Stream& rng, bool training,
                     TspCache* cache = nullptr);

/// Gradients of the head for upstream d loss / d ψ: returns d loss / d set
/// and adds the flattened parameter gradient into grad_params.
Matrix tsp_backward(const TspHeadParams& params, const TspCache& cache, const Matrix& grad_psi,
                    Eigen::Ref<Vector> grad_params);

struct TspLossAndGrad {
    double loss = 0.0;
    Matrix grad_emb;
    Vector grad_params;
};

/// Loss on transformed embeddings of one task: (task index, task, ψ, d loss / dψ) -> loss.
using TransformedTaskLoss = std::function<double(std::size_t, const Task&, const Matrix&, Matrix&)>;

/// Per task: transform that task's S ∪ Q jointly (dropout from
/// rng.substream(t)), then the episode loss on ψ. `inner` replaces the plain
/// prototype loss when given.
TspLossAndGrad tsp_episode_loss(const std::vector<Task>& tasks, const Matrix& all_emb, const MetricSpec& metric,
                                const TspHeadParams& params, const Stream& rng, bool training = true,
                                int threads = 1, const TransformedTaskLoss* inner = nullptr);

}  // namespace umlab
