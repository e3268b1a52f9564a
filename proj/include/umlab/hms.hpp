#pragma once

#include "umlab/rng.hpp"
#include "umlab/simcore.hpp"

#include <vector>

namespace umlab {

/// Hard mixed supports: M mined neighbors per query, mix-up λ ~ U(0, lambda_max).
struct HmsConfig {
    int M = 10;
    double lambda_max = 0.5;

    void validate() const;
};

/// Up to M pool rows most similar to pool row `query_row` among rows whose
/// label differs from the query's. Descending similarity, ties by ascending
/// row index. Empty when nothing is eligible.
std::vector<int> mine_neighbors(int query_row, const Matrix& pool_emb, const std::vector<int>& pool_labels, int M,
                                const MetricSpec& metric);

/// Row i = lambda * q + (1 - lambda) * neighbors[i].
Matrix mix_supports(const Eigen::Ref<const Vector>& q, const Matrix& neighbors, double lambda);

/// λ for query slot j of task t: rng.substream(t, j).
double hms_lambda(const Stream& rng, std::size_t task, int query_slot, double lambda_max);

/// HMS loss of one task over its local (S ∪ Q) embeddings; task_rng is the
/// task's substream. Mixed distractors are singleton centers visible only to
/// the query they were built for.
double hms_local_task_loss(const Task& task, const Matrix& local, const MetricSpec& metric, const HmsConfig& cfg,
                           const Stream& rng, std::size_t task_id, Matrix* grad_local);

LossAndGrad hms_episode_loss(const std::vector<Task>& tasks, const Matrix& all_emb, const MetricSpec& metric,
                             const HmsConfig& cfg, const Stream& rng, int threads = 1);

}  // namespace umlab
