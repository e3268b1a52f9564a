#include "umlab/hms.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace umlab {

void HmsConfig::validate() const {
    if (M < 1) throw ParameterError("hms: M must be >= 1");
    if (!(lambda_max > 0.0 && lambda_max <= 1.0)) throw ParameterError("hms: lambda_max must be in (0, 1]");
}

std::vector<int> mine_neighbors(int query_row, const Matrix& pool_emb, const std::vector<int>& pool_labels, int M,
                                const MetricSpec& metric) {
    if (query_row < 0 || query_row >= pool_emb.rows()) throw ParameterError("mine_neighbors: query row out of range");
    if (static_cast<Eigen::Index>(pool_labels.size()) != pool_emb.rows())
        throw ParameterError("mine_neighbors: label count does not match pool rows");
    const int own = pool_labels[static_cast<std::size_t>(query_row)];
    const Vector q = pool_emb.row(query_row).transpose();

    std::vector<std::pair<double, int>> scored;
    for (Eigen::Index i = 0; i < pool_emb.rows(); ++i) {
        if (pool_labels[static_cast<std::size_t>(i)] == own) continue;
        scored.emplace_back(similarity(metric, q, pool_emb.row(i).transpose()), static_cast<int>(i));
    }
    const std::size_t keep = std::min<std::size_t>(scored.size(), static_cast<std::size_t>(std::max(M, 0)));
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    std::vector<int> out(keep);
    for (std::size_t i = 0; i < keep; ++i) out[i] = scored[i].second;
    return out;
}

Matrix mix_supports(const Eigen::Ref<const Vector>& q, const Matrix& neighbors, double lambda) {
    Matrix out(neighbors.rows(), neighbors.cols());
    for (Eigen::Index i = 0; i < neighbors.rows(); ++i) out.row(i) = lambda * q.transpose() + (1.0 - lambda) * neighbors.row(i);
    return out;
}

double hms_lambda(const Stream& rng, std::size_t task, int query_slot, double lambda_max) {
    Stream s = rng.substream(task, static_cast<std::uint64_t>(query_slot));
    return lambda_max * s.uniform();
}

double hms_local_task_loss(const Task& task, const Matrix& local, const MetricSpec& metric, const HmsConfig& cfg,
                           const Stream& rng, std::size_t task_id, Matrix* grad_local) {
    const std::vector<int> labels = task_local_labels(task);
    const int nS = task.num_support();
    const ExtraCenterFn extra = [&](int j, const Matrix& emb) {
        const int row = nS + j;
        const std::vector<int> mined = mine_neighbors(row, emb, labels, cfg.M, metric);
        std::vector<LinearCenter> out;
        if (mined.empty()) return out;
        const double lambda = hms_lambda(rng, task_id, j, cfg.lambda_max);
        out.reserve(mined.size());
        for (int r : mined) out.push_back(LinearCenter{{{row, lambda}, {r, 1.0 - lambda}}});
        return out;
    };
    return local_task_loss(task, local, metric, grad_local, &extra);
}

LossAndGrad hms_episode_loss(const std::vector<Task>& tasks, const Matrix& all_emb, const MetricSpec& metric,
                             const HmsConfig& cfg, const Stream& rng, int threads) {
    cfg.validate();
    return accumulate_tasks(
        tasks, all_emb.rows(), all_emb.cols(),
        [&](std::size_t t, Matrix& grad_local) {
            const Matrix local = gather_task_rows(tasks[t], all_emb);
            return hms_local_task_loss(tasks[t], local, metric, cfg, rng, t, &grad_local);
        },
        threads);
}

}  // namespace umlab
