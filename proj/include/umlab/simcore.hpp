#pragma once

#include "umlab/core.hpp"
#include "umlab/sampler.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace umlab {

/// Floor applied to ‖q‖ and ‖p‖ in normalized metrics.
inline constexpr double kNormFloor = 1e-12;

struct MetricSpec {
    enum class Kind { euclidean, cosine, inner, sns };
    Kind kind = Kind::sns;
    /// Logit temperature, applied to cosine only.
    double tau = 0.5;

    static MetricSpec parse(const std::string& name, double tau = 0.5);
    std::string name() const;
    void validate() const;

    bool operator==(const MetricSpec&) const = default;
};

struct PrototypeSet {
    Matrix protos;
    /// Task class per center; -1 marks a distractor.
    std::vector<int> owner_class;
};

/// Center n = mean of the K support embeddings of task class n. Rows of
/// support_emb follow task.support_idx (row-major).
PrototypeSet prototypes(const Matrix& support_emb, const Task& task);

double similarity(const MetricSpec& metric, const Eigen::Ref<const Vector>& q, const Eigen::Ref<const Vector>& p);

/// Adds upstream * d sim / dq into dq and upstream * d sim / dp into dp.
void similarity_backward(const MetricSpec& metric, const Eigen::Ref<const Vector>& q,
                         const Eigen::Ref<const Vector>& p, double upstream, Eigen::Ref<Vector> dq,
                         Eigen::Ref<Vector> dp);

/// Softmax over similarities to each center.
Vector predict(const MetricSpec& metric, const Eigen::Ref<const Vector>& q, const PrototypeSet& protos);
Vector predict(const MetricSpec& metric, const Eigen::Ref<const Vector>& q, const Matrix& centers);

/// Stable softmax / log-sum-exp helpers.
Vector softmax(const Eigen::Ref<const Vector>& logits);
double log_sum_exp(const Eigen::Ref<const Vector>& logits);

/// Cross-entropy of one query against a center set, -log softmax(sim)[target].
/// Adds d loss / dq into dq and d loss / d center into the rows of dcenters.
double query_cross_entropy(const MetricSpec& metric, const Eigen::Ref<const Vector>& q, const Matrix& centers,
                           int target, Eigen::Ref<Vector> dq, Matrix& dcenters);

/// An extra center expressed as a weighted sum of task-local embedding rows.
struct LinearCenter {
    std::vector<std::pair<int, double>> terms;
};

/// Supplies per-query extra centers: (query slot j in [0, N*Qe), local
/// embeddings) -> centers appended after the N prototypes, never the target.
using ExtraCenterFn = std::function<std::vector<LinearCenter>(int, const Matrix&)>;

/// Task-local rows: support_idx followed by query_idx. Local row i < N*K is
/// support slot i; local row N*K + j is query slot j.
std::vector<int> task_local_rows(const Task& task);
Matrix gather_task_rows(const Task& task, const Matrix& all_emb);
/// Task class of each local row.
std::vector<int> task_local_labels(const Task& task);

/// Mean query cross-entropy of one task over its local embeddings. When
/// grad_local is non-null it is resized and filled with d loss / d local.
double local_task_loss(const Task& task, const Matrix& local, const MetricSpec& metric, Matrix* grad_local,
                       const ExtraCenterFn* extra = nullptr);

struct LossAndGrad {
    double loss = 0.0;
    Matrix grad_emb;
};

/// Evaluates per_task(t, grad_local) for every task (possibly concurrently),
/// then averages losses and scatters grad_local / T into an (all_rows x d)
/// gradient in ascending task order.
LossAndGrad accumulate_tasks(const std::vector<Task>& tasks, Eigen::Index all_rows, Eigen::Index dim,
                             const std::function<double(std::size_t, Matrix&)>& per_task, int threads);

/// Mean over tasks of mean query cross-entropy, with its embedding gradient.
LossAndGrad episode_loss(const std::vector<Task>& tasks, const Matrix& all_emb, const MetricSpec& metric,
                         int threads = 1);

/// Mean per-row gradient norm over the referenced rows.
double grad_norm_diagnostic(const Matrix& grad_emb, const std::vector<int>& referenced_rows);

/// Sorted distinct rows referenced by any task.
std::vector<int> referenced_rows(const std::vector<Task>& tasks);

}  // namespace umlab
