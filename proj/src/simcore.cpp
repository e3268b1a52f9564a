#include "umlab/simcore.hpp"

#include <algorithm>
#include <cmath>

namespace umlab {

MetricSpec MetricSpec::parse(const std::string& name, double tau) {
    MetricSpec m;
    m.tau = tau;
    if (name == "euclidean")
        m.kind = Kind::euclidean;
    else if (name == "cosine")
        m.kind = Kind::cosine;
    else if (name == "inner")
        m.kind = Kind::inner;
    else if (name == "sns")
        m.kind = Kind::sns;
    else
        throw ParameterError("unknown metric '" + name + "' (expected euclidean, cosine, inner, sns)");
    m.validate();
    return m;
}

std::string MetricSpec::name() const {
    switch (kind) {
    case Kind::euclidean: return "euclidean";
    case Kind::cosine: return "cosine";
    case Kind::inner: return "inner";
    case Kind::sns: return "sns";
    }
    return "?";
}

void MetricSpec::validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("metric temperature must be > 0");
}

PrototypeSet prototypes(const Matrix& support_emb, const Task& task) {
    PrototypeSet out;
    out.protos = Matrix::Zero(task.N, support_emb.cols());
    out.owner_class.resize(static_cast<std::size_t>(task.N));
    for (int n = 0; n < task.N; ++n) {
        for (int k = 0; k < task.K; ++k) out.protos.row(n) += support_emb.row(n * task.K + k);
        out.protos.row(n) /= static_cast<double>(task.K);
        out.owner_class[static_cast<std::size_t>(n)] = n;
    }
    return out;
}

double similarity(const MetricSpec& metric, const Eigen::Ref<const Vector>& q, const Eigen::Ref<const Vector>& p) {
    switch (metric.kind) {
    case MetricSpec::Kind::euclidean:
        return -(q - p).squaredNorm();
    case MetricSpec::Kind::inner:
        return q.dot(p);
    case MetricSpec::Kind::sns:
        return q.dot(p) / std::max(p.norm(), kNormFloor);
    case MetricSpec::Kind::cosine:
        return q.dot(p) / (std::max(q.norm(), kNormFloor) * std::max(p.norm(), kNormFloor) * metric.tau);
    }
    return 0.0;
}

void similarity_backward(const MetricSpec& metric, const Eigen::Ref<const Vector>& q,
                         const Eigen::Ref<const Vector>& p, double upstream, Eigen::Ref<Vector> dq,
                         Eigen::Ref<Vector> dp) {
    switch (metric.kind) {
    case MetricSpec::Kind::euclidean: {
        // s = -|q - p|^2
        dq.noalias() -= (2.0 * upstream) * (q - p);
        dp.noalias() += (2.0 * upstream) * (q - p);
        return;
    }
    case MetricSpec::Kind::inner:
        dq.noalias() += upstream * p;
        dp.noalias() += upstream * q;
        return;
    case MetricSpec::Kind::sns: {
        const double pn = p.norm();
        const double np = std::max(pn, kNormFloor);
        dq.noalias() += (upstream / np) * p;
        dp.noalias() += (upstream / np) * q;
        if (pn > kNormFloor) dp.noalias() -= (upstream * q.dot(p) / (np * np * np)) * p;
        return;
    }
    case MetricSpec::Kind::cosine: {
        const double qn = q.norm();
        const double pn = p.norm();
        const double nq = std::max(qn, kNormFloor);
        const double np = std::max(pn, kNormFloor);
        const double scale = upstream / (nq * np * metric.tau);
        const double s_raw = q.dot(p);
        dq.noalias() += scale * p;
        dp.noalias() += scale * q;
        if (qn > kNormFloor) dq.noalias() -= (scale * s_raw / (nq * nq)) * q;
        if (pn > kNormFloor) dp.noalias() -= (scale * s_raw / (np * np)) * p;
        return;
    }
    }
}

double log_sum_exp(const Eigen::Ref<const Vector>& logits) {
    const double m = logits.maxCoeff();
    return m + std::log((logits.array() - m).exp().sum());
}

Vector softmax(const Eigen::Ref<const Vector>& logits) {
    const double lse = log_sum_exp(logits);
    return (logits.array() - lse).exp().matrix();
}

Vector predict(const MetricSpec& metric, const Eigen::Ref<const Vector>& q, const Matrix& centers) {
    Vector logits(centers.rows());
    for (Eigen::Index c = 0; c < centers.rows(); ++c) logits[c] = similarity(metric, q, centers.row(c).transpose());
    return softmax(logits);
}

Vector predict(const MetricSpec& metric, const Eigen::Ref<const Vector>& q, const PrototypeSet& protos) {
    return predict(metric, q, protos.protos);
}

double query_cross_entropy(const MetricSpec& metric, const Eigen::Ref<const Vector>& q, const Matrix& centers,
                           int target, Eigen::Ref<Vector> dq, Matrix& dcenters) {
    const Eigen::Index n = centers.rows();
    Vector logits(n);
    for (Eigen::Index c = 0; c < n; ++c) logits[c] = similarity(metric, q, centers.row(c).transpose());
    const double lse = log_sum_exp(logits);
    for (Eigen::Index c = 0; c < n; ++c) {
        const double up = std::exp(logits[c] - lse) - (c == target ? 1.0 : 0.0);
        similarity_backward(metric, q, centers.row(c).transpose(), up, dq, dcenters.row(c).transpose());
    }
    return lse - logits[target];
}

std::vector<int> task_local_rows(const Task& task) {
    std::vector<int> rows;
    rows.reserve(task.support_idx.size() + task.query_idx.size());
    rows.insert(rows.end(), task.support_idx.begin(), task.support_idx.end());
    rows.insert(rows.end(), task.query_idx.begin(), task.query_idx.end());
    return rows;
}

Matrix gather_task_rows(const Task& task, const Matrix& all_emb) {
    const std::vector<int> rows = task_local_rows(task);
    Matrix out(static_cast<Eigen::Index>(rows.size()), all_emb.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = all_emb.row(rows[i]);
    return out;
}

std::vector<int> task_local_labels(const Task& task) {
    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(task.num_support() + task.num_query()));
    for (int i = 0; i < task.num_support(); ++i) labels.push_back(i / task.K);
    for (int j = 0; j < task.num_query(); ++j) labels.push_back(j / task.Qe);
    return labels;
}

double local_task_loss(const Task& task, const Matrix& local, const MetricSpec& metric, Matrix* grad_local,
                       const ExtraCenterFn* extra) {
    const int N = task.N;
    const int K = task.K;
    const int nS = task.num_support();
    const int nQ = task.num_query();
    const Eigen::Index d = local.cols();

    Matrix protos = Matrix::Zero(N, d);
    for (int n = 0; n < N; ++n) {
        for (int k = 0; k < K; ++k) protos.row(n) += local.row(n * K + k);
        protos.row(n) /= static_cast<double>(K);
    }

    Matrix scratch_grad;
    Matrix& g = grad_local ? *grad_local : scratch_grad;
    g = Matrix::Zero(local.rows(), d);
    Matrix dprotos = Matrix::Zero(N, d);

    double total = 0.0;
    for (int j = 0; j < nQ; ++j) {
        const int target = j / task.Qe;
        const int row = nS + j;
        std::vector<LinearCenter> ex;
        if (extra) ex = (*extra)(j, local);
        if (ex.empty()) {
            total += query_cross_entropy(metric, local.row(row).transpose(), protos, target, g.row(row).transpose(), dprotos);
            continue;
        }
        const Eigen::Index m = static_cast<Eigen::Index>(ex.size());
        Matrix centers(N + m, d);
        centers.topRows(N) = protos;
        for (Eigen::Index e = 0; e < m; ++e) {
            centers.row(N + e).setZero();
            for (const auto& [r, w] : ex[static_cast<std::size_t>(e)].terms) centers.row(N + e) += w * local.row(r);
        }
        Matrix dcenters = Matrix::Zero(N + m, d);
        total += query_cross_entropy(metric, local.row(row).transpose(), centers, target, g.row(row).transpose(), dcenters);
        dprotos += dcenters.topRows(N);
        for (Eigen::Index e = 0; e < m; ++e)
            for (const auto& [r, w] : ex[static_cast<std::size_t>(e)].terms) g.row(r) += w * dcenters.row(N + e);
    }

    if (grad_local) {
        for (int n = 0; n < N; ++n)
            for (int k = 0; k < K; ++k) g.row(n * K + k) += dprotos.row(n) / static_cast<double>(K);
        g *= 1.0 / static_cast<double>(nQ);
    }
    return total / static_cast<double>(nQ);
}

LossAndGrad accumulate_tasks(const std::vector<Task>& tasks, Eigen::Index all_rows, Eigen::Index dim,
                             const std::function<double(std::size_t, Matrix&)>& per_task, int threads) {
    const std::size_t T = tasks.size();
    if (T == 0) throw ParameterError("episode has no tasks");
    std::vector<double> losses(T, 0.0);
    std::vector<Matrix> grads(T);
    parallel_for(T, threads, [&](std::size_t t) { losses[t] = per_task(t, grads[t]); });

    LossAndGrad out;
    out.grad_emb = Matrix::Zero(all_rows, dim);
    const double inv_t = 1.0 / static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) {
        out.loss += losses[t];
        const std::vector<int> rows = task_local_rows(tasks[t]);
        for (std::size_t i = 0; i < rows.size(); ++i) out.grad_emb.row(rows[i]) += inv_t * grads[t].row(static_cast<Eigen::Index>(i));
    }
    out.loss *= inv_t;
    return out;
}

LossAndGrad episode_loss(const std::vector<Task>& tasks, const Matrix& all_emb, const MetricSpec& metric,
                         int threads) {
    return accumulate_tasks(
        tasks, all_emb.rows(), all_emb.cols(),
        [&](std::size_t t, Matrix& grad_local) {
            const Matrix local = gather_task_rows(tasks[t], all_emb);
            return local_task_loss(tasks[t], local, metric, &grad_local);
        },
        threads);
}

double grad_norm_diagnostic(const Matrix& grad_emb, const std::vector<int>& rows) {
    if (rows.empty()) throw ParameterError("grad_norm_diagnostic: empty row set");
    double sum = 0.0;
    for (int r : rows) sum += grad_emb.row(r).norm();
    return sum / static_cast<double>(rows.size());
}

std::vector<int> referenced_rows(const std::vector<Task>& tasks) {
    std::vector<int> rows;
    for (const auto& t : tasks) {
        rows.insert(rows.end(), t.support_idx.begin(), t.support_idx.end());
        rows.insert(rows.end(), t.query_idx.begin(), t.query_idx.end());
    }
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    return rows;
}

}  // namespace umlab
