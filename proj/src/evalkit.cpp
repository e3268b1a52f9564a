#include "umlab/evalkit.hpp"

#include "umlab/sampler.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace umlab {

double ci95_half_width(const std::vector<double>& acc) {
    const std::size_t n = acc.size();
    if (n < 2) return 0.0;
    double mean = 0.0;
    for (double a : acc) mean += a;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double a : acc) ss += (a - mean) * (a - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    return 1.96 * sd / std::sqrt(static_cast<double>(n));
}

Matrix embed(const Checkpoint& ckpt, const Dataset& data) {
    return forward(ckpt.model, data.features);
}

double task_accuracy(const Task& task, const Matrix& emb, const MetricSpec& metric) {
    Matrix protos = Matrix::Zero(task.N, emb.cols());
    for (int n = 0; n < task.N; ++n) {
        for (int k = 0; k < task.K; ++k) protos.row(n) += emb.row(task.support(n, k));
        protos.row(n) /= static_cast<double>(task.K);
    }
    int correct = 0;
    for (int n = 0; n < task.N; ++n) {
        for (int q = 0; q < task.Qe; ++q) {
            const Vector x = emb.row(task.query(n, q)).transpose();
            int best = 0;
            double best_sim = similarity(metric, x, protos.row(0).transpose());
            for (int c = 1; c < task.N; ++c) {
                const double s = similarity(metric, x, protos.row(c).transpose());
                if (s > best_sim) {
                    best_sim = s;
                    best = c;
                }
            }
            correct += best == n ? 1 : 0;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(task.num_query());
}

EvalReport evaluate_embeddings(const Matrix& emb, const std::vector<int>& labels, int N, int K, int Qe,
                               int num_tasks, const MetricSpec& metric, std::uint64_t seed, int threads) {
    if (num_tasks < 1) throw ParameterError("evaluate: num_tasks must be >= 1");
    metric.validate();
    Dataset index;
    index.features.resize(static_cast<Eigen::Index>(labels.size()), 1);
    index.labels = labels;
    const auto by_class = index.rows_by_class();
    check_episode_feasible(by_class, N, K, Qe);

    std::vector<double> acc(static_cast<std::size_t>(num_tasks));
    const Stream root(seed);
    parallel_for(acc.size(), threads, [&](std::size_t t) {
        Stream rng = root.substream(t);
        const Task task = sample_meta_test_episode(by_class, N, K, Qe, rng);
        acc[t] = task_accuracy(task, emb, metric);
    });

    EvalReport r;
    for (double a : acc) r.mean_accuracy += a;
    r.mean_accuracy /= static_cast<double>(num_tasks);
    r.ci95 = ci95_half_width(acc);
    r.num_tasks = num_tasks;
    r.N = N;
    r.K = K;
    r.Qe = Qe;
    r.metric = metric;
    return r;
}

EvalReport evaluate_fsl(const Checkpoint& ckpt, const Dataset& data, int N, int K, int Qe, int num_tasks,
                        const MetricSpec& metric, std::uint64_t seed, int threads) {
    if (!data.labeled()) throw ParameterError("evaluate: dataset has no labels");
    const Matrix emb = embed(ckpt, data);
    return evaluate_embeddings(emb, *data.labels, N, K, Qe, num_tasks, metric, seed, threads);
}

std::vector<double> ProbeConfig::geometric_grid(double lo, double hi, int points) {
    std::vector<double> grid;
    if (points == 1) return {lo};
    const double step = std::log(hi / lo) / static_cast<double>(points - 1);
    for (int i = 0; i < points; ++i) grid.push_back(lo * std::exp(step * i));
    return grid;
}

void ProbeConfig::validate() const {
    if (folds < 2) throw ParameterError("probe: folds must be >= 2");
    if (inner_cv_folds < 2) throw ParameterError("probe: inner_cv_folds must be >= 2");
    if (reg_grid.empty()) throw ParameterError("probe: regularization grid is empty");
    for (double r : reg_grid)
        if (!(r >= 0.0)) throw ParameterError("probe: regularization weights must be >= 0");
    if (!(tolerance > 0.0) || max_iterations < 1) throw ParameterError("probe: need tolerance > 0 and max_iterations >= 1");
}

std::vector<int> LogisticModel::predict(const Matrix& x) const {
    Matrix logits = x * weights;
    logits.rowwise() += bias.transpose();
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::Index arg = 0;
        logits.row(i).maxCoeff(&arg);
        out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return out;
}

namespace {

struct LogisticEval {
    double value = 0.0;
    Matrix dw;
    Vector db;
};

LogisticEval logistic_objective(const Matrix& x, const std::vector<int>& y, const Matrix& w, const Vector& b,
                                double reg, bool with_grad) {
    const double n = static_cast<double>(x.rows());
    Matrix logits = x * w;
    logits.rowwise() += b.transpose();
    LogisticEval e;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        logits.row(i) = (logits.row(i).array() - m).exp();
        const double z = logits.row(i).sum();
        const int yi = y[static_cast<std::size_t>(i)];
        e.value += std::log(z) - std::log(logits(i, yi));
        if (with_grad) {
            logits.row(i) /= z;
            logits(i, yi) -= 1.0;
        }
    }
    e.value = e.value / n + 0.5 * reg / n * w.squaredNorm();
    if (with_grad) {
        e.dw = (x.transpose() * logits) / n + (reg / n) * w;
        e.db = logits.colwise().sum().transpose() / n;
    }
    return e;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& y) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < y.size(); ++i) ok += pred[i] == y[i] ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(y.size());
}

struct Split {
    Matrix x_train, x_test;
    std::vector<int> y_train, y_test;
};

Split split_rows(const Matrix& x, const std::vector<int>& y, const std::vector<int>& fold_of, int fold) {
    Split s;
    std::vector<Eigen::Index> tr, te;
    for (std::size_t i = 0; i < y.size(); ++i) (fold_of[i] == fold ? te : tr).push_back(static_cast<Eigen::Index>(i));
    s.x_train = x(tr, Eigen::all);
    s.x_test = x(te, Eigen::all);
    for (auto i : tr) s.y_train.push_back(y[static_cast<std::size_t>(i)]);
    for (auto i : te) s.y_test.push_back(y[static_cast<std::size_t>(i)]);
    return s;
}

void standardize(Matrix& train, Matrix& test) {
    const RowVector mu = train.colwise().mean();
    RowVector sd = ((train.rowwise() - mu).colwise().squaredNorm() / static_cast<double>(std::max<Eigen::Index>(train.rows(), 1))).array().sqrt();
    for (Eigen::Index j = 0; j < sd.size(); ++j)
        if (sd[j] < 1e-12) sd[j] = 1.0;
    train = (train.rowwise() - mu).array().rowwise() / sd.array();
    test = (test.rowwise() - mu).array().rowwise() / sd.array();
}

double fit_and_score(Matrix train, const std::vector<int>& y_train, Matrix test, const std::vector<int>& y_test,
                     int num_classes, double reg, const ProbeConfig& cfg) {
    standardize(train, test);
    const LogisticModel m = fit_logistic(train, y_train, num_classes, reg, cfg.tolerance, cfg.max_iterations);
    return accuracy(m.predict(test), y_test);
}

}  // namespace

LogisticModel fit_logistic(const Matrix& x, const std::vector<int>& y, int num_classes, double reg,
                           double tolerance, int max_iterations) {
    if (x.rows() == 0 || static_cast<Eigen::Index>(y.size()) != x.rows()) throw ParameterError("fit_logistic: bad training data");
    LogisticModel m;
    m.weights = Matrix::Zero(x.cols(), num_classes);
    m.bias = Vector::Zero(num_classes);
    double step = 1.0;
    LogisticEval cur = logistic_objective(x, y, m.weights, m.bias, reg, true);
    for (int it = 0; it < max_iterations; ++it) {
        const double g2 = cur.dw.squaredNorm() + cur.db.squaredNorm();
        if (std::sqrt(g2) < tolerance) break;
        step = std::min(step * 2.0, 1e6);
        Matrix w_new;
        Vector b_new;
        LogisticEval next;
        while (true) {
            w_new = m.weights - step * cur.dw;
            b_new = m.bias - step * cur.db;
            next = logistic_objective(x, y, w_new, b_new, reg, false);
            if (next.value <= cur.value - 0.5 * step * g2 || step < 1e-12) break;
            step *= 0.5;
        }
        m.weights = std::move(w_new);
        m.bias = std::move(b_new);
        cur = logistic_objective(x, y, m.weights, m.bias, reg, true);
    }
    return m;
}

std::vector<int> stratified_folds(const std::vector<int>& labels, int folds, Stream& rng) {
    Dataset index;
    index.features.resize(static_cast<Eigen::Index>(labels.size()), 1);
    index.labels = labels;
    const auto by_class = index.rows_by_class();
    std::vector<int> fold_of(labels.size(), 0);
    int offset = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        std::vector<int> rows = by_class[c];
        if (static_cast<int>(rows.size()) < folds)
            throw ParameterError("class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                                 " rows, fewer than the " + std::to_string(folds) + " folds");
        rng.shuffle(std::span<int>(rows));
        for (std::size_t i = 0; i < rows.size(); ++i)
            fold_of[static_cast<std::size_t>(rows[i])] = static_cast<int>((static_cast<std::size_t>(offset) + i) % static_cast<std::size_t>(folds));
        offset = static_cast<int>((static_cast<std::size_t>(offset) + rows.size()) % static_cast<std::size_t>(folds));
    }
    return fold_of;
}

double linear_probe_features(const Matrix& features, const std::vector<int>& labels, const ProbeConfig& cfg,
                             std::uint64_t seed, int threads) {
    cfg.validate();
    const int num_classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    Stream rng = Stream(seed).substream(0x9806);
    const std::vector<int> outer = stratified_folds(labels, cfg.folds, rng);

    std::vector<double> fold_acc(static_cast<std::size_t>(cfg.folds), 0.0);
    std::vector<Stream> inner_rngs;
    for (int f = 0; f < cfg.folds; ++f) inner_rngs.push_back(rng.substream(f));
    parallel_for(fold_acc.size(), threads, [&](std::size_t f) {
        const Split outer_split = split_rows(features, labels, outer, static_cast<int>(f));
        Stream inner_rng = inner_rngs[f];
        const std::vector<int> inner = stratified_folds(outer_split.y_train, cfg.inner_cv_folds, inner_rng);

        double best_reg = cfg.reg_grid.front();
        double best_acc = -1.0;
        for (double reg : cfg.reg_grid) {
            double acc = 0.0;
            for (int g = 0; g < cfg.inner_cv_folds; ++g) {
                const Split s = split_rows(outer_split.x_train, outer_split.y_train, inner, g);
                acc += fit_and_score(s.x_train, s.y_train, s.x_test, s.y_test, num_classes, reg, cfg);
            }
            acc /= cfg.inner_cv_folds;
            // Ties go to the stronger penalty.
            if (acc >= best_acc) {
                best_acc = acc;
                best_reg = reg;
            }
        }
        fold_acc[f] = fit_and_score(outer_split.x_train, outer_split.y_train, outer_split.x_test, outer_split.y_test,
                                    num_classes, best_reg, cfg);
    });
    double mean = 0.0;
    for (double a : fold_acc) mean += a;
    return mean / static_cast<double>(fold_acc.size());
}

double linear_probe(const Checkpoint& ckpt, const Dataset& data, const ProbeConfig& cfg, std::uint64_t seed,
                    int threads) {
    if (!data.labeled()) throw ParameterError("probe: dataset has no labels");
    return linear_probe_features(embed(ckpt, data), *data.labels, cfg, seed, threads);
}

std::string format_report(const EvalReport& r) {
    char mean[32];
    std::snprintf(mean, sizeof mean, "%.4f", r.mean_accuracy);
    std::ostringstream out;
    out << "mean_accuracy: " << mean << '\n'
        << "ci95: " << format_g9(r.ci95) << '\n'
        << "num_tasks: " << r.num_tasks << '\n'
        << "N: " << r.N << '\n'
        << "K: " << r.K << '\n'
        << "Qe: " << r.Qe << '\n'
        << "metric: " << r.metric.name() << '\n'
        << "tau: " << format_g9(r.metric.tau) << '\n';
    return out.str();
}

EvalReport parse_report(const std::string& text) {
    std::map<std::string, std::pair<std::string, std::size_t>> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view v = detail::trim(line);
        if (v.empty()) continue;
        const auto colon = v.find(':');
        if (colon == std::string_view::npos) throw FormatError("expected 'key: value'", lineno);
        const std::string key(detail::trim(v.substr(0, colon)));
        if (!kv.emplace(key, std::pair(std::string(detail::trim(v.substr(colon + 1))), lineno)).second)
            throw FormatError("duplicate key '" + key + "'", lineno);
    }
    auto entry = [&](const char* key) -> const std::pair<std::string, std::size_t>& {
        const auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(std::string("report is missing '") + key + "'");
        return it->second;
    };
    auto num = [&](const char* key, auto& out) {
        const auto& [value, at] = entry(key);
        if (!detail::parse_number(value, out)) throw FormatError(std::string("bad value for '") + key + "'", at);
    };
    EvalReport r;
    num("mean_accuracy", r.mean_accuracy);
    num("ci95", r.ci95);
    num("num_tasks", r.num_tasks);
    num("N", r.N);
    num("K", r.K);
    num("Qe", r.Qe);
    double tau = 0.5;
    num("tau", tau);
    try {
        r.metric = MetricSpec::parse(entry("metric").first, tau);
    } catch (const ParameterError& e) {
        throw FormatError(e.what(), entry("metric").second);
    }
    return r;
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out << format_report(report);
    if (!out) throw FormatError("write failed for " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_report(buf.str());
}

}  // namespace umlab
