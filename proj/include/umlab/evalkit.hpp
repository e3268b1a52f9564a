#pragma once

#include "umlab/checkpoint.hpp"
#include "umlab/datahub.hpp"
#include "umlab/simcore.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace umlab {

struct EvalReport {
    double mean_accuracy = 0.0;
    double ci95 = 0.0;
    int num_tasks = 0;
    int N = 0;
    int K = 0;
    int Qe = 0;
    MetricSpec metric;

    bool operator==(const EvalReport&) const = default;
};

/// 1.96 * sample std (n - 1 divisor) / sqrt(n); 0 for a single task.
double ci95_half_width(const std::vector<double>& accuracies);

/// Embeds every row with φ only; the TSP head is never consulted.
Matrix embed(const Checkpoint& ckpt, const Dataset& data);

/// Fraction of the task's queries whose most similar prototype is their own class.
double task_accuracy(const Task& task, const Matrix& emb, const MetricSpec& metric);

/// Few-shot evaluation over precomputed embeddings; episode t samples from
/// Stream(seed).substream(t).
EvalReport evaluate_embeddings(const Matrix& emb, const std::vector<int>& labels, int N, int K, int Qe,
                               int num_tasks, const MetricSpec& metric, std::uint64_t seed, int threads = 1);

EvalReport evaluate_fsl(const Checkpoint& ckpt, const Dataset& data, int N = 5, int K = 1, int Qe = 15,
                        int num_tasks = 10000, const MetricSpec& metric = {}, std::uint64_t seed = 0, int threads = 1);

/// Logistic-regression probe on frozen embeddings.
struct ProbeConfig {
    int folds = 10;
    int inner_cv_folds = 5;
    /// L2 weights; default: one per decade over [1e-4, 1e4].
    std::vector<double> reg_grid = geometric_grid(1e-4, 1e4, 9);
    double tolerance = 1e-6;
    int max_iterations = 300;

    static std::vector<double> geometric_grid(double lo, double hi, int points);
    void validate() const;
};

/// Multinomial logistic regression, weights (d x classes) and biases.
struct LogisticModel {
    Matrix weights;
    Vector bias;

    std::vector<int> predict(const Matrix& x) const;
};

/// Minimizes mean cross-entropy + reg / (2 n) * |W|^2 (bias unpenalized) by
/// full-batch gradient descent with backtracking line search, until the
/// gradient norm drops below `tolerance` or max_iterations is reached.
LogisticModel fit_logistic(const Matrix& x, const std::vector<int>& y, int num_classes, double reg,
                           double tolerance, int max_iterations);

/// Fold id per row; each class is spread round-robin over the folds after a
/// shuffle. Throws ParameterError if a class has fewer rows than folds.
std::vector<int> stratified_folds(const std::vector<int>& labels, int folds, Stream& rng);

/// Mean held-out accuracy over `folds` stratified folds; each fold picks its
/// regularization by inner cross-validation over cfg.reg_grid. Features are
/// standardized with training-fold statistics.
double linear_probe_features(const Matrix& features, const std::vector<int>& labels, const ProbeConfig& cfg,
                             std::uint64_t seed, int threads = 1);

double linear_probe(const Checkpoint& ckpt, const Dataset& data, const ProbeConfig& cfg, std::uint64_t seed,
                    int threads = 1);

/// `key: value` lines. mean_accuracy is written with 4 decimals, ci95 with
/// 9 significant digits.
std::string format_report(const EvalReport& report);
EvalReport parse_report(const std::string& text);
void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

}  // namespace umlab
