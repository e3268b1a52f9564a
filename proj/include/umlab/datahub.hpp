#pragma once

#include "umlab/core.hpp"
#include "umlab/rng.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace umlab {

/// Feature matrix (rows = instances) with optional contiguous class labels.
struct Dataset {
    Matrix features;
    std::optional<std::vector<int>> labels;

    int rows() const { return static_cast<int>(features.rows()); }
    int dim() const { return static_cast<int>(features.cols()); }
    bool labeled() const { return labels.has_value(); }
    /// 0 for unlabeled data.
    int num_classes() const;
    /// Row indices per class, ascending. Requires labels.
    std::vector<std::vector<int>> rows_by_class() const;

    /// Throws ParameterError if the invariants do not hold (D >= 1, labels
    /// sized to the rows, contiguous from 0 with every class present).
    void validate() const;
};

/// Stochastic view generator for one feature vector.
struct AugmentPolicy {
    enum class Kind { gaussian_noise, scale_jitter, mask_dropout, compose };

    Kind kind = Kind::compose;
    double noise_sigma = 0.0;
    double scale_lo = 1.0;
    double scale_hi = 1.0;
    double mask_prob = 0.0;
    std::vector<AugmentPolicy> children;

    static AugmentPolicy gaussian_noise(double sigma);
    static AugmentPolicy scale_jitter(double lo, double hi);
    static AugmentPolicy mask_dropout(double prob);
    static AugmentPolicy compose(std::vector<AugmentPolicy> children);
    /// Identity: an empty composition.
    static AugmentPolicy identity() { return compose({}); }

    void validate() const;
};

/// Default vector augmentation for `data`: noise at 0.1 x the mean per-column
/// standard deviation, scale jitter in [0.8, 1.2], mask dropout 0.1.
AugmentPolicy default_policy(const Dataset& data, double noise_factor = 0.1, double scale_lo = 0.8,
                             double scale_hi = 1.2, double mask_prob = 0.1);

/// C anchors x (K+Q) augmented views; views of anchor c occupy rows
/// [c*(K+Q), (c+1)*(K+Q)).
struct MiniBatch {
    Matrix views;
    std::vector<int> pseudo_labels;
    std::vector<int> anchor_ids;
    int C = 0;
    int K = 0;
    int Q = 0;

    int views_per_class() const { return K + Q; }
};

/// Gaussian clusters: centers uniform in [0, cluster_sep]^D, rows are
/// center + N(0, noise^2 I). Rows are grouped by cluster; label = cluster id.
Dataset synth_generate(int num_clusters, int per_cluster, int dim, double cluster_sep, double noise,
                       std::uint64_t seed);

/// Cluster centers used by synth_generate for the same arguments.
Matrix synth_centers(int num_clusters, int dim, double cluster_sep, std::uint64_t seed);

/// Rows of the listed classes, relabeled 0..classes.size()-1 in list order.
Dataset select_classes(const Dataset& data, std::span<const int> classes);

/// Same features, labels dropped.
Dataset strip_labels(const Dataset& data);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& data, const std::filesystem::path& path);

Vector augment(const Eigen::Ref<const Vector>& x, const AugmentPolicy& policy, Stream& rng);

MiniBatch make_pseudo_batch(const Dataset& data, int C, int K, int Q, const AugmentPolicy& policy, Stream& rng);

}  // namespace umlab
