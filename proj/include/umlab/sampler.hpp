#pragma once

#include "umlab/datahub.hpp"
#include "umlab/rng.hpp"

#include <vector>

namespace umlab {

/// One N-way K-shot task. Index matrices are stored row-major: the K support
/// rows of task class n are support_idx[n*K .. n*K+K).
struct Task {
    int N = 0;
    int K = 0;
    int Qe = 0;
    std::vector<int> support_idx;
    std::vector<int> query_idx;
    /// Task class n -> pseudo label (meta-train) or true label (meta-test).
    std::vector<int> class_map;

    int support(int n, int k) const { return support_idx[static_cast<std::size_t>(n * K + k)]; }
    int query(int n, int q) const { return query_idx[static_cast<std::size_t>(n * Qe + q)]; }
    int num_support() const { return N * K; }
    int num_query() const { return N * Qe; }
};

struct EpisodeConfig {
    int N = 16;
    int K = 1;
    int Q = 3;
    int T = 64;
    int C = 16;

    void validate() const;
};

/// Sufficient episodic sampling: T tasks re-split from one minibatch. Task t
/// draws from rng.substream(t), so tasks are independent of generation order.
std::vector<Task> ses_split(const MiniBatch& batch, const EpisodeConfig& cfg, const Stream& rng);

/// Same, over explicit per-class row lists (every list must hold >= K+Q rows).
std::vector<Task> ses_split(const std::vector<std::vector<int>>& rows_by_class, const EpisodeConfig& cfg,
                            const Stream& rng);

/// Labeled episode with N classes, K support and Qe query rows per class,
/// indices into `data`. Throws SamplingError naming a class that is too small.
Task sample_meta_test_episode(const Dataset& data, int N, int K, int Qe, Stream& rng);

/// Overload over precomputed Dataset::rows_by_class(); no feasibility scan.
Task sample_meta_test_episode(const std::vector<std::vector<int>>& rows_by_class, int N, int K, int Qe,
                              Stream& rng);

/// Throws SamplingError unless there are >= N classes and each holds >= K+Qe rows.
void check_episode_feasible(const std::vector<std::vector<int>>& rows_by_class, int N, int K, int Qe);

}  // namespace umlab
