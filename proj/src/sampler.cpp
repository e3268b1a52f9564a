#include "umlab/sampler.hpp"

#include <string>

namespace umlab {

void EpisodeConfig::validate() const {
    if (N < 1 || K < 1 || Q < 1 || T < 1 || C < 1) throw ParameterError("episode: N, K, Q, T, C must be >= 1");
    if (N > C) throw ParameterError("episode: N=" + std::to_string(N) + " exceeds C=" + std::to_string(C));
}

std::vector<Task> ses_split(const std::vector<std::vector<int>>& rows_by_class, const EpisodeConfig& cfg,
                            const Stream& rng) {
    if (cfg.N < 1 || cfg.K < 1 || cfg.Q < 1 || cfg.T < 1) throw ParameterError("ses_split: N, K, Q, T must be >= 1");
    const int C = static_cast<int>(rows_by_class.size());
    if (cfg.N > C)
        throw ParameterError("ses_split: N=" + std::to_string(cfg.N) + " exceeds the " + std::to_string(C) + " classes in the batch");
    for (std::size_t c = 0; c < rows_by_class.size(); ++c)
        if (static_cast<int>(rows_by_class[c].size()) < cfg.K + cfg.Q)
            throw ParameterError("ses_split: K+Q=" + std::to_string(cfg.K + cfg.Q) + " exceeds the views of class " +
                                 std::to_string(c));

    std::vector<Task> tasks(static_cast<std::size_t>(cfg.T));
    for (int t = 0; t < cfg.T; ++t) {
        Stream s = rng.substream(t);
        Task& task = tasks[static_cast<std::size_t>(t)];
        task.N = cfg.N;
        task.K = cfg.K;
        task.Qe = cfg.Q;
        task.class_map = s.choose(C, cfg.N);
        task.support_idx.reserve(static_cast<std::size_t>(cfg.N * cfg.K));
        task.query_idx.reserve(static_cast<std::size_t>(cfg.N * cfg.Q));
        for (int n = 0; n < cfg.N; ++n) {
            const auto& rows = rows_by_class[static_cast<std::size_t>(task.class_map[static_cast<std::size_t>(n)])];
            const std::vector<int> pick = s.choose(static_cast<int>(rows.size()), cfg.K + cfg.Q);
            for (int k = 0; k < cfg.K; ++k) task.support_idx.push_back(rows[static_cast<std::size_t>(pick[static_cast<std::size_t>(k)])]);
            for (int q = 0; q < cfg.Q; ++q)
                task.query_idx.push_back(rows[static_cast<std::size_t>(pick[static_cast<std::size_t>(cfg.K + q)])]);
        }
    }
    return tasks;
}

std::vector<Task> ses_split(const MiniBatch& batch, const EpisodeConfig& cfg, const Stream& rng) {
    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(batch.C));
    for (std::size_t i = 0; i < batch.pseudo_labels.size(); ++i) {
        const int c = batch.pseudo_labels[i];
        if (c < 0 || c >= batch.C) throw ParameterError("ses_split: pseudo label out of range");
        by_class[static_cast<std::size_t>(c)].push_back(static_cast<int>(i));
    }
    return ses_split(by_class, cfg, rng);
}

void check_episode_feasible(const std::vector<std::vector<int>>& rows_by_class, int N, int K, int Qe) {
    if (N < 1 || K < 1 || Qe < 1) throw ParameterError("episode: N, K, Qe must be >= 1");
    if (static_cast<int>(rows_by_class.size()) < N)
        throw SamplingError("need " + std::to_string(N) + " classes, data has " + std::to_string(rows_by_class.size()));
    for (std::size_t c = 0; c < rows_by_class.size(); ++c)
        if (static_cast<int>(rows_by_class[c].size()) < K + Qe)
            throw SamplingError("class " + std::to_string(c) + " has " + std::to_string(rows_by_class[c].size()) +
                                " rows, need K+Qe=" + std::to_string(K + Qe));
}

Task sample_meta_test_episode(const std::vector<std::vector<int>>& rows_by_class, int N, int K, int Qe,
                              Stream& rng) {
    Task task;
    task.N = N;
    task.K = K;
    task.Qe = Qe;
    task.class_map = rng.choose(static_cast<int>(rows_by_class.size()), N);
    task.support_idx.reserve(static_cast<std::size_t>(N * K));
    task.query_idx.reserve(static_cast<std::size_t>(N * Qe));
    for (int n = 0; n < N; ++n) {
        const int c = task.class_map[static_cast<std::size_t>(n)];
        const auto& rows = rows_by_class[static_cast<std::size_t>(c)];
        if (static_cast<int>(rows.size()) < K + Qe)
            throw SamplingError("class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                                " rows, need K+Qe=" + std::to_string(K + Qe));
        const std::vector<int> pick = rng.choose(static_cast<int>(rows.size()), K + Qe);
        for (int k = 0; k < K; ++k) task.support_idx.push_back(rows[static_cast<std::size_t>(pick[static_cast<std::size_t>(k)])]);
        for (int q = 0; q < Qe; ++q) task.query_idx.push_back(rows[static_cast<std::size_t>(pick[static_cast<std::size_t>(K + q)])]);
    }
    return task;
}

Task sample_meta_test_episode(const Dataset& data, int N, int K, int Qe, Stream& rng) {
    if (!data.labeled()) throw ParameterError("meta-test sampling needs a labeled dataset");
    const auto by_class = data.rows_by_class();
    check_episode_feasible(by_class, N, K, Qe);
    return sample_meta_test_episode(by_class, N, K, Qe, rng);
}

}  // namespace umlab
