#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "umlab/sampler.hpp"
#include "umlab/simcore.hpp"
#include "test_util.hpp"

#include <set>

using namespace umlab;

namespace {

MiniBatch label_only_batch(int C, int K, int Q) {
    MiniBatch b;
    b.C = C;
    b.K = K;
    b.Q = Q;
    for (int c = 0; c < C; ++c)
        for (int v = 0; v < K + Q; ++v) b.pseudo_labels.push_back(c);
    return b;
}

}  // namespace

TEST_CASE("T=1, N=C partitions every pseudo class") {
    const MiniBatch b = label_only_batch(6, 2, 3);
    const auto tasks = ses_split(b, {6, 2, 3, 1, 6}, Stream(1));
    REQUIRE(tasks.size() == 1);
    const Task& t = tasks[0];
    std::set<int> all;
    for (int n = 0; n < t.N; ++n) {
        const int cls = t.class_map[static_cast<std::size_t>(n)];
        for (int k = 0; k < t.K; ++k) {
            CHECK(b.pseudo_labels[static_cast<std::size_t>(t.support(n, k))] == cls);
            all.insert(t.support(n, k));
        }
        for (int q = 0; q < t.Qe; ++q) {
            CHECK(b.pseudo_labels[static_cast<std::size_t>(t.query(n, q))] == cls);
            all.insert(t.query(n, q));
        }
    }
    CHECK(all.size() == 30);
}

TEST_CASE("tasks have the right counts and distinct indices") {
    const MiniBatch b = label_only_batch(16, 1, 3);
    const EpisodeConfig cfg{5, 1, 3, 64, 16};
    const auto tasks = ses_split(b, cfg, Stream(2));
    CHECK(tasks.size() == 64);
    std::set<std::vector<int>> distinct;
    for (const auto& t : tasks) {
        CHECK(t.support_idx.size() == 5);
        CHECK(t.query_idx.size() == 15);
        std::set<int> rows(t.support_idx.begin(), t.support_idx.end());
        rows.insert(t.query_idx.begin(), t.query_idx.end());
        CHECK(rows.size() == 20);
        CHECK(std::set<int>(t.class_map.begin(), t.class_map.end()).size() == 5);
        distinct.insert(t.support_idx);
    }
    CHECK(distinct.size() > 1);
}

TEST_CASE("task t depends only on its own substream") {
    const MiniBatch b = label_only_batch(16, 1, 3);
    const auto few = ses_split(b, {16, 1, 3, 2, 16}, Stream(3));
    const auto many = ses_split(b, {16, 1, 3, 9, 16}, Stream(3));
    CHECK(few[1].support_idx == many[1].support_idx);
    CHECK(few[1].query_idx == many[1].query_idx);
}

TEST_CASE("mean of single-task losses equals the episode loss") {
    const MiniBatch b = label_only_batch(8, 1, 3);
    const auto tasks = ses_split(b, {4, 1, 3, 8, 8}, Stream(4));
    Stream rng(5);
    const Matrix emb = testutil::random_matrix(32, 6, rng);
    const MetricSpec metric;
    double mean = 0.0;
    for (const auto& t : tasks) mean += episode_loss({t}, emb, metric).loss;
    mean /= 8.0;
    CHECK(std::abs(mean - episode_loss(tasks, emb, metric).loss) < 1e-10);
}

TEST_CASE("episode config validation") {
    CHECK_NOTHROW(EpisodeConfig{}.validate());
    CHECK_THROWS_AS((EpisodeConfig{17, 1, 3, 64, 16}.validate()), ParameterError);
    CHECK_THROWS_AS((EpisodeConfig{16, 0, 3, 64, 16}.validate()), ParameterError);
    CHECK_THROWS_AS((EpisodeConfig{16, 1, 3, 0, 16}.validate()), ParameterError);
    const MiniBatch b = label_only_batch(4, 1, 3);
    CHECK_THROWS_AS(ses_split(b, {4, 2, 3, 1, 4}, Stream(0)), ParameterError);
}

TEST_CASE("meta-test episodes") {
    const Dataset d = synth_generate(8, 20, 3, 3.0, 1.0, 6);
    Stream rng(7);

    SUBCASE("defaults give 75 query rows") {
        const Task t = sample_meta_test_episode(d, 5, 1, 15, rng);
        CHECK(t.num_query() == 75);
        CHECK(t.support_idx.size() == 5);
    }
    SUBCASE("support and query are disjoint and labels match") {
        for (int e = 0; e < 1000; ++e) {
            const Task t = sample_meta_test_episode(d, 5, 2, 4, rng);
            std::set<int> s(t.support_idx.begin(), t.support_idx.end());
            for (int q : t.query_idx) REQUIRE(s.count(q) == 0);
            for (int n = 0; n < 5; ++n) {
                const int cls = t.class_map[static_cast<std::size_t>(n)];
                for (int k = 0; k < 2; ++k) REQUIRE((*d.labels)[static_cast<std::size_t>(t.support(n, k))] == cls);
                for (int q = 0; q < 4; ++q) REQUIRE((*d.labels)[static_cast<std::size_t>(t.query(n, q))] == cls);
            }
        }
    }
    SUBCASE("infeasible requests name the class") {
        Dataset small = d;
        (*small.labels)[0] = 1;  // class 0 now has 19 rows
        CHECK_THROWS_AS(sample_meta_test_episode(d, 9, 1, 1, rng), SamplingError);
        try {
            sample_meta_test_episode(small, 5, 5, 15, rng);
            FAIL("expected SamplingError");
        } catch (const SamplingError& e) {
            CHECK(std::string(e.what()).find("class 0") != std::string::npos);
        }
    }
}
