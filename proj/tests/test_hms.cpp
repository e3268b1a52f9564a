#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "umlab/hms.hpp"
#include "umlab/sampler.hpp"
#include "test_util.hpp"

#include <algorithm>

using namespace umlab;

namespace {

std::vector<int> exhaustive_top_m(int q, const Matrix& pool, const std::vector<int>& labels, int M, const MetricSpec& m) {
    std::vector<int> eligible;
    for (int i = 0; i < pool.rows(); ++i)
        if (labels[static_cast<std::size_t>(i)] != labels[static_cast<std::size_t>(q)]) eligible.push_back(i);
    std::vector<int> out;
    while (static_cast<int>(out.size()) < M && !eligible.empty()) {
        // Selection scan: highest similarity, first index wins ties.
        std::size_t best = 0;
        double best_sim = similarity(m, pool.row(q).transpose(), pool.row(eligible[0]).transpose());
        for (std::size_t i = 1; i < eligible.size(); ++i) {
            const double s = similarity(m, pool.row(q).transpose(), pool.row(eligible[i]).transpose());
            if (s > best_sim) {
                best_sim = s;
                best = i;
            }
        }
        out.push_back(eligible[best]);
        eligible.erase(eligible.begin() + static_cast<std::ptrdiff_t>(best));
    }
    return out;
}

std::vector<Task> make_tasks(int N, int K, int Q, int T, std::uint64_t seed) {
    MiniBatch b;
    b.C = N;
    b.K = K;
    b.Q = Q;
    for (int c = 0; c < N; ++c)
        for (int v = 0; v < K + Q; ++v) b.pseudo_labels.push_back(c);
    return ses_split(b, {N, K, Q, T, N}, Stream(seed));
}

}  // namespace

TEST_CASE("mining excludes the query's class") {
    Stream rng(1);
    const Matrix pool = testutil::random_matrix(5, 3, rng);
    CHECK(mine_neighbors(2, pool, {1, 1, 1, 1, 1}, 3, MetricSpec{}).empty());
    const auto n = mine_neighbors(0, pool, {0, 0, 1, 1, 2}, 10, MetricSpec{});
    CHECK(n.size() == 3);
    for (int i : n) CHECK(i >= 2);
}

TEST_CASE("mining agrees with an exhaustive scan") {
    Stream rng(2);
    const std::vector<MetricSpec> metrics = {MetricSpec::parse("euclidean"), MetricSpec::parse("cosine"),
                                             MetricSpec::parse("inner"), MetricSpec::parse("sns")};
    for (int trial = 0; trial < 200; ++trial) {
        const int rows = 4 + static_cast<int>(rng.index(30));
        Matrix pool = testutil::random_matrix(rows, 4, rng);
        if (trial % 3 == 0) pool = (pool.array() * 0.7).round() + 0.5;  // force ties
        std::vector<int> labels(static_cast<std::size_t>(rows));
        for (auto& l : labels) l = static_cast<int>(rng.index(4));
        const int q = static_cast<int>(rng.index(static_cast<std::uint64_t>(rows)));
        const int M = 1 + static_cast<int>(rng.index(8));
        const MetricSpec& m = metrics[static_cast<std::size_t>(trial) % 4];
        REQUIRE(mine_neighbors(q, pool, labels, M, m) == exhaustive_top_m(q, pool, labels, M, m));
    }
}

TEST_CASE("mix supports") {
    Matrix n(2, 2);
    n << 2, 2, 4, 0;
    const Vector q = Vector::Zero(2);
    CHECK(mix_supports(q, n, 0.0) == n);
    const Matrix half = mix_supports(q, n, 0.5);
    CHECK(half.row(0) == RowVector::Constant(2, 1.0));
    CHECK(half(1, 0) == 2.0);
}

TEST_CASE("lambda is uniform on [0, lambda_max) and keyed by task and slot") {
    const Stream rng(3);
    double lo = 1, hi = 0, sum = 0;
    const int n = 20000;
    for (int j = 0; j < n; ++j) {
        const double l = hms_lambda(rng, 7, j, 0.5);
        lo = std::min(lo, l);
        hi = std::max(hi, l);
        sum += l;
    }
    CHECK(lo >= 0.0);
    CHECK(hi < 0.5);
    CHECK(hi > 0.49);
    CHECK(sum / n == doctest::Approx(0.25).epsilon(0.02));
    CHECK(hms_lambda(rng, 1, 2, 0.5) == hms_lambda(rng, 1, 2, 0.5));
    CHECK(hms_lambda(rng, 1, 2, 0.5) != hms_lambda(rng, 2, 1, 0.5));
}

TEST_CASE("no eligible neighbors reduces to the baseline loss") {
    const auto tasks = make_tasks(1, 2, 3, 4, 4);
    Stream rng(5);
    const Matrix emb = testutil::random_matrix(5, 3, rng);
    const LossAndGrad a = episode_loss(tasks, emb, MetricSpec{});
    const LossAndGrad b = hms_episode_loss(tasks, emb, MetricSpec{}, {10, 0.5}, Stream(1));
    CHECK(std::abs(a.loss - b.loss) < 1e-12);
    CHECK((a.grad_emb - b.grad_emb).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("distractors never lower the loss") {
    Stream rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto tasks = make_tasks(4, 1, 3, 1, 10 + static_cast<std::uint64_t>(trial));
        const Matrix emb = testutil::random_matrix(16, 5, rng);
        for (const char* m : {"euclidean", "cosine", "inner", "sns"}) {
            const MetricSpec metric = MetricSpec::parse(m);
            CHECK(hms_episode_loss(tasks, emb, metric, {3, 0.5}, Stream(2)).loss >=
                  episode_loss(tasks, emb, metric).loss);
        }
    }
}

TEST_CASE("HMS gradient matches finite differences through the mix path") {
    const auto tasks = make_tasks(3, 1, 2, 2, 7);
    Stream rng(8);
    for (const char* m : {"euclidean", "cosine", "inner", "sns"}) {
        const MetricSpec metric = MetricSpec::parse(m);
        Matrix emb = testutil::random_matrix(9, 4, rng);
        const HmsConfig cfg{2, 0.5};
        const Matrix g = hms_episode_loss(tasks, emb, metric, cfg, Stream(3)).grad_emb;
        const Matrix n = testutil::numeric_grad(emb, [&] { return hms_episode_loss(tasks, emb, metric, cfg, Stream(3)).loss; });
        CHECK(testutil::max_rel_err(g, n) < 1e-6);
    }
}

TEST_CASE("HMS episode loss is identical for any thread count") {
    const auto tasks = make_tasks(8, 1, 3, 16, 9);
    Stream rng(10);
    const Matrix emb = testutil::random_matrix(32, 6, rng);
    const LossAndGrad a = hms_episode_loss(tasks, emb, MetricSpec{}, {}, Stream(4), 1);
    const LossAndGrad b = hms_episode_loss(tasks, emb, MetricSpec{}, {}, Stream(4), 3);
    CHECK(a.loss == b.loss);
    CHECK(a.grad_emb == b.grad_emb);
}

TEST_CASE("config validation") {
    CHECK_NOTHROW(HmsConfig{}.validate());
    CHECK_THROWS_AS((HmsConfig{0, 0.5}.validate()), ParameterError);
    CHECK_THROWS_AS((HmsConfig{3, 1.5}.validate()), ParameterError);
    CHECK_THROWS_AS((HmsConfig{3, -0.1}.validate()), ParameterError);
}
