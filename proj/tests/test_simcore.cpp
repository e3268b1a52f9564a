#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "umlab/sampler.hpp"
#include "umlab/simcore.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace umlab;

namespace {

const std::vector<MetricSpec> kMetrics = {MetricSpec::parse("euclidean"), MetricSpec::parse("cosine", 0.5),
                                          MetricSpec::parse("inner"), MetricSpec::parse("sns")};

Task make_task(int N, int K, int Qe, Stream& rng, int rows) {
    const std::vector<int> pick = rng.choose(rows, N * (K + Qe));
    Task t;
    t.N = N;
    t.K = K;
    t.Qe = Qe;
    for (int n = 0; n < N; ++n) {
        t.class_map.push_back(n);
        for (int k = 0; k < K; ++k) t.support_idx.push_back(pick[static_cast<std::size_t>(n * (K + Qe) + k)]);
    }
    for (int n = 0; n < N; ++n)
        for (int q = 0; q < Qe; ++q) t.query_idx.push_back(pick[static_cast<std::size_t>(n * (K + Qe) + K + q)]);
    return t;
}

// Straight-line ProtoNet loss (plain loops, no library helpers).
double vanilla_loss(const Task& t, const Matrix& emb, const MetricSpec& m) {
    const Eigen::Index d = emb.cols();
    std::vector<std::vector<double>> protos(static_cast<std::size_t>(t.N), std::vector<double>(static_cast<std::size_t>(d), 0.0));
    for (int n = 0; n < t.N; ++n)
        for (int k = 0; k < t.K; ++k)
            for (Eigen::Index j = 0; j < d; ++j) protos[static_cast<std::size_t>(n)][static_cast<std::size_t>(j)] += emb(t.support(n, k), j) / t.K;
    double total = 0.0;
    for (int n = 0; n < t.N; ++n)
        for (int q = 0; q < t.Qe; ++q) {
            std::vector<double> logits;
            for (int c = 0; c < t.N; ++c) {
                double dot = 0, qq = 0, pp = 0, dist = 0;
                for (Eigen::Index j = 0; j < d; ++j) {
                    const double a = emb(t.query(n, q), j);
                    const double b = protos[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
                    dot += a * b;
                    qq += a * a;
                    pp += b * b;
                    dist += (a - b) * (a - b);
                }
                switch (m.kind) {
                case MetricSpec::Kind::euclidean: logits.push_back(-dist); break;
                case MetricSpec::Kind::inner: logits.push_back(dot); break;
                case MetricSpec::Kind::cosine: logits.push_back(dot / (std::sqrt(qq) * std::sqrt(pp) * m.tau)); break;
                case MetricSpec::Kind::sns: logits.push_back(dot / std::sqrt(pp)); break;
                }
            }
            double z = 0;
            for (double l : logits) z += std::exp(l);
            total += std::log(z) - logits[static_cast<std::size_t>(n)];
        }
    return total / (t.N * t.Qe);
}

}  // namespace

TEST_CASE("prototypes") {
    Task t;
    t.N = 1;
    t.K = 2;
    t.Qe = 0;
    t.support_idx = {0, 1};
    t.class_map = {0};
    Matrix s(2, 2);
    s << 0, 0, 2, 2;
    CHECK(prototypes(s, t).protos == (Matrix(1, 2) << 1, 1).finished());

    Stream rng(1);
    t.K = 1;
    t.support_idx = {0};
    const Matrix one = testutil::random_matrix(1, 3, rng);
    CHECK(prototypes(one, t).protos == one);

    Task five;
    five.N = 5;
    five.K = 3;
    for (int i = 0; i < 15; ++i) five.support_idx.push_back(i);
    five.class_map = {0, 1, 2, 3, 4};
    const Matrix emb = testutil::random_matrix(15, 4, rng);
    const Matrix p = prototypes(emb, five).protos;
    for (int n = 0; n < 5; ++n)
        for (int j = 0; j < 4; ++j) {
            double sum = 0;
            for (int k = 0; k < 3; ++k) sum += emb(n * 3 + k, j);
            CHECK(p(n, j) == doctest::Approx(sum / 3).epsilon(1e-14));
        }
}

TEST_CASE("similarity hand values") {
    const Vector q = (Vector(2) << 3, 4).finished();
    const Vector p = (Vector(2) << 0, 2).finished();
    CHECK(similarity(MetricSpec::parse("sns"), q, p) == doctest::Approx(4.0));
    CHECK(similarity(MetricSpec::parse("cosine", 1.0), q, p) == doctest::Approx(0.8));
    CHECK(similarity(MetricSpec::parse("cosine", 0.5), q, p) == doctest::Approx(1.6));
    CHECK(similarity(MetricSpec::parse("inner"), q, p) == doctest::Approx(8.0));
    CHECK(similarity(MetricSpec::parse("euclidean"), Vector::Unit(2, 0), Vector::Zero(2)) == -1.0);
}

TEST_CASE("sns equals |q| times cosine") {
    Stream rng(2);
    for (int i = 0; i < 1000; ++i) {
        const Vector q = testutil::random_vector(8, rng);
        const Vector p = testutil::random_vector(8, rng);
        const double cos1 = similarity(MetricSpec::parse("cosine", 1.0), q, p);
        CHECK(std::abs(similarity(MetricSpec::parse("sns"), q, p) - q.norm() * cos1) < 1e-12);
    }
}

TEST_CASE("metric spec parsing") {
    CHECK(MetricSpec::parse("sns").kind == MetricSpec::Kind::sns);
    CHECK(MetricSpec::parse("cosine", 2.0).tau == 2.0);
    CHECK(MetricSpec::parse("euclidean").name() == "euclidean");
    CHECK_THROWS_AS(MetricSpec::parse("manhattan"), ParameterError);
    CHECK_THROWS_AS(MetricSpec::parse("cosine", 0.0), ParameterError);
}

TEST_CASE("predict") {
    Matrix centers(2, 2);
    centers << 1, 0, 0, 1;
    const Vector q = (Vector(2) << 1, 1).finished();
    const Vector p = predict(MetricSpec::parse("inner"), q, centers);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));

    const Vector s = softmax((Vector(3) << 0, std::log(2.0), 0).finished());
    CHECK(s[0] == doctest::Approx(0.25));
    CHECK(s[1] == doctest::Approx(0.5));
    CHECK(s[2] == doctest::Approx(0.25));

    CHECK(log_sum_exp((Vector(2) << 1000, 1000).finished()) == doctest::Approx(1000 + std::log(2.0)));

    Stream rng(3);
    for (int e = 0; e < 1000; ++e) {
        const Matrix c = testutil::random_matrix(5, 6, rng);
        const Vector x = testutil::random_vector(6, rng);
        Eigen::Index a = 0, b = 0;
        predict(MetricSpec::parse("sns"), x, c).maxCoeff(&a);
        predict(MetricSpec::parse("cosine", 1.0), x, c).maxCoeff(&b);
        REQUIRE(a == b);
    }
}

TEST_CASE("single class task has zero loss") {
    Stream rng(4);
    const Matrix emb = testutil::random_matrix(4, 3, rng);
    Task t;
    t.N = 1;
    t.K = 1;
    t.Qe = 3;
    t.support_idx = {0};
    t.query_idx = {1, 2, 3};
    t.class_map = {0};
    for (const auto& m : kMetrics) CHECK(episode_loss({t}, emb, m).loss == 0.0);
}

TEST_CASE("episode loss matches a straight-line ProtoNet loss") {
    Stream rng(5);
    const Matrix emb = testutil::random_matrix(60, 5, rng);
    for (const auto& m : kMetrics) {
        const Task t = make_task(5, 2, 3, rng, 60);
        CHECK(std::abs(episode_loss({t}, emb, m).loss - vanilla_loss(t, emb, m)) < 1e-12);
    }
}

TEST_CASE("similarity_backward matches finite differences") {
    Stream rng(6);
    for (const auto& m : kMetrics) {
        Vector q = testutil::random_vector(4, rng);
        Vector p = testutil::random_vector(4, rng);
        Vector dq = Vector::Zero(4), dp = Vector::Zero(4);
        similarity_backward(m, q, p, 1.0, dq, dp);
        const Vector nq = testutil::numeric_grad(q, [&] { return similarity(m, q, p); });
        const Vector np = testutil::numeric_grad(p, [&] { return similarity(m, q, p); });
        CHECK(testutil::max_rel_err(dq, nq) < 1e-7);
        CHECK(testutil::max_rel_err(dp, np) < 1e-7);
    }
}

TEST_CASE("episode gradient matches finite differences") {
    Stream rng(7);
    for (const auto& m : kMetrics) {
        Matrix emb = testutil::random_matrix(30, 4, rng);
        const std::vector<Task> tasks = {make_task(5, 1, 2, rng, 30), make_task(5, 1, 2, rng, 30)};
        const Matrix g = episode_loss(tasks, emb, m).grad_emb;
        const Matrix n = testutil::numeric_grad(emb, [&] { return episode_loss(tasks, emb, m).loss; });
        CHECK(testutil::max_rel_err(g, n) < 1e-6);
    }
}

TEST_CASE("extra centers enter the softmax as linear combinations") {
    Stream rng(8);
    Matrix emb = testutil::random_matrix(12, 3, rng);
    const Task t = make_task(3, 1, 2, rng, 12);
    const MetricSpec m;
    const ExtraCenterFn extra = [](int slot, const Matrix&) {
        LinearCenter c;
        c.terms = {{0, 0.3}, {3 + slot % 3, 0.7}};
        return std::vector<LinearCenter>{c};
    };
    Matrix local = gather_task_rows(t, emb);
    Matrix g;
    const double with = local_task_loss(t, local, m, &g, &extra);
    CHECK(with > local_task_loss(t, local, m, nullptr));
    const Matrix n = testutil::numeric_grad(local, [&] { return local_task_loss(t, local, m, nullptr, &extra); });
    CHECK(testutil::max_rel_err(g, n) < 1e-6);
}

TEST_CASE("episode loss is identical for any thread count") {
    Stream rng(9);
    const Matrix emb = testutil::random_matrix(64, 8, rng);
    std::vector<Task> tasks;
    for (int i = 0; i < 13; ++i) tasks.push_back(make_task(4, 1, 3, rng, 64));
    const LossAndGrad a = episode_loss(tasks, emb, MetricSpec{}, 1);
    const LossAndGrad b = episode_loss(tasks, emb, MetricSpec{}, 4);
    CHECK(a.loss == b.loss);
    CHECK(a.grad_emb == b.grad_emb);
}

TEST_CASE("grad norm diagnostic") {
    Matrix g = Matrix::Zero(3, 2);
    CHECK(grad_norm_diagnostic(g, {0, 1, 2}) == 0.0);
    g.row(1) << 3, 4;
    CHECK(grad_norm_diagnostic(g, {1}) == 5.0);
    CHECK_THROWS_AS(grad_norm_diagnostic(g, {}), ParameterError);

    Stream rng(10);
    const Matrix r = testutil::random_matrix(10, 5, rng);
    const std::vector<int> rows = {0, 3, 4, 9};
    double sum = 0;
    for (int i : rows) {
        double s = 0;
        for (int j = 0; j < 5; ++j) s += r(i, j) * r(i, j);
        sum += std::sqrt(s);
    }
    CHECK(std::abs(grad_norm_diagnostic(r, rows) - sum / 4) < 1e-12);

    Task t;
    t.support_idx = {5, 2};
    t.query_idx = {2, 7};
    CHECK(referenced_rows({t}) == std::vector<int>{2, 5, 7});
}
