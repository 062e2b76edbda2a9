#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "fairsinkhorn/contrastive.hpp"
#include "fairsinkhorn/error.hpp"
#include "fairsinkhorn/rng.hpp"
#include "fairsinkhorn/sinkhorn.hpp"
#include "helpers.hpp"

using namespace fairsinkhorn;
using fairsinkhorn::testing::random_batch;

namespace {

EmbeddingBatch make_batch(const Eigen::MatrixXd& image, const Eigen::MatrixXd& text) {
    EmbeddingBatch batch;
    batch.image_embeddings = image;
    batch.text_embeddings = text;
    return batch;
}

EmbeddingBatch random_embedding_batch(Rng& rng, Eigen::Index n, Eigen::Index d) {
    return random_batch(rng, n, d);
}

double map_sum(const std::map<int, double>& terms) {
    double total = 0.0;
    for (const auto& [level, value] : terms) total += value;
    return total;
}

// Independent row normalization used by the oracles below.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) /= m.row(i).norm();
    return out;
}

} // namespace

TEST_CASE("similarity of a self-aligned singleton is one") {
    const auto batch = make_batch((Eigen::MatrixXd(1, 2) << 1.0, 0.0).finished(),
                                  (Eigen::MatrixXd(1, 2) << 1.0, 0.0).finished());
    const auto m = similarity(batch, 1.0);
    REQUIRE(m.entries.rows() == 1);
    CHECK(m.entries(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("similarity of orthogonal singletons is zero") {
    const auto batch = make_batch((Eigen::MatrixXd(1, 2) << 1.0, 0.0).finished(),
                                  (Eigen::MatrixXd(1, 2) << 0.0, 1.0).finished());
    const auto m = similarity(batch, 1.0);
    CHECK(std::abs(m.entries(0, 0)) < 1e-12);
}

TEST_CASE("similarity matches a scalar-loop oracle") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.uniform_index(6));
        const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.uniform_index(6));
        const auto batch = random_embedding_batch(rng, n, d);
        const double tau = rng.uniform(0.01, 1.0);
        const auto m = similarity(batch, tau);
        REQUIRE(m.entries.rows() == n);
        REQUIRE(m.entries.cols() == n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::VectorXd zi =
                batch.image_embeddings.row(i) / batch.image_embeddings.row(i).norm();
            for (Eigen::Index j = 0; j < n; ++j) {
                const Eigen::VectorXd zj =
                    batch.text_embeddings.row(j) / batch.text_embeddings.row(j).norm();
                CHECK(std::abs(m.entries(i, j) - zi.dot(zj) / tau) < 1e-12);
            }
        }
    }
}

TEST_CASE("similarity entries respect the cosine bound") {
    Rng rng(103);
    const auto batch = random_embedding_batch(rng, 8, 5);
    const double tau = 0.07;
    const auto m = similarity(batch, tau);
    CHECK(m.entries.cwiseAbs().maxCoeff() <= 1.0 / tau + 1e-9);
}

TEST_CASE("similarity rejects a zero-norm row, naming row and side") {
    Rng rng(105);
    auto batch = random_embedding_batch(rng, 3, 4);
    batch.text_embeddings.row(1).setZero();
    try {
        similarity(batch, 0.07);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("text") != std::string::npos);
        CHECK(msg.find('1') != std::string::npos);
    }
}

TEST_CASE("already_normalized batches are validated") {
    Rng rng(107);
    auto batch = random_embedding_batch(rng, 3, 4);
    batch.already_normalized = true; // rows are not actually unit length
    CHECK_THROWS_AS(similarity(batch, 0.07), DataError);

    batch.image_embeddings = normalize_rows(batch.image_embeddings);
    batch.text_embeddings = normalize_rows(batch.text_embeddings);
    const auto m = similarity(batch, 1.0);
    // With pre-normalized rows the entries are plain dot products.
    CHECK(std::abs(m.entries(0, 0) -
                   batch.image_embeddings.row(0).dot(batch.text_embeddings.row(0))) < 1e-12);
}

TEST_CASE("uniform similarity matrices lose ln N") {
    for (const Eigen::Index n : {2, 4, 8}) {
        SimilarityMatrix m;
        m.temperature = 0.07;
        m.entries = Eigen::MatrixXd::Constant(n, n, 0.3);
        const auto result = clip_loss(m);
        CHECK(std::abs(result.loss - std::log(static_cast<double>(n))) < 1e-9);
        // Uniform logits leave softmax mass 1/n everywhere; the diagonal
        // target subtracts 1 there, and both directions agree.
        const double expected_diag = (1.0 / static_cast<double>(n) - 1.0) / static_cast<double>(n);
        CHECK(std::abs(result.grad(0, 0) - expected_diag) < 1e-12);
    }
}

TEST_CASE("saturated correct logits drive the loss to zero") {
    SimilarityMatrix m;
    m.entries = Eigen::MatrixXd::Constant(3, 3, -50.0);
    m.entries.diagonal().setConstant(50.0);
    const auto result = clip_loss(m);
    CHECK(result.loss >= 0.0);
    CHECK(result.loss < 1e-8);
}

TEST_CASE("singleton batches carry zero contrastive loss") {
    SimilarityMatrix m;
    m.entries = Eigen::MatrixXd::Constant(1, 1, 3.7);
    const auto result = clip_loss(m);
    CHECK(result.loss == 0.0);
    CHECK(result.grad(0, 0) == 0.0);
}

TEST_CASE("clip loss is non-negative on random matrices") {
    Rng rng(109);
    for (int trial = 0; trial < 50; ++trial) {
        SimilarityMatrix m;
        const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.uniform_index(7));
        m.entries = fairsinkhorn::testing::random_matrix(rng, n, n, -5.0, 5.0);
        CHECK(clip_loss(m).loss >= 0.0);
    }
}

TEST_CASE("clip loss gradient matches central finite differences") {
    Rng rng(111);
    for (int trial = 0; trial < 50; ++trial) {
        SimilarityMatrix m;
        m.entries = fairsinkhorn::testing::random_matrix(rng, 4, 4, -3.0, 3.0);
        const auto result = clip_loss(m);
        const double h = 1e-6;
        for (Eigen::Index i = 0; i < 4; ++i) {
            for (Eigen::Index j = 0; j < 4; ++j) {
                auto plus = m, minus = m;
                plus.entries(i, j) += h;
                minus.entries(i, j) -= h;
                const double fd = (clip_loss(plus).loss - clip_loss(minus).loss) / (2 * h);
                CHECK(std::abs(result.grad(i, j) - fd) <=
                      1e-6 * std::max({std::abs(fd), std::abs(result.grad(i, j)), 1e-4}));
            }
        }
    }
}

TEST_CASE("clip loss is bit-identical under simultaneous row permutations") {
    Rng rng(113);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::Index n = 3 + static_cast<Eigen::Index>(rng.uniform_index(5));
        SimilarityMatrix m;
        m.entries = fairsinkhorn::testing::random_matrix(rng, n, n, -4.0, 4.0);
        const double base = clip_loss(m).loss;

        const auto perm =
            rng.sample_without_replacement(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
        SimilarityMatrix permuted;
        permuted.temperature = m.temperature;
        permuted.entries.resize(n, n);
        // Permuting the batch rows of both modalities maps M to P M P^T.
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                permuted.entries(i, j) = m.entries(static_cast<Eigen::Index>(perm[i]),
                                                   static_cast<Eigen::Index>(perm[j]));
        CHECK(clip_loss(permuted).loss == base);
    }
}

TEST_CASE("diagonal distribution extracts raw cosine values") {
    SUBCASE("singleton") {
        SimilarityMatrix m;
        m.temperature = 0.07;
        m.entries = Eigen::MatrixXd::Constant(1, 1, 0.4 / 0.07);
        const auto dist = diagonal_distribution(m);
        REQUIRE(dist.size() == 1);
        CHECK(dist.support[0] == doctest::Approx(0.4).epsilon(1e-12));
        CHECK(dist.weights[0] == 1.0);
    }

    SUBCASE("hand diagonal") {
        SimilarityMatrix m;
        m.temperature = 1.0;
        m.entries = (Eigen::MatrixXd(2, 2) << 0.2, 0.9, -0.3, 0.8).finished();
        const auto dist = diagonal_distribution(m);
        REQUIRE(dist.size() == 2);
        CHECK(dist.support[0] == doctest::Approx(0.2));
        CHECK(dist.support[1] == doctest::Approx(0.8));
        CHECK(dist.weights[0] == doctest::Approx(0.5));
        CHECK(dist.weights[1] == doctest::Approx(0.5));
    }

    SUBCASE("temperature is undone so supports live on cosines") {
        Rng rng(115);
        const auto batch = random_embedding_batch(rng, 6, 4);
        const auto hot = similarity(batch, 0.07);
        const auto cold = similarity(batch, 1.0);
        const auto dist_hot = diagonal_distribution(hot);
        const auto dist_cold = diagonal_distribution(cold);
        for (Eigen::Index i = 0; i < 6; ++i) {
            CHECK(std::abs(dist_hot.support[i] - dist_cold.support[i]) < 1e-12);
            CHECK(std::abs(dist_hot.support[i] - hot.entries(i, i) * 0.07) < 1e-12);
        }
    }
}

TEST_CASE("fairclip config validation") {
    FairClipConfig cfg;
    cfg.attribute_name = "group";
    CHECK_NOTHROW(cfg.validate());
    cfg.lambda_fair = -1e-9;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.lambda_fair = 0.0;
    cfg.group_batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("lambda zero reduces fairclip to plain clip exactly") {
    Rng rng(117);
    const auto batch = random_embedding_batch(rng, 6, 5);
    std::map<int, EmbeddingBatch> groups;
    groups[0] = random_embedding_batch(rng, 4, 5);
    groups[1] = random_embedding_batch(rng, 3, 5);

    FairClipConfig cfg;
    cfg.attribute_name = "group";
    cfg.lambda_fair = 0.0;
    const double tau = 0.07;
    const auto res = fairclip_loss(batch, groups, cfg, tau);

    const auto clip = clip_loss(similarity(batch, tau));
    CHECK(res.loss == clip.loss);
    CHECK(res.clip_component == clip.loss);
    REQUIRE(res.fairness_terms.size() == 2);
    for (const auto& [level, term] : res.fairness_terms) CHECK(term == 0.0);
    for (const auto& [level, grads] : res.group) {
        CHECK(grads.image.isZero(0.0));
        CHECK(grads.text.isZero(0.0));
        CHECK(grads.image.rows() == groups.at(level).size());
    }
}

TEST_CASE("identical group batches contribute no debiased fairness term") {
    Rng rng(119);
    const auto batch = random_embedding_batch(rng, 8, 6);
    std::map<int, EmbeddingBatch> groups;
    groups[0] = batch;
    groups[1] = batch;

    FairClipConfig cfg;
    cfg.attribute_name = "group";
    cfg.lambda_fair = 1e-3;
    cfg.sinkhorn.debias = true;
    const auto res = fairclip_loss(batch, groups, cfg, 0.07);
    REQUIRE(res.fairness_terms.size() == 2);
    for (const auto& [level, term] : res.fairness_terms) {
        CHECK(term >= 0.0);
        CHECK(term < 1e-8);
    }
}

TEST_CASE("fairclip total matches an independently assembled sum") {
    Rng rng(121);
    for (int trial = 0; trial < 5; ++trial) {
        const auto batch = random_embedding_batch(rng, 8, 6);
        std::map<int, EmbeddingBatch> groups;
        groups[0] = random_embedding_batch(rng, 4, 6);
        groups[1] = random_embedding_batch(rng, 4, 6);

        FairClipConfig cfg;
        cfg.attribute_name = "group";
        cfg.lambda_fair = 1e-7;
        const double tau = 0.07;
        const auto res = fairclip_loss(batch, groups, cfg, tau);

        const auto m = similarity(batch, tau);
        const double clip = clip_loss(m).loss;
        double fairness = 0.0;
        for (const auto& [level, group] : groups) {
            const auto gm = similarity(group, tau);
            fairness +=
                sinkhorn_distance(diagonal_distribution(m), diagonal_distribution(gm), cfg.sinkhorn);
        }
        CHECK(std::abs(res.loss - (clip + cfg.lambda_fair * fairness)) < 1e-10);
        CHECK(std::abs(map_sum(res.fairness_terms) - fairness) < 1e-12);
    }
}

TEST_CASE("fairclip loss assembles as clip plus lambda times the term sum") {
    // The published objective is linear in lambda with the transport terms
    // held fixed. The implementation assembles exactly loss = clip +
    // lambda * sum(terms), so the identity holds bitwise, and differences
    // across lambdas reduce to the slope times the shared term sum.
    Rng rng(123);
    const auto batch = random_embedding_batch(rng, 8, 5);
    std::map<int, EmbeddingBatch> groups;
    groups[0] = random_embedding_batch(rng, 5, 5);
    groups[2] = random_embedding_batch(rng, 6, 5);

    FairClipConfig cfg;
    cfg.attribute_name = "group";
    const double tau = 0.07;

    std::map<double, FairClipResult> by_lambda;
    for (const double lambda : {1e-7, 1e-3, 0.5}) {
        cfg.lambda_fair = lambda;
        const auto res = fairclip_loss(batch, groups, cfg, tau);
        CHECK(res.loss == res.clip_component + lambda * map_sum(res.fairness_terms));
        by_lambda[lambda] = res;
    }
    const auto& r1 = by_lambda.at(1e-3);
    const auto& r2 = by_lambda.at(0.5);
    // Same inputs, same solves: the term sums agree and the loss gap is the
    // lambda gap times that sum.
    CHECK(map_sum(r1.fairness_terms) == doctest::Approx(map_sum(r2.fairness_terms)).epsilon(1e-12));
    CHECK(std::abs((r2.loss - r1.loss) - (0.5 - 1e-3) * map_sum(r1.fairness_terms)) < 1e-12);
    CHECK(r2.loss >= r1.loss);
}

TEST_CASE("fairclip gradients match central finite differences") {
    Rng rng(125);
    FairClipConfig cfg;
    cfg.attribute_name = "group";
    // The envelope rule treats the entropic regularizer as a constant of
    // the solve, so the finite-difference comparison pins epsilon in
    // absolute terms; squared cost keeps the objective smooth.
    cfg.sinkhorn.relative_epsilon = false;
    cfg.sinkhorn.epsilon = 0.05;
    cfg.sinkhorn.cost_kind = CostKind::squared;
    cfg.sinkhorn.tolerance = 1e-12;
    cfg.sinkhorn.max_iters = 20000;

    const double tau = 0.07;
    const double h = 1e-5;
    for (int trial = 0; trial < 4; ++trial) {
        // Exercise both the lambda regime the method ships with and one
        // where the transport gradient dominates.
        cfg.lambda_fair = trial % 2 == 0 ? 1e-7 : 0.5;
        cfg.sinkhorn.debias = trial >= 2;
        const auto batch = random_embedding_batch(rng, 8, 4);
        std::map<int, EmbeddingBatch> groups;
        groups[0] = random_embedding_batch(rng, 4, 4);
        groups[1] = random_embedding_batch(rng, 4, 4);

        const auto res = fairclip_loss(batch, groups, cfg, tau);
        const auto loss_at = [&](const EmbeddingBatch& b, const std::map<int, EmbeddingBatch>& g) {
            return fairclip_loss(b, g, cfg, tau).loss;
        };

        const auto check_grad = [&](double analytic, double fd) {
            CHECK(std::abs(analytic - fd) <= 1e-3 * std::max({std::abs(fd), std::abs(analytic), 1e-6}));
        };

        for (Eigen::Index i = 0; i < batch.size(); ++i) {
            for (Eigen::Index c = 0; c < batch.dim(); ++c) {
                auto plus = batch, minus = batch;
                plus.image_embeddings(i, c) += h;
                minus.image_embeddings(i, c) -= h;
                check_grad(res.main.image(i, c),
                           (loss_at(plus, groups) - loss_at(minus, groups)) / (2 * h));
                plus = batch;
                minus = batch;
                plus.text_embeddings(i, c) += h;
                minus.text_embeddings(i, c) -= h;
                check_grad(res.main.text(i, c),
                           (loss_at(plus, groups) - loss_at(minus, groups)) / (2 * h));
            }
        }
        for (const auto& [level, group] : groups) {
            for (Eigen::Index i = 0; i < group.size(); ++i) {
                for (Eigen::Index c = 0; c < group.dim(); ++c) {
                    auto plus = groups, minus = groups;
                    plus[level].image_embeddings(i, c) += h;
                    minus[level].image_embeddings(i, c) -= h;
                    check_grad(res.group.at(level).image(i, c),
                               (loss_at(batch, plus) - loss_at(batch, minus)) / (2 * h));
                    plus = groups;
                    minus = groups;
                    plus[level].text_embeddings(i, c) += h;
                    minus[level].text_embeddings(i, c) -= h;
                    check_grad(res.group.at(level).text(i, c),
                               (loss_at(batch, plus) - loss_at(batch, minus)) / (2 * h));
                }
            }
        }
    }
}
