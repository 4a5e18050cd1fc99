#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "flfl/aggregation.hpp"
#include "flfl/nn.hpp"
#include "flfl/rng.hpp"

using namespace flfl;

namespace {

Matrix random_batch(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                    double scale = 1.0) {
    Matrix m(rows, cols);
    std::normal_distribution<double> dist(0.0, scale);
    for (double& v : m.data) v = dist(rng);
    return m;
}

ParamVector random_params(std::size_t n, std::mt19937_64& rng) {
    ParamVector w = ParamVector::zeros(n);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) w[i] = dist(rng);
    return w;
}

}  // namespace

TEST_CASE("learning-status weights") {
    SUBCASE("two equally uncertain clients share evenly") {
        AggregationWeights w = lsaa_weights({0.5, 0.5});
        REQUIRE(w.beta.size() == 2);
        CHECK(w.beta[0] == 0.5);
        CHECK(w.beta[1] == 0.5);
    }

    SUBCASE("three-client worked example") {
        // 1 - tau: 0.1, 0.3, 0.2 over a total of 0.6
        AggregationWeights w = lsaa_weights({0.9, 0.7, 0.8});
        REQUIRE(w.beta.size() == 3);
        CHECK(w.beta[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
        CHECK(w.beta[1] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(w.beta[2] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }

    SUBCASE("fully confident clients fall back to uniform") {
        AggregationWeights w = lsaa_weights({1.0, 1.0, 1.0, 1.0});
        for (double b : w.beta) CHECK(b == 0.25);
    }

    SUBCASE("weights form a convex combination") {
        std::mt19937_64 rng = make_rng(5);
        std::uniform_real_distribution<double> taud(0.0, 1.0);
        std::uniform_int_distribution<std::size_t> kd(1, 12);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> taus(kd(rng));
            for (double& t : taus) t = taud(rng);
            AggregationWeights w = lsaa_weights(taus);
            double sum = std::accumulate(w.beta.begin(), w.beta.end(), 0.0);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
            for (double b : w.beta) CHECK(b >= 0.0);
        }
    }

    SUBCASE("permuting the clients permutes the weights") {
        std::vector<double> taus = {0.2, 0.9, 0.55, 0.7};
        AggregationWeights a = lsaa_weights(taus);
        std::vector<double> perm = {0.55, 0.2, 0.7, 0.9};
        AggregationWeights b = lsaa_weights(perm);
        // the denominator is summed in a different order, so compare within
        // an ulp-scale tolerance
        CHECK(a.beta[0] == doctest::Approx(b.beta[1]).epsilon(1e-15));
        CHECK(a.beta[1] == doctest::Approx(b.beta[3]).epsilon(1e-15));
        CHECK(a.beta[2] == doctest::Approx(b.beta[0]).epsilon(1e-15));
        CHECK(a.beta[3] == doctest::Approx(b.beta[2]).epsilon(1e-15));
    }

    SUBCASE("lowering one client's confidence raises its weight") {
        std::vector<double> taus = {0.6, 0.7, 0.8};
        AggregationWeights before = lsaa_weights(taus);
        taus[1] = 0.4;
        AggregationWeights after = lsaa_weights(taus);
        CHECK(after.beta[1] > before.beta[1]);
        CHECK(after.beta[0] < before.beta[0]);
        CHECK(after.beta[2] < before.beta[2]);
    }

    SUBCASE("out-of-range confidence is rejected") {
        CHECK_THROWS_AS(lsaa_weights({0.5, -0.01}), std::invalid_argument);
        CHECK_THROWS_AS(lsaa_weights({1.01}), std::invalid_argument);
        CHECK_THROWS_AS(lsaa_weights({}), std::invalid_argument);
    }
}

TEST_CASE("uniform weights") {
    AggregationWeights w = uniform_weights(4);
    REQUIRE(w.beta.size() == 4);
    for (double b : w.beta) CHECK(b == 0.25);
    CHECK_THROWS_AS(uniform_weights(0), std::invalid_argument);
}

TEST_CASE("weighted parameter aggregation") {
    std::mt19937_64 rng = make_rng(17);

    SUBCASE("a single client passes through unchanged") {
        ParamVector w = random_params(20, rng);
        AggregationWeights one{{1.0}};
        ParamVector out = aggregate({w}, one);
        CHECK(out.values == w.values);
    }

    SUBCASE("identical clients aggregate to themselves") {
        ParamVector w = random_params(15, rng);
        AggregationWeights wts = uniform_weights(3);
        ParamVector out = aggregate({w, w, w}, wts);
        for (std::size_t i = 0; i < w.size(); ++i) {
            CHECK(out[i] == doctest::Approx(w[i]).epsilon(1e-12));
        }
    }

    SUBCASE("uniform weights give the elementwise mean") {
        std::vector<ParamVector> clients;
        for (int k = 0; k < 5; ++k) clients.push_back(random_params(30, rng));
        ParamVector out = aggregate(clients, uniform_weights(5));
        for (std::size_t i = 0; i < 30; ++i) {
            double mean = 0.0;
            for (const auto& c : clients) mean += c[i];
            mean /= 5.0;
            CHECK(out[i] == doctest::Approx(mean).epsilon(1e-12));
        }
    }

    SUBCASE("aggregation is linear in the weights") {
        std::vector<ParamVector> clients = {random_params(10, rng),
                                            random_params(10, rng)};
        AggregationWeights wts{{0.25, 0.75}};
        ParamVector out = aggregate(clients, wts);
        for (std::size_t i = 0; i < 10; ++i) {
            CHECK(out[i] == doctest::Approx(0.25 * clients[0][i] +
                                            0.75 * clients[1][i])
                                .epsilon(1e-12));
        }
    }

    SUBCASE("mismatched inputs are rejected") {
        std::vector<ParamVector> clients = {random_params(10, rng),
                                            random_params(11, rng)};
        CHECK_THROWS_AS(aggregate(clients, uniform_weights(2)),
                        std::invalid_argument);
        std::vector<ParamVector> ok = {random_params(10, rng)};
        CHECK_THROWS_AS(aggregate(ok, uniform_weights(2)),
                        std::invalid_argument);
        CHECK_THROWS_AS(aggregate({}, uniform_weights(1)),
                        std::invalid_argument);
    }
}

TEST_CASE("server momentum step") {
    std::mt19937_64 rng = make_rng(23);
    ParamVector global = random_params(12, rng);
    ParamVector aggregated = random_params(12, rng);

    SUBCASE("the first round lands exactly on the aggregate") {
        ServerOptState st = ServerOptState::init(12, 0.5);
        ParamVector out = server_momentum_step(st, global, aggregated);
        for (std::size_t i = 0; i < 12; ++i) {
            CHECK(out[i] == doctest::Approx(aggregated[i]).epsilon(1e-12));
        }
    }

    SUBCASE("zero momentum always lands on the aggregate") {
        ServerOptState st = ServerOptState::init(12, 0.0);
        (void)server_momentum_step(st, global, aggregated);
        ParamVector g2 = random_params(12, rng);
        ParamVector a2 = random_params(12, rng);
        ParamVector out = server_momentum_step(st, g2, a2);
        for (std::size_t i = 0; i < 12; ++i) {
            CHECK(out[i] == doctest::Approx(a2[i]).epsilon(1e-12));
        }
    }

    SUBCASE("a constant difference compounds by the momentum factor") {
        // velocity after two identical deltas: delta * (1 + momentum)
        ServerOptState st = ServerOptState::init(12, 0.5);
        ParamVector delta = random_params(12, rng);
        ParamVector g1 = global;
        ParamVector a1 = param_axpy(1.0, delta, g1);
        ParamVector g2 = server_momentum_step(st, g1, a1);
        for (std::size_t i = 0; i < 12; ++i) {
            CHECK(g2[i] == doctest::Approx(g1[i] + delta[i]).epsilon(1e-12));
        }
        ParamVector a2 = param_axpy(1.0, delta, g2);
        ParamVector g3 = server_momentum_step(st, g2, a2);
        for (std::size_t i = 0; i < 12; ++i) {
            CHECK(g3[i] ==
                  doctest::Approx(g2[i] + 1.5 * delta[i]).epsilon(1e-12));
        }
    }

    SUBCASE("length mismatches are rejected") {
        ServerOptState st = ServerOptState::init(12, 0.5);
        ParamVector small = random_params(5, rng);
        CHECK_THROWS_AS(server_momentum_step(st, global, small),
                        std::invalid_argument);
        CHECK_THROWS_AS(server_momentum_step(st, small, small),
                        std::invalid_argument);
    }
}

TEST_CASE("static batch statistics from a full-stream pass") {
    std::mt19937_64 rng = make_rng(31);

    SUBCASE("an identity first layer reads back the data statistics") {
        // W = I, b = 0: the first BN layer sees the raw features
        const ModelSpec spec{3, {3}, 2, true, Activation::Relu};
        ParamVector w = ParamVector::zeros(spec.param_count());
        w[0] = w[4] = w[8] = 1.0;  // identity 3x3 (row-major)
        Matrix stream = random_batch(40, 3, rng);

        BnStats stats = sbn_recompute(spec, w, {&stream});
        REQUIRE(stats.mean.size() == 1);
        REQUIRE(stats.mean[0].size() == 3);
        CHECK(stats.sample_count == 40);
        for (std::size_t j = 0; j < 3; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < 40; ++i) mean += stream(i, j);
            mean /= 40.0;
            double var = 0.0;
            for (std::size_t i = 0; i < 40; ++i) {
                var += (stream(i, j) - mean) * (stream(i, j) - mean);
            }
            var /= 40.0;  // biased, matching train-mode normalization
            CHECK(stats.mean[0][j] == doctest::Approx(mean).epsilon(1e-9));
            CHECK(stats.var[0][j] == doctest::Approx(var).epsilon(1e-9));
        }
    }

    SUBCASE("recomputing twice is bit-identical") {
        const ModelSpec spec{4, {6, 5}, 3, true, Activation::Relu};
        ParamVector w = init_params(spec, 3);
        Matrix a = random_batch(9, 4, rng);
        Matrix b = random_batch(14, 4, rng);
        BnStats s1 = sbn_recompute(spec, w, {&a, &b});
        BnStats s2 = sbn_recompute(spec, w, {&a, &b});
        CHECK(s1.mean == s2.mean);
        CHECK(s1.var == s2.var);
        CHECK(s1.sample_count == s2.sample_count);
    }

    SUBCASE("many streams equal one concatenated stream") {
        const ModelSpec spec{4, {6}, 3, true, Activation::Tanh};
        ParamVector w = init_params(spec, 4);
        Matrix a = random_batch(7, 4, rng);
        Matrix b = random_batch(12, 4, rng);
        Matrix c = random_batch(5, 4, rng);
        Matrix all(24, 4);
        std::copy(a.data.begin(), a.data.end(), all.data.begin());
        std::copy(b.data.begin(), b.data.end(), all.data.begin() + 7 * 4);
        std::copy(c.data.begin(), c.data.end(), all.data.begin() + 19 * 4);

        BnStats split = sbn_recompute(spec, w, {&a, &b, &c});
        BnStats whole = sbn_recompute(spec, w, {&all});
        REQUIRE(split.mean.size() == whole.mean.size());
        for (std::size_t l = 0; l < split.mean.size(); ++l) {
            for (std::size_t j = 0; j < split.mean[l].size(); ++j) {
                CHECK(split.mean[l][j] ==
                      doctest::Approx(whole.mean[l][j]).epsilon(1e-9));
                CHECK(split.var[l][j] ==
                      doctest::Approx(whole.var[l][j]).epsilon(1e-9));
            }
        }
        CHECK(split.sample_count == 24);
    }

    SUBCASE("stream order does not matter") {
        const ModelSpec spec{4, {6}, 3, true, Activation::Relu};
        ParamVector w = init_params(spec, 5);
        Matrix a = random_batch(8, 4, rng);
        Matrix b = random_batch(11, 4, rng);
        BnStats ab = sbn_recompute(spec, w, {&a, &b});
        BnStats ba = sbn_recompute(spec, w, {&b, &a});
        for (std::size_t l = 0; l < ab.mean.size(); ++l) {
            for (std::size_t j = 0; j < ab.mean[l].size(); ++j) {
                CHECK(ab.mean[l][j] ==
                      doctest::Approx(ba.mean[l][j]).epsilon(1e-9));
                CHECK(ab.var[l][j] ==
                      doctest::Approx(ba.var[l][j]).epsilon(1e-9));
            }
        }
    }

    SUBCASE("deeper layers match a manual two-stage trace") {
        // second BN layer statistics recomputed by hand from the first
        // layer's giant-batch activations
        const ModelSpec spec{3, {4, 4}, 2, true, Activation::Relu};
        ParamVector w = init_params(spec, 6);
        Matrix stream = random_batch(30, 3, rng);
        BnStats stats = sbn_recompute(spec, w, {&stream});

        ForwardCache cache = forward(spec, w, BnStats::identity(spec), stream,
                                     BnMode::Train);
        REQUIRE(cache.layers.size() == 2);
        const Matrix& lin2 = cache.layers[1].linear_out;
        for (std::size_t j = 0; j < 4; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < 30; ++i) mean += lin2(i, j);
            mean /= 30.0;
            CHECK(stats.mean[1][j] == doctest::Approx(mean).epsilon(1e-9));
        }
    }

    SUBCASE("a model without normalization yields empty statistics") {
        const ModelSpec spec{4, {6}, 3, false, Activation::Relu};
        ParamVector w = init_params(spec, 7);
        Matrix a = random_batch(10, 4, rng);
        BnStats stats = sbn_recompute(spec, w, {&a});
        CHECK(stats.mean.empty());
        CHECK(stats.var.empty());
        CHECK(stats.sample_count == 10);
    }

    SUBCASE("empty inputs are rejected") {
        const ModelSpec spec{4, {6}, 3, true, Activation::Relu};
        ParamVector w = init_params(spec, 8);
        CHECK_THROWS_AS(sbn_recompute(spec, w, {}), std::invalid_argument);
        Matrix none(0, 4);
        CHECK_THROWS_AS(sbn_recompute(spec, w, {&none}), std::invalid_argument);
    }
}
