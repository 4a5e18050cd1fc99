#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "flfl/data.hpp"
#include "flfl/metrics.hpp"
#include "flfl/nn.hpp"
#include "flfl/rng.hpp"

using namespace flfl;

namespace {

struct ObservationStore {
    std::vector<PseudoLabelTable> tables;
    std::vector<std::vector<std::uint8_t>> masks;
    std::vector<std::vector<int>> labels;

    std::vector<ClientRoundObservation> view() const {
        std::vector<ClientRoundObservation> obs(tables.size());
        for (std::size_t i = 0; i < tables.size(); ++i) {
            obs[i] = {&tables[i], &masks[i], &labels[i]};
        }
        return obs;
    }
};

// One client with given per-sample (masked, correct) states; probabilities
// are synthesized to match the requested hard labels.
void add_client(ObservationStore& store, const std::vector<std::uint8_t>& mask,
                const std::vector<std::uint8_t>& correct, int num_classes) {
    PseudoLabelTable t;
    const std::size_t n = mask.size();
    t.probs = Matrix(n, num_classes, 0.0);
    t.hard_label.resize(n);
    t.confidence.resize(n);
    std::vector<int> truth(n);
    for (std::size_t i = 0; i < n; ++i) {
        t.hard_label[i] = 0;
        t.probs(i, 0) = 0.9;
        t.confidence[i] = 0.9;
        truth[i] = correct[i] ? 0 : 1;
    }
    store.tables.push_back(std::move(t));
    store.masks.push_back(mask);
    store.labels.push_back(std::move(truth));
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

RoundMetrics random_record(std::mt19937_64& rng, int round, std::size_t k) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RoundMetrics r;
    r.round = round;
    r.test_accuracy = u(rng);
    r.pseudo_label_accuracy = u(rng);
    r.label_ratio = u(rng);
    r.correct_label_ratio = u(rng);
    r.wrong_label_ratio = u(rng);
    r.cw_ratio = u(rng) * 10.0;
    r.mean_la = u(rng) * 3.0;
    r.mean_lcs = u(rng);
    r.taus.resize(k);
    r.betas.resize(k);
    for (double& v : r.taus) v = u(rng);
    for (double& v : r.betas) v = u(rng);
    return r;
}

bool same_record(const RoundMetrics& a, const RoundMetrics& b) {
    auto eq = [](double x, double y) {
        return (std::isnan(x) && std::isnan(y)) || x == y;
    };
    return a.round == b.round && eq(a.test_accuracy, b.test_accuracy) &&
           eq(a.pseudo_label_accuracy, b.pseudo_label_accuracy) &&
           eq(a.label_ratio, b.label_ratio) &&
           eq(a.correct_label_ratio, b.correct_label_ratio) &&
           eq(a.wrong_label_ratio, b.wrong_label_ratio) &&
           eq(a.cw_ratio, b.cw_ratio) && eq(a.mean_la, b.mean_la) &&
           eq(a.mean_lcs, b.mean_lcs) && a.taus == b.taus && a.betas == b.betas;
}

}  // namespace

TEST_CASE("pseudo-label bookkeeping") {
    SUBCASE("ten samples, six masked, four correct") {
        ObservationStore store;
        // client A: 6 samples, 4 masked of which 3 correct
        add_client(store, {1, 1, 1, 1, 0, 0}, {1, 1, 1, 0, 1, 0}, 3);
        // client B: 4 samples, 2 masked of which 1 correct
        add_client(store, {1, 1, 0, 0}, {1, 0, 0, 1}, 3);
        PseudoLabelSummary s = pseudo_label_metrics(store.view());
        CHECK(s.pseudo_label_accuracy == doctest::Approx(4.0 / 6.0).epsilon(1e-15));
        CHECK(s.label_ratio == 0.6);
        CHECK(s.correct_ratio == 0.4);
        CHECK(s.wrong_ratio == 0.2);
        CHECK(s.cw_ratio == 2.0);
    }

    SUBCASE("an empty mask yields zeros, not NaNs") {
        ObservationStore store;
        add_client(store, {0, 0, 0}, {1, 1, 0}, 3);
        PseudoLabelSummary s = pseudo_label_metrics(store.view());
        CHECK(s.pseudo_label_accuracy == 0.0);
        CHECK(s.label_ratio == 0.0);
        CHECK(s.correct_ratio == 0.0);
        CHECK(s.wrong_ratio == 0.0);
        CHECK(s.cw_ratio == 0.0);
    }

    SUBCASE("all masked labels correct sends the ratio to infinity") {
        ObservationStore store;
        add_client(store, {1, 1, 0}, {1, 1, 0}, 3);
        PseudoLabelSummary s = pseudo_label_metrics(store.view());
        CHECK(std::isinf(s.cw_ratio));
        CHECK(s.cw_ratio > 0.0);
        CHECK(s.pseudo_label_accuracy == 1.0);
    }

    SUBCASE("identities hold on random observations") {
        std::mt19937_64 rng = make_rng(71);
        std::uniform_int_distribution<int> nd(1, 20);
        std::uniform_int_distribution<int> kd(1, 6);
        std::bernoulli_distribution coin(0.6);
        for (int trial = 0; trial < 200; ++trial) {
            ObservationStore store;
            const int k = kd(rng);
            for (int c = 0; c < k; ++c) {
                const int n = nd(rng);
                std::vector<std::uint8_t> mask(n), correct(n);
                for (int i = 0; i < n; ++i) {
                    mask[i] = coin(rng) ? 1 : 0;
                    correct[i] = coin(rng) ? 1 : 0;
                }
                add_client(store, mask, correct, 4);
            }
            PseudoLabelSummary s = pseudo_label_metrics(store.view());
            CHECK(std::fabs(s.correct_ratio + s.wrong_ratio - s.label_ratio) <=
                  1e-12);
            CHECK(std::fabs(s.pseudo_label_accuracy * s.label_ratio -
                            s.correct_ratio) <= 1e-12);
            if (s.wrong_ratio > 0.0) {
                CHECK(std::fabs(s.cw_ratio -
                                s.correct_ratio / s.wrong_ratio) <= 1e-9);
            }
        }
    }

    SUBCASE("inconsistent observations are rejected") {
        ObservationStore store;
        add_client(store, {1, 0}, {1, 0}, 3);
        store.masks[0].push_back(1);  // mask longer than the table
        CHECK_THROWS_AS(pseudo_label_metrics(store.view()),
                        std::invalid_argument);
        CHECK_THROWS_AS(pseudo_label_metrics({}), std::invalid_argument);
    }
}

TEST_CASE("test-set accuracy") {
    SUBCASE("zero weights predict one class everywhere") {
        const ModelSpec spec{4, {6}, 4, true, Activation::Relu};
        ParamVector w = ParamVector::zeros(spec.param_count());
        BnStats bn = BnStats::identity(spec);
        auto ds = make_blobs(4, 4, 25, 0.2, 3);
        Matrix x(ds.size(), 4);
        std::vector<int> y(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) {
            std::copy(ds[i].features.begin(), ds[i].features.end(), x.row(i));
            y[i] = ds[i].true_label;
        }
        // balanced classes, constant argmax 0 -> exactly 1/C
        CHECK(test_accuracy(spec, w, bn, x, y) == 0.25);
    }

    SUBCASE("matches a hand loop on a trained model") {
        const ModelSpec spec{4, {8}, 3, false, Activation::Tanh};
        auto ds = make_blobs(3, 4, 15, 0.4, 5);
        Matrix x(ds.size(), 4);
        std::vector<int> y(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) {
            std::copy(ds[i].features.begin(), ds[i].features.end(), x.row(i));
            y[i] = ds[i].true_label;
        }
        ParamVector w = init_params(spec, 12);
        BnStats bn = BnStats::identity(spec);
        ForwardCache cache = forward(spec, w, bn, x, BnMode::Eval);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < x.rows; ++i) {
            const double* p = cache.probs.row(i);
            std::size_t best = 0;
            for (std::size_t c = 1; c < 3; ++c) {
                if (p[c] > p[best]) best = c;
            }
            if (static_cast<int>(best) == y[i]) ++hits;
        }
        const double want = static_cast<double>(hits) / static_cast<double>(x.rows);
        CHECK(test_accuracy(spec, w, bn, x, y) == want);
    }

    SUBCASE("label/feature mismatch is rejected") {
        const ModelSpec spec{4, {6}, 3, true, Activation::Relu};
        ParamVector w = init_params(spec, 1);
        BnStats bn = BnStats::identity(spec);
        Matrix x(3, 4);
        std::vector<int> y = {0, 1};
        CHECK_THROWS_AS(test_accuracy(spec, w, bn, x, y), std::invalid_argument);
    }
}

TEST_CASE("metrics lines and headers") {
    SUBCASE("header names every column in order") {
        CHECK(metrics_header(2) ==
              "round,test_accuracy,pseudo_label_accuracy,label_ratio,"
              "correct_label_ratio,wrong_label_ratio,cw_ratio,mean_la,mean_lcs,"
              "tau_0,tau_1,beta_0,beta_1");
        CHECK(metrics_header(0) ==
              "round,test_accuracy,pseudo_label_accuracy,label_ratio,"
              "correct_label_ratio,wrong_label_ratio,cw_ratio,mean_la,mean_lcs");
    }

    SUBCASE("a line has one field per header column") {
        std::mt19937_64 rng = make_rng(7);
        RoundMetrics r = random_record(rng, 3, 4);
        std::string line = format_metrics_line(r);
        std::size_t commas = 0;
        for (char c : line) commas += (c == ',');
        CHECK(commas == 9 + 2 * 4 - 1);
        CHECK(line.substr(0, 2) == "3,");
    }

    SUBCASE("infinities print as parseable tokens") {
        RoundMetrics r;
        r.cw_ratio = std::numeric_limits<double>::infinity();
        std::string line = format_metrics_line(r);
        CHECK(line.find(",inf,") != std::string::npos);
    }
}

TEST_CASE("metrics files round-trip bit-exactly") {
    std::mt19937_64 rng = make_rng(99);

    SUBCASE("batch write and read") {
        const std::string path = temp_path("flfl_metrics_roundtrip.csv");
        std::vector<RoundMetrics> recs;
        for (int t = 0; t < 12; ++t) recs.push_back(random_record(rng, t, 3));
        recs[4].cw_ratio = std::numeric_limits<double>::infinity();
        recs[7].cw_ratio = 0.0;
        write_metrics(path, recs);

        std::vector<RoundMetrics> back = read_metrics(path);
        REQUIRE(back.size() == recs.size());
        for (std::size_t i = 0; i < recs.size(); ++i) {
            CAPTURE(i);
            CHECK(same_record(recs[i], back[i]));
        }
        std::remove(path.c_str());
    }

    SUBCASE("file holds one header plus one line per round") {
        const std::string path = temp_path("flfl_metrics_lines.csv");
        std::vector<RoundMetrics> recs;
        for (int t = 0; t < 5; ++t) recs.push_back(random_record(rng, t, 2));
        write_metrics(path, recs);
        std::ifstream in(path);
        std::string line;
        std::size_t lines = 0;
        while (std::getline(in, line)) {
            if (!line.empty()) ++lines;
        }
        CHECK(lines == 6);
        std::remove(path.c_str());
    }

    SUBCASE("incremental writer matches the batch writer") {
        const std::string batch = temp_path("flfl_metrics_batch.csv");
        const std::string incr = temp_path("flfl_metrics_incr.csv");
        std::vector<RoundMetrics> recs;
        for (int t = 0; t < 7; ++t) recs.push_back(random_record(rng, t, 2));
        write_metrics(batch, recs);
        {
            MetricsWriter w(incr);
            for (const auto& r : recs) w.append(r);
        }
        std::ifstream a(batch), b(incr);
        std::string sa((std::istreambuf_iterator<char>(a)),
                       std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)),
                       std::istreambuf_iterator<char>());
        CHECK(sa == sb);
        std::remove(batch.c_str());
        std::remove(incr.c_str());
    }

    SUBCASE("the incremental writer rejects a changing client count") {
        const std::string path = temp_path("flfl_metrics_badk.csv");
        MetricsWriter w(path);
        std::mt19937_64 r2 = make_rng(1);
        w.append(random_record(r2, 0, 3));
        CHECK_THROWS_AS(w.append(random_record(r2, 1, 2)), std::invalid_argument);
        std::remove(path.c_str());
    }

    SUBCASE("empty record lists produce a header-only file") {
        const std::string path = temp_path("flfl_metrics_empty.csv");
        write_metrics(path, {});
        std::vector<RoundMetrics> back = read_metrics(path);
        CHECK(back.empty());
        std::remove(path.c_str());
    }

    SUBCASE("a missing file is an error") {
        CHECK_THROWS_AS(read_metrics(temp_path("flfl_no_such_file.csv")),
                        std::runtime_error);
    }

    SUBCASE("a mangled line is an error") {
        const std::string path = temp_path("flfl_metrics_mangled.csv");
        {
            std::ofstream out(path);
            out << metrics_header(1) << "\n";
            out << "0,0.5,0.5,0.5,0.25,0.25,1.0,0.1\n";  // too few fields
        }
        CHECK_THROWS_AS(read_metrics(path), std::runtime_error);
        std::remove(path.c_str());
    }
}
