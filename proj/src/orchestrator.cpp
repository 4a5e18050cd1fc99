#include "flfl/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>

#include "flfl/checkpoint.hpp"
#include "flfl/rng.hpp"

namespace flfl {

namespace {

void require(bool ok, const std::string& field, const std::string& why) {
    if (!ok) throw std::invalid_argument("config field '" + field + "': " + why);
}

std::vector<const Matrix*> sbn_streams(const ExperimentConfig& cfg,
                                       const ExperimentData& data,
                                       const std::vector<int>& selected) {
    std::vector<const Matrix*> streams;
    if (cfg.sbn_scope == SbnScope::All) {
        for (const auto& part : data.partitions) streams.push_back(&part.features);
    } else {
        for (int id : selected) streams.push_back(&data.partitions[static_cast<std::size_t>(id)].features);
    }
    streams.push_back(&data.labeled.features);
    return streams;
}

}  // namespace

void ExperimentConfig::validate() const {
    model.validate();
    require(model.input_dim >= model.num_classes, "input_dim",
            "must be >= num_classes (cluster centers are basis vectors)");
    require(samples_per_class >= 1, "samples_per_class", "must be >= 1");
    require(test_per_class >= 1, "test_per_class", "must be >= 1");
    require(std::isfinite(spread) && spread >= 0.0, "spread", "must be a non-negative real");
    require(num_labeled >= 1, "num_labeled", "must be >= 1");
    const long long pool = static_cast<long long>(model.num_classes) * samples_per_class -
                           num_labeled;
    require(pool >= num_clients, "num_labeled",
            "unlabeled pool must keep at least one sample per client");
    require(num_clients >= 1, "num_clients", "must be >= 1");
    require(clients_per_round >= 1 && clients_per_round <= num_clients,
            "clients_per_round", "must be in [1, num_clients]");
    require(rounds >= 1, "rounds", "must be >= 1");
    require(local_epochs >= 0, "local_epochs", "must be >= 0");
    require(server_epochs >= 0, "server_epochs", "must be >= 0");
    require(client_batch_size >= 1, "client_batch_size", "must be >= 1");
    require(server_batch_size >= 1, "server_batch_size", "must be >= 1");
    require(std::isfinite(optimizer.lr) && optimizer.lr >= 0.0, "lr",
            "must be a non-negative real");
    require(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0, "momentum",
            "must be in [0, 1)");
    require(optimizer.weight_decay >= 0.0, "weight_decay", "must be >= 0");
    require(server_momentum >= 0.0 && server_momentum < 1.0, "server_momentum",
            "must be in [0, 1)");
    require(sacr.rho >= 0.0, "sacr_rho", "must be >= 0");
    require(sacr.tau_f > 0.0 && sacr.tau_f <= 1.0, "sacr_tau_f", "must be in (0, 1]");
    require(sacr.w_a >= 0.0, "w_a", "must be >= 0");
    require(sacr.w_cs >= 0.0, "w_cs", "must be >= 0");
    require(fixed_tau > 0.0 && fixed_tau <= 1.0, "fixed_tau", "must be in (0, 1]");
    if (partition_mode == PartitionMode::Dirichlet) {
        require(dirichlet_alpha > 0.0, "dirichlet_alpha", "must be > 0");
    }
    augment.validate();
    require(workers >= 1, "workers", "must be >= 1");
}

void apply_preset(ExperimentConfig& cfg, const std::string& preset) {
    if (preset == "baseline") {
        cfg.threshold_mode = ThresholdMode::Fixed;
        cfg.fixed_tau = 0.95;
        cfg.aggregation_mode = AggregationMode::Uniform;
        cfg.sacr.mode = SacrConfig::Mode::Off;
    } else if (preset == "cat") {
        cfg.threshold_mode = ThresholdMode::Cat;
        cfg.aggregation_mode = AggregationMode::Uniform;
        cfg.sacr.mode = SacrConfig::Mode::Off;
    } else if (preset == "cat_sacr") {
        cfg.threshold_mode = ThresholdMode::Cat;
        cfg.aggregation_mode = AggregationMode::Uniform;
        cfg.sacr.mode = SacrConfig::Mode::Sacr;
    } else if (preset == "full") {
        cfg.threshold_mode = ThresholdMode::Cat;
        cfg.aggregation_mode = AggregationMode::Lsaa;
        cfg.sacr.mode = SacrConfig::Mode::Sacr;
    } else {
        throw std::invalid_argument("unknown preset '" + preset +
                                    "' (expected baseline|cat|cat_sacr|full)");
    }
}

double cosine_lr(double base_lr, int t, int T) {
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t) /
                                           static_cast<double>(T)));
}

std::vector<int> sample_clients(int num_clients, int k, std::uint64_t seed) {
    if (k < 1 || k > num_clients) {
        throw std::invalid_argument("sample_clients: k must be in [1, num_clients]");
    }
    std::vector<int> ids(static_cast<std::size_t>(num_clients));
    std::iota(ids.begin(), ids.end(), 0);
    std::mt19937_64 rng = make_rng(seed);
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<int> pick(i, num_clients - 1);
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(pick(rng))]);
    }
    ids.resize(static_cast<std::size_t>(k));
    std::sort(ids.begin(), ids.end());
    return ids;
}

ExperimentData build_data(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentData data;

    const auto train = make_blobs(cfg.model.num_classes, cfg.model.input_dim,
                                  cfg.samples_per_class, cfg.spread,
                                  derive_seed(cfg.seed, Stream::Blobs));
    LabelSplit split = split_labels_at_server(train, static_cast<std::size_t>(cfg.num_labeled),
                                              derive_seed(cfg.seed, Stream::LabelSplit));
    data.labeled = std::move(split.labeled);
    data.partitions =
        cfg.partition_mode == PartitionMode::Dirichlet
            ? dirichlet_partition(split.unlabeled, cfg.num_clients, cfg.dirichlet_alpha,
                                  derive_seed(cfg.seed, Stream::Partition))
            : iid_partition(split.unlabeled, cfg.num_clients,
                            derive_seed(cfg.seed, Stream::Partition));

    const auto test = make_blobs(cfg.model.num_classes, cfg.model.input_dim,
                                 cfg.test_per_class, cfg.spread,
                                 derive_seed(cfg.seed, Stream::TestSet));
    data.test_features = Matrix(test.size(), static_cast<std::size_t>(cfg.model.input_dim));
    data.test_labels.resize(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        std::copy(test[i].features.begin(), test[i].features.end(),
                  data.test_features.row(i));
        data.test_labels[i] = test[i].true_label;
    }
    return data;
}

RoundMetrics run_round(RoundState& state, const ExperimentConfig& cfg,
                       const ExperimentData& data, RunStats& stats) {
    const int t = state.round;
    state.lr = cfg.cosine_schedule ? cosine_lr(cfg.optimizer.lr, t, cfg.rounds)
                                   : cfg.optimizer.lr;
    OptimizerConfig round_opt = cfg.optimizer;
    round_opt.lr = state.lr;

    // (1) supervised server update on the labeled set
    if (cfg.server_epochs > 0) {
        state.global = server_finetune(
            cfg.model, state.global, state.bn, data.labeled, cfg.server_epochs,
            cfg.server_batch_size, round_opt, cfg.augment,
            derive_seed(cfg.seed, Stream::ServerFinetune, static_cast<std::uint64_t>(t)));
    }

    // (2) statistics refresh, (3) client sampling. With the default
    // all-clients scope the refresh precedes sampling; the selected-only
    // scope has to know the sample first.
    std::vector<int> selected;
    if (cfg.sbn_scope == SbnScope::All) {
        state.bn = sbn_recompute(cfg.model, state.global, sbn_streams(cfg, data, selected));
        selected = sample_clients(
            cfg.num_clients, cfg.clients_per_round,
            derive_seed(cfg.seed, Stream::ClientSampling, static_cast<std::uint64_t>(t)));
    } else {
        selected = sample_clients(
            cfg.num_clients, cfg.clients_per_round,
            derive_seed(cfg.seed, Stream::ClientSampling, static_cast<std::uint64_t>(t)));
        state.bn = sbn_recompute(cfg.model, state.global, sbn_streams(cfg, data, selected));
    }

    // (4) pseudo-label, threshold and train each selected client
    struct ClientWork {
        PseudoLabelTable table;
        ClientThresholds thresholds;
        std::vector<std::uint8_t> mask;
        ClientTrainReport report;
        bool used_cat = false;
        std::string error;
    };
    const std::size_t K = selected.size();
    std::vector<ClientWork> work(K);

    auto run_client = [&](std::size_t i) {
        ClientWork& w = work[i];
        const int id = selected[i];
        try {
            const ClientPartition& part = data.partitions[static_cast<std::size_t>(id)];
            w.table = generate_pseudo_labels(
                cfg.model, state.global, state.bn, part.features, cfg.augment,
                cfg.pseudo_label_weak_view,
                derive_seed(cfg.seed, Stream::PseudoLabels, static_cast<std::uint64_t>(t),
                            static_cast<std::uint64_t>(id)));
            if (cfg.threshold_mode == ThresholdMode::Cat) {
                w.thresholds = compute_thresholds(w.table, cfg.model.num_classes);
                w.used_cat = true;
            } else {
                w.thresholds = fixed_thresholds(cfg.fixed_tau, cfg.model.num_classes);
            }
            w.mask = threshold_mask(w.table, w.thresholds);
            const std::vector<int>* oracle =
                cfg.sacr.oracle_correct_only ? &part.hidden_labels : nullptr;
            w.report = client_local_train(
                cfg.model, state.global, state.bn, part.features, w.table, w.thresholds,
                cfg.sacr, round_opt, cfg.augment, cfg.local_epochs, cfg.client_batch_size,
                derive_seed(cfg.seed, Stream::ClientTrain, static_cast<std::uint64_t>(t),
                            static_cast<std::uint64_t>(id)),
                oracle);
        } catch (const std::exception& e) {
            w.error = e.what();
        }
    };

    const int nworkers = std::min<int>(cfg.workers, static_cast<int>(K));
    if (nworkers <= 1) {
        for (std::size_t i = 0; i < K; ++i) run_client(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(nworkers));
        for (int wi = 0; wi < nworkers; ++wi) {
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < K; i = next.fetch_add(1)) {
                    run_client(i);
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    for (std::size_t i = 0; i < K; ++i) {
        if (!work[i].error.empty()) {
            throw std::runtime_error("round " + std::to_string(t) + " client " +
                                     std::to_string(selected[i]) + ": " + work[i].error);
        }
        if (work[i].used_cat) ++stats.cat_profile_calls;
    }

    // (5) status-aware aggregation and the server momentum step
    std::vector<double> taus(K);
    std::vector<ParamVector> client_params(K);
    for (std::size_t i = 0; i < K; ++i) {
        taus[i] = work[i].report.tau;
        client_params[i] = std::move(work[i].report.params);
    }
    AggregationWeights weights;
    if (cfg.aggregation_mode == AggregationMode::Lsaa) {
        ++stats.lsaa_weight_calls;
        weights = lsaa_weights(taus);
    } else {
        weights = uniform_weights(K);
    }
    const ParamVector aggregated = aggregate(client_params, weights);
    state.global = server_momentum_step(state.opt, state.global, aggregated);

    // (6) evaluate with fresh statistics at the new global weights
    state.bn = sbn_recompute(cfg.model, state.global, sbn_streams(cfg, data, selected));
    const double acc = test_accuracy(cfg.model, state.global, state.bn,
                                     data.test_features, data.test_labels);

    // (7) round record
    std::vector<ClientRoundObservation> obs(K);
    for (std::size_t i = 0; i < K; ++i) {
        obs[i].table = &work[i].table;
        obs[i].mask = &work[i].mask;
        obs[i].hidden_labels =
            &data.partitions[static_cast<std::size_t>(selected[i])].hidden_labels;
    }
    const PseudoLabelSummary summary = pseudo_label_metrics(obs);

    RoundMetrics rec;
    rec.round = t;
    rec.test_accuracy = acc;
    rec.pseudo_label_accuracy = summary.pseudo_label_accuracy;
    rec.label_ratio = summary.label_ratio;
    rec.correct_label_ratio = summary.correct_ratio;
    rec.wrong_label_ratio = summary.wrong_ratio;
    rec.cw_ratio = summary.cw_ratio;
    rec.taus = taus;
    rec.betas = weights.beta;
    double la = 0.0, lcs = 0.0;
    for (const auto& w : work) {
        la += w.report.mean_la;
        lcs += w.report.mean_lcs;
    }
    rec.mean_la = la / static_cast<double>(K);
    rec.mean_lcs = lcs / static_cast<double>(K);

    state.round = t + 1;
    return rec;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const ExperimentData data = build_data(cfg);

    RoundState state;
    state.global = init_params(cfg.model, derive_seed(cfg.seed, Stream::InitParams));
    state.bn = BnStats::identity(cfg.model);
    state.opt = ServerOptState::init(state.global.size(), cfg.server_momentum);

    RunResult result;
    std::optional<MetricsWriter> writer;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        writer.emplace(cfg.out_dir + "/metrics.csv");
    }
    for (int t = 0; t < cfg.rounds; ++t) {
        RoundMetrics rec = run_round(state, cfg, data, result.stats);
        if (writer) writer->append(rec);
        result.metrics.push_back(std::move(rec));
    }
    result.final_params = state.global;
    result.final_bn = state.bn;
    if (!cfg.out_dir.empty()) {
        save_checkpoint(cfg.out_dir + "/final.ckpt", result.final_params, result.final_bn);
    }
    return result;
}

}  // namespace flfl
