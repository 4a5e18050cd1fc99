#include "flfl/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace flfl {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& origin, const std::string& msg) {
    throw std::invalid_argument("config " + origin + ": " + msg);
}

class Reader {
  public:
    Reader(const json& j, std::string origin) : j_(j), origin_(std::move(origin)) {
        if (!j_.is_object()) fail(origin_, "top level must be a JSON object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        if (!has(key)) return fallback;
        return read<T>(key);
    }

    template <typename T>
    T require(const std::string& key) {
        if (!has(key)) fail(origin_, "missing required field '" + key + "'");
        return read<T>(key);
    }

    void reject_unknown() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) {
                fail(origin_, "unknown field '" + item.key() + "'");
            }
        }
    }

  private:
    template <typename T>
    T read(const std::string& key) {
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception& e) {
            fail(origin_, "field '" + key + "': " + e.what());
        }
    }

    const json& j_;
    std::string origin_;
    std::set<std::string> seen_;
};

Activation parse_activation(const std::string& s, const std::string& origin) {
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    fail(origin, "field 'activation': expected relu|tanh, got '" + s + "'");
}

DistanceKind parse_distance(const std::string& s, const std::string& origin) {
    if (s == "kl") return DistanceKind::Kl;
    if (s == "l2") return DistanceKind::L2;
    fail(origin, "field 'ell_d': expected kl|l2, got '" + s + "'");
}

SacrConfig::Mode parse_sacr_mode(const std::string& s, const std::string& origin) {
    if (s == "sacr") return SacrConfig::Mode::Sacr;
    if (s == "standard_sam") return SacrConfig::Mode::StandardSam;
    if (s == "off") return SacrConfig::Mode::Off;
    fail(origin, "field 'sacr_mode': expected sacr|standard_sam|off, got '" + s + "'");
}

ThresholdMode parse_threshold_mode(const std::string& s, const std::string& origin) {
    if (s == "cat") return ThresholdMode::Cat;
    if (s == "fixed") return ThresholdMode::Fixed;
    fail(origin, "field 'threshold_mode': expected cat|fixed, got '" + s + "'");
}

AggregationMode parse_aggregation_mode(const std::string& s, const std::string& origin) {
    if (s == "lsaa") return AggregationMode::Lsaa;
    if (s == "uniform") return AggregationMode::Uniform;
    fail(origin, "field 'aggregation_mode': expected lsaa|uniform, got '" + s + "'");
}

PartitionMode parse_partition_mode(const std::string& s, const std::string& origin) {
    if (s == "dirichlet") return PartitionMode::Dirichlet;
    if (s == "iid") return PartitionMode::Iid;
    fail(origin, "field 'partition_mode': expected dirichlet|iid, got '" + s + "'");
}

SbnScope parse_sbn_scope(const std::string& s, const std::string& origin) {
    if (s == "all") return SbnScope::All;
    if (s == "selected") return SbnScope::Selected;
    fail(origin, "field 'sbn_scope': expected all|selected, got '" + s + "'");
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text, const std::string& origin) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        fail(origin, std::string("invalid JSON: ") + e.what());
    }
    Reader r(j, origin);
    ExperimentConfig cfg;

    cfg.model.num_classes = r.require<int>("num_classes");
    cfg.model.input_dim = r.require<int>("input_dim");
    cfg.samples_per_class = r.require<int>("samples_per_class");
    cfg.spread = r.require<double>("spread");
    cfg.num_labeled = r.require<int>("num_labeled");

    cfg.model.hidden_dims = r.get<std::vector<int>>("hidden_dims", {64, 64});
    cfg.model.use_batch_norm = r.get<bool>("use_batch_norm", true);
    cfg.model.activation =
        parse_activation(r.get<std::string>("activation", "relu"), origin);

    cfg.test_per_class = r.get<int>("test_per_class", cfg.test_per_class);
    cfg.num_clients = r.get<int>("num_clients", cfg.num_clients);
    cfg.clients_per_round = r.get<int>("clients_per_round", cfg.clients_per_round);
    cfg.rounds = r.get<int>("rounds", cfg.rounds);
    cfg.local_epochs = r.get<int>("local_epochs", cfg.local_epochs);
    cfg.server_epochs = r.get<int>("server_epochs", cfg.server_epochs);
    cfg.client_batch_size = r.get<int>("client_batch_size", cfg.client_batch_size);
    cfg.server_batch_size = r.get<int>("server_batch_size", cfg.server_batch_size);

    cfg.optimizer.lr = r.get<double>("lr", cfg.optimizer.lr);
    cfg.optimizer.momentum = r.get<double>("momentum", cfg.optimizer.momentum);
    cfg.optimizer.weight_decay = r.get<double>("weight_decay", cfg.optimizer.weight_decay);
    cfg.optimizer.nesterov = r.get<bool>("nesterov", cfg.optimizer.nesterov);
    cfg.cosine_schedule = r.get<bool>("cosine_schedule", cfg.cosine_schedule);
    cfg.server_momentum = r.get<double>("server_momentum", cfg.server_momentum);

    cfg.sacr.rho = r.get<double>("sacr_rho", cfg.sacr.rho);
    cfg.sacr.tau_f = r.get<double>("sacr_tau_f", cfg.sacr.tau_f);
    cfg.sacr.w_a = r.get<double>("w_a", cfg.sacr.w_a);
    cfg.sacr.w_cs = r.get<double>("w_cs", cfg.sacr.w_cs);
    cfg.sacr.ell_d = parse_distance(r.get<std::string>("ell_d", "kl"), origin);
    cfg.sacr.mode = parse_sacr_mode(r.get<std::string>("sacr_mode", "sacr"), origin);
    cfg.sacr.teacher_stopgrad = r.get<bool>("teacher_stopgrad", cfg.sacr.teacher_stopgrad);
    cfg.sacr.oracle_correct_only =
        r.get<bool>("oracle_correct_only", cfg.sacr.oracle_correct_only);

    cfg.threshold_mode =
        parse_threshold_mode(r.get<std::string>("threshold_mode", "cat"), origin);
    cfg.fixed_tau = r.get<double>("fixed_tau", cfg.fixed_tau);
    cfg.aggregation_mode =
        parse_aggregation_mode(r.get<std::string>("aggregation_mode", "lsaa"), origin);
    cfg.partition_mode =
        parse_partition_mode(r.get<std::string>("partition_mode", "dirichlet"), origin);
    cfg.dirichlet_alpha = r.get<double>("dirichlet_alpha", cfg.dirichlet_alpha);

    cfg.augment.weak_noise_sigma =
        r.get<double>("weak_noise_sigma", cfg.augment.weak_noise_sigma);
    cfg.augment.strong_noise_sigma =
        r.get<double>("strong_noise_sigma", cfg.augment.strong_noise_sigma);
    cfg.augment.strong_mask_prob =
        r.get<double>("strong_mask_prob", cfg.augment.strong_mask_prob);
    cfg.pseudo_label_weak_view =
        r.get<bool>("pseudo_label_weak_view", cfg.pseudo_label_weak_view);
    cfg.sbn_scope = parse_sbn_scope(r.get<std::string>("sbn_scope", "all"), origin);

    cfg.seed = r.get<std::uint64_t>("seed", cfg.seed);
    cfg.out_dir = r.get<std::string>("out_dir", cfg.out_dir);
    cfg.workers = r.get<int>("workers", cfg.workers);

    r.reject_unknown();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path);
}

void apply_env_overrides(ExperimentConfig& cfg) {
    if (const char* s = std::getenv("FLFL_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(s, &end, 10);
        if (end == s || *end != '\0') {
            throw std::invalid_argument(std::string("FLFL_SEED is not an integer: ") + s);
        }
        cfg.seed = static_cast<std::uint64_t>(v);
    }
    if (const char* s = std::getenv("FLFL_OUT")) {
        cfg.out_dir = s;
    }
}

}  // namespace flfl
