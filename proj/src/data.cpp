#include "flfl/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "flfl/rng.hpp"

namespace flfl {

void AugmentConfig::validate() const {
    if (weak_noise_sigma < 0.0 || strong_noise_sigma < 0.0) {
        throw std::invalid_argument("AugmentConfig: noise sigmas must be >= 0");
    }
    if (strong_noise_sigma < weak_noise_sigma) {
        throw std::invalid_argument("AugmentConfig: strong_noise_sigma must be >= weak_noise_sigma");
    }
    if (strong_mask_prob < 0.0 || strong_mask_prob > 1.0) {
        throw std::invalid_argument("AugmentConfig: strong_mask_prob must be in [0,1]");
    }
}

std::vector<Sample> make_blobs(int num_classes, int input_dim, int n_per_class,
                               double spread, std::uint64_t seed) {
    if (num_classes < 2) throw std::invalid_argument("make_blobs: num_classes must be >= 2");
    if (n_per_class < 1) throw std::invalid_argument("make_blobs: n_per_class must be >= 1");
    if (input_dim < num_classes) {
        throw std::invalid_argument("make_blobs: input_dim must be >= num_classes for simplex centers");
    }
    if (spread < 0.0) throw std::invalid_argument("make_blobs: spread must be >= 0");

    std::mt19937_64 rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Sample> samples;
    samples.reserve(static_cast<std::size_t>(num_classes) * n_per_class);
    for (int c = 0; c < num_classes; ++c) {
        for (int n = 0; n < n_per_class; ++n) {
            Sample s;
            s.true_label = c;
            s.features.assign(static_cast<std::size_t>(input_dim), 0.0);
            s.features[static_cast<std::size_t>(c)] = 1.0;
            if (spread > 0.0) {
                for (double& f : s.features) f += spread * gauss(rng);
            }
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

LabelSplit split_labels_at_server(const std::vector<Sample>& dataset,
                                  std::size_t n_labeled, std::uint64_t seed) {
    if (n_labeled > dataset.size()) {
        throw std::invalid_argument("split_labels_at_server: n_labeled exceeds dataset size");
    }
    if (dataset.empty()) throw std::invalid_argument("split_labels_at_server: empty dataset");
    const std::size_t dim = dataset.front().features.size();

    int num_classes = 0;
    for (const Sample& s : dataset) num_classes = std::max(num_classes, s.true_label + 1);

    std::mt19937_64 rng = make_rng(seed);
    std::vector<std::size_t> chosen;
    chosen.reserve(n_labeled);

    if (n_labeled >= static_cast<std::size_t>(num_classes)) {
        // stratified round-robin over classes
        std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            by_class[static_cast<std::size_t>(dataset[i].true_label)].push_back(i);
        }
        for (auto& idxs : by_class) std::shuffle(idxs.begin(), idxs.end(), rng);
        std::vector<std::size_t> cursor(static_cast<std::size_t>(num_classes), 0);
        int c = 0;
        while (chosen.size() < n_labeled) {
            auto& idxs = by_class[static_cast<std::size_t>(c)];
            auto& cur = cursor[static_cast<std::size_t>(c)];
            if (cur < idxs.size()) chosen.push_back(idxs[cur++]);
            c = (c + 1) % num_classes;
        }
    } else {
        std::vector<std::size_t> all(dataset.size());
        std::iota(all.begin(), all.end(), 0);
        std::shuffle(all.begin(), all.end(), rng);
        chosen.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_labeled));
    }

    std::vector<std::uint8_t> is_labeled(dataset.size(), 0);
    for (std::size_t i : chosen) is_labeled[i] = 1;

    LabelSplit split;
    split.labeled.features = Matrix(n_labeled, dim);
    split.labeled.labels.reserve(n_labeled);
    std::size_t li = 0;
    for (std::size_t i : chosen) {
        std::copy(dataset[i].features.begin(), dataset[i].features.end(),
                  split.labeled.features.row(li));
        split.labeled.labels.push_back(dataset[i].true_label);
        ++li;
    }

    const std::size_t n_unlabeled = dataset.size() - n_labeled;
    split.unlabeled.features = Matrix(n_unlabeled, dim);
    split.unlabeled.hidden_labels.reserve(n_unlabeled);
    std::size_t ui = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (is_labeled[i]) continue;
        std::copy(dataset[i].features.begin(), dataset[i].features.end(),
                  split.unlabeled.features.row(ui));
        split.unlabeled.hidden_labels.push_back(dataset[i].true_label);
        ++ui;
    }
    return split;
}

namespace {

std::vector<ClientPartition> build_partitions(
    const UnlabeledPool& pool, const std::vector<std::vector<std::size_t>>& assignment) {
    std::vector<ClientPartition> parts(assignment.size());
    for (std::size_t k = 0; k < assignment.size(); ++k) {
        ClientPartition& part = parts[k];
        part.client_id = static_cast<int>(k);
        part.features = Matrix(assignment[k].size(), pool.features.cols);
        part.hidden_labels.reserve(assignment[k].size());
        std::size_t row = 0;
        for (std::size_t idx : assignment[k]) {
            std::copy(pool.features.row(idx), pool.features.row(idx) + pool.features.cols,
                      part.features.row(row));
            part.hidden_labels.push_back(pool.hidden_labels[idx]);
            ++row;
        }
    }
    return parts;
}

// Every selected client must be able to train; the protocol never defines
// behavior for empty partitions, so repair by stealing from the largest.
void repair_empty_clients(std::vector<std::vector<std::size_t>>& assignment) {
    for (std::size_t k = 0; k < assignment.size(); ++k) {
        if (!assignment[k].empty()) continue;
        std::size_t donor = 0;
        for (std::size_t j = 1; j < assignment.size(); ++j) {
            if (assignment[j].size() > assignment[donor].size()) donor = j;
        }
        if (assignment[donor].size() <= 1) {
            throw std::runtime_error("dirichlet_partition: cannot repair empty client");
        }
        assignment[k].push_back(assignment[donor].back());
        assignment[donor].pop_back();
    }
}

}  // namespace

std::vector<ClientPartition> dirichlet_partition(const UnlabeledPool& pool,
                                                 int num_clients, double alpha,
                                                 std::uint64_t seed) {
    if (num_clients < 1) throw std::invalid_argument("dirichlet_partition: num_clients must be >= 1");
    if (alpha <= 0.0) throw std::invalid_argument("dirichlet_partition: alpha must be > 0");
    if (pool.size() == 0) throw std::invalid_argument("dirichlet_partition: empty pool");
    if (pool.size() < static_cast<std::size_t>(num_clients)) {
        throw std::invalid_argument("dirichlet_partition: pool smaller than client count");
    }

    int num_classes = 0;
    for (int y : pool.hidden_labels) num_classes = std::max(num_classes, y + 1);

    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < pool.size(); ++i) {
        by_class[static_cast<std::size_t>(pool.hidden_labels[i])].push_back(i);
    }

    std::mt19937_64 rng = make_rng(seed);
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<std::vector<std::size_t>> assignment(static_cast<std::size_t>(num_clients));

    for (auto& idxs : by_class) {
        if (idxs.empty()) continue;
        std::shuffle(idxs.begin(), idxs.end(), rng);

        std::vector<double> props(static_cast<std::size_t>(num_clients));
        double total = 0.0;
        for (double& v : props) {
            v = gamma(rng);
            total += v;
        }
        if (total <= 0.0) {
            std::fill(props.begin(), props.end(), 1.0);
            total = static_cast<double>(num_clients);
        }

        // cumulative rounding keeps the class total exact
        const std::size_t n = idxs.size();
        double cum = 0.0;
        std::size_t prev_bound = 0;
        for (int k = 0; k < num_clients; ++k) {
            cum += props[static_cast<std::size_t>(k)] / total;
            std::size_t bound = k + 1 == num_clients
                                    ? n
                                    : static_cast<std::size_t>(std::llround(cum * static_cast<double>(n)));
            bound = std::min(bound, n);
            bound = std::max(bound, prev_bound);
            for (std::size_t i = prev_bound; i < bound; ++i) {
                assignment[static_cast<std::size_t>(k)].push_back(idxs[i]);
            }
            prev_bound = bound;
        }
    }

    repair_empty_clients(assignment);
    return build_partitions(pool, assignment);
}

std::vector<ClientPartition> iid_partition(const UnlabeledPool& pool,
                                           int num_clients, std::uint64_t seed) {
    if (num_clients < 1) throw std::invalid_argument("iid_partition: num_clients must be >= 1");
    if (pool.size() < static_cast<std::size_t>(num_clients)) {
        throw std::invalid_argument("iid_partition: pool smaller than client count");
    }
    std::vector<std::size_t> idxs(pool.size());
    std::iota(idxs.begin(), idxs.end(), 0);
    std::mt19937_64 rng = make_rng(seed);
    std::shuffle(idxs.begin(), idxs.end(), rng);

    std::vector<std::vector<std::size_t>> assignment(static_cast<std::size_t>(num_clients));
    for (std::size_t i = 0; i < idxs.size(); ++i) {
        assignment[i % static_cast<std::size_t>(num_clients)].push_back(idxs[i]);
    }
    return build_partitions(pool, assignment);
}

Matrix weak_augment(const Matrix& features, const AugmentConfig& cfg,
                    std::mt19937_64& rng) {
    cfg.validate();
    Matrix out = features;
    if (cfg.weak_noise_sigma > 0.0) {
        std::normal_distribution<double> gauss(0.0, cfg.weak_noise_sigma);
        for (double& v : out.data) v += gauss(rng);
    }
    return out;
}

Matrix strong_augment(const Matrix& features, const AugmentConfig& cfg,
                      std::mt19937_64& rng) {
    cfg.validate();
    Matrix out = features;
    if (cfg.strong_noise_sigma > 0.0) {
        std::normal_distribution<double> gauss(0.0, cfg.strong_noise_sigma);
        for (double& v : out.data) v += gauss(rng);
    }
    if (cfg.strong_mask_prob > 0.0) {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (double& v : out.data) {
            if (unif(rng) < cfg.strong_mask_prob) v = 0.0;
        }
    }
    return out;
}

void dump_partitions(const std::string& path,
                     const std::vector<ClientPartition>& partitions) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open partition dump for writing: " + path);
    char buf[64];
    for (const ClientPartition& part : partitions) {
        for (std::size_t i = 0; i < part.size(); ++i) {
            os << part.client_id << "," << part.hidden_labels[i];
            for (std::size_t j = 0; j < part.features.cols; ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", part.features(i, j));
                os << "," << buf;
            }
            os << "\n";
        }
    }
    if (!os) throw std::runtime_error("failed writing partition dump: " + path);
}

std::vector<ClientPartition> load_partitions(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open partition dump: " + path);

    std::map<int, std::pair<std::vector<std::vector<double>>, std::vector<int>>> per_client;
    std::string line;
    std::size_t dim = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        const int client_id = std::stoi(field);
        std::getline(ss, field, ',');
        const int label = std::stoi(field);
        std::vector<double> feats;
        while (std::getline(ss, field, ',')) feats.push_back(std::strtod(field.c_str(), nullptr));
        if (dim == 0) dim = feats.size();
        if (feats.size() != dim) throw std::runtime_error("inconsistent feature width in: " + path);
        per_client[client_id].first.push_back(std::move(feats));
        per_client[client_id].second.push_back(label);
    }

    std::vector<ClientPartition> parts;
    for (auto& [id, data] : per_client) {
        ClientPartition part;
        part.client_id = id;
        part.features = Matrix(data.first.size(), dim);
        for (std::size_t i = 0; i < data.first.size(); ++i) {
            std::copy(data.first[i].begin(), data.first[i].end(), part.features.row(i));
        }
        part.hidden_labels = std::move(data.second);
        parts.push_back(std::move(part));
    }
    return parts;
}

}  // namespace flfl
