#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flfl/nn.hpp"

namespace flfl {

struct Sample {
    std::vector<double> features;
    int true_label = 0;
};

struct LabeledSet {
    Matrix features;          // N_L x input_dim
    std::vector<int> labels;  // N_L
    std::size_t size() const { return labels.size(); }
};

// Label-free view handed to the partitioner. Hidden labels travel next to the
// features but training code only ever receives the feature matrix.
struct UnlabeledPool {
    Matrix features;
    std::vector<int> hidden_labels;  // metrics-only
    std::size_t size() const { return hidden_labels.size(); }
};

struct ClientPartition {
    int client_id = 0;
    Matrix features;                 // N_U^k x input_dim
    std::vector<int> hidden_labels;  // metrics-only, never read by training
    std::size_t size() const { return hidden_labels.size(); }
};

struct AugmentConfig {
    double weak_noise_sigma = 0.0;
    double strong_noise_sigma = 0.0;
    double strong_mask_prob = 0.0;

    void validate() const;
};

// C Gaussian clusters with centers on the unit simplex (scaled basis vectors
// e_0..e_{C-1}); requires input_dim >= C. Classes exactly balanced, ordered
// class-major.
std::vector<Sample> make_blobs(int num_classes, int input_dim, int n_per_class,
                               double spread, std::uint64_t seed);

struct LabelSplit {
    LabeledSet labeled;
    UnlabeledPool unlabeled;
};

// Class-stratified when n_labeled >= C (round-robin over classes), uniform
// otherwise. Remaining samples become the unlabeled pool.
LabelSplit split_labels_at_server(const std::vector<Sample>& dataset,
                                  std::size_t n_labeled, std::uint64_t seed);

// Per-class client proportions drawn from Dir(alpha). Conserves every sample;
// clients left empty are repaired by moving one sample from the largest one.
std::vector<ClientPartition> dirichlet_partition(const UnlabeledPool& pool,
                                                 int num_clients, double alpha,
                                                 std::uint64_t seed);

// Uniform shuffle-and-deal split.
std::vector<ClientPartition> iid_partition(const UnlabeledPool& pool,
                                           int num_clients, std::uint64_t seed);

// Additive Gaussian noise, sigma = weak_noise_sigma.
Matrix weak_augment(const Matrix& features, const AugmentConfig& cfg,
                    std::mt19937_64& rng);

// Gaussian noise (strong_noise_sigma) then independent coordinate zeroing
// with probability strong_mask_prob.
Matrix strong_augment(const Matrix& features, const AugmentConfig& cfg,
                      std::mt19937_64& rng);

// One `client_id,label,feature_0,...` record per line, clients in id order.
void dump_partitions(const std::string& path,
                     const std::vector<ClientPartition>& partitions);
std::vector<ClientPartition> load_partitions(const std::string& path);

}  // namespace flfl
