#pragma once

#include <cstdint>
#include <vector>

#include "flfl/data.hpp"
#include "flfl/nn.hpp"

namespace flfl {

// Global-model predictions for one client's local data, generated once per
// round and frozen for all local epochs.
struct PseudoLabelTable {
    Matrix probs;                   // N x C
    std::vector<int> hard_label;    // argmax, lowest index wins ties
    std::vector<double> confidence; // max prob
    std::size_t size() const { return hard_label.size(); }
};

// Learning-status record: global threshold tau, mean class distribution and
// MaxNorm-scaled per-class thresholds.
struct ClientThresholds {
    double tau = 0.0;
    std::vector<double> class_dist;
    std::vector<double> class_tau;
};

struct SacrConfig {
    enum class Mode { Sacr, StandardSam, Off };

    double rho = 0.1;
    double tau_f = 0.95;
    double w_a = 1.0;
    double w_cs = 1.0;
    DistanceKind ell_d = DistanceKind::Kl;
    Mode mode = Mode::Sacr;
    bool teacher_stopgrad = true;
    bool oracle_correct_only = false;  // diagnostic only, never a default
};

struct OptimizerConfig {
    double lr = 0.03;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool nesterov = true;
};

struct ClientTrainReport {
    ParamVector params;
    double tau = 0.0;
    std::size_t steps = 0;
    double mean_la = 0.0;
    double mean_lcs = 0.0;
    std::size_t above_adaptive = 0;
    std::size_t above_tau_f = 0;
    std::size_t samples_seen = 0;
};

// Eval-mode forward of (optionally weakly augmented) local features with the
// frozen global model.
PseudoLabelTable generate_pseudo_labels(const ModelSpec& spec,
                                        const ParamVector& global_params,
                                        const BnStats& bn, const Matrix& features,
                                        const AugmentConfig& aug,
                                        bool on_weak_view, std::uint64_t seed);

// class_tau(c) = class_dist(c) / max_c' class_dist(c') * tau.
std::vector<double> maxnorm_class_tau(const std::vector<double>& class_dist, double tau);

// tau = mean confidence, class_dist(c) = mean predicted probability of c,
// class_tau from maxnorm_class_tau.
ClientThresholds compute_thresholds(const PseudoLabelTable& table, int num_classes);

// FixMatch-style baseline: one fixed threshold for every class.
ClientThresholds fixed_thresholds(double tau, int num_classes);

// Per-sample indicator confidence > class_tau(hard_label).
std::vector<std::uint8_t> threshold_mask(const PseudoLabelTable& table,
                                         const ClientThresholds& thresholds);

struct UnsupLossResult {
    double loss = 0.0;
    std::vector<std::uint8_t> mask;
    std::size_t mask_count = 0;
};

// Masked pseudo-label cross-entropy over a batch, normalized by the full
// batch size. `rows` maps batch rows to table entries.
UnsupLossResult unsup_loss_la(const Matrix& student_probs,
                              const PseudoLabelTable& table,
                              const std::vector<std::size_t>& rows,
                              const ClientThresholds& thresholds);

struct SacrStepResult {
    double loss_cs = 0.0;
    ParamVector grad;            // zeros when the step was skipped
    double perturb_norm = 0.0;   // ||epsilon*|| (0 when skipped)
    std::size_t mask_count = 0;  // rows above tau_f (after oracle filter)
    double loss_p = 0.0;
};

// Sharpness-aware consistency step on a strong-augmented batch: perturb along
// the normalized gradient of the tau_f-masked pseudo-label loss, then return
// the gradient of the divergence between perturbed and original outputs.
// `correct_rows`, when given, restricts the mask to correctly labeled rows
// (the oracle diagnostic).
SacrStepResult sacr_step(const ModelSpec& spec, const ParamVector& params,
                         const BnStats& bn, const Matrix& strong_batch,
                         const PseudoLabelTable& table,
                         const std::vector<std::size_t>& rows,
                         const SacrConfig& cfg,
                         const std::vector<std::uint8_t>* correct_rows = nullptr);

// Standard SAM comparison mode: same perturbation, but the returned gradient
// is that of the masked pseudo-label loss at the perturbed weights.
SacrStepResult standard_sam_step(const ModelSpec& spec, const ParamVector& params,
                                 const BnStats& bn, const Matrix& strong_batch,
                                 const PseudoLabelTable& table,
                                 const std::vector<std::size_t>& rows,
                                 const SacrConfig& cfg,
                                 const std::vector<std::uint8_t>* correct_rows = nullptr);

// Local epochs of w_a*L_a + w_cs*L_cs with momentum SGD. Pseudo-labels and
// thresholds stay frozen; hidden labels only enter through `oracle_labels`
// when the oracle_correct_only diagnostic is active.
ClientTrainReport client_local_train(const ModelSpec& spec,
                                     const ParamVector& global_params,
                                     const BnStats& bn, const Matrix& features,
                                     const PseudoLabelTable& table,
                                     const ClientThresholds& thresholds,
                                     const SacrConfig& sacr,
                                     const OptimizerConfig& opt,
                                     const AugmentConfig& aug, int epochs,
                                     int batch_size, std::uint64_t seed,
                                     const std::vector<int>* oracle_labels = nullptr);

// Supervised cross-entropy epochs on weakly augmented labeled batches.
ParamVector server_finetune(const ModelSpec& spec, const ParamVector& params,
                            const BnStats& bn, const LabeledSet& labeled,
                            int epochs, int batch_size, const OptimizerConfig& opt,
                            const AugmentConfig& aug, std::uint64_t seed);

}  // namespace flfl
