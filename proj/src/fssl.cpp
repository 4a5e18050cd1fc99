#include "flfl/fssl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "flfl/rng.hpp"

namespace flfl {

namespace {

Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), src.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(src.row(rows[i]), src.row(rows[i]) + src.cols, out.row(i));
    }
    return out;
}

// Momentum SGD with optional Nesterov, PyTorch update semantics.
struct SgdState {
    std::vector<double> velocity;

    explicit SgdState(std::size_t n) : velocity(n, 0.0) {}

    void step(ParamVector& w, const ParamVector& grad, const OptimizerConfig& opt,
              double lr) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            double g = grad[i] + opt.weight_decay * w[i];
            velocity[i] = opt.momentum * velocity[i] + g;
            const double d = opt.nesterov ? g + opt.momentum * velocity[i] : velocity[i];
            w[i] -= lr * d;
        }
    }
};

void require_finite(const ParamVector& w, const std::string& context) {
    if (!w.all_finite()) {
        throw std::runtime_error("non-finite parameters: " + context);
    }
}

std::vector<std::uint8_t> tau_f_mask(const PseudoLabelTable& table,
                                     const std::vector<std::size_t>& rows,
                                     double tau_f,
                                     const std::vector<std::uint8_t>* correct_rows) {
    if (correct_rows && correct_rows->size() != rows.size()) {
        throw std::invalid_argument("sacr: correctness mask misaligned with batch");
    }
    std::vector<std::uint8_t> mask(rows.size(), 0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        bool pass = table.confidence[rows[i]] > tau_f;
        if (correct_rows) pass = pass && (*correct_rows)[i];
        mask[i] = pass ? 1 : 0;
    }
    return mask;
}

std::vector<int> gather_labels(const PseudoLabelTable& table,
                               const std::vector<std::size_t>& rows) {
    std::vector<int> labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = table.hard_label[rows[i]];
    return labels;
}

struct PerturbResult {
    bool skipped = true;
    ParamVector perturbed;
    double norm = 0.0;
    std::size_t mask_count = 0;
    double loss_p = 0.0;
    std::vector<std::uint8_t> mask;
    ForwardCache cache;  // forward at the unperturbed params
};

// Steps (i)-(iii) shared by SACR and the standard-SAM mode: masked
// pseudo-label loss, then epsilon* = rho * grad / ||grad||.
PerturbResult perturb_along_lp(const ModelSpec& spec, const ParamVector& params,
                               const BnStats& bn, const Matrix& strong_batch,
                               const PseudoLabelTable& table,
                               const std::vector<std::size_t>& rows,
                               const SacrConfig& cfg,
                               const std::vector<std::uint8_t>* correct_rows) {
    if (rows.size() != strong_batch.rows) {
        throw std::invalid_argument("sacr: batch misaligned with table rows");
    }
    PerturbResult res;
    res.mask = tau_f_mask(table, rows, cfg.tau_f, correct_rows);
    res.mask_count = static_cast<std::size_t>(
        std::count(res.mask.begin(), res.mask.end(), std::uint8_t{1}));
    if (res.mask_count == 0) return res;

    res.cache = forward(spec, params, bn, strong_batch, BnMode::Train);

    LossSpec lp;
    lp.kind = LossSpec::Kind::MaskedCrossEntropy;
    lp.targets = gather_labels(table, rows);
    lp.mask = res.mask;
    res.loss_p = loss_value(res.cache, lp);

    ParamVector grad_p = backward(spec, params, bn, res.cache, lp);
    const double norm = param_norm(grad_p);
    if (norm == 0.0) return res;

    res.skipped = false;
    res.perturbed = param_axpy(cfg.rho / norm, grad_p, params);
    res.norm = param_norm(param_axpy(-1.0, params, res.perturbed));
    return res;
}

}  // namespace

PseudoLabelTable generate_pseudo_labels(const ModelSpec& spec,
                                        const ParamVector& global_params,
                                        const BnStats& bn, const Matrix& features,
                                        const AugmentConfig& aug,
                                        bool on_weak_view, std::uint64_t seed) {
    if (features.rows == 0) throw std::invalid_argument("generate_pseudo_labels: empty partition");
    if (!global_params.all_finite()) {
        throw std::invalid_argument("generate_pseudo_labels: non-finite global params");
    }

    Matrix view = features;
    if (on_weak_view) {
        std::mt19937_64 rng = make_rng(seed);
        view = weak_augment(features, aug, rng);
    }
    ForwardCache cache = forward(spec, global_params, bn, view, BnMode::Eval);

    PseudoLabelTable table;
    table.probs = std::move(cache.probs);
    table.hard_label.resize(table.probs.rows);
    table.confidence.resize(table.probs.rows);
    for (std::size_t i = 0; i < table.probs.rows; ++i) {
        const double* p = table.probs.row(i);
        std::size_t best = 0;
        for (std::size_t c = 1; c < table.probs.cols; ++c) {
            if (p[c] > p[best]) best = c;  // lowest index wins ties
        }
        table.hard_label[i] = static_cast<int>(best);
        table.confidence[i] = p[best];
    }
    return table;
}

std::vector<double> maxnorm_class_tau(const std::vector<double>& class_dist, double tau) {
    if (class_dist.empty()) throw std::invalid_argument("maxnorm_class_tau: empty class_dist");
    const double max_dist = *std::max_element(class_dist.begin(), class_dist.end());
    if (max_dist <= 0.0) throw std::invalid_argument("maxnorm_class_tau: class_dist must have positive mass");
    std::vector<double> out(class_dist.size());
    for (std::size_t c = 0; c < class_dist.size(); ++c) out[c] = class_dist[c] / max_dist * tau;
    return out;
}

ClientThresholds compute_thresholds(const PseudoLabelTable& table, int num_classes) {
    if (table.size() == 0) throw std::invalid_argument("compute_thresholds: empty table");
    if (table.probs.cols != static_cast<std::size_t>(num_classes)) {
        throw std::invalid_argument("compute_thresholds: table width does not match num_classes");
    }
    const std::size_t n = table.size();
    ClientThresholds th;
    th.tau = std::accumulate(table.confidence.begin(), table.confidence.end(), 0.0) /
             static_cast<double>(n);
    th.class_dist.assign(static_cast<std::size_t>(num_classes), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* p = table.probs.row(i);
        for (int c = 0; c < num_classes; ++c) th.class_dist[static_cast<std::size_t>(c)] += p[c];
    }
    for (double& v : th.class_dist) v /= static_cast<double>(n);

    th.class_tau = maxnorm_class_tau(th.class_dist, th.tau);
    return th;
}

ClientThresholds fixed_thresholds(double tau, int num_classes) {
    ClientThresholds th;
    th.tau = tau;
    th.class_dist.assign(static_cast<std::size_t>(num_classes),
                         1.0 / static_cast<double>(num_classes));
    th.class_tau.assign(static_cast<std::size_t>(num_classes), tau);
    return th;
}

std::vector<std::uint8_t> threshold_mask(const PseudoLabelTable& table,
                                         const ClientThresholds& thresholds) {
    std::vector<std::uint8_t> mask(table.size(), 0);
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto cls = static_cast<std::size_t>(table.hard_label[i]);
        if (cls >= thresholds.class_tau.size()) {
            throw std::invalid_argument("threshold_mask: label outside threshold table");
        }
        mask[i] = table.confidence[i] > thresholds.class_tau[cls] ? 1 : 0;
    }
    return mask;
}

UnsupLossResult unsup_loss_la(const Matrix& student_probs,
                              const PseudoLabelTable& table,
                              const std::vector<std::size_t>& rows,
                              const ClientThresholds& thresholds) {
    if (rows.size() != student_probs.rows) {
        throw std::invalid_argument("unsup_loss_la: batch misaligned with table rows");
    }
    UnsupLossResult res;
    res.mask.resize(rows.size());
    std::vector<int> targets(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t r = rows[i];
        if (r >= table.size()) throw std::out_of_range("unsup_loss_la: table row out of range");
        const auto cls = static_cast<std::size_t>(table.hard_label[r]);
        res.mask[i] = table.confidence[r] > thresholds.class_tau[cls] ? 1 : 0;
        if (res.mask[i]) ++res.mask_count;
        targets[i] = table.hard_label[r];
    }
    res.loss = cross_entropy(student_probs, targets, res.mask);
    return res;
}

SacrStepResult sacr_step(const ModelSpec& spec, const ParamVector& params,
                         const BnStats& bn, const Matrix& strong_batch,
                         const PseudoLabelTable& table,
                         const std::vector<std::size_t>& rows,
                         const SacrConfig& cfg,
                         const std::vector<std::uint8_t>* correct_rows) {
    PerturbResult pert =
        perturb_along_lp(spec, params, bn, strong_batch, table, rows, cfg, correct_rows);

    SacrStepResult res;
    res.mask_count = pert.mask_count;
    res.loss_p = pert.loss_p;
    res.grad = ParamVector::zeros(params.size());
    if (pert.skipped) return res;
    res.perturb_norm = pert.norm;

    ForwardCache perturbed_cache =
        forward(spec, pert.perturbed, bn, strong_batch, BnMode::Train);
    if (!perturbed_cache.probs.data.empty()) {
        for (double v : perturbed_cache.probs.data) {
            if (!std::isfinite(v)) {
                throw std::runtime_error("sacr_step: non-finite perturbed forward");
            }
        }
    }

    // L_cs = ell_d(Q*, Q) over the tau_f-masked rows, full-batch normalized
    LossSpec lcs;
    lcs.kind = LossSpec::Kind::DistanceToTarget;
    lcs.reference = perturbed_cache.probs;
    lcs.mask = pert.mask;
    lcs.distance = cfg.ell_d;
    res.loss_cs = loss_value(pert.cache, lcs);
    res.grad = backward(spec, params, bn, pert.cache, lcs);

    if (!cfg.teacher_stopgrad) {
        // backpropagate through the perturbed branch too (epsilon* constant)
        LossSpec teacher;
        teacher.kind = LossSpec::Kind::DistanceFromSource;
        teacher.reference = pert.cache.probs;
        teacher.mask = pert.mask;
        teacher.distance = cfg.ell_d;
        ParamVector teacher_grad =
            backward(spec, pert.perturbed, bn, perturbed_cache, teacher);
        res.grad = param_axpy(1.0, teacher_grad, res.grad);
    }
    return res;
}

SacrStepResult standard_sam_step(const ModelSpec& spec, const ParamVector& params,
                                 const BnStats& bn, const Matrix& strong_batch,
                                 const PseudoLabelTable& table,
                                 const std::vector<std::size_t>& rows,
                                 const SacrConfig& cfg,
                                 const std::vector<std::uint8_t>* correct_rows) {
    PerturbResult pert =
        perturb_along_lp(spec, params, bn, strong_batch, table, rows, cfg, correct_rows);

    SacrStepResult res;
    res.mask_count = pert.mask_count;
    res.loss_p = pert.loss_p;
    res.grad = ParamVector::zeros(params.size());
    if (pert.skipped) return res;
    res.perturb_norm = pert.norm;

    ForwardCache perturbed_cache =
        forward(spec, pert.perturbed, bn, strong_batch, BnMode::Train);
    LossSpec lp;
    lp.kind = LossSpec::Kind::MaskedCrossEntropy;
    lp.targets = gather_labels(table, rows);
    lp.mask = pert.mask;
    res.loss_cs = loss_value(perturbed_cache, lp);
    res.grad = backward(spec, pert.perturbed, bn, perturbed_cache, lp);
    return res;
}

ClientTrainReport client_local_train(const ModelSpec& spec,
                                     const ParamVector& global_params,
                                     const BnStats& bn, const Matrix& features,
                                     const PseudoLabelTable& table,
                                     const ClientThresholds& thresholds,
                                     const SacrConfig& sacr,
                                     const OptimizerConfig& opt,
                                     const AugmentConfig& aug, int epochs,
                                     int batch_size, std::uint64_t seed,
                                     const std::vector<int>* oracle_labels) {
    if (table.size() != features.rows) {
        throw std::invalid_argument("client_local_train: table does not match features");
    }
    if (batch_size < 1) throw std::invalid_argument("client_local_train: batch_size must be >= 1");
    if (sacr.oracle_correct_only && oracle_labels == nullptr) {
        throw std::invalid_argument("client_local_train: oracle_correct_only needs hidden labels");
    }
    if (oracle_labels != nullptr && oracle_labels->size() != features.rows) {
        throw std::invalid_argument("client_local_train: hidden labels do not match features");
    }

    ClientTrainReport report;
    report.params = global_params;
    report.tau = thresholds.tau;

    std::mt19937_64 rng = make_rng(seed);
    SgdState sgd(global_params.size());
    const std::size_t n = features.rows;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    double la_sum = 0.0;
    double lcs_sum = 0.0;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
            std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));

            // one shared strong view per batch for L_a, L_p, Q and Q*
            Matrix batch = gather_rows(features, rows);
            Matrix strong = strong_augment(batch, aug, rng);

            ForwardCache cache = forward(spec, report.params, bn, strong, BnMode::Train);
            UnsupLossResult la = unsup_loss_la(cache.probs, table, rows, thresholds);

            LossSpec la_spec;
            la_spec.kind = LossSpec::Kind::MaskedCrossEntropy;
            la_spec.targets = gather_labels(table, rows);
            la_spec.mask = la.mask;
            ParamVector grad = backward(spec, report.params, bn, cache, la_spec);
            if (sacr.w_a != 1.0) grad = param_scale(sacr.w_a, grad);

            double lcs = 0.0;
            if (sacr.mode != SacrConfig::Mode::Off) {
                std::vector<std::uint8_t> correct;
                const std::vector<std::uint8_t>* correct_ptr = nullptr;
                if (sacr.oracle_correct_only) {
                    correct.resize(rows.size());
                    for (std::size_t i = 0; i < rows.size(); ++i) {
                        correct[i] =
                            table.hard_label[rows[i]] == (*oracle_labels)[rows[i]] ? 1 : 0;
                    }
                    correct_ptr = &correct;
                }
                SacrStepResult step =
                    sacr.mode == SacrConfig::Mode::Sacr
                        ? sacr_step(spec, report.params, bn, strong, table, rows, sacr,
                                    correct_ptr)
                        : standard_sam_step(spec, report.params, bn, strong, table, rows,
                                            sacr, correct_ptr);
                lcs = step.loss_cs;
                if (sacr.w_cs != 0.0) grad = param_axpy(sacr.w_cs, step.grad, grad);
                report.above_tau_f += step.mask_count;
            }

            sgd.step(report.params, grad, opt, opt.lr);
            require_finite(report.params,
                           "client step " + std::to_string(report.steps) + " epoch " +
                               std::to_string(epoch));

            ++report.steps;
            report.samples_seen += rows.size();
            report.above_adaptive += la.mask_count;
            la_sum += la.loss;
            lcs_sum += lcs;
        }
    }

    if (report.steps > 0) {
        report.mean_la = la_sum / static_cast<double>(report.steps);
        report.mean_lcs = lcs_sum / static_cast<double>(report.steps);
    }
    return report;
}

ParamVector server_finetune(const ModelSpec& spec, const ParamVector& params,
                            const BnStats& bn, const LabeledSet& labeled,
                            int epochs, int batch_size, const OptimizerConfig& opt,
                            const AugmentConfig& aug, std::uint64_t seed) {
    if (labeled.size() == 0) throw std::invalid_argument("server_finetune: empty labeled set");
    if (batch_size < 1) throw std::invalid_argument("server_finetune: batch_size must be >= 1");

    ParamVector w = params;
    std::mt19937_64 rng = make_rng(seed);
    SgdState sgd(w.size());
    const std::size_t n = labeled.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
            std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
            Matrix batch = gather_rows(labeled.features, rows);
            Matrix weak = weak_augment(batch, aug, rng);

            LossSpec ce;
            ce.kind = LossSpec::Kind::MaskedCrossEntropy;
            ce.targets.resize(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) ce.targets[i] = labeled.labels[rows[i]];

            ForwardCache cache = forward(spec, w, bn, weak, BnMode::Train);
            ParamVector grad = backward(spec, w, bn, cache, ce);
            sgd.step(w, grad, opt, opt.lr);
            require_finite(w, "server finetune epoch " + std::to_string(epoch));
        }
    }
    return w;
}

}  // namespace flfl
