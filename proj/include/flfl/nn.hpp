#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace flfl {

// Row-major dense matrix of doubles. Rows are samples, columns are features
// or class probabilities throughout the codebase.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }
    bool empty() const { return rows == 0 || cols == 0; }
};

enum class Activation { Relu, Tanh };

// Dense MLP: input -> hidden_dims... -> num_classes, optional BatchNorm after
// each hidden linear layer, softmax output.
struct ModelSpec {
    int input_dim = 0;
    std::vector<int> hidden_dims;
    int num_classes = 0;
    bool use_batch_norm = true;
    Activation activation = Activation::Relu;

    void validate() const;
    std::size_t param_count() const;
    std::size_t bn_layer_count() const {
        return use_batch_norm ? hidden_dims.size() : 0;
    }
};

// Flat view of all model parameters. The unit of perturbation, aggregation
// and checkpointing.
struct ParamVector {
    std::vector<double> values;

    ParamVector() = default;
    explicit ParamVector(std::vector<double> v) : values(std::move(v)) {}

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    static ParamVector zeros(std::size_t n) { return ParamVector(std::vector<double>(n, 0.0)); }
    bool all_finite() const;
};

// a*x + y, elementwise. Throws on length mismatch.
ParamVector param_axpy(double a, const ParamVector& x, const ParamVector& y);
ParamVector param_scale(double a, const ParamVector& x);
double param_norm(const ParamVector& x);

// Externally-set BN statistics (sBN): frozen during gradient training and
// only replaced wholesale by aggregation::sbn_recompute.
struct BnStats {
    std::vector<std::vector<double>> mean;  // one entry per BN layer
    std::vector<std::vector<double>> var;
    std::int64_t sample_count = 0;

    // mean 0 / var 1 placeholder used before the first recompute
    static BnStats identity(const ModelSpec& spec);
};

enum class BnMode { Train, Eval };

struct ForwardCache {
    BnMode mode = BnMode::Eval;
    Matrix input;
    struct Layer {
        Matrix linear_out;           // pre-BN
        Matrix x_hat;                // normalized activations (BN only)
        Matrix pre_act;              // post-BN (== linear_out when BN is off)
        Matrix act_out;
        std::vector<double> mu;      // stats used by this forward
        std::vector<double> sigma2;
    };
    std::vector<Layer> layers;
    Matrix logits;
    Matrix probs;
};

// Softmax probabilities plus everything the backward pass needs.
// Train mode normalizes with the batch's own statistics (never touching
// `bn`), eval mode normalizes with `bn`.
ForwardCache forward(const ModelSpec& spec, const ParamVector& params,
                     const BnStats& bn, const Matrix& batch, BnMode mode);

// (1/B) * sum_b mask_b * (-ln probs[b, target_b]). Empty mask means all rows.
double cross_entropy(const Matrix& probs, const std::vector<int>& targets,
                     const std::vector<std::uint8_t>& mask = {});

// Mean over rows of sum_c p_c ln(p_c / q_c), q clamped below at 1e-12.
double kl_divergence(const Matrix& p, const Matrix& q);

enum class DistanceKind { Kl, L2 };

// Scalar losses on the softmax output, differentiated by backward().
struct LossSpec {
    enum class Kind {
        MaskedCrossEntropy,  // hard targets
        DistanceToTarget,    // ell_d(reference, probs), reference fixed
        DistanceFromSource,  // ell_d(probs, reference), reference fixed
    };
    Kind kind = Kind::MaskedCrossEntropy;
    std::vector<int> targets;
    std::vector<std::uint8_t> mask;  // empty = all rows
    Matrix reference;
    DistanceKind distance = DistanceKind::Kl;
};

double loss_value(const ForwardCache& cache, const LossSpec& loss);

// Exact gradient of loss_value(forward(...), loss) with respect to params.
ParamVector backward(const ModelSpec& spec, const ParamVector& params,
                     const BnStats& bn, const ForwardCache& cache,
                     const LossSpec& loss);

// Linear weights ~ N(0, weight_std^2), biases 0, BN gamma 1 / beta 0.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed,
                        double weight_std = 0.1);

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kProbFloor = 1e-12;

}  // namespace flfl
