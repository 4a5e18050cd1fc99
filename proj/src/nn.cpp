#include "flfl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace flfl {

namespace {

struct LinearSlot {
    std::size_t w = 0;  // offset of row-major [out x in] weight block
    std::size_t b = 0;  // offset of [out] bias block
    int in = 0;
    int out = 0;
};

struct BnSlot {
    std::size_t gamma = 0;
    std::size_t beta = 0;
    int dim = 0;
};

// Flat parameter layout: per hidden layer W, b, (gamma, beta), then the
// output layer W, b.
struct Layout {
    std::vector<LinearSlot> linears;  // hidden layers then output layer
    std::vector<BnSlot> bns;          // one per hidden layer when BN is on
    std::size_t total = 0;
};

Layout build_layout(const ModelSpec& spec) {
    Layout layout;
    std::size_t off = 0;
    int prev = spec.input_dim;
    for (int dim : spec.hidden_dims) {
        LinearSlot lin;
        lin.in = prev;
        lin.out = dim;
        lin.w = off;
        off += static_cast<std::size_t>(dim) * prev;
        lin.b = off;
        off += dim;
        layout.linears.push_back(lin);
        if (spec.use_batch_norm) {
            BnSlot bn;
            bn.dim = dim;
            bn.gamma = off;
            off += dim;
            bn.beta = off;
            off += dim;
            layout.bns.push_back(bn);
        }
        prev = dim;
    }
    LinearSlot out;
    out.in = prev;
    out.out = spec.num_classes;
    out.w = off;
    off += static_cast<std::size_t>(out.out) * out.in;
    out.b = off;
    off += out.out;
    layout.linears.push_back(out);
    layout.total = off;
    return layout;
}

void check_finite(const Matrix& m, const char* what) {
    for (double v : m.data) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument(std::string("non-finite value in ") + what);
        }
    }
}

// out[B x out] = in[B x in] * W^T + b
void linear_forward(const Matrix& in, const double* w, const double* b,
                    int out_dim, Matrix& out) {
    const std::size_t B = in.rows;
    const std::size_t D = in.cols;
    out = Matrix(B, static_cast<std::size_t>(out_dim));
    for (std::size_t i = 0; i < B; ++i) {
        const double* x = in.row(i);
        double* y = out.row(i);
        for (int r = 0; r < out_dim; ++r) {
            const double* wr = w + static_cast<std::size_t>(r) * D;
            double acc = b[r];
            for (std::size_t j = 0; j < D; ++j) acc += wr[j] * x[j];
            y[r] = acc;
        }
    }
}

void apply_activation(const ModelSpec& spec, const Matrix& pre, Matrix& out) {
    out = Matrix(pre.rows, pre.cols);
    if (spec.activation == Activation::Relu) {
        for (std::size_t i = 0; i < pre.data.size(); ++i)
            out.data[i] = pre.data[i] > 0.0 ? pre.data[i] : 0.0;
    } else {
        for (std::size_t i = 0; i < pre.data.size(); ++i)
            out.data[i] = std::tanh(pre.data[i]);
    }
}

void softmax_rows(const Matrix& logits, Matrix& probs) {
    probs = Matrix(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* z = logits.row(i);
        double* p = probs.row(i);
        double zmax = z[0];
        for (std::size_t c = 1; c < logits.cols; ++c) zmax = std::max(zmax, z[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < logits.cols; ++c) {
            p[c] = std::exp(z[c] - zmax);
            sum += p[c];
        }
        for (std::size_t c = 0; c < logits.cols; ++c) p[c] /= sum;
    }
}

std::vector<std::uint8_t> effective_mask(const LossSpec& loss, std::size_t rows) {
    if (loss.mask.empty()) return std::vector<std::uint8_t>(rows, 1);
    if (loss.mask.size() != rows) {
        throw std::invalid_argument("loss mask length does not match batch size");
    }
    return loss.mask;
}

// dlogit_j = p_j * (g_j - sum_c g_c p_c) for g = dL/dprobs on one row
void softmax_vjp_row(const double* p, const double* g, std::size_t C, double* dz) {
    double dot = 0.0;
    for (std::size_t c = 0; c < C; ++c) dot += g[c] * p[c];
    for (std::size_t c = 0; c < C; ++c) dz[c] = p[c] * (g[c] - dot);
}

Matrix loss_dlogits(const ForwardCache& cache, const LossSpec& loss) {
    const Matrix& probs = cache.probs;
    const std::size_t B = probs.rows;
    const std::size_t C = probs.cols;
    const double invB = 1.0 / static_cast<double>(B);
    std::vector<std::uint8_t> mask = effective_mask(loss, B);
    Matrix dz(B, C);

    switch (loss.kind) {
        case LossSpec::Kind::MaskedCrossEntropy: {
            if (loss.targets.size() != B) {
                throw std::invalid_argument("cross-entropy targets length mismatch");
            }
            for (std::size_t i = 0; i < B; ++i) {
                if (!mask[i]) continue;
                int t = loss.targets[i];
                if (t < 0 || static_cast<std::size_t>(t) >= C) {
                    throw std::out_of_range("cross-entropy target index out of range");
                }
                for (std::size_t c = 0; c < C; ++c) dz(i, c) = probs(i, c) * invB;
                dz(i, static_cast<std::size_t>(t)) -= invB;
            }
            break;
        }
        case LossSpec::Kind::DistanceToTarget: {
            if (loss.reference.rows != B || loss.reference.cols != C) {
                throw std::invalid_argument("distance reference shape mismatch");
            }
            for (std::size_t i = 0; i < B; ++i) {
                if (!mask[i]) continue;
                const double* p = probs.row(i);
                const double* t = loss.reference.row(i);
                if (loss.distance == DistanceKind::Kl) {
                    // d/dlogits of sum_c t_c ln(t_c/p_c) is (p - t)/B
                    for (std::size_t c = 0; c < C; ++c) dz(i, c) = (p[c] - t[c]) * invB;
                } else {
                    std::vector<double> g(C);
                    for (std::size_t c = 0; c < C; ++c) g[c] = 2.0 * (p[c] - t[c]) * invB;
                    softmax_vjp_row(p, g.data(), C, dz.row(i));
                }
            }
            break;
        }
        case LossSpec::Kind::DistanceFromSource: {
            if (loss.reference.rows != B || loss.reference.cols != C) {
                throw std::invalid_argument("distance reference shape mismatch");
            }
            for (std::size_t i = 0; i < B; ++i) {
                if (!mask[i]) continue;
                const double* p = probs.row(i);
                const double* s = loss.reference.row(i);
                std::vector<double> g(C);
                if (loss.distance == DistanceKind::Kl) {
                    for (std::size_t c = 0; c < C; ++c) {
                        double pc = std::max(p[c], kProbFloor);
                        double sc = std::max(s[c], kProbFloor);
                        g[c] = (std::log(pc / sc) + 1.0) * invB;
                    }
                } else {
                    for (std::size_t c = 0; c < C; ++c) g[c] = 2.0 * (p[c] - s[c]) * invB;
                }
                softmax_vjp_row(p, g.data(), C, dz.row(i));
            }
            break;
        }
    }
    return dz;
}

}  // namespace

void ModelSpec::validate() const {
    if (input_dim < 1) throw std::invalid_argument("ModelSpec: input_dim must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("ModelSpec: num_classes must be >= 2");
    for (int d : hidden_dims) {
        if (d < 1) throw std::invalid_argument("ModelSpec: hidden dims must be >= 1");
    }
}

std::size_t ModelSpec::param_count() const {
    validate();
    return build_layout(*this).total;
}

bool ParamVector::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

ParamVector param_axpy(double a, const ParamVector& x, const ParamVector& y) {
    if (x.size() != y.size()) throw std::invalid_argument("param_axpy: length mismatch");
    ParamVector r = y;
    for (std::size_t i = 0; i < x.size(); ++i) r.values[i] += a * x.values[i];
    return r;
}

ParamVector param_scale(double a, const ParamVector& x) {
    ParamVector r = x;
    for (double& v : r.values) v *= a;
    return r;
}

double param_norm(const ParamVector& x) {
    double s = 0.0;
    for (double v : x.values) s += v * v;
    return std::sqrt(s);
}

BnStats BnStats::identity(const ModelSpec& spec) {
    BnStats stats;
    for (std::size_t i = 0; i < spec.bn_layer_count(); ++i) {
        stats.mean.emplace_back(spec.hidden_dims[i], 0.0);
        stats.var.emplace_back(spec.hidden_dims[i], 1.0);
    }
    return stats;
}

ForwardCache forward(const ModelSpec& spec, const ParamVector& params,
                     const BnStats& bn, const Matrix& batch, BnMode mode) {
    spec.validate();
    const Layout layout = build_layout(spec);
    if (params.size() != layout.total) {
        throw std::invalid_argument("forward: params length does not match spec");
    }
    if (batch.rows == 0) throw std::invalid_argument("forward: empty batch");
    if (batch.cols != static_cast<std::size_t>(spec.input_dim)) {
        throw std::invalid_argument("forward: batch width does not match input_dim");
    }
    check_finite(batch, "input batch");
    if (!params.all_finite()) throw std::invalid_argument("forward: non-finite params");
    if (mode == BnMode::Eval && spec.use_batch_norm &&
        (bn.mean.size() != spec.bn_layer_count() || bn.var.size() != spec.bn_layer_count())) {
        throw std::invalid_argument("forward: BnStats layer count does not match spec");
    }

    ForwardCache cache;
    cache.mode = mode;
    cache.input = batch;
    cache.layers.resize(spec.hidden_dims.size());

    const double* p = params.values.data();
    const Matrix* cur = &cache.input;
    const std::size_t B = batch.rows;

    for (std::size_t li = 0; li < spec.hidden_dims.size(); ++li) {
        auto& L = cache.layers[li];
        const LinearSlot& lin = layout.linears[li];
        linear_forward(*cur, p + lin.w, p + lin.b, lin.out, L.linear_out);

        if (spec.use_batch_norm) {
            const BnSlot& slot = layout.bns[li];
            const int D = slot.dim;
            L.mu.assign(D, 0.0);
            L.sigma2.assign(D, 0.0);
            if (mode == BnMode::Train) {
                // batch statistics, biased variance; running stats untouched
                for (std::size_t i = 0; i < B; ++i) {
                    const double* h = L.linear_out.row(i);
                    for (int j = 0; j < D; ++j) L.mu[j] += h[j];
                }
                for (int j = 0; j < D; ++j) L.mu[j] /= static_cast<double>(B);
                for (std::size_t i = 0; i < B; ++i) {
                    const double* h = L.linear_out.row(i);
                    for (int j = 0; j < D; ++j) {
                        double d = h[j] - L.mu[j];
                        L.sigma2[j] += d * d;
                    }
                }
                for (int j = 0; j < D; ++j) L.sigma2[j] /= static_cast<double>(B);
            } else {
                L.mu = bn.mean[li];
                L.sigma2 = bn.var[li];
            }
            L.x_hat = Matrix(B, static_cast<std::size_t>(D));
            L.pre_act = Matrix(B, static_cast<std::size_t>(D));
            const double* gamma = p + slot.gamma;
            const double* beta = p + slot.beta;
            for (std::size_t i = 0; i < B; ++i) {
                const double* h = L.linear_out.row(i);
                double* xh = L.x_hat.row(i);
                double* y = L.pre_act.row(i);
                for (int j = 0; j < D; ++j) {
                    xh[j] = (h[j] - L.mu[j]) / std::sqrt(L.sigma2[j] + kBnEpsilon);
                    y[j] = gamma[j] * xh[j] + beta[j];
                }
            }
        } else {
            L.pre_act = L.linear_out;
        }
        apply_activation(spec, L.pre_act, L.act_out);
        cur = &L.act_out;
    }

    const LinearSlot& out = layout.linears.back();
    linear_forward(*cur, p + out.w, p + out.b, out.out, cache.logits);
    softmax_rows(cache.logits, cache.probs);
    return cache;
}

double cross_entropy(const Matrix& probs, const std::vector<int>& targets,
                     const std::vector<std::uint8_t>& mask) {
    const std::size_t B = probs.rows;
    if (targets.size() != B) throw std::invalid_argument("cross_entropy: targets length mismatch");
    if (!mask.empty() && mask.size() != B) {
        throw std::invalid_argument("cross_entropy: mask length mismatch");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        if (!mask.empty() && !mask[i]) continue;
        int t = targets[i];
        if (t < 0 || static_cast<std::size_t>(t) >= probs.cols) {
            throw std::out_of_range("cross_entropy: target index out of range");
        }
        sum += -std::log(std::max(probs(i, static_cast<std::size_t>(t)), kProbFloor));
    }
    return sum / static_cast<double>(B);
}

double kl_divergence(const Matrix& p, const Matrix& q) {
    if (p.rows != q.rows || p.cols != q.cols) {
        throw std::invalid_argument("kl_divergence: shape mismatch");
    }
    for (std::size_t i = 0; i < p.rows; ++i) {
        double sp = 0.0, sq = 0.0;
        for (std::size_t c = 0; c < p.cols; ++c) {
            sp += p(i, c);
            sq += q(i, c);
        }
        if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6) {
            throw std::invalid_argument("kl_divergence: rows are not normalized");
        }
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < p.rows; ++i) {
        for (std::size_t c = 0; c < p.cols; ++c) {
            double pc = p(i, c);
            if (pc <= 0.0) continue;
            sum += pc * std::log(pc / std::max(q(i, c), kProbFloor));
        }
    }
    return sum / static_cast<double>(p.rows);
}

double loss_value(const ForwardCache& cache, const LossSpec& loss) {
    const Matrix& probs = cache.probs;
    const std::size_t B = probs.rows;
    const std::size_t C = probs.cols;
    std::vector<std::uint8_t> mask = effective_mask(loss, B);
    double sum = 0.0;
    switch (loss.kind) {
        case LossSpec::Kind::MaskedCrossEntropy: {
            if (loss.targets.size() != B) {
                throw std::invalid_argument("loss_value: targets length mismatch");
            }
            for (std::size_t i = 0; i < B; ++i) {
                if (!mask[i]) continue;
                int t = loss.targets[i];
                if (t < 0 || static_cast<std::size_t>(t) >= C) {
                    throw std::out_of_range("loss_value: target index out of range");
                }
                sum += -std::log(std::max(probs(i, static_cast<std::size_t>(t)), kProbFloor));
            }
            break;
        }
        case LossSpec::Kind::DistanceToTarget:
        case LossSpec::Kind::DistanceFromSource: {
            if (loss.reference.rows != B || loss.reference.cols != C) {
                throw std::invalid_argument("loss_value: reference shape mismatch");
            }
            const bool probs_first = loss.kind == LossSpec::Kind::DistanceFromSource;
            for (std::size_t i = 0; i < B; ++i) {
                if (!mask[i]) continue;
                const double* a = probs_first ? probs.row(i) : loss.reference.row(i);
                const double* b = probs_first ? loss.reference.row(i) : probs.row(i);
                if (loss.distance == DistanceKind::Kl) {
                    for (std::size_t c = 0; c < C; ++c) {
                        if (a[c] <= 0.0) continue;
                        sum += a[c] * std::log(a[c] / std::max(b[c], kProbFloor));
                    }
                } else {
                    for (std::size_t c = 0; c < C; ++c) {
                        double d = a[c] - b[c];
                        sum += d * d;
                    }
                }
            }
            break;
        }
    }
    return sum / static_cast<double>(B);
}

ParamVector backward(const ModelSpec& spec, const ParamVector& params,
                     const BnStats& bn, const ForwardCache& cache,
                     const LossSpec& loss) {
    (void)bn;  // eval-mode stats are captured in the cache
    spec.validate();
    const Layout layout = build_layout(spec);
    if (params.size() != layout.total) {
        throw std::invalid_argument("backward: params length does not match spec");
    }
    if (cache.layers.size() != spec.hidden_dims.size() ||
        cache.probs.cols != static_cast<std::size_t>(spec.num_classes) ||
        cache.input.cols != static_cast<std::size_t>(spec.input_dim)) {
        throw std::invalid_argument("backward: cache does not match spec");
    }

    const std::size_t B = cache.input.rows;
    const double* p = params.values.data();
    ParamVector grad = ParamVector::zeros(layout.total);
    double* g = grad.values.data();

    Matrix delta = loss_dlogits(cache, loss);  // dL/dlogits

    // output linear layer
    {
        const LinearSlot& out = layout.linears.back();
        const Matrix& in = spec.hidden_dims.empty()
                               ? cache.input
                               : cache.layers.back().act_out;
        Matrix din(B, in.cols);
        for (std::size_t i = 0; i < B; ++i) {
            const double* d = delta.row(i);
            const double* x = in.row(i);
            double* dx = din.row(i);
            for (int r = 0; r < out.out; ++r) {
                const double dr = d[r];
                if (dr == 0.0) continue;
                double* gw = g + out.w + static_cast<std::size_t>(r) * out.in;
                const double* wr = p + out.w + static_cast<std::size_t>(r) * out.in;
                for (int j = 0; j < out.in; ++j) {
                    gw[j] += dr * x[j];
                    dx[j] += dr * wr[j];
                }
                g[out.b + r] += dr;
            }
        }
        delta = std::move(din);
    }

    for (std::size_t li = spec.hidden_dims.size(); li-- > 0;) {
        const auto& L = cache.layers[li];
        const LinearSlot& lin = layout.linears[li];
        const int D = lin.out;

        // activation
        for (std::size_t i = 0; i < B; ++i) {
            double* d = delta.row(i);
            const double* pre = L.pre_act.row(i);
            const double* act = L.act_out.row(i);
            for (int j = 0; j < D; ++j) {
                if (spec.activation == Activation::Relu) {
                    d[j] = pre[j] > 0.0 ? d[j] : 0.0;
                } else {
                    d[j] *= 1.0 - act[j] * act[j];
                }
            }
        }

        // batch norm
        if (spec.use_batch_norm) {
            const BnSlot& slot = layout.bns[li];
            const double* gamma = p + slot.gamma;
            for (int j = 0; j < D; ++j) {
                const double inv_std = 1.0 / std::sqrt(L.sigma2[j] + kBnEpsilon);
                double dgamma = 0.0, dbeta = 0.0;
                for (std::size_t i = 0; i < B; ++i) {
                    const double dy = delta(i, static_cast<std::size_t>(j));
                    dgamma += dy * L.x_hat(i, static_cast<std::size_t>(j));
                    dbeta += dy;
                }
                g[slot.gamma + j] += dgamma;
                g[slot.beta + j] += dbeta;

                if (cache.mode == BnMode::Train) {
                    // batch statistics participate in the gradient
                    const double mean_dxhat = dbeta * gamma[j] / static_cast<double>(B);
                    const double mean_dxhat_xhat = dgamma * gamma[j] / static_cast<double>(B);
                    for (std::size_t i = 0; i < B; ++i) {
                        const double dxhat = delta(i, static_cast<std::size_t>(j)) * gamma[j];
                        const double xh = L.x_hat(i, static_cast<std::size_t>(j));
                        delta(i, static_cast<std::size_t>(j)) =
                            inv_std * (dxhat - mean_dxhat - xh * mean_dxhat_xhat);
                    }
                } else {
                    for (std::size_t i = 0; i < B; ++i) {
                        delta(i, static_cast<std::size_t>(j)) *= gamma[j] * inv_std;
                    }
                }
            }
        }

        // linear
        const Matrix& in = li == 0 ? cache.input : cache.layers[li - 1].act_out;
        Matrix din(B, in.cols);
        for (std::size_t i = 0; i < B; ++i) {
            const double* d = delta.row(i);
            const double* x = in.row(i);
            double* dx = din.row(i);
            for (int r = 0; r < D; ++r) {
                const double dr = d[r];
                if (dr == 0.0) continue;
                double* gw = g + lin.w + static_cast<std::size_t>(r) * lin.in;
                const double* wr = p + lin.w + static_cast<std::size_t>(r) * lin.in;
                for (int j = 0; j < lin.in; ++j) {
                    gw[j] += dr * x[j];
                    dx[j] += dr * wr[j];
                }
                g[lin.b + r] += dr;
            }
        }
        delta = std::move(din);
    }

    return grad;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed, double weight_std) {
    const Layout layout = build_layout(spec);
    ParamVector params = ParamVector::zeros(layout.total);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, weight_std);
    for (const LinearSlot& lin : layout.linears) {
        const std::size_t n = static_cast<std::size_t>(lin.in) * lin.out;
        for (std::size_t i = 0; i < n; ++i) params.values[lin.w + i] = gauss(rng);
        // biases stay zero
    }
    for (const BnSlot& slot : layout.bns) {
        for (int j = 0; j < slot.dim; ++j) {
            params.values[slot.gamma + j] = 1.0;
            params.values[slot.beta + j] = 0.0;
        }
    }
    return params;
}

}  // namespace flfl
