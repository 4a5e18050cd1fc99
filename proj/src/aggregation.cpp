#include "flfl/aggregation.hpp"

#include <algorithm>
#include <stdexcept>

namespace flfl {

AggregationWeights lsaa_weights(const std::vector<double>& taus) {
    if (taus.empty()) throw std::invalid_argument("lsaa_weights: no clients");
    for (double t : taus) {
        if (!(t >= 0.0 && t <= 1.0)) {
            throw std::invalid_argument("lsaa_weights: tau outside [0, 1]");
        }
    }
    double denom = 0.0;
    for (double t : taus) denom += 1.0 - t;

    AggregationWeights w;
    if (denom < 1e-12) {
        // every client fully confident: the status weights are undefined
        return uniform_weights(taus.size());
    }
    w.beta.resize(taus.size());
    for (std::size_t k = 0; k < taus.size(); ++k) w.beta[k] = (1.0 - taus[k]) / denom;
    return w;
}

AggregationWeights uniform_weights(std::size_t k) {
    if (k == 0) throw std::invalid_argument("uniform_weights: no clients");
    AggregationWeights w;
    w.beta.assign(k, 1.0 / static_cast<double>(k));
    return w;
}

ParamVector aggregate(const std::vector<ParamVector>& client_params,
                      const AggregationWeights& weights) {
    if (client_params.empty()) throw std::invalid_argument("aggregate: no clients");
    if (client_params.size() != weights.beta.size()) {
        throw std::invalid_argument("aggregate: weight count does not match client count");
    }
    const std::size_t n = client_params.front().size();
    ParamVector out = ParamVector::zeros(n);
    for (std::size_t k = 0; k < client_params.size(); ++k) {
        if (client_params[k].size() != n) {
            throw std::invalid_argument("aggregate: client param length mismatch");
        }
        const double b = weights.beta[k];
        for (std::size_t i = 0; i < n; ++i) out[i] += b * client_params[k][i];
    }
    return out;
}

ServerOptState ServerOptState::init(std::size_t param_count, double momentum) {
    ServerOptState s;
    s.velocity = ParamVector::zeros(param_count);
    s.momentum = momentum;
    return s;
}

ParamVector server_momentum_step(ServerOptState& state, const ParamVector& global,
                                 const ParamVector& aggregated) {
    if (global.size() != aggregated.size() || global.size() != state.velocity.size()) {
        throw std::invalid_argument("server_momentum_step: length mismatch");
    }
    for (std::size_t i = 0; i < global.size(); ++i) {
        const double delta = aggregated[i] - global[i];
        state.velocity[i] = state.momentum * state.velocity[i] + delta;
    }
    return param_axpy(1.0, state.velocity, global);
}

BnStats sbn_recompute(const ModelSpec& spec, const ParamVector& params,
                      const std::vector<const Matrix*>& streams) {
    std::size_t total = 0;
    for (const Matrix* m : streams) {
        if (m == nullptr) throw std::invalid_argument("sbn_recompute: null stream");
        if (m->rows > 0 && m->cols != static_cast<std::size_t>(spec.input_dim)) {
            throw std::invalid_argument("sbn_recompute: stream width does not match input_dim");
        }
        total += m->rows;
    }
    if (total == 0) throw std::invalid_argument("sbn_recompute: empty data stream");

    Matrix all(total, static_cast<std::size_t>(spec.input_dim));
    std::size_t at = 0;
    for (const Matrix* m : streams) {
        std::copy(m->data.begin(), m->data.end(), all.row(at));
        at += m->rows;
    }

    BnStats stats;
    stats.sample_count = static_cast<std::int64_t>(total);
    if (spec.bn_layer_count() == 0) return stats;

    // A train-mode pass normalizes each layer with the whole stream's own
    // statistics before feeding the next, exactly the cumulative semantics
    // we want; the cache already holds those statistics.
    ForwardCache cache = forward(spec, params, BnStats::identity(spec), all, BnMode::Train);
    for (const auto& layer : cache.layers) {
        stats.mean.push_back(layer.mu);
        stats.var.push_back(layer.sigma2);
    }
    return stats;
}

}  // namespace flfl
