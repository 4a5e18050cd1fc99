#pragma once

#include <cstddef>
#include <vector>

#include "flfl/nn.hpp"

namespace flfl {

// Convex combination over the round's selected clients.
struct AggregationWeights {
    std::vector<double> beta;  // non-negative, sums to 1
};

// beta_k = (1 - tau_k) / sum_j (1 - tau_j): clients whose pseudo-labels the
// global model is least confident about get the largest say. Falls back to
// uniform when every client is fully confident (denominator ~ 0).
AggregationWeights lsaa_weights(const std::vector<double>& taus);

AggregationWeights uniform_weights(std::size_t k);

// Element-wise sum_k beta_k * W_k.
ParamVector aggregate(const std::vector<ParamVector>& client_params,
                      const AggregationWeights& weights);

// Server-side momentum over rounds; the aggregate-minus-global difference is
// treated as the gradient of the global weights.
struct ServerOptState {
    ParamVector velocity;
    double momentum = 0.5;

    static ServerOptState init(std::size_t param_count, double momentum);
};

// delta = aggregated - global; velocity <- momentum*velocity + delta;
// returns global + velocity. Mutates `state`.
ParamVector server_momentum_step(ServerOptState& state, const ParamVector& global,
                                 const ParamVector& aggregated);

// One exact full-stream pass at `params` over every matrix in `streams`,
// recording per-layer batch statistics. Training never touches these; this is
// the only producer of BnStats used by eval-mode forwards.
BnStats sbn_recompute(const ModelSpec& spec, const ParamVector& params,
                      const std::vector<const Matrix*>& streams);

}  // namespace flfl
