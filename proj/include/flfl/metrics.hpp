#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flfl/fssl.hpp"
#include "flfl/nn.hpp"

namespace flfl {

// One row of the per-round log. `taus` and `betas` follow the round's
// selected clients in ascending client-id order.
struct RoundMetrics {
    int round = 0;
    double test_accuracy = 0.0;
    double pseudo_label_accuracy = 0.0;
    double label_ratio = 0.0;
    double correct_label_ratio = 0.0;
    double wrong_label_ratio = 0.0;
    double cw_ratio = 0.0;  // +infinity when wrong = 0 and correct > 0
    double mean_la = 0.0;
    double mean_lcs = 0.0;
    std::vector<double> taus;
    std::vector<double> betas;
};

// Everything the confirmation-bias diagnostics need from one selected client:
// the frozen pseudo-label table, the adaptive-threshold mask over all local
// samples, and the metrics-only ground truth.
struct ClientRoundObservation {
    const PseudoLabelTable* table = nullptr;
    const std::vector<std::uint8_t>* mask = nullptr;
    const std::vector<int>* hidden_labels = nullptr;
};

struct PseudoLabelSummary {
    double pseudo_label_accuracy = 0.0;  // correct / masked (0 when none masked)
    double label_ratio = 0.0;            // masked / total
    double correct_ratio = 0.0;          // masked-and-correct / total
    double wrong_ratio = 0.0;            // masked-and-wrong / total
    double cw_ratio = 0.0;               // correct / wrong counts
};

// Pooled over all given clients' samples.
PseudoLabelSummary pseudo_label_metrics(const std::vector<ClientRoundObservation>& clients);

// Fraction of argmax matches under eval-mode forward.
double test_accuracy(const ModelSpec& spec, const ParamVector& params,
                     const BnStats& bn, const Matrix& features,
                     const std::vector<int>& labels);

// CSV log: one header line, one line per round, numbers at 17 significant
// digits so read(write(x)) is bit-exact; infinite cw_ratio prints as `inf`.
void write_metrics(const std::string& path, const std::vector<RoundMetrics>& records);
std::vector<RoundMetrics> read_metrics(const std::string& path);

// Incremental writer used by the round loop; header goes out with the first
// record and every record must carry the same client count.
class MetricsWriter {
  public:
    explicit MetricsWriter(std::string path);
    void append(const RoundMetrics& rec);

  private:
    std::string path_;
    std::size_t clients_ = 0;
    bool header_written_ = false;
};

std::string format_metrics_line(const RoundMetrics& rec);
std::string metrics_header(std::size_t num_clients);

}  // namespace flfl
