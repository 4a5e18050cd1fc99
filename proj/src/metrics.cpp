#include "flfl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace flfl {

namespace {

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, const std::string& path) {
    const char* begin = s.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin) {
        throw std::runtime_error("metrics parse error in " + path + ": '" + s + "'");
    }
    return v;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

}  // namespace

PseudoLabelSummary pseudo_label_metrics(const std::vector<ClientRoundObservation>& clients) {
    std::size_t total = 0, masked = 0, correct = 0;
    for (const auto& c : clients) {
        if (!c.table || !c.mask || !c.hidden_labels) {
            throw std::invalid_argument("pseudo_label_metrics: incomplete observation");
        }
        const std::size_t n = c.table->size();
        if (c.mask->size() != n || c.hidden_labels->size() != n) {
            throw std::invalid_argument("pseudo_label_metrics: size mismatch");
        }
        total += n;
        for (std::size_t i = 0; i < n; ++i) {
            if (!(*c.mask)[i]) continue;
            ++masked;
            if (c.table->hard_label[i] == (*c.hidden_labels)[i]) ++correct;
        }
    }
    if (total == 0) throw std::invalid_argument("pseudo_label_metrics: no samples");

    const std::size_t wrong = masked - correct;
    PseudoLabelSummary s;
    s.label_ratio = static_cast<double>(masked) / static_cast<double>(total);
    s.correct_ratio = static_cast<double>(correct) / static_cast<double>(total);
    s.wrong_ratio = static_cast<double>(wrong) / static_cast<double>(total);
    s.pseudo_label_accuracy =
        masked == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(masked);
    if (wrong == 0) {
        s.cw_ratio = correct == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    } else {
        s.cw_ratio = static_cast<double>(correct) / static_cast<double>(wrong);
    }
    return s;
}

double test_accuracy(const ModelSpec& spec, const ParamVector& params,
                     const BnStats& bn, const Matrix& features,
                     const std::vector<int>& labels) {
    if (features.rows == 0) throw std::invalid_argument("test_accuracy: empty test set");
    if (features.rows != labels.size()) {
        throw std::invalid_argument("test_accuracy: labels do not match features");
    }
    ForwardCache cache = forward(spec, params, bn, features, BnMode::Eval);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < cache.probs.rows; ++i) {
        const double* p = cache.probs.row(i);
        std::size_t best = 0;
        for (std::size_t c = 1; c < cache.probs.cols; ++c) {
            if (p[c] > p[best]) best = c;
        }
        if (static_cast<int>(best) == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(features.rows);
}

std::string metrics_header(std::size_t num_clients) {
    std::ostringstream os;
    os << "round,test_accuracy,pseudo_label_accuracy,label_ratio,"
          "correct_label_ratio,wrong_label_ratio,cw_ratio,mean_la,mean_lcs";
    for (std::size_t k = 0; k < num_clients; ++k) os << ",tau_" << k;
    for (std::size_t k = 0; k < num_clients; ++k) os << ",beta_" << k;
    return os.str();
}

std::string format_metrics_line(const RoundMetrics& rec) {
    if (rec.taus.size() != rec.betas.size()) {
        throw std::invalid_argument("metrics record: tau/beta count mismatch");
    }
    std::ostringstream os;
    os << rec.round << ',' << fmt(rec.test_accuracy) << ','
       << fmt(rec.pseudo_label_accuracy) << ',' << fmt(rec.label_ratio) << ','
       << fmt(rec.correct_label_ratio) << ',' << fmt(rec.wrong_label_ratio) << ','
       << fmt(rec.cw_ratio) << ',' << fmt(rec.mean_la) << ',' << fmt(rec.mean_lcs);
    for (double t : rec.taus) os << ',' << fmt(t);
    for (double b : rec.betas) os << ',' << fmt(b);
    return os.str();
}

MetricsWriter::MetricsWriter(std::string path) : path_(std::move(path)) {}

void MetricsWriter::append(const RoundMetrics& rec) {
    std::ofstream out(path_, header_written_ ? std::ios::app : std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open metrics file " + path_);
    if (!header_written_) {
        clients_ = rec.taus.size();
        out << metrics_header(clients_) << '\n';
        header_written_ = true;
    }
    if (rec.taus.size() != clients_ || rec.betas.size() != clients_) {
        throw std::invalid_argument("metrics record: client count changed mid-log");
    }
    out << format_metrics_line(rec) << '\n';
    if (!out) throw std::runtime_error("write failed for metrics file " + path_);
}

void write_metrics(const std::string& path, const std::vector<RoundMetrics>& records) {
    MetricsWriter writer(path);
    for (const auto& rec : records) writer.append(rec);
    if (records.empty()) {
        // still emit a header so the file is well-formed
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open metrics file " + path);
        out << metrics_header(0) << '\n';
    }
}

std::vector<RoundMetrics> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics file " + path);
    std::string header;
    if (!std::getline(in, header)) {
        throw std::runtime_error("metrics file missing header: " + path);
    }
    const auto columns = split_csv(header);
    if (columns.size() < 9 || (columns.size() - 9) % 2 != 0) {
        throw std::runtime_error("malformed metrics header in " + path);
    }
    const std::size_t num_clients = (columns.size() - 9) / 2;

    std::vector<RoundMetrics> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != columns.size()) {
            throw std::runtime_error("metrics row width mismatch in " + path);
        }
        RoundMetrics r;
        r.round = static_cast<int>(parse_double(f[0], path));
        r.test_accuracy = parse_double(f[1], path);
        r.pseudo_label_accuracy = parse_double(f[2], path);
        r.label_ratio = parse_double(f[3], path);
        r.correct_label_ratio = parse_double(f[4], path);
        r.wrong_label_ratio = parse_double(f[5], path);
        r.cw_ratio = parse_double(f[6], path);
        r.mean_la = parse_double(f[7], path);
        r.mean_lcs = parse_double(f[8], path);
        for (std::size_t k = 0; k < num_clients; ++k) {
            r.taus.push_back(parse_double(f[9 + k], path));
        }
        for (std::size_t k = 0; k < num_clients; ++k) {
            r.betas.push_back(parse_double(f[9 + num_clients + k], path));
        }
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace flfl
