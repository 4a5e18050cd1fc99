#include "flfl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace flfl {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

void write_doubles(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& is, std::size_t n, const std::string& path) {
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint truncated: " + path);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamVector& params,
                     const BnStats& bn) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);

    os << "flfl-params v1 " << params.size() << "\n";
    write_doubles(os, params.values);

    os << "flfl-bnstats v1 " << bn.mean.size() << " " << bn.sample_count;
    for (const auto& layer : bn.mean) os << " " << layer.size();
    os << "\n";
    for (std::size_t i = 0; i < bn.mean.size(); ++i) {
        write_doubles(os, bn.mean[i]);
        write_doubles(os, bn.var[i]);
    }
    if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);

    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("checkpoint missing header: " + path);
    std::istringstream head(line);
    std::string magic, version;
    std::size_t count = 0;
    head >> magic >> version >> count;
    if (magic != "flfl-params" || version != "v1" || head.fail()) {
        throw std::runtime_error("bad checkpoint header: " + path);
    }

    Checkpoint ckpt;
    ckpt.params.values = read_doubles(is, count, path);

    if (!std::getline(is, line)) throw std::runtime_error("checkpoint missing bnstats header: " + path);
    std::istringstream bh(line);
    std::size_t layers = 0;
    std::int64_t samples = 0;
    bh >> magic >> version >> layers >> samples;
    if (magic != "flfl-bnstats" || version != "v1" || bh.fail()) {
        throw std::runtime_error("bad bnstats header: " + path);
    }
    std::vector<std::size_t> sizes(layers);
    for (std::size_t i = 0; i < layers; ++i) {
        bh >> sizes[i];
        if (bh.fail()) throw std::runtime_error("bad bnstats layer sizes: " + path);
    }
    ckpt.bn.sample_count = samples;
    for (std::size_t i = 0; i < layers; ++i) {
        ckpt.bn.mean.push_back(read_doubles(is, sizes[i], path));
        ckpt.bn.var.push_back(read_doubles(is, sizes[i], path));
    }
    return ckpt;
}

}  // namespace flfl
