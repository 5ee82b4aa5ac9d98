#pragma once

#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "repsnet/model.hpp"
#include "repsnet/serialize.hpp"

// Binary model persistence: the full configuration (vocabulary and class list
// included) as a text blob, followed by every named parameter tensor in
// little-endian 64-bit floats. Round trips are bit-exact.

namespace repsnet {

inline void save_checkpoint(RepsNetModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    io::write_magic(out, "RSNC");
    io::write_u32(out, 1); // version

    io::write_string(out, serialize_config(m.cfg));

    uint64_t count = 0;
    m.for_each([&](const std::string&, Tensor&) { ++count; });
    io::write_u64(out, count);
    m.for_each([&](const std::string& name, Tensor& t) {
        io::write_string(out, name);
        io::write_u32(out, static_cast<uint32_t>(t.shape().size()));
        for (int extent : t.shape()) io::write_u64(out, static_cast<uint64_t>(extent));
        for (double v : t.data()) io::write_f64(out, v);
    });
    if (!out) throw IoError("write failed for " + path);
}

inline RepsNetModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    io::expect_magic(in, "RSNC", ("checkpoint " + path).c_str());
    const uint32_t version = io::read_u32(in);
    if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version));

    const Config cfg = parse_config(io::read_string(in));
    if (cfg.vocab.empty()) throw IoError("checkpoint " + path + " carries no vocabulary");
    RepsNetModel m = make_model(cfg, Vocab::from_tokens(cfg.vocab), AnswerVocab::from_classes(cfg.classes));

    const uint64_t count = io::read_u64(in);
    std::map<std::string, std::pair<std::vector<int>, std::vector<double>>> stored;
    for (uint64_t i = 0; i < count; ++i) {
        const std::string name = io::read_string(in);
        const uint32_t rank = io::read_u32(in);
        std::vector<int> shape(rank);
        size_t numel = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            shape[r] = static_cast<int>(io::read_u64(in));
            numel *= static_cast<size_t>(shape[r]);
        }
        std::vector<double> data(numel);
        for (double& v : data) v = io::read_f64(in);
        if (!stored.emplace(name, std::make_pair(std::move(shape), std::move(data))).second) {
            throw IoError("checkpoint " + path + " repeats tensor " + name);
        }
    }

    size_t assigned = 0;
    m.for_each([&](const std::string& name, Tensor& t) {
        const auto it = stored.find(name);
        if (it == stored.end()) throw IoError("checkpoint " + path + " is missing tensor " + name);
        if (it->second.first != t.shape()) {
            throw IoError("checkpoint " + path + " has a mismatched shape for " + name);
        }
        t.mutable_data() = it->second.second;
        ++assigned;
    });
    if (assigned != stored.size()) {
        throw IoError("checkpoint " + path + " carries " + std::to_string(stored.size() - assigned) +
                      " unknown tensors");
    }
    return m;
}

} // namespace repsnet
