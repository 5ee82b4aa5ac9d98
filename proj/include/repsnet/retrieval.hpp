#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "repsnet/errors.hpp"
#include "repsnet/serialize.hpp"

// Exact nearest-neighbour store over unit-norm answer embeddings. Rows are
// normalized on insert, search is an exhaustive cosine scan with stable
// insertion-order tie-breaking, and persistence is bit-exact.

namespace repsnet {

struct RetrievedItem {
    double score = 0.0;
    std::vector<int> tokens;
    std::string id;
};

class AnswerIndex {
  public:
    explicit AnswerIndex(int dim) : dim_(dim) {
        if (dim < 1) throw ContractError("index dimension must be positive");
    }

    int dim() const { return dim_; }
    size_t size() const { return ids_.size(); }

    void add(const std::vector<double>& vec, std::vector<int> tokens, std::string id) {
        if (static_cast<int>(vec.size()) != dim_) {
            throw DimensionError("index expects " + std::to_string(dim_) + "-dim vectors, got " +
                                 std::to_string(vec.size()));
        }
        double n2 = 0.0;
        for (double v : vec) n2 += v * v;
        const double norm = std::sqrt(n2);
        if (norm == 0.0) throw ContractError("cannot index a zero vector");
        for (double v : vec) rows_.push_back(v / norm);
        payloads_.push_back(std::move(tokens));
        ids_.push_back(std::move(id));
    }

    // The k stored rows with the highest cosine similarity to the query,
    // scores non-increasing, ties resolved toward earlier insertion.
    std::vector<RetrievedItem> topk(const std::vector<double>& query, int k) const {
        if (ids_.empty()) throw ContractError("top-k search on an empty index");
        if (k < 1) throw ContractError("top-k needs k >= 1");
        if (static_cast<int>(query.size()) != dim_) {
            throw DimensionError("query dimension " + std::to_string(query.size()) +
                                 " does not match index dimension " + std::to_string(dim_));
        }
        double qn2 = 0.0;
        for (double v : query) qn2 += v * v;
        const double qnorm = std::sqrt(qn2);
        if (qnorm == 0.0) throw ContractError("top-k search with a zero query");

        std::vector<std::pair<double, size_t>> scored(ids_.size());
        for (size_t i = 0; i < ids_.size(); ++i) {
            double dot = 0.0;
            const double* row = rows_.data() + i * static_cast<size_t>(dim_);
            for (int j = 0; j < dim_; ++j) dot += row[j] * query[static_cast<size_t>(j)];
            scored[i] = {dot / qnorm, i};
        }
        std::stable_sort(scored.begin(), scored.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        const size_t take = std::min(static_cast<size_t>(k), ids_.size());
        std::vector<RetrievedItem> out(take);
        for (size_t i = 0; i < take; ++i) {
            out[i].score = scored[i].first;
            out[i].tokens = payloads_[scored[i].second];
            out[i].id = ids_[scored[i].second];
        }
        return out;
    }

    const double* row(size_t i) const { return rows_.data() + i * static_cast<size_t>(dim_); }
    const std::vector<int>& payload(size_t i) const { return payloads_[i]; }
    const std::string& sample_id(size_t i) const { return ids_[i]; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open " + path + " for writing");
        io::write_magic(out, "RNIX");
        io::write_u32(out, 1); // version
        io::write_u32(out, static_cast<uint32_t>(dim_));
        io::write_u64(out, static_cast<uint64_t>(ids_.size()));
        for (size_t i = 0; i < ids_.size(); ++i) {
            for (int j = 0; j < dim_; ++j) io::write_f64(out, row(i)[j]);
            io::write_u32(out, static_cast<uint32_t>(payloads_[i].size()));
            for (int t : payloads_[i]) io::write_u32(out, static_cast<uint32_t>(t));
            io::write_u32(out, static_cast<uint32_t>(ids_[i].size()));
            out.write(ids_[i].data(), static_cast<std::streamsize>(ids_[i].size()));
        }
        if (!out) throw IoError("write failed for " + path);
    }

    static AnswerIndex load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path);
        io::expect_magic(in, "RNIX", ("answer index " + path).c_str());
        const uint32_t version = io::read_u32(in);
        if (version != 1) throw IoError("unsupported answer index version " + std::to_string(version));
        const uint32_t d = io::read_u32(in);
        const uint64_t count = io::read_u64(in);
        AnswerIndex idx(static_cast<int>(d));
        for (uint64_t i = 0; i < count; ++i) {
            std::vector<double> row(d);
            for (uint32_t j = 0; j < d; ++j) row[j] = io::read_f64(in);
            const uint32_t ntok = io::read_u32(in);
            std::vector<int> toks(ntok);
            for (uint32_t j = 0; j < ntok; ++j) toks[j] = static_cast<int>(io::read_u32(in));
            const uint32_t idlen = io::read_u32(in);
            std::string id(idlen, '\0');
            if (idlen > 0) {
                in.read(id.data(), static_cast<std::streamsize>(idlen));
                if (in.gcount() != static_cast<std::streamsize>(idlen)) {
                    throw IoError("truncated answer index " + path);
                }
            }
            // rows were normalized before save; store verbatim for bit-exactness
            idx.rows_.insert(idx.rows_.end(), row.begin(), row.end());
            idx.payloads_.push_back(std::move(toks));
            idx.ids_.push_back(std::move(id));
        }
        return idx;
    }

  private:
    int dim_;
    std::vector<double> rows_; // size() * dim_, unit rows
    std::vector<std::vector<int>> payloads_;
    std::vector<std::string> ids_;
};

} // namespace repsnet
