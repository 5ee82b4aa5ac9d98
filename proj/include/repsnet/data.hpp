#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "repsnet/errors.hpp"
#include "repsnet/rng.hpp"
#include "repsnet/vocab.hpp"

// Dataset loading (JSONL), answer-class filtering, and batching. Records keep
// raw strings alongside token ids so datasets can round-trip to disk.

namespace repsnet {

constexpr int kMaxAnswerTokens = 200; // hard cap for open-ended answers
constexpr int kMaxQuestionTokens = 12;

struct ImageGrid {
    int height = 0;
    int width = 0;
    std::vector<double> pixels; // raw 0-255 values, row-major

    double at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
};

enum class AnswerType { Close, Open };

struct Sample {
    std::string id;
    ImageGrid image;
    std::vector<int> question;       // no specials, capped at kMaxQuestionTokens
    std::string question_text;
    AnswerType answer_type = AnswerType::Close;
    std::string answer_class_text;   // close only
    int answer_class = -1;           // assigned by filter_min_occurrence
    std::vector<int> answer_text;    // open only: BOS ... EOS, capped at kMaxAnswerTokens
    std::string answer_text_raw;
    bool unseen = false;             // eval-only flag set by filter_min_occurrence
};

struct Dataset {
    std::vector<Sample> samples;
    std::string split; // "train" | "eval"
};

// Raw pre-tokenization record; the JSONL surface.
struct RawRecord {
    std::string id;
    ImageGrid image;
    std::string question;
    AnswerType answer_type = AnswerType::Close;
    std::string answer_class; // iff close
    std::string answer_text;  // iff open
};

// Truncates to `cap` tokens; when truncation happened and the sequence carries
// an EOS convention, the final kept slot is forced to EOS.
inline std::vector<int> cap_sequence(std::vector<int> ids, int cap, bool force_eos) {
    if (static_cast<int>(ids.size()) <= cap) return ids;
    ids.resize(static_cast<size_t>(cap));
    if (force_eos && cap > 0) ids[static_cast<size_t>(cap) - 1] = Vocab::kEos;
    return ids;
}

namespace detail {

inline ImageGrid parse_image(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw IoError(where + ": \"image\" must be a non-empty array of rows");
    ImageGrid g;
    g.height = static_cast<int>(j.size());
    for (const auto& row : j) {
        if (!row.is_array() || row.empty()) throw IoError(where + ": image rows must be non-empty arrays");
        if (g.width == 0) g.width = static_cast<int>(row.size());
        if (static_cast<int>(row.size()) != g.width) throw IoError(where + ": ragged image rows");
        for (const auto& px : row) {
            if (!px.is_number_integer()) throw IoError(where + ": image pixels must be integers");
            const int64_t v = px.get<int64_t>();
            if (v < 0 || v > 255) throw IoError(where + ": pixel value " + std::to_string(v) + " outside 0-255");
            g.pixels.push_back(static_cast<double>(v));
        }
    }
    return g;
}

inline std::string require_string(const nlohmann::json& j, const char* field, const std::string& where) {
    if (!j.contains(field)) throw IoError(where + ": missing required field \"" + field + "\"");
    if (!j.at(field).is_string()) throw IoError(where + ": field \"" + field + "\" must be a string");
    return j.at(field).get<std::string>();
}

} // namespace detail

inline RawRecord parse_record(const std::string& line, const std::string& where) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw IoError(where + ": malformed JSON");
    if (!j.is_object()) throw IoError(where + ": record must be a JSON object");
    RawRecord r;
    r.id = detail::require_string(j, "id", where);
    if (!j.contains("image")) throw IoError(where + ": missing required field \"image\"");
    r.image = detail::parse_image(j.at("image"), where);
    r.question = detail::require_string(j, "question", where);
    const std::string type = detail::require_string(j, "answer_type", where);
    if (type == "close") {
        r.answer_type = AnswerType::Close;
        r.answer_class = detail::require_string(j, "answer_class", where);
        if (j.contains("answer_text")) throw IoError(where + ": close-ended record must not carry \"answer_text\"");
    } else if (type == "open") {
        r.answer_type = AnswerType::Open;
        r.answer_text = detail::require_string(j, "answer_text", where);
        if (j.contains("answer_class")) throw IoError(where + ": open-ended record must not carry \"answer_class\"");
    } else {
        throw IoError(where + ": \"answer_type\" must be \"close\" or \"open\", got \"" + type + "\"");
    }
    return r;
}

inline Sample make_sample(const RawRecord& r, const Vocab& vocab) {
    Sample s;
    s.id = r.id;
    s.image = r.image;
    s.question_text = r.question;
    s.question = cap_sequence(vocab.encode(r.question, false), kMaxQuestionTokens, false);
    s.answer_type = r.answer_type;
    if (r.answer_type == AnswerType::Close) {
        s.answer_class_text = r.answer_class;
    } else {
        s.answer_text_raw = r.answer_text;
        s.answer_text = cap_sequence(vocab.encode(r.answer_text, true), kMaxAnswerTokens, true);
    }
    return s;
}

inline std::vector<RawRecord> load_jsonl_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<RawRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        records.push_back(parse_record(line, path + ":" + std::to_string(line_no)));
    }
    return records;
}

inline Dataset load_jsonl(const std::string& path, const Vocab& vocab, const std::string& split) {
    Dataset ds;
    ds.split = split;
    std::map<std::string, int> seen_ids;
    for (const RawRecord& r : load_jsonl_records(path)) {
        if (++seen_ids[r.id] > 1) throw IoError(path + ": duplicate sample id \"" + r.id + "\"");
        ds.samples.push_back(make_sample(r, vocab));
    }
    if (ds.samples.empty()) throw IoError(path + ": dataset is empty");
    return ds;
}

inline void write_jsonl(const std::string& path, const std::vector<RawRecord>& records) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (const RawRecord& r : records) {
        nlohmann::json j;
        j["id"] = r.id;
        std::vector<std::vector<int>> rows(static_cast<size_t>(r.image.height));
        for (int i = 0; i < r.image.height; ++i)
            for (int c = 0; c < r.image.width; ++c)
                rows[static_cast<size_t>(i)].push_back(static_cast<int>(r.image.at(i, c)));
        j["image"] = rows;
        j["question"] = r.question;
        if (r.answer_type == AnswerType::Close) {
            j["answer_type"] = "close";
            j["answer_class"] = r.answer_class;
        } else {
            j["answer_type"] = "open";
            j["answer_text"] = r.answer_text;
        }
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("write failed for " + path);
}

// Removes close-ended classes with train occurrence below min_occurrence,
// drops their train instances, flags eval instances of unretained classes as
// unseen (they stay in the set but leave the accuracy denominator), and
// assigns contiguous class ids by descending train count (ties lexicographic).
inline AnswerVocab filter_min_occurrence(Dataset& train, Dataset& eval, int min_occurrence) {
    std::map<std::string, int64_t> counts;
    for (const Sample& s : train.samples) {
        if (s.answer_type == AnswerType::Close) ++counts[s.answer_class_text];
    }
    std::vector<std::pair<std::string, int64_t>> kept;
    for (const auto& [cls, n] : counts) {
        if (n >= min_occurrence) kept.emplace_back(cls, n);
    }
    if (!counts.empty() && kept.empty()) {
        throw ContractError("min occurrence " + std::to_string(min_occurrence) +
                            " filters out every answer class");
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> in_order;
    for (const auto& [cls, n] : kept) in_order.push_back(cls);
    AnswerVocab av = AnswerVocab::from_classes(in_order);

    std::vector<Sample> retained;
    for (Sample& s : train.samples) {
        if (s.answer_type == AnswerType::Close) {
            const int id = av.id(s.answer_class_text);
            if (id < 0) continue; // class filtered out: instance dropped from train
            s.answer_class = id;
        }
        retained.push_back(std::move(s));
    }
    train.samples = std::move(retained);
    for (Sample& s : eval.samples) {
        if (s.answer_type != AnswerType::Close) continue;
        const int id = av.id(s.answer_class_text);
        s.answer_class = id;
        s.unseen = id < 0;
    }
    return av;
}

struct Batch {
    std::vector<const Sample*> samples;
    std::vector<std::vector<int>> question_ids; // padded with PAD
    std::vector<std::vector<int>> question_mask;
    std::vector<std::vector<int>> answer_ids;   // padded with PAD (open samples; empty rows otherwise)
    std::vector<std::vector<int>> answer_mask;
};

// Deterministic batching: optional seed-driven shuffle, last partial batch
// kept, per-batch padding to the longest sequence.
inline std::vector<Batch> make_batches(const Dataset& ds, int batch_size, uint64_t seed, bool shuffle) {
    if (batch_size < 1) throw ContractError("batch size must be >= 1");
    std::vector<size_t> order(ds.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (shuffle) {
        Rng rng(seed);
        rng.shuffle(order);
    }
    std::vector<Batch> batches;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
        Batch b;
        size_t max_q = 0, max_a = 0;
        for (size_t i = start; i < end; ++i) {
            const Sample& s = ds.samples[order[i]];
            b.samples.push_back(&s);
            max_q = std::max(max_q, s.question.size());
            max_a = std::max(max_a, s.answer_text.size());
        }
        for (const Sample* s : b.samples) {
            std::vector<int> q = cap_sequence(s->question, kMaxQuestionTokens, false);
            std::vector<int> a = cap_sequence(s->answer_text, kMaxAnswerTokens, true);
            q.resize(std::min(max_q, static_cast<size_t>(kMaxQuestionTokens)), Vocab::kPad);
            a.resize(std::min(max_a, static_cast<size_t>(kMaxAnswerTokens)), Vocab::kPad);
            std::vector<int> qm(q.size()), am(a.size());
            for (size_t i = 0; i < q.size(); ++i) qm[i] = q[i] != Vocab::kPad ? 1 : 0;
            for (size_t i = 0; i < a.size(); ++i) am[i] = a[i] != Vocab::kPad ? 1 : 0;
            b.question_ids.push_back(std::move(q));
            b.question_mask.push_back(std::move(qm));
            b.answer_ids.push_back(std::move(a));
            b.answer_mask.push_back(std::move(am));
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

} // namespace repsnet
