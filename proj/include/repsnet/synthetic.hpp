#pragma once

#include <string>
#include <vector>

#include "repsnet/data.hpp"
#include "repsnet/rng.hpp"
#include "repsnet/vocab.hpp"

// Deterministic synthetic image/question/answer triples. Each visual concept
// is a pattern of brightened quadrants; close-ended answers name the pattern,
// open-ended answers describe it with short templated sentences. Templates are
// chosen so no bigram repeats inside one answer, keeping the texts learnable
// under repeat-blocking generation.

namespace repsnet {

struct SynthSpec {
    enum class Mode { Mixed, Close, Open };
    int n_samples = 64;
    int n_concepts = 4; // 1..15 distinct quadrant patterns; at least 2 required
    int height = 16;
    int width = 16;
    Mode mode = Mode::Mixed;
};

struct SynthData {
    std::vector<RawRecord> train_records;
    std::vector<RawRecord> eval_records;
};

struct MaterializedData {
    Dataset train;
    Dataset eval;
    Vocab vocab;
};

namespace detail {

// Quadrant masks ordered singles -> pairs -> triples -> all four, so small
// concept counts get the four cleanest patterns first.
inline const std::vector<int>& concept_masks() {
    static const std::vector<int> masks = {1, 2, 4, 8, 3, 5, 6, 9, 10, 12, 7, 11, 13, 14, 15};
    return masks;
}

inline std::string concept_phrase(int mask) {
    static const char* names[4] = {"upper left", "upper right", "lower left", "lower right"};
    static const char* joins[3] = {" and ", " plus ", " also "};
    std::string out;
    int joined = 0;
    for (int bit = 0; bit < 4; ++bit) {
        if (!(mask & (1 << bit))) continue;
        if (!out.empty()) out += joins[joined++];
        out += names[bit];
    }
    return out;
}

inline ImageGrid concept_image(int mask, int height, int width, Rng& rng) {
    ImageGrid g;
    g.height = height;
    g.width = width;
    g.pixels.resize(static_cast<size_t>(height) * width);
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const int quadrant = (r < height / 2 ? 0 : 2) + (c < width / 2 ? 0 : 1);
            const bool bright = (mask & (1 << quadrant)) != 0;
            const double v = bright ? 180.0 + static_cast<double>(rng.uniform_int(60))
                                    : 20.0 + static_cast<double>(rng.uniform_int(40));
            g.pixels[static_cast<size_t>(r) * width + c] = v;
        }
    }
    return g;
}

inline std::string open_answer(const std::string& pos, Rng& rng) {
    static const char* leads[3] = {
        "the bright patch fills the %s of the frame .",
        "strong light appears over the %s region .",
        "most brightness gathers near the %s corner .",
    };
    static const char* fillers[3] = {
        "edges stay dark .",
        "contrast looks sharp .",
        "background remains dim .",
    };
    std::string lead = leads[rng.uniform_int(3)];
    const size_t at = lead.find("%s");
    lead = lead.substr(0, at) + pos + lead.substr(at + 2);
    const uint64_t extra = rng.uniform_int(3); // 0..2 filler sentences
    std::vector<size_t> filler_order = {0, 1, 2};
    rng.shuffle(filler_order);
    std::string out = lead;
    for (uint64_t i = 0; i < extra; ++i) {
        out += " ";
        out += fillers[filler_order[static_cast<size_t>(i)]];
    }
    return out;
}

} // namespace detail

inline SynthData generate_synthetic_records(const SynthSpec& spec, uint64_t seed) {
    if (spec.n_concepts < 2) throw ContractError("synthetic data needs at least 2 concept classes");
    if (spec.n_concepts > static_cast<int>(detail::concept_masks().size())) {
        throw ContractError("at most 15 distinct concept classes are available");
    }
    if (spec.n_samples < 2) throw ContractError("synthetic data needs at least 2 samples");
    if (spec.height < 2 || spec.width < 2) throw ContractError("synthetic images need at least 2x2 pixels");

    static const char* questions[3] = {
        "where is the bright region",
        "which part of the image looks bright",
        "what area holds the light",
    };

    std::vector<RawRecord> all;
    for (int i = 0; i < spec.n_samples; ++i) {
        Rng rng(mix_seed(seed, 1000 + static_cast<uint64_t>(i)));
        const int mask = detail::concept_masks()[static_cast<size_t>(i % spec.n_concepts)];
        const std::string pos = detail::concept_phrase(mask);
        RawRecord r;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "synth-%04d", i);
        r.id = idbuf;
        r.image = detail::concept_image(mask, spec.height, spec.width, rng);
        r.question = questions[i % 3];
        const bool close = spec.mode == SynthSpec::Mode::Close ||
                           (spec.mode == SynthSpec::Mode::Mixed && i % 2 == 0);
        if (close) {
            r.answer_type = AnswerType::Close;
            r.answer_class = pos;
        } else {
            r.answer_type = AnswerType::Open;
            r.answer_text = detail::open_answer(pos, rng);
        }
        all.push_back(std::move(r));
    }

    std::vector<size_t> order(all.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng split_rng(mix_seed(seed, 7701));
    split_rng.shuffle(order);
    const size_t n_train = static_cast<size_t>(spec.n_samples) * 4 / 5;

    SynthData out;
    for (size_t i = 0; i < order.size(); ++i) {
        (i < n_train ? out.train_records : out.eval_records).push_back(all[order[i]]);
    }
    return out;
}

// Vocabulary is learned from the training split only; eval-only words fall to
// UNK like any out-of-distribution input would.
inline MaterializedData materialize(const SynthData& data) {
    std::vector<std::string> corpus;
    for (const RawRecord& r : data.train_records) {
        corpus.push_back(r.question);
        if (r.answer_type == AnswerType::Open) corpus.push_back(r.answer_text);
        else corpus.push_back(r.answer_class);
    }
    MaterializedData m;
    m.vocab = Vocab::build(corpus, 1);
    m.train.split = "train";
    m.eval.split = "eval";
    for (const RawRecord& r : data.train_records) m.train.samples.push_back(make_sample(r, m.vocab));
    for (const RawRecord& r : data.eval_records) m.eval.samples.push_back(make_sample(r, m.vocab));
    return m;
}

inline MaterializedData generate_synthetic(const SynthSpec& spec, uint64_t seed) {
    return materialize(generate_synthetic_records(spec, seed));
}

} // namespace repsnet
