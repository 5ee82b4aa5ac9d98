#pragma once

#include <string>
#include <vector>

#include "repsnet/data.hpp"
#include "repsnet/tensor.hpp"
#include "repsnet/vocab.hpp"

// Close-ended answering: a two-layer classifier over the fused pooled
// features, and accuracy evaluation that excludes unseen answer classes
// from the denominator.

namespace repsnet {

struct ClassifierParams {
    Tensor w1; // (d_in, hidden)
    Tensor b1; // (hidden)
    Tensor w2; // (hidden, classes)
    Tensor b2; // (classes)

    template <class F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + ".w1", w1);
        f(prefix + ".b1", b1);
        f(prefix + ".w2", w2);
        f(prefix + ".b2", b2);
    }
};

inline ClassifierParams make_classifier(Rng& rng, int d_in, int hidden, int classes, double init_std) {
    if (d_in < 1 || hidden < 1 || classes < 1) throw ContractError("classifier dimensions must be positive");
    ClassifierParams p;
    p.w1 = Tensor::randn({d_in, hidden}, rng, init_std);
    p.b1 = Tensor::zeros({hidden}, true);
    p.w2 = Tensor::randn({hidden, classes}, rng, init_std);
    p.b2 = Tensor::zeros({classes}, true);
    return p;
}

// Logits over the retained answer classes for one pooled feature vector.
inline Tensor classify_answer(Tape& tape, const ClassifierParams& p, const Tensor& feats) {
    if (feats.rank() != 1) throw DimensionError("classifier expects a rank-1 feature vector");
    Tensor row = reshape(tape, feats, {1, feats.cols()});
    Tensor hidden = gelu(tape, add_row_vector(tape, matmul(tape, row, p.w1), p.b1));
    Tensor logits = add_row_vector(tape, matmul(tape, hidden, p.w2), p.b2);
    return reshape(tape, logits, {p.w2.cols()});
}

// Argmax with ties resolved toward the lowest class id.
inline int argmax_class(const Tensor& logits) {
    if (logits.rank() != 1 || logits.cols() == 0) throw DimensionError("argmax expects a non-empty vector");
    int best = 0;
    for (int i = 1; i < logits.cols(); ++i) {
        if (logits.data()[static_cast<size_t>(i)] > logits.data()[static_cast<size_t>(best)]) best = i;
    }
    return best;
}

// Cross-entropy of one sample's class logits against its target class.
inline Tensor classifier_loss(Tape& tape, const Tensor& logits, int target) {
    Tensor row = reshape(tape, logits, {1, logits.cols()});
    return cross_entropy_sum(tape, row, {target});
}

struct AccuracyReport {
    int correct = 0;
    int eligible = 0; // close-ended eval samples whose class survived filtering
    int unseen = 0;   // close-ended eval samples excluded from the denominator
    int total_close = 0;
    double accuracy = 0.0;
};

// Accuracy over close-ended eval samples; predictions align one-to-one with
// the dataset's samples (open-ended positions are ignored and may carry any
// value). Samples whose ground-truth class was filtered away count as unseen
// and never enter the denominator.
inline AccuracyReport accuracy_eval(const std::vector<int>& predictions, const Dataset& eval,
                                    const AnswerVocab& answers) {
    if (predictions.size() != eval.samples.size()) {
        throw ContractError("prediction count " + std::to_string(predictions.size()) +
                            " does not match eval sample count " + std::to_string(eval.samples.size()));
    }
    AccuracyReport report;
    for (size_t i = 0; i < eval.samples.size(); ++i) {
        const Sample& s = eval.samples[i];
        if (s.answer_type != AnswerType::Close) continue;
        ++report.total_close;
        const int target = answers.id(s.answer_class_text);
        if (target < 0) {
            ++report.unseen;
            continue;
        }
        ++report.eligible;
        if (predictions[i] == target) ++report.correct;
    }
    if (report.eligible == 0) throw ContractError("no eligible close-ended samples to score");
    report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.eligible);
    return report;
}

} // namespace repsnet
