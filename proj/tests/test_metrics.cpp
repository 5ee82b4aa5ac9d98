#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "repsnet/bleu.hpp"
#include "repsnet/data.hpp"
#include "repsnet/grad_check.hpp"
#include "repsnet/rng.hpp"
#include "repsnet/vqa.hpp"

using namespace repsnet;

namespace {

using Seq = std::vector<int>;

// independent n-gram precision used by the property tests
double oracle_precision(const Seq& hyp, const Seq& ref, int n) {
    if (static_cast<int>(hyp.size()) < n) return -1.0;
    std::map<Seq, int> hg, rg;
    for (size_t i = 0; i + static_cast<size_t>(n) <= hyp.size(); ++i)
        ++hg[Seq(hyp.begin() + static_cast<std::ptrdiff_t>(i), hyp.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    for (size_t i = 0; i + static_cast<size_t>(n) <= ref.size(); ++i)
        ++rg[Seq(ref.begin() + static_cast<std::ptrdiff_t>(i), ref.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    int matched = 0, total = 0;
    for (const auto& [g, c] : hg) {
        total += c;
        const auto it = rg.find(g);
        if (it != rg.end()) matched += std::min(c, it->second);
    }
    return static_cast<double>(matched) / static_cast<double>(total);
}

} // namespace

TEST_CASE("bleu hand oracle table") {
    const double eps = kBleuEpsilon;

    SECTION("identity scores one for every order") {
        const Seq s = {4, 5, 6, 7};
        for (int n = 1; n <= 4; ++n) REQUIRE(bleu_n(s, {s}, n) == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("brevity penalty on a one-word-short hypothesis") {
        const Seq hyp = {10, 11, 12};
        const Seq ref = {10, 11, 12, 13};
        const double bp = std::exp(1.0 - 4.0 / 3.0);
        REQUIRE(bleu_n(hyp, {ref}, 1) == Catch::Approx(bp).margin(1e-9));
        REQUIRE(bleu_n(hyp, {ref}, 2) == Catch::Approx(bp).margin(1e-9));
        REQUIRE(bleu_n(hyp, {ref}, 3) == Catch::Approx(bp).margin(1e-9));
        // the four-gram precision is undefined and falls back to the epsilon floor
        REQUIRE(bleu_n(hyp, {ref}, 4) == Catch::Approx(bp * std::pow(eps, 0.25)).margin(1e-9));
    }
    SECTION("disjoint token sets score zero") {
        const Seq hyp = {1, 2, 3};
        const Seq ref = {4, 5, 6};
        for (int n = 1; n <= 4; ++n) REQUIRE(bleu_n(hyp, {ref}, n) == 0.0);
    }
    SECTION("pure prefix: perfect precisions, brevity penalty only") {
        const Seq hyp = {4, 5, 6, 7, 8};
        const Seq ref = {4, 5, 6, 7, 8, 9, 10};
        for (int n = 1; n <= 4; ++n) {
            REQUIRE(bleu_n(hyp, {ref}, n) == Catch::Approx(std::exp(1.0 - 7.0 / 5.0)).margin(1e-9));
        }
    }
    SECTION("clipping caps repeated unigrams") {
        const Seq hyp = {4, 4, 4};
        const Seq ref = {4, 5};
        REQUIRE(bleu_n(hyp, {ref}, 1) == Catch::Approx(1.0 / 3.0).margin(1e-9));
        REQUIRE(bleu_n(hyp, {ref}, 2) == Catch::Approx(std::sqrt(eps / 3.0)).margin(1e-9));
        REQUIRE(bleu_n(hyp, {ref}, 3) == Catch::Approx(std::cbrt(eps * eps / 3.0)).margin(1e-9));
        REQUIRE(bleu_n(hyp, {ref}, 4) == Catch::Approx(std::pow(eps * eps * eps / 3.0, 0.25)).margin(1e-9));
    }
    SECTION("tail mismatch with a longer hypothesis") {
        const Seq hyp = {4, 5, 6, 7, 99};
        const Seq ref = {4, 5, 6, 7};
        REQUIRE(bleu_n(hyp, {ref}, 1) == Catch::Approx(4.0 / 5.0).margin(1e-9));
        REQUIRE(bleu_n(hyp, {ref}, 2) == Catch::Approx(std::sqrt(0.6)).margin(1e-9));
        REQUIRE(bleu_n(hyp, {ref}, 3) == Catch::Approx(std::cbrt(0.4)).margin(1e-9));
        REQUIRE(bleu_n(hyp, {ref}, 4) == Catch::Approx(std::pow(0.2, 0.25)).margin(1e-9));
    }
    SECTION("multiple references: per-gram clipping and closest-length ties") {
        const Seq hyp = {4, 5, 6};
        const std::vector<Seq> refs = {{4, 99}, {4, 5, 7, 8}};
        // lengths 2 and 4 tie in distance to 3; the shorter wins, so no penalty
        REQUIRE(bleu_n(hyp, refs, 1) == Catch::Approx(2.0 / 3.0).margin(1e-9));
    }
    SECTION("empty hypothesis scores zero, not an error") {
        for (int n = 1; n <= 4; ++n) REQUIRE(bleu_n({}, {{4, 5}}, n) == 0.0);
    }
    SECTION("single-token identity") {
        REQUIRE(bleu_n({4}, {{4}}, 1) == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(bleu_n({4}, {{4}}, 2) == Catch::Approx(std::sqrt(eps)).margin(1e-9));
    }
    SECTION("corpus mean of a hit and a miss") {
        const std::vector<std::pair<Seq, Seq>> pairs = {{{10, 11, 12}, {10, 11, 12, 13}},
                                                        {{1, 2, 3}, {4, 5, 6}}};
        const BleuReport report = corpus_eval(pairs);
        REQUIRE(report.mean[0] == Catch::Approx(std::exp(1.0 - 4.0 / 3.0) / 2.0).margin(1e-9));
        REQUIRE(report.per_sample.size() == 2);
        REQUIRE(report.per_sample[1][0] == 0.0);
    }
}

TEST_CASE("bleu input contracts") {
    REQUIRE_THROWS_AS(bleu_n({1}, {{1}}, 0), ContractError);
    REQUIRE_THROWS_AS(bleu_n({1}, {{1}}, 5), ContractError);
    REQUIRE_THROWS_AS(bleu_n({1}, {}, 1), ContractError);
    REQUIRE_THROWS_AS(corpus_eval({}), ContractError);
}

TEST_CASE("corpus scores degenerate cases") {
    const Seq s = {4, 5, 6, 7, 8};
    const BleuReport identical = corpus_eval({{s, s}, {s, s}, {s, s}});
    for (double m : identical.mean) REQUIRE(m == Catch::Approx(1.0).margin(1e-12));
    // singleton corpus mean equals the pair's own scores
    const Seq hyp = {4, 5, 6, 7, 99};
    const BleuReport single = corpus_eval({{hyp, s}});
    for (int n = 1; n <= 4; ++n) {
        REQUIRE(single.mean[static_cast<size_t>(n) - 1] == bleu_n(hyp, {s}, n));
    }
}

TEST_CASE("bleu is invariant under token relabeling") {
    Rng rng(88);
    for (int trial = 0; trial < 20; ++trial) {
        Seq hyp, ref;
        for (int i = 0; i < 6; ++i) hyp.push_back(rng.uniform_int(5));
        for (int i = 0; i < 8; ++i) ref.push_back(rng.uniform_int(5));
        // bijection over the token alphabet
        std::vector<int> map = {0, 1, 2, 3, 4};
        rng.shuffle(map);
        Seq hyp2, ref2;
        for (int t : hyp) hyp2.push_back(map[static_cast<size_t>(t)] + 100);
        for (int t : ref) ref2.push_back(map[static_cast<size_t>(t)] + 100);
        for (int n = 1; n <= 4; ++n) {
            REQUIRE(bleu_n(hyp, {ref}, n) == bleu_n(hyp2, {ref2}, n));
        }
    }
}

TEST_CASE("cumulative scores are monotone when per-order precisions are") {
    // clipped precisions are not always non-increasing in the order (so
    // neither are the cumulative scores); whenever they are, the cumulative
    // geometric means must be too
    Rng rng(89);
    int exercised = 0;
    for (int trial = 0; trial < 400; ++trial) {
        Seq ref;
        for (int i = 0; i < 8; ++i) ref.push_back(rng.uniform_int(4));
        Seq hyp = ref;
        hyp[static_cast<size_t>(rng.uniform_int(8))] = rng.uniform_int(4);
        double prev = 2.0;
        bool positive_and_sorted = true;
        for (int n = 1; n <= 4; ++n) {
            const double p = oracle_precision(hyp, ref, n);
            if (p <= 0.0 || p > prev) positive_and_sorted = false;
            prev = p;
        }
        if (!positive_and_sorted) continue;
        ++exercised;
        double last = 2.0;
        for (int n = 1; n <= 4; ++n) {
            const double score = bleu_n(hyp, {ref}, n, false);
            REQUIRE(score <= last + 1e-12);
            last = score;
        }
    }
    REQUIRE(exercised > 50);
}

TEST_CASE("classifier head shapes and ties") {
    Rng rng(90);
    ClassifierParams head = make_classifier(rng, 6, 10, 4, 0.2);
    Tensor feats = Tensor::randn({6}, rng, 0.5, false);
    Tape tape(false);
    Tensor logits = classify_answer(tape, head, feats);
    REQUIRE(logits.rank() == 1);
    REQUIRE(logits.size() == 4);

    // zero weights: all-zero logits, tie resolves to class 0
    ClassifierParams zero = make_classifier(rng, 6, 10, 4, 0.2);
    for (Tensor* t : {&zero.w1, &zero.b1, &zero.w2, &zero.b2}) {
        std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
    }
    Tensor flat = classify_answer(tape, zero, feats);
    for (double v : flat.data()) REQUIRE(v == 0.0);
    REQUIRE(argmax_class(flat) == 0);

    // adding a constant to every logit never moves the argmax
    Tensor shifted = add(tape, logits, Tensor::full({4}, 3.75));
    REQUIRE(argmax_class(shifted) == argmax_class(logits));

    Tensor bad = Tensor::randn({7}, rng, 0.5, false);
    REQUIRE_THROWS_AS(classify_answer(tape, head, bad), DimensionError);
}

TEST_CASE("uniform classifier loss is log class count") {
    Tape tape(false);
    Tensor logits = Tensor::zeros({5});
    REQUIRE(classifier_loss(tape, logits, 2).item() == Catch::Approx(std::log(5.0)).margin(1e-12));
}

TEST_CASE("classifier gradients pass finite differences") {
    Rng rng(91);
    ClassifierParams head = make_classifier(rng, 5, 8, 3, 0.3);
    Tensor feats = Tensor::randn({5}, rng, 0.5, true);
    auto forward = [&](Tape& tape) {
        return classifier_loss(tape, classify_answer(tape, head, feats), 1);
    };
    std::vector<Tensor> params;
    auto collect = [&](const std::string&, Tensor& t) { params.push_back(t); };
    head.for_each("cls", collect);
    params.push_back(feats);
    auto report = check_gradients(params, forward, 1e-5, 8);
    REQUIRE(report.max_rel_err < 1e-4);
}

namespace {

Sample close_sample(const std::string& id, const std::string& cls) {
    Sample s;
    s.id = id;
    s.answer_type = AnswerType::Close;
    s.answer_class_text = cls;
    return s;
}

} // namespace

TEST_CASE("accuracy excludes unseen classes from the denominator") {
    const AnswerVocab answers = AnswerVocab::from_classes({"yes", "no"});
    Dataset eval;
    eval.samples.push_back(close_sample("e0", "yes"));   // seen, predicted right
    eval.samples.push_back(close_sample("e1", "no"));    // seen, predicted wrong
    eval.samples.push_back(close_sample("e2", "maybe")); // unseen
    eval.samples.push_back(close_sample("e3", "blue"));  // unseen
    eval.samples.push_back(close_sample("e4", "later")); // unseen
    const std::vector<int> preds = {answers.id("yes"), answers.id("yes"), 0, 0, 0};
    const AccuracyReport report = accuracy_eval(preds, eval, answers);
    REQUIRE(report.eligible == 2);
    REQUIRE(report.correct == 1);
    REQUIRE(report.unseen == 3);
    REQUIRE(report.total_close == 5);
    REQUIRE(report.accuracy == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("accuracy corner cases") {
    const AnswerVocab answers = AnswerVocab::from_classes({"yes", "no"});
    Dataset eval;
    eval.samples.push_back(close_sample("e0", "yes"));
    eval.samples.push_back(close_sample("e1", "no"));
    // all correct
    const AccuracyReport perfect = accuracy_eval({0, 1}, eval, answers);
    REQUIRE(perfect.accuracy == 1.0);
    // misaligned predictions
    REQUIRE_THROWS_AS(accuracy_eval({0}, eval, answers), ContractError);
    // open-ended rows are ignored but still need a prediction slot
    Sample open;
    open.id = "e2";
    open.answer_type = AnswerType::Open;
    eval.samples.push_back(open);
    const AccuracyReport with_open = accuracy_eval({0, 1, -1}, eval, answers);
    REQUIRE(with_open.total_close == 2);
    REQUIRE(with_open.accuracy == 1.0);
    // every close-ended sample unseen -> no denominator
    Dataset all_unseen;
    all_unseen.samples.push_back(close_sample("u0", "what"));
    REQUIRE_THROWS_AS(accuracy_eval({0}, all_unseen, answers), ContractError);
}

TEST_CASE("accuracy is invariant under sample permutation") {
    const AnswerVocab answers = AnswerVocab::from_classes({"a", "b", "c"});
    Dataset eval;
    std::vector<int> preds;
    Rng rng(92);
    for (int i = 0; i < 12; ++i) {
        eval.samples.push_back(close_sample("s" + std::to_string(i), answers.class_name(i % 3)));
        preds.push_back(rng.uniform_int(3));
    }
    const double base = accuracy_eval(preds, eval, answers).accuracy;
    std::vector<int> order(12);
    for (int i = 0; i < 12; ++i) order[static_cast<size_t>(i)] = i;
    rng.shuffle(order);
    Dataset shuffled;
    std::vector<int> shuffled_preds;
    for (int idx : order) {
        shuffled.samples.push_back(eval.samples[static_cast<size_t>(idx)]);
        shuffled_preds.push_back(preds[static_cast<size_t>(idx)]);
    }
    REQUIRE(accuracy_eval(shuffled_preds, shuffled, answers).accuracy == base);
}
