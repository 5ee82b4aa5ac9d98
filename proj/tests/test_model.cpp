#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "repsnet/checkpoint.hpp"
#include "repsnet/grad_check.hpp"
#include "repsnet/model.hpp"
#include "repsnet/synthetic.hpp"

using namespace repsnet;

namespace {

Config tiny_config() {
    Config cfg;
    cfg.seed = 11;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.image_h = 8;
    cfg.image_w = 8;
    cfg.patch = 4;
    cfg.d_x = 8;
    cfg.d_q = 8;
    cfg.d = 6;
    cfg.text_layers = 1;
    cfg.text_heads = 2;
    cfg.text_max_len = 48;
    cfg.glimpses = 2;
    cfg.ban_rank = 4;
    cfg.cls_hidden = 8;
    cfg.dec_layers = 1;
    cfg.dec_heads = 2;
    cfg.dec_width = 8;
    cfg.max_answer_len = 48;
    cfg.validate();
    return cfg;
}

struct TinyWorld {
    MaterializedData data;
    AnswerVocab answers;
    RepsNetModel model;
};

TinyWorld tiny_world(SynthSpec::Mode mode, int n_samples, uint64_t seed, Config cfg) {
    SynthSpec spec;
    spec.n_samples = n_samples;
    spec.height = cfg.image_h;
    spec.width = cfg.image_w;
    spec.mode = mode;
    TinyWorld w{generate_synthetic(spec, seed), {}, {}};
    w.answers = filter_min_occurrence(w.data.train, w.data.eval, cfg.min_occurrence);
    w.model = make_model(cfg, w.data.vocab, w.answers);
    return w;
}

std::string temp_path(const std::string& name) {
    return std::string("model_test_") + name;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

} // namespace

TEST_CASE("config defaults validate and serialization is a fixpoint") {
    Config cfg;
    REQUIRE_NOTHROW(cfg.validate());
    cfg.vocab = {"<pad>", "<bos>", "<eos>", "<unk>", "hello"};
    cfg.classes = {"yes", "no"};
    const std::string once = serialize_config(cfg);
    const Config parsed = parse_config(once);
    REQUIRE(serialize_config(parsed) == once);
    REQUIRE(parsed.vocab == cfg.vocab);
    REQUIRE(parsed.classes == cfg.classes);
    REQUIRE(parsed.lr == cfg.lr);
}

TEST_CASE("config text format tolerates comments and spacing") {
    const Config cfg = parse_config("# a comment\n\n  epochs =  12\nlr=0.25\nbeam = 3\n");
    REQUIRE(cfg.epochs == 12);
    REQUIRE(cfg.lr == 0.25);
    REQUIRE(cfg.beam == 3);
    // untouched keys keep their defaults
    REQUIRE(cfg.batch_size == Config{}.batch_size);
}

TEST_CASE("config rejects malformed input by name") {
    try {
        parse_config("not_a_real_key = 1\n");
        FAIL("expected a contract error");
    } catch (const ContractError& e) {
        REQUIRE(std::string(e.what()).find("not_a_real_key") != std::string::npos);
    }
    REQUIRE_THROWS_AS(parse_config("epochs = soon\n"), ContractError);
    REQUIRE_THROWS_AS(parse_config("lr = fast\n"), ContractError);
    REQUIRE_THROWS_AS(parse_config("retrieval_fused = maybe\n"), ContractError);
    REQUIRE_THROWS_AS(parse_config("epochs\n"), ContractError);
}

TEST_CASE("config validation enforces structural constraints") {
    auto broken = [](auto&& mutate) {
        Config cfg;
        mutate(cfg);
        return cfg;
    };
    REQUIRE_THROWS_AS(broken([](Config& c) { c.patch = 5; }).validate(), ContractError);
    REQUIRE_THROWS_AS(broken([](Config& c) { c.dec_width = 10; c.dec_heads = 4; }).validate(),
                      ContractError);
    REQUIRE_THROWS_AS(broken([](Config& c) { c.d_q = 9; c.text_heads = 2; }).validate(), ContractError);
    REQUIRE_THROWS_AS(broken([](Config& c) { c.min_len = 300; }).validate(), ContractError);
    REQUIRE_THROWS_AS(broken([](Config& c) { c.temperature = 0.0; }).validate(), ContractError);
    REQUIRE_THROWS_AS(broken([](Config& c) { c.beam = 0; }).validate(), ContractError);
    REQUIRE_THROWS_AS(broken([](Config& c) { c.alpha = -0.5; }).validate(), ContractError);
    REQUIRE_THROWS_AS(broken([](Config& c) { c.epochs = -1; }).validate(), ContractError);
}

TEST_CASE("model construction is deterministic and complete") {
    const Config cfg = tiny_config();
    TinyWorld a = tiny_world(SynthSpec::Mode::Mixed, 8, 5, cfg);
    TinyWorld b = tiny_world(SynthSpec::Mode::Mixed, 8, 5, cfg);
    REQUIRE_FALSE(a.model.parameters().empty());
    REQUIRE(a.model.cfg.vocab == a.data.vocab.tokens());
    REQUIRE(a.model.cfg.classes == a.answers.classes());

    std::vector<Tensor> pa = a.model.parameters();
    std::vector<Tensor> pb = b.model.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) REQUIRE(same_bits(pa[i].data(), pb[i].data()));

    // parameter names are unique
    std::vector<std::string> names;
    a.model.for_each([&](const std::string& n, Tensor&) { names.push_back(n); });
    std::vector<std::string> sorted = names;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("answer token selection by sample kind") {
    TinyWorld w = tiny_world(SynthSpec::Mode::Mixed, 8, 6, tiny_config());
    bool saw_open = false, saw_close = false;
    for (const Sample& s : w.data.train.samples) {
        if (s.answer_type == AnswerType::Open) {
            saw_open = true;
            REQUIRE(answer_tokens(w.model, s) == s.answer_text);
        } else {
            saw_close = true;
            const std::vector<int> toks = answer_tokens(w.model, s);
            REQUIRE(toks == cap_sequence(w.model.vocab.encode(s.answer_class_text, true), 200, true));
            REQUIRE(toks.front() == Vocab::kBos);
            REQUIRE(toks.back() == Vocab::kEos);
        }
    }
    REQUIRE(saw_open);
    REQUIRE(saw_close);
}

TEST_CASE("singleton close-ended batch: total equals the classification term") {
    TinyWorld w = tiny_world(SynthSpec::Mode::Close, 6, 7, tiny_config());
    const std::vector<Batch> batches = make_batches(w.data.train, 1, 3, false);
    Tape tape(false);
    const ForwardParts parts = forward_train(tape, w.model, batches[0], 21, true);
    REQUIRE(parts.open_count == 0);
    REQUIRE(parts.close_count == 1);
    // a single aligned pair admits no negatives, so the contrastive term is exactly zero
    REQUIRE(parts.contrastive == 0.0);
    REQUIRE(parts.generation == 0.0);
    REQUIRE(parts.total.item() == parts.classification);
    REQUIRE(parts.classification > 0.0);
}

TEST_CASE("zeroed output layer yields a uniform classifier loss") {
    TinyWorld w = tiny_world(SynthSpec::Mode::Close, 6, 7, tiny_config());
    std::fill(w.model.cls.w2.mutable_data().begin(), w.model.cls.w2.mutable_data().end(), 0.0);
    std::fill(w.model.cls.b2.mutable_data().begin(), w.model.cls.b2.mutable_data().end(), 0.0);
    const std::vector<Batch> batches = make_batches(w.data.train, 1, 3, false);
    Tape tape(false);
    const ForwardParts parts = forward_train(tape, w.model, batches[0], 21, true);
    REQUIRE(parts.classification ==
            Catch::Approx(std::log(static_cast<double>(w.answers.size()))).margin(1e-12));
}

TEST_CASE("mixed batch decomposes into its three loss terms") {
    TinyWorld w = tiny_world(SynthSpec::Mode::Mixed, 8, 9, tiny_config());
    const int n_train = static_cast<int>(w.data.train.samples.size());
    const std::vector<Batch> batches = make_batches(w.data.train, n_train, 3, false);
    REQUIRE(batches.size() == 1);
    Tape tape(false);
    const ForwardParts parts = forward_train(tape, w.model, batches[0], 33, true);
    REQUIRE(parts.open_count + parts.close_count == n_train);
    REQUIRE(parts.open_count > 0);
    REQUIRE(parts.close_count > 0);
    REQUIRE(parts.contrastive > 0.0);
    REQUIRE(parts.total.item() ==
            Catch::Approx(parts.contrastive + parts.classification + parts.generation).margin(1e-12));

    // with the contrastive weight off, that term disappears from the total
    Config no_align = tiny_config();
    no_align.alpha = 0.0;
    TinyWorld w2 = tiny_world(SynthSpec::Mode::Mixed, 8, 9, no_align);
    Tape tape2(false);
    const std::vector<Batch> again = make_batches(w2.data.train, n_train, 3, false);
    const ForwardParts off = forward_train(tape2, w2.model, again[0], 33, true);
    REQUIRE(off.contrastive == 0.0);
    REQUIRE(off.total.item() == Catch::Approx(off.classification + off.generation).margin(1e-12));

    REQUIRE_THROWS_AS(forward_train(tape, w.model, Batch{}, 0, true), ContractError);
}

TEST_CASE("repeated optimizer steps drive the loss down") {
    TinyWorld w = tiny_world(SynthSpec::Mode::Mixed, 4, 13, tiny_config());
    const std::vector<Batch> batches = make_batches(w.data.train, 4, 3, false);
    std::vector<Tensor> params = w.model.parameters();
    AdamWConfig oc;
    oc.lr = w.model.cfg.lr;
    AdamW opt(params, oc);
    std::vector<double> losses;
    for (int step = 0; step < 51; ++step) {
        Tape tape(true);
        // the augmentation draw is pinned so the objective is the same every step
        ForwardParts parts = forward_train(tape, w.model, batches[0], 555, true);
        losses.push_back(parts.total.item());
        tape.backward(parts.total);
        opt.step(tape);
    }
    int drops = 0;
    for (size_t i = 1; i < losses.size(); ++i) {
        if (losses[i] < losses[i - 1]) ++drops;
    }
    INFO("first " << losses.front() << " last " << losses.back() << " drops " << drops);
    REQUIRE(drops >= 45);
    REQUIRE(losses.back() < losses.front());
}

TEST_CASE("end-to-end gradients pass finite differences") {
    TinyWorld w = tiny_world(SynthSpec::Mode::Mixed, 4, 17, tiny_config());
    // one close-ended and one open-ended sample in a single batch
    Dataset pair;
    pair.split = "train";
    const Sample* open = nullptr;
    const Sample* close = nullptr;
    for (const Sample& s : w.data.train.samples) {
        if (s.answer_type == AnswerType::Open && !open) open = &s;
        if (s.answer_type == AnswerType::Close && !close) close = &s;
    }
    REQUIRE(open != nullptr);
    REQUIRE(close != nullptr);
    pair.samples.push_back(*close);
    pair.samples.push_back(*open);
    const std::vector<Batch> batches = make_batches(pair, 2, 3, false);

    auto forward = [&](Tape& tape) { return forward_train(tape, w.model, batches[0], 99, true).total; };
    const GradCheckReport report = check_gradients(w.model.parameters(), forward, 1e-5, 3);
    INFO("coords " << report.coords_checked << " max rel err " << report.max_rel_err);
    REQUIRE(report.coords_checked > 100);
    REQUIRE(report.max_rel_err < 1e-4);
}

TEST_CASE("answer index construction and retrieval-conditioned inference") {
    TinyWorld w = tiny_world(SynthSpec::Mode::Mixed, 16, 19, tiny_config());
    int open_count = 0;
    for (const Sample& s : w.data.train.samples) {
        if (s.answer_type == AnswerType::Open) ++open_count;
    }
    REQUIRE(open_count >= 3);
    AnswerIndex index = build_index(w.model, w.data.train);
    REQUIRE(index.size() == open_count);

    // rebuilding writes byte-identical index files
    AnswerIndex again = build_index(w.model, w.data.train);
    const std::string pa = temp_path("idx_a.rnix");
    const std::string pb = temp_path("idx_b.rnix");
    index.save(pa);
    again.save(pb);
    std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    REQUIRE(ba == bb);
    std::remove(pa.c_str());
    std::remove(pb.c_str());

    // close-only data cannot seed an index
    TinyWorld closed = tiny_world(SynthSpec::Mode::Close, 6, 19, tiny_config());
    REQUIRE_THROWS_AS(build_index(closed.model, closed.data.train), ContractError);

    const Sample& probe = w.data.eval.samples.front();
    const int first = infer_close(w.model, probe.image, probe.question);
    REQUIRE(first == infer_close(w.model, probe.image, probe.question));
    REQUIRE(first >= 0);
    REQUIRE(first < w.answers.size());

    GenerationConstraints cons = generation_constraints(w.model.cfg);
    cons.max_tokens = 12;
    const OpenInference once = infer_open(w.model, index, probe.image, probe.question, cons);
    const OpenInference twice = infer_open(w.model, index, probe.image, probe.question, cons);
    REQUIRE(once.tokens == twice.tokens);
    REQUIRE(once.items.size() == twice.items.size());
    REQUIRE(once.items.size() == 1); // default k
    REQUIRE(once.items[0].id == twice.items[0].id);
    REQUIRE(once.tokens.front() == Vocab::kBos);
    REQUIRE(once.tokens.size() >= 2);

    // a wider k changes only the amount of retrieved context
    Config wide = w.model.cfg;
    REQUIRE(wide.k == 1);
    GenerationConstraints cons2 = cons;
    RepsNetModel& m = w.model;
    m.cfg.k = 3;
    const OpenInference three = infer_open(m, index, probe.image, probe.question, cons2);
    REQUIRE(three.items.size() == 3);
    for (size_t i = 1; i < three.items.size(); ++i) {
        REQUIRE(three.items[i - 1].score >= three.items[i].score);
    }
    m.cfg.k = 1;
}

TEST_CASE("training loop bookkeeping") {
    TinyWorld w = tiny_world(SynthSpec::Mode::Mixed, 6, 23, tiny_config());
    std::ostringstream log;
    const std::vector<EpochStats> history = train_model(w.model, w.data.train, &log);
    REQUIRE(history.size() == 2);
    for (const EpochStats& e : history) {
        REQUIRE(std::isfinite(e.total));
        REQUIRE(e.total > 0.0);
    }
    int lines = 0;
    std::string line;
    std::istringstream in(log.str());
    while (std::getline(in, line)) ++lines;
    REQUIRE(lines == 2);
    REQUIRE(log.str().rfind("epoch 0 total ", 0) == 0);

    // zero epochs: no history, parameters untouched
    Config frozen = tiny_config();
    frozen.epochs = 0;
    TinyWorld wf = tiny_world(SynthSpec::Mode::Mixed, 6, 23, frozen);
    std::vector<std::vector<double>> before;
    for (Tensor& t : wf.model.parameters()) before.push_back(t.data());
    REQUIRE(train_model(wf.model, wf.data.train).empty());
    std::vector<Tensor> after = wf.model.parameters();
    for (size_t i = 0; i < after.size(); ++i) REQUIRE(same_bits(before[i], after[i].data()));

    Dataset empty;
    REQUIRE_THROWS_AS(train_model(w.model, empty), ContractError);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    TinyWorld w = tiny_world(SynthSpec::Mode::Mixed, 6, 29, tiny_config());
    // a couple of training steps so the saved state is not the init
    Config two = w.model.cfg;
    train_model(w.model, w.data.train);

    const std::string path = temp_path("ckpt.rsnc");
    save_checkpoint(w.model, path);
    RepsNetModel loaded = load_checkpoint(path);

    REQUIRE(loaded.vocab.tokens() == w.model.vocab.tokens());
    REQUIRE(loaded.answers.classes() == w.model.answers.classes());
    REQUIRE(serialize_config(loaded.cfg) == serialize_config(w.model.cfg));

    std::vector<Tensor> pa = w.model.parameters();
    std::vector<Tensor> pb = loaded.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) REQUIRE(same_bits(pa[i].data(), pb[i].data()));

    // forward losses agree bit for bit on a fixed batch
    const std::vector<Batch> batches = make_batches(w.data.train, 4, 3, false);
    Tape ta(false), tb(false);
    const ForwardParts fa = forward_train(ta, w.model, batches[0], 1234, true);
    const ForwardParts fb = forward_train(tb, loaded, batches[0], 1234, true);
    REQUIRE(fa.total.item() == fb.total.item());
    REQUIRE(fa.contrastive == fb.contrastive);
    REQUIRE(fa.classification == fb.classification);
    REQUIRE(fa.generation == fb.generation);

    // saving the loaded model reproduces the file byte for byte
    const std::string path2 = temp_path("ckpt2.rsnc");
    save_checkpoint(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE_FALSE(b1.empty());
    REQUIRE(b1 == b2);
    f1.close();
    f2.close();

    // corrupted header, bad version, truncation
    {
        std::string bad = b1;
        bad[0] = 'X';
        std::ofstream out(path2, std::ios::binary);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    }
    REQUIRE_THROWS_AS(load_checkpoint(path2), IoError);
    {
        std::string bad = b1;
        bad[4] = 9; // version little-endian low byte
        std::ofstream out(path2, std::ios::binary);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    }
    REQUIRE_THROWS_AS(load_checkpoint(path2), IoError);
    {
        std::ofstream out(path2, std::ios::binary);
        out.write(b1.data(), static_cast<std::streamsize>(b1.size() / 2));
    }
    REQUIRE_THROWS_AS(load_checkpoint(path2), IoError);
    REQUIRE_THROWS_AS(load_checkpoint("missing_checkpoint.rsnc"), IoError);

    std::remove(path.c_str());
    std::remove(path2.c_str());
    (void)two;
}
