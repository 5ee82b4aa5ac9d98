#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "repsnet/config.hpp"
#include "repsnet/contrastive.hpp"
#include "repsnet/data.hpp"
#include "repsnet/decoder.hpp"
#include "repsnet/encoder.hpp"
#include "repsnet/optimizer.hpp"
#include "repsnet/retrieval.hpp"
#include "repsnet/vqa.hpp"

// End-to-end assembly: image/question encoding with bilinear fusion and
// contrastive projection heads, a conditional decoder over image and prior
// answer context, and a close-ended classifier, plus the training loop and
// inference entry points that tie them to the answer index.

namespace repsnet {

struct RepsNetModel {
    Config cfg;
    Vocab vocab;
    AnswerVocab answers;
    ImageEncoderParams img;
    TextEncoderParams txt;
    BanParams ban;
    ProjectionParams px; // fused image+question -> shared embedding
    ProjectionParams py; // answer text -> shared embedding
    DecoderParams dec;
    ClassifierParams cls;

    template <class F>
    void for_each(F&& f) {
        img.for_each("img", f);
        txt.for_each("txt", f);
        ban.for_each("ban", f);
        px.for_each("px", f);
        py.for_each("py", f);
        dec.for_each("dec", f);
        cls.for_each("cls", f);
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> out;
        for_each([&](const std::string&, Tensor& t) { out.push_back(t); });
        return out;
    }
};

inline RepsNetModel make_model(const Config& cfg, Vocab vocab, AnswerVocab answers) {
    cfg.validate();
    if (vocab.size() <= Vocab::kUnk) throw ContractError("model needs a non-trivial vocabulary");
    RepsNetModel m;
    m.cfg = cfg;
    m.cfg.vocab = vocab.tokens();
    m.cfg.classes = answers.classes();
    m.vocab = std::move(vocab);
    m.answers = std::move(answers);

    Rng rng(mix_seed(cfg.seed, 42));
    const int n_x = (cfg.image_h / cfg.patch) * (cfg.image_w / cfg.patch);
    m.img = make_image_encoder(rng, cfg.patch, n_x, cfg.d_x, cfg.init_std);
    m.txt = make_text_encoder(rng, m.vocab.size(), cfg.d_q, cfg.text_heads, cfg.text_layers,
                              cfg.text_max_len, cfg.init_std);
    m.ban = make_ban(rng, cfg.d_x, cfg.d_q, cfg.ban_rank, cfg.glimpses, cfg.init_std);
    m.px = make_projection(rng, cfg.d_x, cfg.d, cfg.init_std);
    m.py = make_projection(rng, cfg.d_q, cfg.d, cfg.init_std);

    DecoderConfig dc;
    dc.layers = cfg.dec_layers;
    dc.heads = cfg.dec_heads;
    dc.width = cfg.dec_width;
    dc.max_len = cfg.max_answer_len;
    dc.vocab_size = m.vocab.size();
    dc.d_x = cfg.d_x;
    dc.d_c = cfg.dec_width;
    m.dec = make_decoder(rng, dc, cfg.init_std);

    // at least one output row even when the dataset has no close-ended classes
    m.cls = make_classifier(rng, cfg.d, cfg.cls_hidden, std::max(1, m.answers.size()), cfg.init_std);
    return m;
}

struct FusedFeatures {
    Tensor fused; // n_x rows of fused image+question features
    Tensor embed; // unit-norm shared-space embedding of the pair
};

// Encode one (image, question) pair up to the fused features and the shared
// contrastive embedding. `aug_seed` drives the training-time augmentation;
// pass train=false for the deterministic eval path.
inline FusedFeatures encode_pair(Tape& tape, const RepsNetModel& m, const ImageGrid& image,
                                 const std::vector<int>& question, uint64_t aug_seed, bool train) {
    const ImageGrid prepared = augment_image(image, aug_seed, train);
    Tensor xi = encode_image(tape, m.img, prepared);
    Tensor q = encode_text(tape, m.txt, question);
    std::vector<int> q_mask(question.size());
    for (size_t i = 0; i < question.size(); ++i) q_mask[i] = question[i] != Vocab::kPad ? 1 : 0;
    FusedFeatures out;
    out.fused = ban_fuse(tape, m.ban, xi, q, q_mask);
    out.embed = project_embed(tape, m.px, out.fused);
    return out;
}

// Unit-norm embedding of answer token ids through the text encoder and the
// answer-side projection head. PAD positions are excluded from pooling.
inline Tensor embed_answer(Tape& tape, const RepsNetModel& m, const std::vector<int>& ids) {
    Tensor y = encode_text(tape, m.txt, ids);
    std::vector<int> mask(ids.size());
    bool all_pad = true;
    for (size_t i = 0; i < ids.size(); ++i) {
        mask[i] = ids[i] != Vocab::kPad ? 1 : 0;
        all_pad = all_pad && mask[i] == 0;
    }
    if (all_pad) throw ContractError("cannot embed an all-PAD answer");
    return project_embed(tape, m.py, y, &mask);
}

// Token ids standing in for a sample's answer text: the answer itself for
// open-ended samples, the encoded class string for close-ended ones.
inline std::vector<int> answer_tokens(const RepsNetModel& m, const Sample& s) {
    if (s.answer_type == AnswerType::Open) return s.answer_text;
    return cap_sequence(m.vocab.encode(s.answer_class_text, true), kMaxAnswerTokens, true);
}

struct ForwardParts {
    Tensor total;
    double contrastive = 0.0;
    double classification = 0.0;
    double generation = 0.0;
    int close_count = 0;
    int open_count = 0;
};

// One training (or evaluation) forward pass over a batch: contrastive
// alignment over every sample pair, classification cross-entropy over the
// close-ended samples, teacher-forced generation cross-entropy over the
// open-ended ones with the ground-truth answer as prior context.
inline ForwardParts forward_train(Tape& tape, const RepsNetModel& m, const Batch& batch,
                                  uint64_t aug_seed, bool train) {
    if (batch.samples.empty()) throw ContractError("forward pass over an empty batch");
    ForwardParts parts;
    std::vector<Tensor> xs, ys, close_losses, open_sums;
    int open_target_count = 0;

    for (size_t i = 0; i < batch.samples.size(); ++i) {
        const Sample& s = *batch.samples[i];
        FusedFeatures feats = encode_pair(tape, m, s.image, batch.question_ids[i],
                                          mix_seed(aug_seed, static_cast<uint64_t>(i)), train);
        xs.push_back(feats.embed);
        ys.push_back(embed_answer(tape, m, answer_tokens(m, s)));

        if (s.answer_type == AnswerType::Close) {
            const int target = m.answers.id(s.answer_class_text);
            if (target < 0) {
                throw ContractError("train sample " + s.id + " carries a filtered answer class");
            }
            Tensor logits = classify_answer(tape, m.cls, feats.embed);
            close_losses.push_back(classifier_loss(tape, logits, target));
            ++parts.close_count;
        } else {
            Tensor context = embed_context(tape, m.dec, s.answer_text);
            SequenceLossParts seq =
                sequence_loss_parts(tape, m.dec, batch.answer_ids[i], &feats.fused, &context);
            open_sums.push_back(seq.sum);
            open_target_count += seq.count;
            ++parts.open_count;
        }
    }

    std::vector<Tensor> terms;
    if (m.cfg.alpha > 0.0) {
        ContrastiveConfig cc;
        cc.temperature = m.cfg.temperature;
        cc.alpha = m.cfg.alpha;
        Tensor contrastive = encoder_loss(tape, stack_rows(tape, xs), stack_rows(tape, ys), cc);
        parts.contrastive = contrastive.item();
        terms.push_back(contrastive);
    }
    if (!close_losses.empty()) {
        Tensor sum = close_losses.front();
        for (size_t i = 1; i < close_losses.size(); ++i) sum = add(tape, sum, close_losses[i]);
        Tensor mean = scale(tape, sum, 1.0 / static_cast<double>(close_losses.size()));
        parts.classification = mean.item();
        terms.push_back(mean);
    }
    if (!open_sums.empty()) {
        Tensor sum = open_sums.front();
        for (size_t i = 1; i < open_sums.size(); ++i) sum = add(tape, sum, open_sums[i]);
        Tensor mean = scale(tape, sum, 1.0 / static_cast<double>(open_target_count));
        parts.generation = mean.item();
        terms.push_back(mean);
    }
    parts.total = terms.front();
    for (size_t i = 1; i < terms.size(); ++i) parts.total = add(tape, parts.total, terms[i]);
    return parts;
}

// Normalized train-answer embeddings of every open-ended sample, keyed for
// nearest-neighbour context retrieval.
inline AnswerIndex build_index(const RepsNetModel& m, const Dataset& train) {
    AnswerIndex idx(m.cfg.d);
    for (const Sample& s : train.samples) {
        if (s.answer_type != AnswerType::Open) continue;
        Tape tape(false);
        Tensor y = embed_answer(tape, m, s.answer_text);
        idx.add(y.data(), s.answer_text, s.id);
    }
    if (idx.size() == 0) throw ContractError("cannot build an answer index without open-ended samples");
    return idx;
}

// Query-side retrieval embedding: fused image+question by default, image-only
// when the config switch turns fusion off.
inline Tensor retrieval_query(Tape& tape, const RepsNetModel& m, const ImageGrid& image,
                              const std::vector<int>& question) {
    if (m.cfg.retrieval_fused) {
        return encode_pair(tape, m, image, question, 0, false).embed;
    }
    const ImageGrid prepared = augment_image(image, 0, false);
    Tensor xi = encode_image(tape, m.img, prepared);
    return project_embed(tape, m.px, xi);
}

inline int infer_close(const RepsNetModel& m, const ImageGrid& image, const std::vector<int>& question) {
    Tape tape(false);
    FusedFeatures feats = encode_pair(tape, m, image, question, 0, false);
    return argmax_class(classify_answer(tape, m.cls, feats.embed));
}

struct OpenInference {
    std::vector<int> tokens;          // BOS ... (EOS when reached)
    std::vector<RetrievedItem> items; // the retrieved prior context, best first
};

inline GenerationConstraints generation_constraints(const Config& cfg) {
    GenerationConstraints cons;
    cons.min_len = cfg.min_len;
    cons.no_repeat_ngram = cfg.no_repeat_ngram;
    cons.max_tokens = cfg.max_answer_len;
    cons.beam = cfg.beam;
    cons.validate();
    return cons;
}

// Retrieval-conditioned generation: embed the query, pull the top-k nearest
// train answers, condition the decoder on the fused image features and the
// embedded retrieved tokens, then decode under the generation constraints.
inline OpenInference infer_open(const RepsNetModel& m, const AnswerIndex& index, const ImageGrid& image,
                                const std::vector<int>& question, const GenerationConstraints& cons) {
    Tape tape(false);
    FusedFeatures feats = encode_pair(tape, m, image, question, 0, false);
    Tensor query = m.cfg.retrieval_fused ? feats.embed : [&] {
        const ImageGrid prepared = augment_image(image, 0, false);
        Tensor xi = encode_image(tape, m.img, prepared);
        return project_embed(tape, m.px, xi);
    }();

    OpenInference out;
    out.items = index.topk(query.data(), m.cfg.k);
    std::vector<int> context_tokens;
    for (const RetrievedItem& item : out.items) {
        context_tokens.insert(context_tokens.end(), item.tokens.begin(), item.tokens.end());
    }
    context_tokens = cap_sequence(context_tokens, m.cfg.max_answer_len, false);
    Tensor context = embed_context(tape, m.dec, context_tokens);

    const StepFn step = [&](const std::vector<int>& prefix) {
        Tape step_tape(false);
        Tensor logits = decoder_forward(step_tape, m.dec, prefix, &feats.fused, &context);
        std::vector<double> row(static_cast<size_t>(logits.cols()));
        for (int j = 0; j < logits.cols(); ++j) row[static_cast<size_t>(j)] = logits(logits.rows() - 1, j);
        return row;
    };
    out.tokens = cons.beam == 1 ? greedy_decode(step, cons) : beam_decode(step, cons);
    return out;
}

struct EpochStats {
    int epoch = 0;
    double total = 0.0;
    double contrastive = 0.0;
    double classification = 0.0;
    double generation = 0.0;
};

// Seed-deterministic training loop: per-epoch shuffled batches, one AdamW
// step per batch, per-epoch mean losses returned (and logged when a sink is
// given, one line per epoch).
inline std::vector<EpochStats> train_model(RepsNetModel& m, const Dataset& train, std::ostream* log = nullptr) {
    if (train.samples.empty()) throw ContractError("cannot train on an empty dataset");
    std::vector<Tensor> params = m.parameters();
    AdamWConfig oc;
    oc.lr = m.cfg.lr;
    oc.weight_decay = m.cfg.weight_decay;
    AdamW opt(params, oc);

    std::vector<EpochStats> history;
    for (int epoch = 0; epoch < m.cfg.epochs; ++epoch) {
        const std::vector<Batch> batches =
            make_batches(train, m.cfg.batch_size, mix_seed(m.cfg.seed, 100 + static_cast<uint64_t>(epoch)), true);
        EpochStats stats;
        stats.epoch = epoch;
        for (size_t b = 0; b < batches.size(); ++b) {
            Tape tape(true);
            const uint64_t aug_seed =
                mix_seed(m.cfg.seed, 5000 + static_cast<uint64_t>(epoch) * 1000 + static_cast<uint64_t>(b));
            ForwardParts parts = forward_train(tape, m, batches[b], aug_seed, true);
            tape.backward(parts.total);
            opt.step(tape);
            stats.total += parts.total.item();
            stats.contrastive += parts.contrastive;
            stats.classification += parts.classification;
            stats.generation += parts.generation;
        }
        const double nb = static_cast<double>(batches.size());
        stats.total /= nb;
        stats.contrastive /= nb;
        stats.classification /= nb;
        stats.generation /= nb;
        history.push_back(stats);
        if (log) {
            (*log) << "epoch " << stats.epoch << " total " << stats.total << " contrastive "
                   << stats.contrastive << " classification " << stats.classification << " generation "
                   << stats.generation << "\n";
        }
    }
    return history;
}

} // namespace repsnet
