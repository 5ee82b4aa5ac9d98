#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "repsnet/bleu.hpp"
#include "repsnet/checkpoint.hpp"
#include "repsnet/model.hpp"
#include "repsnet/synthetic.hpp"

// Command-line surface: train | eval | generate | retrieve | synth, exposed
// as an in-process entry point so tests can drive it without spawning. Exit
// codes: 0 success, 1 contract violation, 2 I/O failure.

namespace repsnet::cli {

namespace detail {

// Specials carry no content: they are dropped for reports and text metrics.
inline std::vector<int> content_tokens(const std::vector<int>& ids) {
    std::vector<int> out;
    for (int t : ids) {
        if (t != Vocab::kPad && t != Vocab::kBos && t != Vocab::kEos) out.push_back(t);
    }
    return out;
}

// The answer index always sits next to the checkpoint that produced it.
inline std::string sibling_index_path(const std::string& checkpoint_path) {
    return (std::filesystem::path(checkpoint_path).parent_path() / "index.rnix").string();
}

// Builds the training dataset and its vocabulary from one JSONL file.
inline std::pair<Dataset, Vocab> materialize_train(const std::string& path) {
    const std::vector<RawRecord> records = load_jsonl_records(path);
    if (records.empty()) throw IoError(path + ": dataset is empty");
    std::vector<std::string> corpus;
    for (const RawRecord& r : records) {
        corpus.push_back(r.question);
        corpus.push_back(r.answer_type == AnswerType::Open ? r.answer_text : r.answer_class);
    }
    const Vocab vocab = Vocab::build(corpus, 1);
    Dataset train;
    train.split = "train";
    std::map<std::string, int> seen;
    for (const RawRecord& r : records) {
        if (++seen[r.id] > 1) throw IoError(path + ": duplicate sample id \"" + r.id + "\"");
        train.samples.push_back(make_sample(r, vocab));
    }
    return {std::move(train), vocab};
}

// Evaluation data is tokenized with the model's frozen vocabulary; classes
// the model never saw are flagged so accuracy can exclude them.
inline Dataset materialize_eval(const RepsNetModel& m, const std::string& path) {
    Dataset ds = load_jsonl(path, m.vocab, "eval");
    for (Sample& s : ds.samples) {
        if (s.answer_type != AnswerType::Close) continue;
        s.answer_class = m.answers.id(s.answer_class_text);
        s.unseen = s.answer_class < 0;
    }
    return ds;
}

inline AnswerIndex load_index_for(const std::string& checkpoint_path) {
    const std::string path = sibling_index_path(checkpoint_path);
    if (!std::filesystem::exists(path)) {
        throw IoError("answer index " + path + " not found next to the checkpoint");
    }
    return AnswerIndex::load(path);
}

inline std::string fmt(double v) { return repsnet::detail::format_double(v); }

} // namespace detail

inline int cmd_train(const std::string& config_path, const std::string& data_path,
                     const std::string& out_dir, int64_t seed_override, std::ostream& out) {
    if (data_path.empty()) throw ContractError("train needs --data pointing at a JSONL file");
    if (out_dir.empty()) throw ContractError("train needs --out naming an output directory");
    Config cfg = config_path.empty() ? Config{} : load_config_file(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    cfg.validate();

    auto [train, vocab] = detail::materialize_train(data_path);
    Dataset no_eval;
    const AnswerVocab answers = filter_min_occurrence(train, no_eval, cfg.min_occurrence);
    RepsNetModel model = make_model(cfg, vocab, answers);

    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    std::ofstream log(dir / "metrics.log");
    if (!log) throw IoError("cannot open " + (dir / "metrics.log").string() + " for writing");
    const std::vector<EpochStats> history = train_model(model, train, &log);
    log.close();

    const std::string ckpt = (dir / "checkpoint.rsnc").string();
    save_checkpoint(model, ckpt);
    out << "trained " << history.size() << " epochs on " << train.samples.size() << " samples\n";
    if (!history.empty()) out << "final loss " << detail::fmt(history.back().total) << "\n";
    out << "checkpoint " << ckpt << "\n";

    const bool any_open = std::any_of(train.samples.begin(), train.samples.end(), [](const Sample& s) {
        return s.answer_type == AnswerType::Open;
    });
    if (any_open) {
        const std::string index_path = (dir / "index.rnix").string();
        build_index(model, train).save(index_path);
        out << "index " << index_path << "\n";
    } else {
        out << "no open-ended samples: index skipped\n";
    }
    return 0;
}

inline int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
                    std::string json_path, int k_override, int beam_override, std::ostream& out) {
    if (checkpoint_path.empty()) throw ContractError("eval needs --checkpoint");
    if (data_path.empty()) throw ContractError("eval needs --data");
    if (json_path.empty()) json_path = "metrics.json";
    RepsNetModel model = load_checkpoint(checkpoint_path);
    if (k_override > 0) model.cfg.k = k_override;
    if (beam_override > 0) model.cfg.beam = beam_override;
    model.cfg.validate();
    const Dataset eval = detail::materialize_eval(model, data_path);

    bool any_close = false, any_open = false;
    for (const Sample& s : eval.samples) {
        (s.answer_type == AnswerType::Close ? any_close : any_open) = true;
    }

    std::vector<int> predictions(eval.samples.size(), -1);
    std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
    AnswerIndex index(model.cfg.d);
    if (any_open) index = detail::load_index_for(checkpoint_path);
    const GenerationConstraints cons = generation_constraints(model.cfg);
    for (size_t i = 0; i < eval.samples.size(); ++i) {
        const Sample& s = eval.samples[i];
        if (s.answer_type == AnswerType::Close) {
            predictions[i] = infer_close(model, s.image, s.question);
        } else {
            const OpenInference gen = infer_open(model, index, s.image, s.question, cons);
            pairs.emplace_back(detail::content_tokens(gen.tokens), detail::content_tokens(s.answer_text));
        }
    }

    out << "samples " << eval.samples.size() << "\n";
    std::string json = "{";
    if (any_close) {
        const AccuracyReport acc = accuracy_eval(predictions, eval, model.answers);
        out << "accuracy " << detail::fmt(acc.accuracy) << " on " << acc.eligible
            << " eligible close-ended samples (" << acc.unseen << " unseen excluded)\n";
        json += "\"accuracy\": " + detail::fmt(acc.accuracy) + ", \"unseen\": " + std::to_string(acc.unseen) + ", ";
    } else {
        out << "no close-ended samples: accuracy omitted\n";
    }
    if (any_open) {
        const BleuReport bleu = corpus_eval(pairs);
        out << "bleu";
        for (int n = 0; n < 4; ++n) out << " b" << n + 1 << " " << detail::fmt(bleu.mean[static_cast<size_t>(n)]);
        out << "\n";
        json += "\"bleu\": {";
        for (int n = 0; n < 4; ++n) {
            json += "\"b" + std::to_string(n + 1) + "\": " + detail::fmt(bleu.mean[static_cast<size_t>(n)]);
            if (n < 3) json += ", ";
        }
        json += "}, ";
    } else {
        out << "no open-ended samples: bleu omitted\n";
    }
    json += "\"samples\": " + std::to_string(eval.samples.size()) + "}";

    std::ofstream jf(json_path);
    if (!jf) throw IoError("cannot open " + json_path + " for writing");
    jf << json << "\n";
    out << "metrics written to " << json_path << "\n";
    return 0;
}

inline int cmd_generate(const std::string& checkpoint_path, const std::string& data_path,
                        int k_override, int beam_override, std::ostream& out) {
    if (checkpoint_path.empty()) throw ContractError("generate needs --checkpoint");
    if (data_path.empty()) throw ContractError("generate needs --data");
    RepsNetModel model = load_checkpoint(checkpoint_path);
    if (k_override > 0) model.cfg.k = k_override;
    if (beam_override > 0) model.cfg.beam = beam_override;
    model.cfg.validate();
    const AnswerIndex index = detail::load_index_for(checkpoint_path);
    const Dataset ds = detail::materialize_eval(model, data_path);
    const GenerationConstraints cons = generation_constraints(model.cfg);
    for (const Sample& s : ds.samples) {
        const OpenInference gen = infer_open(model, index, s.image, s.question, cons);
        out << "sample " << s.id << "\n";
        out << "answer: " << model.vocab.decode(gen.tokens) << "\n";
        out << "tokens: " << detail::content_tokens(gen.tokens).size() << "\n";
        for (size_t r = 0; r < gen.items.size(); ++r) {
            const RetrievedItem& item = gen.items[r];
            out << "neighbour " << r + 1 << " score " << detail::fmt(item.score) << " id " << item.id
                << ": " << model.vocab.decode(item.tokens) << "\n";
        }
    }
    return 0;
}

// Without an explicit --k the checkpoint's own k applies.
inline int cmd_retrieve(const std::string& checkpoint_path, const std::string& data_path, int k,
                        bool k_given, std::ostream& out, std::ostream& err) {
    if (checkpoint_path.empty()) throw ContractError("retrieve needs --checkpoint");
    if (data_path.empty()) throw ContractError("retrieve needs --data");
    if (k_given && k < 1) throw ContractError("retrieve needs --k of at least 1");
    RepsNetModel model = load_checkpoint(checkpoint_path);
    if (!k_given) k = model.cfg.k;
    const AnswerIndex index = detail::load_index_for(checkpoint_path);
    const Dataset ds = detail::materialize_eval(model, data_path);
    const Sample& probe = ds.samples.front();
    if (k > index.size()) {
        err << "warning: k " << k << " exceeds index size " << index.size() << "; returning all rows\n";
    }
    Tape tape(false);
    const Tensor query = retrieval_query(tape, model, probe.image, probe.question);
    const std::vector<RetrievedItem> items = index.topk(query.data(), k);
    out << "query " << probe.id << "\n";
    for (size_t r = 0; r < items.size(); ++r) {
        out << r + 1 << " score " << detail::fmt(items[r].score) << " id " << items[r].id << ": "
            << model.vocab.decode(items[r].tokens) << "\n";
    }
    return 0;
}

inline int cmd_synth(const std::string& config_path, const std::string& out_dir, int64_t seed_override,
                     std::ostream& out) {
    if (out_dir.empty()) throw ContractError("synth needs --out naming an output directory");
    Config cfg = config_path.empty() ? Config{} : load_config_file(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    cfg.validate();
    SynthSpec spec;
    spec.height = cfg.image_h;
    spec.width = cfg.image_w;
    const SynthData data = generate_synthetic_records(spec, cfg.seed);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    write_jsonl((dir / "train.jsonl").string(), data.train_records);
    write_jsonl((dir / "eval.jsonl").string(), data.eval_records);
    out << "wrote " << data.train_records.size() << " train and " << data.eval_records.size()
        << " eval samples to " << out_dir << "\n";
    return 0;
}

// Parses an argv-style vector (program name excluded) and dispatches.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"RepsNet: retrieval-conditioned visual question answering"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, data_path, out_path;
    int64_t seed = -1;
    int k = 0, beam = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "configuration file (key = value lines)");
        cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file path");
        cmd->add_option("--data", data_path, "JSONL dataset path");
        cmd->add_option("--seed", seed, "seed override");
        cmd->add_option("--k", k, "retrieval neighbour count override");
        cmd->add_option("--beam", beam, "beam width override");
        cmd->add_option("--out", out_path, "output file or directory");
    };
    CLI::App* train = app.add_subcommand("train", "train a model and write checkpoint + index + log");
    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint against a dataset");
    CLI::App* generate = app.add_subcommand("generate", "decode answers with retrieved context");
    CLI::App* retrieve = app.add_subcommand("retrieve", "inspect nearest neighbours of a query");
    CLI::App* synth = app.add_subcommand("synth", "write a synthetic JSONL dataset");
    for (CLI::App* cmd : {train, eval, generate, retrieve, synth}) add_common(cmd);

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (train->parsed()) return cmd_train(config_path, data_path, out_path, seed, out);
        if (eval->parsed()) return cmd_eval(checkpoint_path, data_path, out_path, k, beam, out);
        if (generate->parsed()) return cmd_generate(checkpoint_path, data_path, k, beam, out);
        if (retrieve->parsed()) {
            return cmd_retrieve(checkpoint_path, data_path, k, retrieve->count("--k") > 0, out, err);
        }
        if (synth->parsed()) return cmd_synth(config_path, out_path, seed, out);
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return 2;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

} // namespace repsnet::cli
