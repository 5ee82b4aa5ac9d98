#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "repsnet/errors.hpp"

// Flat "key = value" configuration with "#" comments. Parsing rejects unknown
// keys by name, validation runs on every load, and serialization is canonical
// so parse -> serialize is a fixpoint.

namespace repsnet {

struct Config {
    // run control
    uint64_t seed = 7;
    int epochs = 30;
    int batch_size = 8;
    double lr = 5e-5;
    double weight_decay = 0.0;
    double init_std = 0.1;

    // contrastive alignment
    double temperature = 0.07;
    double alpha = 1.0; // weight of the contrastive term; 0 disables it

    // retrieval
    int k = 1;
    bool retrieval_fused = true; // keys are fused image+question embeddings

    // data
    int min_occurrence = 0;
    int image_h = 16;
    int image_w = 16;

    // encoder
    int patch = 4;
    int d_x = 32;       // image feature width
    int d_q = 32;       // question/text encoder width
    int d = 16;         // shared embedding width
    int text_layers = 1;
    int text_heads = 2;
    int text_max_len = 64;
    int glimpses = 2;
    int ban_rank = 8;

    // close-ended head
    int cls_hidden = 64;

    // decoder and generation
    int dec_layers = 2;
    int dec_heads = 2;
    int dec_width = 64;
    int max_answer_len = 200;
    int min_len = 5;
    int no_repeat_ngram = 2;
    int beam = 1;

    // data-derived (filled when a trained model is serialized; absent from
    // hand-written configs)
    std::vector<std::string> vocab;
    std::vector<std::string> classes;

    void validate() const {
        auto positive = [](long long v, const char* name) {
            if (v < 1) throw ContractError(std::string("config ") + name + " must be positive");
        };
        positive(batch_size, "batch_size");
        positive(k, "k");
        positive(image_h, "image_h");
        positive(image_w, "image_w");
        positive(patch, "patch");
        positive(d_x, "d_x");
        positive(d_q, "d_q");
        positive(d, "d");
        positive(text_layers, "text_layers");
        positive(text_heads, "text_heads");
        positive(text_max_len, "text_max_len");
        positive(glimpses, "glimpses");
        positive(ban_rank, "ban_rank");
        positive(cls_hidden, "cls_hidden");
        positive(dec_layers, "dec_layers");
        positive(dec_heads, "dec_heads");
        positive(dec_width, "dec_width");
        positive(beam, "beam");
        if (epochs < 0) throw ContractError("config epochs must be non-negative");
        if (min_occurrence < 0) throw ContractError("config min_occurrence must be non-negative");
        if (min_len < 0 || no_repeat_ngram < 0) {
            throw ContractError("config generation constraints must be non-negative");
        }
        if (lr <= 0.0) throw ContractError("config lr must be positive");
        if (weight_decay < 0.0) throw ContractError("config weight_decay must be non-negative");
        if (init_std <= 0.0) throw ContractError("config init_std must be positive");
        if (temperature <= 0.0) throw ContractError("config temperature must be positive");
        if (alpha < 0.0) throw ContractError("config alpha must be non-negative");
        if (image_h % patch != 0 || image_w % patch != 0) {
            throw ContractError("config patch must divide image_h and image_w");
        }
        if (d_q % text_heads != 0) throw ContractError("config d_q must divide across text_heads");
        if (dec_width % dec_heads != 0) throw ContractError("config dec_width must divide across dec_heads");
        if (max_answer_len < 5) throw ContractError("config max_answer_len must be at least 5");
        if (min_len >= max_answer_len) throw ContractError("config min_len must stay below max_answer_len");
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline long long parse_int_value(const std::string& key, const std::string& value) {
    long long out = 0;
    const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
    if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
        throw ContractError("config key \"" + key + "\" expects an integer, got \"" + value + "\"");
    }
    return out;
}

inline double parse_double_value(const std::string& key, const std::string& value) {
    double out = 0.0;
    const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
    if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
        throw ContractError("config key \"" + key + "\" expects a number, got \"" + value + "\"");
    }
    return out;
}

inline bool parse_bool_value(const std::string& key, const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    throw ContractError("config key \"" + key + "\" expects true or false, got \"" + value + "\"");
}

template <class F>
void for_each_scalar_field(Config& c, F&& f) {
    // (key, setter-from-string, getter-to-string) triples in canonical order
    f("seed", [&](const std::string& v) { c.seed = static_cast<uint64_t>(parse_int_value("seed", v)); },
      [&] { return std::to_string(c.seed); });
    f("epochs", [&](const std::string& v) { c.epochs = static_cast<int>(parse_int_value("epochs", v)); },
      [&] { return std::to_string(c.epochs); });
    f("batch_size",
      [&](const std::string& v) { c.batch_size = static_cast<int>(parse_int_value("batch_size", v)); },
      [&] { return std::to_string(c.batch_size); });
    f("lr", [&](const std::string& v) { c.lr = parse_double_value("lr", v); },
      [&] { return format_double(c.lr); });
    f("weight_decay", [&](const std::string& v) { c.weight_decay = parse_double_value("weight_decay", v); },
      [&] { return format_double(c.weight_decay); });
    f("init_std", [&](const std::string& v) { c.init_std = parse_double_value("init_std", v); },
      [&] { return format_double(c.init_std); });
    f("temperature", [&](const std::string& v) { c.temperature = parse_double_value("temperature", v); },
      [&] { return format_double(c.temperature); });
    f("alpha", [&](const std::string& v) { c.alpha = parse_double_value("alpha", v); },
      [&] { return format_double(c.alpha); });
    f("k", [&](const std::string& v) { c.k = static_cast<int>(parse_int_value("k", v)); },
      [&] { return std::to_string(c.k); });
    f("retrieval_fused", [&](const std::string& v) { c.retrieval_fused = parse_bool_value("retrieval_fused", v); },
      [&] { return std::string(c.retrieval_fused ? "true" : "false"); });
    f("min_occurrence",
      [&](const std::string& v) { c.min_occurrence = static_cast<int>(parse_int_value("min_occurrence", v)); },
      [&] { return std::to_string(c.min_occurrence); });
    f("image_h", [&](const std::string& v) { c.image_h = static_cast<int>(parse_int_value("image_h", v)); },
      [&] { return std::to_string(c.image_h); });
    f("image_w", [&](const std::string& v) { c.image_w = static_cast<int>(parse_int_value("image_w", v)); },
      [&] { return std::to_string(c.image_w); });
    f("patch", [&](const std::string& v) { c.patch = static_cast<int>(parse_int_value("patch", v)); },
      [&] { return std::to_string(c.patch); });
    f("d_x", [&](const std::string& v) { c.d_x = static_cast<int>(parse_int_value("d_x", v)); },
      [&] { return std::to_string(c.d_x); });
    f("d_q", [&](const std::string& v) { c.d_q = static_cast<int>(parse_int_value("d_q", v)); },
      [&] { return std::to_string(c.d_q); });
    f("d", [&](const std::string& v) { c.d = static_cast<int>(parse_int_value("d", v)); },
      [&] { return std::to_string(c.d); });
    f("text_layers",
      [&](const std::string& v) { c.text_layers = static_cast<int>(parse_int_value("text_layers", v)); },
      [&] { return std::to_string(c.text_layers); });
    f("text_heads",
      [&](const std::string& v) { c.text_heads = static_cast<int>(parse_int_value("text_heads", v)); },
      [&] { return std::to_string(c.text_heads); });
    f("text_max_len",
      [&](const std::string& v) { c.text_max_len = static_cast<int>(parse_int_value("text_max_len", v)); },
      [&] { return std::to_string(c.text_max_len); });
    f("glimpses", [&](const std::string& v) { c.glimpses = static_cast<int>(parse_int_value("glimpses", v)); },
      [&] { return std::to_string(c.glimpses); });
    f("ban_rank", [&](const std::string& v) { c.ban_rank = static_cast<int>(parse_int_value("ban_rank", v)); },
      [&] { return std::to_string(c.ban_rank); });
    f("cls_hidden",
      [&](const std::string& v) { c.cls_hidden = static_cast<int>(parse_int_value("cls_hidden", v)); },
      [&] { return std::to_string(c.cls_hidden); });
    f("dec_layers",
      [&](const std::string& v) { c.dec_layers = static_cast<int>(parse_int_value("dec_layers", v)); },
      [&] { return std::to_string(c.dec_layers); });
    f("dec_heads",
      [&](const std::string& v) { c.dec_heads = static_cast<int>(parse_int_value("dec_heads", v)); },
      [&] { return std::to_string(c.dec_heads); });
    f("dec_width",
      [&](const std::string& v) { c.dec_width = static_cast<int>(parse_int_value("dec_width", v)); },
      [&] { return std::to_string(c.dec_width); });
    f("max_answer_len",
      [&](const std::string& v) { c.max_answer_len = static_cast<int>(parse_int_value("max_answer_len", v)); },
      [&] { return std::to_string(c.max_answer_len); });
    f("min_len", [&](const std::string& v) { c.min_len = static_cast<int>(parse_int_value("min_len", v)); },
      [&] { return std::to_string(c.min_len); });
    f("no_repeat_ngram",
      [&](const std::string& v) { c.no_repeat_ngram = static_cast<int>(parse_int_value("no_repeat_ngram", v)); },
      [&] { return std::to_string(c.no_repeat_ngram); });
    f("beam", [&](const std::string& v) { c.beam = static_cast<int>(parse_int_value("beam", v)); },
      [&] { return std::to_string(c.beam); });
}

} // namespace detail

inline Config parse_config(const std::string& text) {
    Config c;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ContractError("config line " + std::to_string(line_no) + " is not \"key = value\"");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ContractError("config line " + std::to_string(line_no) + " has an empty key");

        bool handled = false;
        detail::for_each_scalar_field(c, [&](const char* name, auto&& set, auto&&) {
            if (!handled && key == name) {
                set(value);
                handled = true;
            }
        });
        if (!handled && key.rfind("vocab.", 0) == 0) {
            const size_t idx =
                static_cast<size_t>(detail::parse_int_value(key, key.substr(std::string("vocab.").size())));
            if (c.vocab.size() <= idx) c.vocab.resize(idx + 1);
            c.vocab[idx] = value;
            handled = true;
        }
        if (!handled && key.rfind("class.", 0) == 0) {
            const size_t idx =
                static_cast<size_t>(detail::parse_int_value(key, key.substr(std::string("class.").size())));
            if (c.classes.size() <= idx) c.classes.resize(idx + 1);
            c.classes[idx] = value;
            handled = true;
        }
        if (!handled) throw ContractError("unknown config key \"" + key + "\"");
    }
    c.validate();
    return c;
}

inline std::string serialize_config(const Config& c) {
    std::string out;
    detail::for_each_scalar_field(const_cast<Config&>(c), [&](const char* name, auto&&, auto&& get) {
        out += name;
        out += " = ";
        out += get();
        out += "\n";
    });
    for (size_t i = 0; i < c.vocab.size(); ++i) {
        out += "vocab." + std::to_string(i) + " = " + c.vocab[i] + "\n";
    }
    for (size_t i = 0; i < c.classes.size(); ++i) {
        out += "class." + std::to_string(i) + " = " + c.classes[i] + "\n";
    }
    return out;
}

inline Config load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

} // namespace repsnet
