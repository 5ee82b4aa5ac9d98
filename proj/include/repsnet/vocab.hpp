#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "repsnet/errors.hpp"

// Word-level vocabulary with fixed special ids. Tokenization is lowercase +
// drop-punctuation + whitespace split; unknown words map to UNK on encode, so
// encoding never fails.

namespace repsnet {

// Normalizes and splits free text: ASCII letters are lowercased, digits kept,
// every other character deleted, then the result splits on whitespace.
inline std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char raw : text) {
        const unsigned char c = static_cast<unsigned char>(raw);
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            if (!cur.empty()) { out.push_back(cur); cur.clear(); }
        } else if (c >= 'a' && c <= 'z') {
            cur.push_back(static_cast<char>(c));
        } else if (c >= 'A' && c <= 'Z') {
            cur.push_back(static_cast<char>(c - 'A' + 'a'));
        } else if (c >= '0' && c <= '9') {
            cur.push_back(static_cast<char>(c));
        }
        // anything else is punctuation: dropped in place
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

class Vocab {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    Vocab() { reset_specials(); }

    // Count words across the corpus; words with count >= min_count get ids in
    // descending-count order (ties broken lexicographically), starting at 4.
    static Vocab build(const std::vector<std::string>& corpus, int min_count) {
        if (corpus.empty()) throw ContractError("build_vocab on an empty corpus");
        std::map<std::string, int64_t> counts;
        for (const std::string& text : corpus) {
            for (const std::string& w : tokenize_words(text)) ++counts[w];
        }
        std::vector<std::pair<std::string, int64_t>> kept;
        for (const auto& [w, c] : counts) {
            if (c >= min_count) kept.emplace_back(w, c);
        }
        std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Vocab v;
        for (const auto& [w, c] : kept) v.push_token(w);
        return v;
    }

    // Rebuilds a vocabulary from the full id-ordered token list (the tokens()
    // surface), which must start with the four special tokens.
    static Vocab from_tokens(const std::vector<std::string>& tokens) {
        Vocab v;
        if (tokens.size() < 4 ||
            !std::equal(v.id_to_tok_.begin(), v.id_to_tok_.end(), tokens.begin())) {
            throw ContractError("serialized vocabulary must begin with the special tokens");
        }
        for (size_t i = 4; i < tokens.size(); ++i) v.push_token(tokens[i]);
        return v;
    }

    int size() const { return static_cast<int>(id_to_tok_.size()); }

    int id(const std::string& tok) const {
        auto it = tok_to_id_.find(tok);
        return it == tok_to_id_.end() ? kUnk : it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) {
            throw ContractError("token id " + std::to_string(id) + " out of range for vocab of " +
                                std::to_string(size()));
        }
        return id_to_tok_[static_cast<size_t>(id)];
    }

    std::vector<int> encode(const std::string& text, bool add_specials) const {
        std::vector<int> ids;
        if (add_specials) ids.push_back(kBos);
        for (const std::string& w : tokenize_words(text)) ids.push_back(id(w));
        if (add_specials) ids.push_back(kEos);
        return ids;
    }

    // Drops specials and joins with single spaces. Out-of-range ids are errors.
    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            const std::string& tok = token(id);
            if (id <= kUnk) continue;
            if (!out.empty()) out.push_back(' ');
            out += tok;
        }
        return out;
    }

    // All tokens in id order, specials included; the serialization surface.
    const std::vector<std::string>& tokens() const { return id_to_tok_; }

  private:
    void reset_specials() {
        id_to_tok_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
        tok_to_id_.clear();
        for (int i = 0; i < 4; ++i) tok_to_id_[id_to_tok_[static_cast<size_t>(i)]] = i;
    }

    void push_token(const std::string& tok) {
        if (tok_to_id_.count(tok)) throw ContractError("duplicate vocab token '" + tok + "'");
        tok_to_id_[tok] = size();
        id_to_tok_.push_back(tok);
    }

    std::vector<std::string> id_to_tok_;
    std::unordered_map<std::string, int> tok_to_id_;
};

// Close-ended answer classes with contiguous ids. Class strings are free text
// (spaces allowed); ids are assigned by the caller's ordering.
class AnswerVocab {
  public:
    AnswerVocab() = default;

    static AnswerVocab from_classes(const std::vector<std::string>& in_id_order) {
        AnswerVocab av;
        for (const std::string& c : in_id_order) {
            if (av.cls_to_id_.count(c)) throw ContractError("duplicate answer class '" + c + "'");
            av.cls_to_id_[c] = av.size();
            av.id_to_cls_.push_back(c);
        }
        return av;
    }

    int size() const { return static_cast<int>(id_to_cls_.size()); }

    int id(const std::string& cls) const {
        auto it = cls_to_id_.find(cls);
        return it == cls_to_id_.end() ? -1 : it->second;
    }

    const std::string& class_name(int id) const {
        if (id < 0 || id >= size()) {
            throw ContractError("answer class id " + std::to_string(id) + " out of range");
        }
        return id_to_cls_[static_cast<size_t>(id)];
    }

    const std::vector<std::string>& classes() const { return id_to_cls_; }

  private:
    std::vector<std::string> id_to_cls_;
    std::unordered_map<std::string, int> cls_to_id_;
};

} // namespace repsnet
