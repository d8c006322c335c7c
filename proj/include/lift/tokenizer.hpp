// tokenizer.hpp - deterministic word tokenizer with byte fallback and
// atomic control tokens
#pragma once

#include "lift/common.hpp"

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lift {

struct token_span {
    int begin = 0;  // byte offset, inclusive
    int end = 0;    // byte offset, exclusive
};

// the structural markers used by prompt rendering. a tokenizer must emit
// each of these as one atomic id so region masks can be cut losslessly.
const std::vector<std::string> & control_token_surfaces();

class tokenizer {
public:
    // base vocabulary: 256 byte tokens. words and specials are appended
    // later (build_word_vocab / extend_vocab) so ids stay stable.
    tokenizer();

    // ensure pad, eos and every control token exist as atomic specials.
    // idempotent: calling twice changes nothing.
    friend tokenizer extend_vocab(tokenizer t);

    // frequency-ranked word vocabulary from a corpus sample.
    // deterministic: count desc, then lexicographic; capped at max_words.
    void build_word_vocab(const std::vector<std::string> & texts, int max_words = 4096);

    std::vector<int> encode(std::string_view text) const;
    std::vector<int> encode(std::string_view text, std::vector<token_span> & spans) const;
    std::string decode(const std::vector<int> & ids) const;
    int token_count(std::string_view text) const;

    bool is_special(int id) const;
    bool has_pad() const { return pad_id_ >= 0; }
    bool has_eos() const { return eos_id_ >= 0; }
    int pad_id() const;
    int eos_id() const;
    int vocab_size() const { return (int) surfaces_.size(); }

    // id of an exact surface string; -1 if absent
    int find(const std::string & surface) const;

    uint64_t content_hash() const;

    void save(const std::string & path) const;
    static tokenizer load(const std::string & path);

private:
    int add_token(const std::string & surface, bool special);

    std::vector<std::string> surfaces_;           // id -> text
    std::vector<uint8_t> special_;                // id -> is_special
    std::unordered_map<std::string, int> word_id_;
    std::unordered_map<std::string, int> special_id_;
    int pad_id_ = -1;
    int eos_id_ = -1;
    size_t max_special_len_ = 0;
};

tokenizer extend_vocab(tokenizer t);

// whitespace word splitter shared by vocab construction and token counting
std::vector<std::string> split_words(std::string_view text);

} // namespace lift
