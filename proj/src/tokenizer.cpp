#include "lift/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include <json.hpp>

namespace lift {

const std::vector<std::string> & control_token_surfaces() {
    static const std::vector<std::string> toks = {
        "<instruction>", "</instruction>",
        "<few-shot>",    "</few-shot>",
        "<query>",       "</query>",
        "<hist>",        "</hist>",
        "<curr>",        "</curr>",
        "<output>",      "</output>",
    };
    return toks;
}

tokenizer::tokenizer() {
    // ids [0,256): single bytes, the lossless fallback alphabet
    for (int b = 0; b < 256; b++) {
        char c = (char) b;
        surfaces_.push_back(std::string(&c, 1));
        special_.push_back(0);
    }
}

int tokenizer::add_token(const std::string & surface, bool special) {
    if (special) {
        auto it = special_id_.find(surface);
        if (it != special_id_.end()) {
            return it->second;
        }
    } else {
        auto it = word_id_.find(surface);
        if (it != word_id_.end()) {
            return it->second;
        }
    }
    int id = (int) surfaces_.size();
    surfaces_.push_back(surface);
    special_.push_back(special ? 1 : 0);
    if (special) {
        special_id_[surface] = id;
        max_special_len_ = std::max(max_special_len_, surface.size());
    } else {
        word_id_[surface] = id;
    }
    return id;
}

tokenizer extend_vocab(tokenizer t) {
    if (t.pad_id_ < 0) {
        t.pad_id_ = t.add_token("<|pad|>", true);
    }
    if (t.eos_id_ < 0) {
        t.eos_id_ = t.add_token("<|eos|>", true);
    }
    for (auto & s : control_token_surfaces()) {
        t.add_token(s, true);
    }
    return t;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        if (isspace((unsigned char) text[i])) {
            i++;
            continue;
        }
        size_t j = i;
        while (j < text.size() && !isspace((unsigned char) text[j])) {
            j++;
        }
        out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

void tokenizer::build_word_vocab(const std::vector<std::string> & texts, int max_words) {
    std::map<std::string, int64_t> counts;
    for (auto & t : texts) {
        for (auto & w : split_words(t)) {
            if (special_id_.count(w) == 0) {
                counts[w]++;
            }
        }
    }
    std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto & a, const auto & b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    int added = 0;
    for (auto & [w, c] : ranked) {
        if (added >= max_words) {
            break;
        }
        if (word_id_.count(w) == 0) {
            add_token(w, false);
            added++;
        }
    }
}

std::vector<int> tokenizer::encode(std::string_view text) const {
    std::vector<token_span> spans;
    return encode(text, spans);
}

std::vector<int> tokenizer::encode(std::string_view text, std::vector<token_span> & spans) const {
    std::vector<int> ids;
    spans.clear();
    size_t i = 0;
    const size_t n = text.size();

    auto match_special = [&](size_t pos) -> int {
        // longest match wins
        size_t cap = std::min(max_special_len_, n - pos);
        for (size_t len = cap; len >= 1; len--) {
            auto it = special_id_.find(std::string(text.substr(pos, len)));
            if (it != special_id_.end()) {
                return it->second;
            }
        }
        return -1;
    };

    auto emit = [&](int id, size_t b, size_t e) {
        ids.push_back(id);
        spans.push_back({(int) b, (int) e});
    };

    while (i < n) {
        if (max_special_len_ > 0) {
            int sid = match_special(i);
            if (sid >= 0) {
                size_t len = surfaces_[sid].size();
                emit(sid, i, i + len);
                i += len;
                continue;
            }
        }
        unsigned char c = (unsigned char) text[i];
        if (isspace(c)) {
            emit((int) c, i, i + 1);  // whitespace rides on byte tokens
            i++;
            continue;
        }
        // scan a word, stopping early if a special begins mid-run
        size_t j = i;
        while (j < n && !isspace((unsigned char) text[j])) {
            if (j > i && max_special_len_ > 0 && match_special(j) >= 0) {
                break;
            }
            j++;
        }
        std::string word(text.substr(i, j - i));
        auto it = word_id_.find(word);
        if (it != word_id_.end()) {
            emit(it->second, i, j);
        } else {
            for (size_t k = i; k < j; k++) {
                emit((int) (unsigned char) text[k], k, k + 1);
            }
        }
        i = j;
    }
    return ids;
}

std::string tokenizer::decode(const std::vector<int> & ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= (int) surfaces_.size()) {
            fail(errc::index_out_of_range, "token id " + std::to_string(id));
        }
        out += surfaces_[id];
    }
    return out;
}

int tokenizer::token_count(std::string_view text) const {
    return (int) encode(text).size();
}

bool tokenizer::is_special(int id) const {
    if (id < 0 || id >= (int) special_.size()) {
        fail(errc::index_out_of_range, "token id " + std::to_string(id));
    }
    return special_[id] != 0;
}

int tokenizer::pad_id() const {
    if (pad_id_ < 0) {
        fail(errc::bad_args, "tokenizer has no pad token; run extend_vocab first");
    }
    return pad_id_;
}

int tokenizer::eos_id() const {
    if (eos_id_ < 0) {
        fail(errc::bad_args, "tokenizer has no eos token; run extend_vocab first");
    }
    return eos_id_;
}

int tokenizer::find(const std::string & surface) const {
    auto it = special_id_.find(surface);
    if (it != special_id_.end()) {
        return it->second;
    }
    auto it2 = word_id_.find(surface);
    if (it2 != word_id_.end()) {
        return it2->second;
    }
    if (surface.size() == 1) {
        return (int) (unsigned char) surface[0];
    }
    return -1;
}

uint64_t tokenizer::content_hash() const {
    std::string blob;
    for (size_t i = 256; i < surfaces_.size(); i++) {
        blob += special_[i] ? 'S' : 'W';
        blob += surfaces_[i];
        blob += '\n';
    }
    blob += "pad=" + std::to_string(pad_id_) + " eos=" + std::to_string(eos_id_);
    return fnv1a64(blob);
}

void tokenizer::save(const std::string & path) const {
    nlohmann::json toks = nlohmann::json::array();
    for (size_t i = 256; i < surfaces_.size(); i++) {
        toks.push_back({{"t", surfaces_[i]}, {"s", (bool) special_[i]}});
    }
    nlohmann::json j = {
        {"tokens", toks},
        {"pad_id", pad_id_},
        {"eos_id", eos_id_},
        {"hash", hex64(content_hash())},
    };
    write_text_file(path, j.dump(2) + "\n");
}

tokenizer tokenizer::load(const std::string & path) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path));
    tokenizer t;
    for (auto & e : j.at("tokens")) {
        t.add_token(e.at("t").get<std::string>(), e.at("s").get<bool>());
    }
    t.pad_id_ = j.at("pad_id").get<int>();
    t.eos_id_ = j.at("eos_id").get<int>();
    return t;
}

} // namespace lift
