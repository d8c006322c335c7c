#include "lift/tokenizer.hpp"

#include <doctest.h>

#include <filesystem>

using namespace lift;

static tokenizer small_tok(const std::vector<std::string> & texts = {}, int cap = 64) {
    tokenizer t = extend_vocab(tokenizer());
    if (!texts.empty()) {
        t.build_word_vocab(texts, cap);
    }
    return t;
}

TEST_CASE("byte base covers arbitrary input losslessly") {
    tokenizer t;
    CHECK(t.vocab_size() == 256);
    std::string s = "any bytes \x01\xff here";
    auto ids = t.encode(s);
    REQUIRE(ids.size() == s.size());
    for (size_t i = 0; i < s.size(); i++) {
        CHECK(ids[i] == (int) (unsigned char) s[i]);
    }
    CHECK(t.decode(ids) == s);
}

TEST_CASE("extend_vocab registers specials idempotently") {
    tokenizer t = small_tok();
    CHECK(t.has_pad());
    CHECK(t.has_eos());
    CHECK(t.pad_id() >= 256);
    CHECK(t.eos_id() >= 256);
    CHECK(t.is_special(t.eos_id()));
    for (auto & s : control_token_surfaces()) {
        int id = t.find(s);
        CHECK(id >= 0);
        CHECK(t.is_special(id));
    }
    uint64_t before = t.content_hash();
    tokenizer t2 = extend_vocab(t);
    CHECK(t2.content_hash() == before);
}

TEST_CASE("control tokens encode atomically") {
    tokenizer t = small_tok({"hello world"});
    auto ids = t.encode("<hist> hello </hist>");
    REQUIRE(ids.size() == 5);  // <hist>, ' ', hello, ' ', </hist>
    CHECK(ids[0] == t.find("<hist>"));
    CHECK(ids[1] == (int) ' ');
    CHECK(ids[2] == t.find("hello"));
    CHECK(ids[4] == t.find("</hist>"));
    // special glued to a word still splits off
    auto glued = t.encode("hello</hist>");
    CHECK(glued.size() == 2);
    CHECK(glued[0] == t.find("hello"));
    CHECK(glued[1] == t.find("</hist>"));
}

TEST_CASE("word vocab is frequency ranked and capped") {
    tokenizer t = extend_vocab(tokenizer());
    int base = t.vocab_size();
    t.build_word_vocab({"b b b a a cc", "a"}, 2);
    CHECK(t.vocab_size() == base + 2);
    // a appears 3 times, b 3 times; count tie broken lexicographically
    CHECK(t.find("a") == base);
    CHECK(t.find("b") == base + 1);
    CHECK(t.find("cc") == -1);
    auto cids = t.encode("cc");
    CHECK(cids.size() == 2);
    CHECK(cids[0] == (int) 'c');  // byte fallback for out-of-vocab words
    CHECK(cids[1] == (int) 'c');
}

TEST_CASE("spans tile the input exactly") {
    tokenizer t = small_tok({"alpha beta gamma"});
    std::string s = "<curr> alpha beta zz9 </curr>\n<output> gamma";
    std::vector<token_span> spans;
    auto ids = t.encode(s, spans);
    REQUIRE(ids.size() == spans.size());
    std::string rebuilt;
    int cursor = 0;
    for (size_t i = 0; i < spans.size(); i++) {
        CHECK(spans[i].begin == cursor);
        CHECK(spans[i].end > spans[i].begin);
        rebuilt += s.substr(spans[i].begin, spans[i].end - spans[i].begin);
        cursor = spans[i].end;
    }
    CHECK(cursor == (int) s.size());
    CHECK(rebuilt == s);
    CHECK(t.decode(ids) == s);
    CHECK(t.token_count(s) == (int) ids.size());
}

TEST_CASE("save and load round trip") {
    tokenizer t = small_tok({"one two three two two"});
    std::string dir = std::filesystem::temp_directory_path() / "lift_tok_test";
    ensure_dir(dir);
    t.save(dir + "/tok.json");
    tokenizer back = tokenizer::load(dir + "/tok.json");
    CHECK(back.content_hash() == t.content_hash());
    CHECK(back.vocab_size() == t.vocab_size());
    CHECK(back.pad_id() == t.pad_id());
    CHECK(back.eos_id() == t.eos_id());
    std::string s = "<output> two unseen-word one";
    CHECK(back.encode(s) == t.encode(s));
    std::filesystem::remove_all(dir);
}

TEST_CASE("deterministic vocab across construction order") {
    tokenizer a = extend_vocab(tokenizer());
    tokenizer b = extend_vocab(tokenizer());
    a.build_word_vocab({"x y", "z z"}, 10);
    b.build_word_vocab({"x y", "z z"}, 10);
    CHECK(a.content_hash() == b.content_hash());
}
