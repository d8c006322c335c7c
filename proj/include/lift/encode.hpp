// encode.hpp - token ids and per-token region masks for one prompt
#pragma once

#include "lift/builder.hpp"
#include "lift/tokenizer.hpp"

#include <json.hpp>

namespace lift {

enum class region : uint8_t {
    scaffold = 0,   // tags, separators, anything outside content spans
    instruction = 1,
    fewshot = 2,
    hist = 3,
    curr = 4,
    output = 5,
};

struct encoded_example {
    std::vector<int> input_ids;            // prompt tokens + response tokens + eos
    int prompt_len = 0;                    // tokens before the response
    std::vector<uint8_t> regions;          // region per token
    std::vector<uint8_t> prompt_ce_mask;   // prompt tokens outside history
    std::vector<uint8_t> output_mask;      // response tokens + eos
    std::vector<uint8_t> hist_mask;        // history content tokens
    std::vector<int> label_stamp;          // gold label id on output tokens, else 0
    std::vector<std::pair<int, int>> hist_line_ranges;  // token [begin,end) per line

    int stage = 0;
    dataset_id dataset = dataset_id::annomi;
    std::string sequence_key;
    int item_index = 0;
    int timestep = 0;
    int label_id = 0;
    std::string local_label;

    int size() const { return (int) input_ids.size(); }
};

// tokenize prompt + response, assign a region to every token by its byte
// span, and derive the supervision masks. SpanAlignment if a control token
// crosses a region boundary.
encoded_example encode_example(const prompt_example & ex, const tokenizer & tok);

nlohmann::json encoded_to_json(const encoded_example & e);
encoded_example encoded_from_json(const nlohmann::json & j);
void write_encoded_jsonl(const std::string & path, const std::vector<encoded_example> & v);
std::vector<encoded_example> read_encoded_jsonl(const std::string & path);

} // namespace lift
