#include "lift/encode.hpp"

#include <filesystem>
#include <fstream>

namespace lift {

static bool inside(const token_span & s, int b, int e) {
    return b >= s.begin && e <= s.end && s.begin < s.end;
}

static bool straddles(const token_span & s, int b, int e) {
    // token [b,e) crosses one of the span's edges
    return (b < s.begin && e > s.begin) || (b < s.end && e > s.end);
}

encoded_example encode_example(const prompt_example & ex, const tokenizer & tok) {
    encoded_example out;
    out.stage = ex.stage;
    out.dataset = ex.dataset;
    out.sequence_key = ex.sequence_key;
    out.item_index = ex.item_index;
    out.timestep = ex.timestep;
    out.label_id = ex.label_id;
    out.local_label = ex.local_label;

    std::vector<token_span> spans;
    std::vector<int> prompt_ids = tok.encode(ex.prompt_text, spans);
    std::vector<int> response_ids = tok.encode(ex.response_text);
    out.prompt_len = (int) prompt_ids.size();

    const token_span * content[] = {&ex.spans.instruction, &ex.spans.fewshot,
                                    &ex.spans.hist, &ex.spans.curr};
    const region content_region[] = {region::instruction, region::fewshot,
                                     region::hist, region::curr};

    out.input_ids = prompt_ids;
    out.input_ids.insert(out.input_ids.end(), response_ids.begin(), response_ids.end());
    out.input_ids.push_back(tok.eos_id());

    const int n = (int) out.input_ids.size();
    out.regions.assign(n, (uint8_t) region::scaffold);
    out.prompt_ce_mask.assign(n, 0);
    out.output_mask.assign(n, 0);
    out.hist_mask.assign(n, 0);
    out.label_stamp.assign(n, 0);

    for (int t = 0; t < out.prompt_len; t++) {
        const token_span & ts = spans[t];
        if (tok.is_special(out.input_ids[t])) {
            for (auto * sp : content) {
                if (straddles(*sp, ts.begin, ts.end)) {
                    fail(errc::span_alignment,
                         "control token '" + tok.decode({out.input_ids[t]}) +
                         "' crosses a region boundary at byte " + std::to_string(ts.begin));
                }
            }
        }
        for (int r = 0; r < 4; r++) {
            if (inside(*content[r], ts.begin, ts.end)) {
                out.regions[t] = (uint8_t) content_region[r];
                break;
            }
        }
    }
    for (int t = out.prompt_len; t < n; t++) {
        out.regions[t] = (uint8_t) region::output;
    }

    for (int t = 0; t < n; t++) {
        region r = (region) out.regions[t];
        if (t < out.prompt_len) {
            out.prompt_ce_mask[t] = r != region::hist ? 1 : 0;
            out.hist_mask[t] = r == region::hist ? 1 : 0;
        } else {
            out.output_mask[t] = 1;
            out.label_stamp[t] = ex.label_id;
        }
    }

    // token index ranges of individual history lines, for recency profiles
    for (auto & ls : ex.spans.hist_lines) {
        int b = -1;
        int e = -1;
        for (int t = 0; t < out.prompt_len; t++) {
            if (spans[t].begin >= ls.begin && spans[t].end <= ls.end) {
                if (b < 0) {
                    b = t;
                }
                e = t + 1;
            }
        }
        if (b >= 0) {
            out.hist_line_ranges.push_back({b, e});
        }
    }
    return out;
}

nlohmann::json encoded_to_json(const encoded_example & e) {
    auto mask_to_json = [](const std::vector<uint8_t> & m) {
        nlohmann::json a = nlohmann::json::array();
        for (uint8_t x : m) {
            a.push_back((int) x);
        }
        return a;
    };
    nlohmann::json ranges = nlohmann::json::array();
    for (auto & [b, end] : e.hist_line_ranges) {
        ranges.push_back(nlohmann::json::array({b, end}));
    }
    return {
        {"input_ids", e.input_ids},
        {"prompt_len", e.prompt_len},
        {"regions", mask_to_json(e.regions)},
        {"prompt_ce_mask", mask_to_json(e.prompt_ce_mask)},
        {"output_mask", mask_to_json(e.output_mask)},
        {"hist_mask", mask_to_json(e.hist_mask)},
        {"label_stamp", e.label_stamp},
        {"hist_line_ranges", ranges},
        {"stage", e.stage},
        {"dataset", dataset_name(e.dataset)},
        {"sequence_key", e.sequence_key},
        {"item_index", e.item_index},
        {"timestep", e.timestep},
        {"label_id", e.label_id},
        {"label", e.local_label},
    };
}

encoded_example encoded_from_json(const nlohmann::json & j) {
    encoded_example e;
    e.input_ids = j.at("input_ids").get<std::vector<int>>();
    e.prompt_len = j.at("prompt_len").get<int>();
    auto mask_from = [&](const char * key) {
        std::vector<uint8_t> m;
        for (auto & x : j.at(key)) {
            m.push_back((uint8_t) x.get<int>());
        }
        return m;
    };
    e.regions = mask_from("regions");
    e.prompt_ce_mask = mask_from("prompt_ce_mask");
    e.output_mask = mask_from("output_mask");
    e.hist_mask = mask_from("hist_mask");
    e.label_stamp = j.at("label_stamp").get<std::vector<int>>();
    for (auto & r : j.at("hist_line_ranges")) {
        e.hist_line_ranges.push_back({r.at(0).get<int>(), r.at(1).get<int>()});
    }
    e.stage = j.at("stage").get<int>();
    e.dataset = parse_dataset(j.at("dataset").get<std::string>());
    e.sequence_key = j.at("sequence_key").get<std::string>();
    e.item_index = j.at("item_index").get<int>();
    e.timestep = j.at("timestep").get<int>();
    e.label_id = j.at("label_id").get<int>();
    e.local_label = j.at("label").get<std::string>();
    return e;
}

void write_encoded_jsonl(const std::string & path, const std::vector<encoded_example> & v) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        fail(errc::io_error, "cannot write " + path);
    }
    for (auto & e : v) {
        f << encoded_to_json(e).dump() << "\n";
    }
}

std::vector<encoded_example> read_encoded_jsonl(const std::string & path) {
    std::vector<encoded_example> out;
    for (auto & line : read_lines(path)) {
        if (!line.empty()) {
            out.push_back(encoded_from_json(nlohmann::json::parse(line)));
        }
    }
    return out;
}

} // namespace lift
