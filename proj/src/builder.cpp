#include "lift/builder.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

namespace lift {

// ------------------------------------------------------------ curriculum

const std::array<curriculum_stage, 3> & default_curriculum() {
    static const std::array<curriculum_stage, 3> stages = {{
        {1, dataset_id::annomi,   1,  4, 2e-4, "cosine"},
        {2, dataset_id::lrs,      2,  8, 1e-4, "cosine"},
        {3, dataset_id::talklife, 3, 16, 5e-5, "constant"},
    }};
    return stages;
}

const curriculum_stage & stage_for(dataset_id d) {
    for (auto & st : default_curriculum()) {
        if (st.dataset == d) {
            return st;
        }
    }
    fail(errc::not_a_curriculum_dataset, dataset_name(d));
}

bool in_curriculum(dataset_id d) {
    for (auto & st : default_curriculum()) {
        if (st.dataset == d) {
            return true;
        }
    }
    return false;
}

// ------------------------------------------------------------ history

std::vector<history_line> build_history(const timeline & tl, int index) {
    if (index < 0 || index > (int) tl.items.size()) {
        fail(errc::index_out_of_range, "history index " + std::to_string(index) +
             " in timeline '" + tl.sequence_key + "'");
    }
    std::vector<history_line> out;
    for (int i = 0; i < index; i++) {
        const timeline_item & it = tl.items[i];
        history_line h;
        h.rel = index - i;
        h.text = it.text;
        h.label = it.local_label;
        h.labeled = it.label_id != 0;
        out.push_back(std::move(h));
    }
    return out;
}

std::string format_history_line(const history_line & h, bool with_labels) {
    std::string s = "t-" + std::to_string(h.rel) + ": " + h.text;
    if (with_labels && h.labeled) {
        s += " -> " + h.label;
    }
    return s;
}

int truncate_to_budget(const std::string & header,
                       const std::vector<std::string> & lines,
                       const std::string & current,
                       int budget, const token_len_fn & len) {
    const int n = (int) lines.size();
    // longest suffix first, so the first feasible one is maximal
    for (int keep = n; keep >= 0; keep--) {
        std::string composed = header;
        for (int i = n - keep; i < n; i++) {
            if (i > n - keep) {
                composed += "\n";
            }
            composed += lines[i];
        }
        composed += current;
        if (len(composed) <= budget) {
            return keep;
        }
    }
    fail(errc::budget_too_small,
         "header and current alone exceed budget " + std::to_string(budget));
}

// ------------------------------------------------------------ demos

demo_pool build_demo_pool(const std::vector<timeline> & tls, bool with_labels,
                          int max_hist) {
    demo_pool pool;
    for (auto & tl : tls) {
        for (auto & it : tl.items) {
            if (it.label_id == 0) {
                continue;
            }
            std::string r;
            int first = std::max(0, it.index - max_hist);
            for (int i = first; i < it.index; i++) {
                history_line h;
                h.rel = it.index - i;
                h.text = tl.items[i].text;
                h.label = tl.items[i].local_label;
                h.labeled = tl.items[i].label_id != 0;
                r += format_history_line(h, with_labels) + "\n";
            }
            r += "t-0: " + it.text + " -> " + it.local_label;
            pool.entries.push_back({tl.sequence_key, std::move(r), it.label_id});
        }
    }
    return pool;
}

std::vector<int> sample_demo_indices(const demo_pool & pool, int k,
                                     const std::string & exclude_key,
                                     bool stratified, rng64 & rng) {
    std::vector<int> eligible;
    for (int i = 0; i < (int) pool.entries.size(); i++) {
        if (pool.entries[i].sequence_key != exclude_key) {
            eligible.push_back(i);
        }
    }
    if (k <= 0 || eligible.empty()) {
        return {};
    }
    if (!stratified) {
        rng.shuffle(eligible);
        if ((int) eligible.size() > k) {
            eligible.resize(k);
        }
        return eligible;
    }
    // round-robin over label buckets in label-id order
    std::map<int, std::vector<int>> buckets;
    for (int i : eligible) {
        buckets[pool.entries[i].label_id].push_back(i);
    }
    for (auto & [lbl, v] : buckets) {
        rng.shuffle(v);
    }
    std::vector<int> out;
    size_t round = 0;
    while ((int) out.size() < k) {
        bool any = false;
        for (auto & [lbl, v] : buckets) {
            if (round < v.size()) {
                out.push_back(v[round]);
                any = true;
                if ((int) out.size() == k) {
                    break;
                }
            }
        }
        if (!any) {
            break;
        }
        round++;
    }
    return out;
}

// ------------------------------------------------------------ prompts

prompt_example render_prompt(const std::string & instruction,
                             const std::vector<std::string> & demos,
                             const std::vector<history_line> & hist,
                             bool history_labels,
                             const std::string & current,
                             const std::string & response) {
    prompt_example ex;
    std::string & p = ex.prompt_text;
    auto mark = [&]() { return (int) p.size(); };

    p += "<instruction> ";
    ex.spans.instruction.begin = mark();
    p += instruction;
    ex.spans.instruction.end = mark();
    p += " </instruction>\n";

    p += "<few-shot> ";
    ex.spans.fewshot.begin = mark();
    for (size_t i = 0; i < demos.size(); i++) {
        if (i > 0) {
            p += "\n\n";
        }
        p += demos[i];
    }
    ex.spans.fewshot.end = mark();
    p += " </few-shot>\n";

    p += "<query> <hist> ";
    ex.spans.hist.begin = mark();
    for (size_t i = 0; i < hist.size(); i++) {
        if (i > 0) {
            p += "\n";
        }
        token_span ls;
        ls.begin = mark();
        p += format_history_line(hist[i], history_labels);
        ls.end = mark();
        ex.spans.hist_lines.push_back(ls);
    }
    ex.spans.hist.end = mark();
    p += " </hist>\n";

    p += "<curr> ";
    ex.spans.curr.begin = mark();
    p += current;
    ex.spans.curr.end = mark();
    p += " </curr> </query>\n";

    p += "<output> ";
    ex.spans.output.begin = mark();
    ex.response_text = response;
    ex.spans.output.end = mark() + (int) response.size();

    ex.k_actual = (int) demos.size();
    ex.history_kept = (int) hist.size();
    return ex;
}

// ------------------------------------------------------------ shards

std::string load_instruction(const std::string & templates_dir, dataset_id d) {
    std::string path = templates_dir + "/" + dataset_name(d) + ".txt";
    std::string text = read_text_file(path);
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r' ||
                             text.back() == ' ' || text.back() == '\t')) {
        text.pop_back();
    }
    if (text.empty()) {
        fail(errc::empty_text, "instruction template " + path);
    }
    return text;
}

static std::vector<history_line> masked_copy(std::vector<history_line> hist) {
    for (auto & h : hist) {
        h.text = "...";
        h.label.clear();
        h.labeled = false;
    }
    return hist;
}

static prompt_example build_one(const timeline & tl, int index,
                                const std::string & instruction,
                                const curriculum_stage * st, int k_shots,
                                const tokenizer & tok, const build_options & opt,
                                const demo_pool & pool, rng64 base_rng,
                                build_stats & stats, bool & kept_out,
                                const std::string * exclude_key = nullptr) {
    const timeline_item & it = tl.items[index];
    kept_out = false;

    std::vector<history_line> hist = build_history(tl, index);
    if (opt.mask_history) {
        hist = masked_copy(hist);
    }
    std::vector<std::string> formatted;
    formatted.reserve(hist.size());
    for (auto & h : hist) {
        formatted.push_back(format_history_line(h, opt.history_labels));
    }

    token_len_fn len = [&tok](const std::string & s) { return tok.token_count(s); };

    const std::string header0 = "<instruction> " + instruction +
                                " </instruction>\n<few-shot> " +
                                " </few-shot>\n<query> <hist> ";
    const std::string current0 = " </hist>\n<curr> " + it.text +
                                 " </curr> </query>\n<output> " + it.local_label;
    const int budget = opt.max_tokens - 1;  // one slot reserved for eos

    int keep;
    try {
        keep = truncate_to_budget(header0, formatted, current0, budget, len);
    } catch (const lift_error & e) {
        if (e.code() == errc::budget_too_small) {
            stats.dropped++;
            return {};
        }
        throw;
    }
    if (keep < (int) hist.size()) {
        stats.histories_truncated++;
        hist.erase(hist.begin(), hist.end() - keep);
    }

    // per-example stream so build order never shifts demo choices
    std::string ex_key = std::string(dataset_name(it.dataset)) + ":" +
                         tl.sequence_key + ":" + std::to_string(index);
    rng64 rng = base_rng.fork(fnv1a64(ex_key));
    const std::string & excl = exclude_key ? *exclude_key : tl.sequence_key;
    std::vector<int> demo_idx =
        sample_demo_indices(pool, k_shots, excl, opt.stratified_demos, rng);

    std::vector<std::string> demo_texts;
    for (int di : demo_idx) {
        demo_texts.push_back(pool.entries[di].rendered);
    }

    prompt_example ex = render_prompt(instruction, demo_texts, hist,
                                      opt.history_labels, it.text, it.local_label);
    while (tok.token_count(ex.prompt_text + ex.response_text) + 1 > opt.max_tokens &&
           !demo_texts.empty()) {
        demo_texts.pop_back();
        ex = render_prompt(instruction, demo_texts, hist, opt.history_labels,
                           it.text, it.local_label);
    }
    if ((int) demo_texts.size() < (int) demo_idx.size()) {
        stats.demos_reduced++;
    }

    ex.stage = st ? st->stage : 0;
    ex.dataset = it.dataset;
    ex.sequence_key = tl.sequence_key;
    ex.item_index = index;
    ex.timestep = index;
    ex.k_requested = k_shots;
    ex.history_total = index;
    ex.label_id = it.label_id;
    ex.local_label = it.local_label;

    stats.examples++;
    stats.context_tokens += tok.token_count(ex.prompt_text.substr(
        ex.spans.hist.begin, ex.spans.curr.end - ex.spans.hist.begin));
    stats.prompt_tokens += tok.token_count(ex.prompt_text + ex.response_text) + 1;
    kept_out = true;
    return ex;
}

static void finish_stats(build_stats & st) {
    if (st.examples > 0) {
        st.mean_context_tokens = (double) st.context_tokens / st.examples;
        st.mean_prompt_tokens = (double) st.prompt_tokens / st.examples;
    }
}

stage_shard build_stage_shard(const std::vector<timeline> & tls,
                              const curriculum_stage & st,
                              const tokenizer & tok,
                              const build_options & opt) {
    stage_shard shard;
    shard.stage = st;
    std::string instruction = load_instruction(opt.templates_dir, st.dataset);
    // masked runs must not leak history through exemplars either
    demo_pool pool = build_demo_pool(tls, opt.history_labels,
                                     opt.mask_history ? 0 : opt.demo_max_hist);
    rng64 base(opt.seed ^ (uint64_t) st.stage * 0x9E3779B97F4A7C15ull);

    for (auto & tl : tls) {
        if (tl.dataset != st.dataset) {
            continue;
        }
        for (auto & it : tl.items) {
            if (it.label_id == 0) {
                continue;
            }
            bool kept = false;
            prompt_example ex = build_one(tl, it.index, instruction, &st, st.k_shots,
                                          tok, opt, pool, base, shard.stats, kept);
            if (kept) {
                shard.examples.push_back(std::move(ex));
            }
        }
    }
    finish_stats(shard.stats);
    if (shard.examples.empty()) {
        fail(errc::empty_shard, std::string("stage ") + std::to_string(st.stage) +
             " (" + dataset_name(st.dataset) + ")");
    }
    return shard;
}

std::vector<prompt_example> build_eval_examples(const std::vector<timeline> & tls,
                                                dataset_id d, int k_shots,
                                                const tokenizer & tok,
                                                const build_options & opt,
                                                const demo_pool & pool,
                                                build_stats * stats_out) {
    std::string instruction = load_instruction(opt.templates_dir, d);
    const curriculum_stage * st = in_curriculum(d) ? &stage_for(d) : nullptr;
    rng64 base(opt.seed ^ 0xE721AD43C1B3F5D9ull);
    build_stats stats;
    std::vector<prompt_example> out;
    for (auto & tl : tls) {
        if (tl.dataset != d) {
            continue;
        }
        for (auto & it : tl.items) {
            if (it.label_id == 0) {
                continue;
            }
            bool kept = false;
            prompt_example ex = build_one(tl, it.index, instruction, st, k_shots,
                                          tok, opt, pool, base, stats, kept);
            if (kept) {
                out.push_back(std::move(ex));
            }
        }
    }
    finish_stats(stats);
    if (stats_out) {
        *stats_out = stats;
    }
    return out;
}

std::optional<prompt_example> build_eval_one(const timeline & tl, int index,
                                             int k_shots, const tokenizer & tok,
                                             const build_options & opt,
                                             const demo_pool & pool,
                                             bool exclude_same_key) {
    if (index < 0 || index >= (int) tl.items.size()) {
        fail(errc::index_out_of_range, "item " + std::to_string(index) + " of '" +
                                           tl.sequence_key + "'");
    }
    std::string instruction = load_instruction(opt.templates_dir, tl.dataset);
    const curriculum_stage * st = in_curriculum(tl.dataset) ? &stage_for(tl.dataset) : nullptr;
    rng64 base(opt.seed ^ 0xE721AD43C1B3F5D9ull);
    build_stats stats;
    bool kept = false;
    static const std::string no_exclusion;
    prompt_example ex = build_one(tl, index, instruction, st, k_shots, tok, opt,
                                  pool, base, stats, kept,
                                  exclude_same_key ? nullptr : &no_exclusion);
    if (!kept) {
        return std::nullopt;
    }
    return ex;
}

// ------------------------------------------------------------ jsonl

static nlohmann::json span_to_json(const token_span & s) {
    return nlohmann::json::array({s.begin, s.end});
}

static token_span span_from_json(const nlohmann::json & j) {
    return {j.at(0).get<int>(), j.at(1).get<int>()};
}

nlohmann::json prompt_to_json(const prompt_example & ex) {
    nlohmann::json lines = nlohmann::json::array();
    for (auto & s : ex.spans.hist_lines) {
        lines.push_back(span_to_json(s));
    }
    return {
        {"stage", ex.stage},
        {"dataset", dataset_name(ex.dataset)},
        {"sequence_key", ex.sequence_key},
        {"item_index", ex.item_index},
        {"timestep", ex.timestep},
        {"k_requested", ex.k_requested},
        {"k_actual", ex.k_actual},
        {"history_kept", ex.history_kept},
        {"history_total", ex.history_total},
        {"prompt", ex.prompt_text},
        {"response", ex.response_text},
        {"label_id", ex.label_id},
        {"label", ex.local_label},
        {"spans", {
            {"instruction", span_to_json(ex.spans.instruction)},
            {"fewshot", span_to_json(ex.spans.fewshot)},
            {"hist", span_to_json(ex.spans.hist)},
            {"curr", span_to_json(ex.spans.curr)},
            {"output", span_to_json(ex.spans.output)},
            {"hist_lines", lines},
        }},
    };
}

prompt_example prompt_from_json(const nlohmann::json & j) {
    prompt_example ex;
    ex.stage = j.at("stage").get<int>();
    ex.dataset = parse_dataset(j.at("dataset").get<std::string>());
    ex.sequence_key = j.at("sequence_key").get<std::string>();
    ex.item_index = j.at("item_index").get<int>();
    ex.timestep = j.at("timestep").get<int>();
    ex.k_requested = j.at("k_requested").get<int>();
    ex.k_actual = j.at("k_actual").get<int>();
    ex.history_kept = j.at("history_kept").get<int>();
    ex.history_total = j.at("history_total").get<int>();
    ex.prompt_text = j.at("prompt").get<std::string>();
    ex.response_text = j.at("response").get<std::string>();
    ex.label_id = j.at("label_id").get<int>();
    ex.local_label = j.at("label").get<std::string>();
    const auto & sp = j.at("spans");
    ex.spans.instruction = span_from_json(sp.at("instruction"));
    ex.spans.fewshot = span_from_json(sp.at("fewshot"));
    ex.spans.hist = span_from_json(sp.at("hist"));
    ex.spans.curr = span_from_json(sp.at("curr"));
    ex.spans.output = span_from_json(sp.at("output"));
    for (auto & s : sp.at("hist_lines")) {
        ex.spans.hist_lines.push_back(span_from_json(s));
    }
    return ex;
}

void write_shard_jsonl(const std::string & path, const std::vector<prompt_example> & exs) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        fail(errc::io_error, "cannot write " + path);
    }
    for (auto & ex : exs) {
        f << prompt_to_json(ex).dump() << "\n";
    }
}

std::vector<prompt_example> read_shard_jsonl(const std::string & path) {
    std::vector<prompt_example> out;
    for (auto & line : read_lines(path)) {
        if (!line.empty()) {
            out.push_back(prompt_from_json(nlohmann::json::parse(line)));
        }
    }
    return out;
}

} // namespace lift
