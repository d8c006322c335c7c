// builder.hpp - curriculum stages, history windows, demo sampling,
// prompt rendering with region spans, token budget enforcement
#pragma once

#include "lift/common.hpp"
#include "lift/corpus.hpp"
#include "lift/tokenizer.hpp"

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace lift {

// ------------------------------------------------------------ curriculum

struct curriculum_stage {
    int stage = 0;            // 1-based
    dataset_id dataset = dataset_id::annomi;
    int k_shots = 0;
    int lora_rank = 0;
    double lr = 0.0;
    std::string lr_schedule;  // "cosine" | "constant"
};

// stage 1: short counselling dialogues, 1-shot, rank 4
// stage 2: medium stance timelines,     2-shot, rank 8
// stage 3: long support timelines,      3-shot, rank 16
const std::array<curriculum_stage, 3> & default_curriculum();

// stage owning a dataset; NotACurriculumDataset for held-out sets
const curriculum_stage & stage_for(dataset_id d);
bool in_curriculum(dataset_id d);

// ------------------------------------------------------------ history

struct history_line {
    int rel = 0;              // distance to the current post (1 = immediately prior)
    std::string text;
    std::string label;        // empty if the source item was unlabeled
    bool labeled = false;
};

// lines for items [0, index) of a timeline, oldest first,
// rel indices counting down to 1
std::vector<history_line> build_history(const timeline & tl, int index);

// "t-3: some text" or "t-3: some text -> label"
std::string format_history_line(const history_line & h, bool with_labels);

using token_len_fn = std::function<int(const std::string &)>;

// largest suffix of lines such that
//   len(header + joined-suffix + current) <= budget.
// returns how many newest lines survive; BudgetTooSmall when even the
// empty suffix does not fit.
int truncate_to_budget(const std::string & header,
                       const std::vector<std::string> & lines,
                       const std::string & current,
                       int budget, const token_len_fn & len);

// ------------------------------------------------------------ demos

struct demo_entry {
    std::string sequence_key;
    std::string rendered;     // compact labeled mini-timeline
    int label_id = 0;
};

struct demo_pool {
    std::vector<demo_entry> entries;
};

// compact demos drawn from labeled items; each shows up to max_hist
// prior lines plus the labeled current line
demo_pool build_demo_pool(const std::vector<timeline> & tls, bool with_labels,
                          int max_hist = 3);

// without replacement, never from exclude_key's own timeline.
// stratified mode round-robins the label buckets.
std::vector<int> sample_demo_indices(const demo_pool & pool, int k,
                                     const std::string & exclude_key,
                                     bool stratified, rng64 & rng);

// ------------------------------------------------------------ prompts

// byte ranges into prompt_text/full_text; zero-width means empty region
struct span_set {
    token_span instruction, fewshot, hist, curr, output;
    std::vector<token_span> hist_lines;
};

struct prompt_example {
    int stage = 0;
    dataset_id dataset = dataset_id::annomi;
    std::string sequence_key;
    int item_index = 0;       // position of the current post in its timeline
    int timestep = 0;         // timestep feature fed to conditioning
    int k_requested = 0;
    int k_actual = 0;
    int history_kept = 0;
    int history_total = 0;
    std::string prompt_text;  // ends with the opening output marker
    std::string response_text;
    span_set spans;
    int label_id = 0;
    std::string local_label;
};

prompt_example render_prompt(const std::string & instruction,
                             const std::vector<std::string> & demos,
                             const std::vector<history_line> & hist,
                             bool history_labels,
                             const std::string & current,
                             const std::string & response);

// ------------------------------------------------------------ shards

enum class fit_status { fit, demos_reduced, dropped };

struct build_options {
    int max_tokens = 2048;
    uint64_t seed = 17;
    bool history_labels = true;
    bool mask_history = false;   // ablation: replace history content with "..."
    bool stratified_demos = false;
    int demo_max_hist = 3;
    std::string templates_dir = "templates";
};

struct build_stats {
    int examples = 0;
    int dropped = 0;
    int demos_reduced = 0;
    int histories_truncated = 0;
    int64_t context_tokens = 0;   // history + current content tokens
    int64_t prompt_tokens = 0;
    double mean_context_tokens = 0.0;
    double mean_prompt_tokens = 0.0;
};

struct stage_shard {
    curriculum_stage stage;
    std::vector<prompt_example> examples;
    build_stats stats;
};

std::string load_instruction(const std::string & templates_dir, dataset_id d);

// every labeled item becomes one example; history is the in-timeline
// prefix, truncated oldest-first to the token budget
stage_shard build_stage_shard(const std::vector<timeline> & tls,
                              const curriculum_stage & st,
                              const tokenizer & tok,
                              const build_options & opt);

// evaluation prompts for any dataset at an explicit shot count; demos come
// from the supplied pool (pass the corpus' own pool for held-out sets)
std::vector<prompt_example> build_eval_examples(const std::vector<timeline> & tls,
                                                dataset_id d, int k_shots,
                                                const tokenizer & tok,
                                                const build_options & opt,
                                                const demo_pool & pool,
                                                build_stats * stats = nullptr);

// a single evaluation prompt with an explicit pool. exclude_same_key=false
// admits demos from the query's own timeline, for pools that were already
// restricted to strictly earlier items. nullopt when the budget drops it.
std::optional<prompt_example> build_eval_one(const timeline & tl, int index,
                                             int k_shots, const tokenizer & tok,
                                             const build_options & opt,
                                             const demo_pool & pool,
                                             bool exclude_same_key = true);

// jsonl round-trip for shards
nlohmann::json prompt_to_json(const prompt_example & ex);
prompt_example prompt_from_json(const nlohmann::json & j);
void write_shard_jsonl(const std::string & path, const std::vector<prompt_example> & exs);
std::vector<prompt_example> read_shard_jsonl(const std::string & path);

} // namespace lift
