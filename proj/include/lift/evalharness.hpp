// evalharness.hpp - label prediction by candidate likelihood ranking or
// constrained generation, macro-f1 scoring, and result reporting
#pragma once

#include "lift/trainer.hpp"

#include <map>
#include <string>
#include <vector>

namespace lift {

struct label_candidate {
    int id = 0;
    std::string text;
};

// declared label strings of a dataset, in global-id order
std::vector<label_candidate> candidates_for(const label_space & ls, dataset_id d);

// macro-averaged F1. by default classes are those present in gold or
// predictions; full_set scores over the supplied universe instead, so
// never-predicted classes pull the average down.
double macro_f1(const std::vector<int> & gold, const std::vector<int> & pred,
                bool full_set = false, const std::vector<int> * universe = nullptr);

struct class_metrics {
    int support = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

std::map<int, class_metrics> classification_metrics(const std::vector<int> & gold,
                                                    const std::vector<int> & pred,
                                                    const std::vector<int> & classes);

struct eval_options {
    enum class decode_mode { likelihood, generate };
    decode_mode mode = decode_mode::likelihood;
    bool full_label_set = false;
    int max_gen_tokens = 8;
};

struct prediction {
    std::string sequence_key;
    int item_index = 0;
    int gold = 0;
    int pred = 0;
    double gold_score = 0.0;   // log-likelihood of the gold label string
    double margin = 0.0;       // gold score minus the best rival score
    std::vector<double> scores;
};

struct eval_result {
    int n = 0;
    double macro = 0.0;
    double accuracy = 0.0;
    std::map<int, class_metrics> per_class;
    std::vector<prediction> predictions;
    // hash over every example's token ids, so two runs can prove they
    // scored byte-identical prompts
    uint64_t prompt_hash = 0;
};

// conditioning features for a raw token sequence at evaluation time: the
// label channel stays at the unlabeled id for every position, since scoring
// a candidate under its own stamp would tell the model the answer.
cond_features eval_conditioning_features(const conditioning_config & cfg,
                                         int len, int timestep);

// log-likelihood of each candidate label string appended after the prompt
// (candidate tokens + eos). labels stay unstamped; an optional patch
// perturbs the residual stream inside the prompt.
std::vector<double> score_candidates(lift_model & m,
                                     const tokenizer & tok,
                                     const std::vector<int> & prompt_ids,
                                     int timestep,
                                     const std::vector<label_candidate> & cands,
                                     const patch_request * patch = nullptr);

prediction predict_example(lift_model & m, const tokenizer & tok,
                           const encoded_example & ex,
                           const std::vector<label_candidate> & cands,
                           const eval_options & opt,
                           const patch_request * patch = nullptr);

eval_result evaluate(lift_model & m, const tokenizer & tok,
                     const std::vector<encoded_example> & examples,
                     const eval_options & opt);

// greedy continuation of a prompt; stops at eos or the token cap
std::vector<int> greedy_generate(lift_model & m, const tokenizer & tok,
                                 const std::vector<int> & prompt_ids,
                                 int timestep, int max_tokens);

// ------------------------------------------------- cmv context sources

enum class context_source {
    conversation,   // earlier turns of the same discussion
    author_all,     // the author's earlier comments, any topic
    author_topic,   // the author's earlier comments on the query's topic
};

struct context_query {
    std::string thread_key;
    std::string author;
    std::string topic;
    int64_t timestamp = 0;
};

context_source parse_context_source(const std::string & name);

// labeled items usable as demonstrations for a query, all strictly earlier
// in time. author modes require author metadata (BadArgs otherwise). an
// empty pool is not an error: the caller degrades to 0-shot, and
// *degraded reports it.
demo_pool context_source_select(const std::vector<timeline> & corpus,
                                const context_query & q, context_source mode,
                                bool * degraded = nullptr);

// published desk-reference scores kept alongside desk results in reports:
// macro-f1 of a 7B-parameter backbone, base ICL vs the full framework,
// at 0/1/3 shots per dataset.
struct reference_row {
    const char * dataset;
    double base[3];
    double lift[3];
};
const std::vector<reference_row> & reference_scores();

} // namespace lift
