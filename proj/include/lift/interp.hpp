// interp.hpp - layerwise region representations, linear probes over them,
// attention routing across prompt regions, and history activation patching
#pragma once

#include "lift/evalharness.hpp"

#include <array>

namespace lift {

// per-layer summaries of one example's hidden states, split by prompt region
struct region_reps {
    std::vector<int> layers;
    int d_model = 0;
    bool has_hist = false;
    bool has_fewshot = false;
    bool has_curr = false;
    // one row per requested layer; absent regions stay zero
    tensor hist_mean;
    tensor fewshot_mean;
    tensor curr_mean;
    tensor last_curr;
};

// prompt-only forward (labels unstamped) with state capture; means over
// each region's hidden rows plus the final current-region token's state
region_reps extract_region_reps(lift_model & m, const encoded_example & ex,
                                const std::vector<int> & layers);

struct probe_scores {
    double accuracy = 0.0;
    double macro = 0.0;
};

// linear recoverability of gold from fixed features: stratified k-fold,
// per-fold standardization from train statistics, multinomial logistic
// regression with inverse-frequency class weights, scores from the pooled
// out-of-fold predictions. InsufficientClassSupport below folds per class.
probe_scores probe(const tensor & features, const std::vector<int> & gold,
                   int folds = 5, uint64_t seed = 5);

struct probe_report_row {
    int layer = 0;
    std::string region;   // hist_mean | fewshot_mean | curr_mean | last_curr
    int n = 0;
    probe_scores scores;
};

// probe every (layer, region) pair over a set of examples; regions absent
// from every example are skipped
std::vector<probe_report_row> probe_regions(lift_model & m,
                                            const std::vector<encoded_example> & examples,
                                            const std::vector<int> & layers,
                                            int folds = 5, uint64_t seed = 5);

// where the prediction position (last prompt token) attends, per layer
struct routing_report {
    // head-averaged mass per region: instruction, fewshot, hist, curr, other
    std::vector<std::array<double, 5>> region_mass;
    // within-history mass per recency bin (1 bin per line up to 8 plus a
    // tail), renormalized to sum to 1; empty when the example has no history
    std::vector<std::vector<double>> recency;
    int hist_lines = 0;
};

routing_report attention_routing(lift_model & m, const encoded_example & ex);

// element-wise mean across examples; recency averaged over examples that
// have history, padded to the longest profile
routing_report average_routing(const std::vector<routing_report> & reports);

// history corruption: permute line payloads (text and label) with a seeded
// derangement while every "t-N:" stamp stays in place, so the byte length
// and all downstream spans are preserved. identity when under two lines.
prompt_example shuffle_history(const prompt_example & ex, rng64 & rng);

enum class corruption_mode {
    shuffled_history,   // payload derangement
    clean_control,      // patch the clean run's own rows back in
};

struct patch_layer_delta {
    int layer = 0;
    double d_macro_f1 = 0.0;
    double mean_d_gold = 0.0;     // candidate log-likelihood of the gold label
    double mean_d_margin = 0.0;   // gold minus best rival
    double flip_rate = 0.0;
};

struct patch_report {
    int n = 0;
    uint64_t seed = 0;
    double clean_macro = 0.0;
    std::vector<patch_layer_delta> layers;
};

// up to n indices balanced over gold labels: round-robin across label
// buckets, seeded shuffle inside each bucket
std::vector<int> stratified_sample(const std::vector<int> & gold, int n, uint64_t seed);

// corrupt each example's history, cache the corrupted run's hidden rows over
// the history span at each layer, splice them into the clean run, and
// measure the damage downstream
patch_report activation_patch(lift_model & m, const tokenizer & tok,
                              const std::vector<prompt_example> & pool,
                              const std::vector<int> & layers,
                              uint64_t seed, int n_examples = 150,
                              corruption_mode mode = corruption_mode::shuffled_history);

} // namespace lift
