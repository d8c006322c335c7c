// synthetic.hpp - deterministic fixture corpora with a history-dependent
// labeling rule, in the raw source schemas the corpus loader accepts
#pragma once

#include "lift/corpus.hpp"

namespace lift {

struct synth_options {
    uint64_t seed = 2026;
    // pin timeline and post totals to the published corpus sizes instead
    // of the small desk sizes used for training runs
    bool paper_shape = false;
};

// each timeline walks a two-state mood chain (flip chance 0.4). the label
// of a post depends on the two preceding moods, which are only visible in
// the history:
//   mood unchanged            -> steady class
//   flip after a steady run   -> switch class
//   flip right after a flip   -> escalation class (folded into switch for
//                                two-label datasets)
std::string expected_label(dataset_id d, const std::vector<int> & moods, int t);

// raw jsonl records for one dataset (schema matches standardize())
std::vector<nlohmann::json> make_synthetic_records(dataset_id d, const synth_options & opt);

// records -> standardized -> grouped timelines
std::vector<timeline> make_synthetic_timelines(dataset_id d, const label_space & ls,
                                               const synth_options & opt);

// write <dir>/<dataset>.jsonl for all five datasets
void write_synthetic_corpus(const std::string & dir, const synth_options & opt);

// published corpus shapes (timelines, posts) used by paper_shape mode
struct corpus_shape {
    int timelines = 0;
    int posts = 0;
};
corpus_shape published_shape(dataset_id d);

} // namespace lift
