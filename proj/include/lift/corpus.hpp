// corpus.hpp - timeline schema, global label space, dataset adapters, stats
#pragma once

#include "lift/common.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace lift {

enum class dataset_id : int {
    annomi = 0,
    lrs = 1,
    talklife = 2,
    reddit = 3,
    cmv = 4,
};

constexpr int DATASET_COUNT = 5;

const char * dataset_name(dataset_id d);
dataset_id parse_dataset(const std::string & name);  // BadArgs on unknown

// one post/utterance after standardization
struct timeline_item {
    dataset_id dataset = dataset_id::annomi;
    std::string sequence_key;      // timeline / conversation / discussion id
    int64_t timestamp = 0;         // epoch seconds, or ordinal fallback
    bool ordinal_time = false;     // true when source had no usable timestamp
    int index = -1;                // position within its timeline, assigned on grouping
    std::string text;
    std::string local_label;       // dataset-native label string; empty = unlabeled
    int label_id = 0;              // global id; 0 = NULL (unlabeled)
    std::string speaker_role;      // annomi: "therapist" / "client"
    std::string author;            // cmv / reddit user id when present
    std::string topic;             // cmv discussion topic when present
    int input_order = -1;          // arrival order, tie-break for equal timestamps
};

struct timeline {
    dataset_id dataset = dataset_id::annomi;
    std::string sequence_key;
    std::vector<timeline_item> items;
};

// global label space: id 0 reserved for NULL (unlabeled), then each
// dataset's label strings in a fixed dataset order, alphabetical within
// a dataset. reddit keeps its own ids distinct from talklife; an alias
// view can collapse them for transfer studies.
class label_space {
public:
    static label_space builtin();

    int size() const { return (int) entries_.size(); }

    // throws UnknownLabel for labels outside the declared set
    int id_of(dataset_id d, const std::string & local_label) const;

    // id -> (dataset, label string); id 0 -> (annomi, "") placeholder for NULL
    const std::string & label_of(int id) const;
    dataset_id dataset_of(int id) const;
    bool is_null(int id) const { return id == 0; }

    // declared label strings for one dataset, in id order
    std::vector<std::string> labels_of(dataset_id d) const;
    std::vector<int> ids_of(dataset_id d) const;

    // alias view: reddit ids map onto the matching talklife ids
    int alias_collapse(int id) const;

    uint64_t content_hash() const;

    nlohmann::json to_json() const;
    static label_space from_json(const nlohmann::json & j);

private:
    struct entry {
        dataset_id dataset;
        std::string label;
    };
    std::vector<entry> entries_;                       // index = global id
    std::map<std::pair<int, std::string>, int> index_;
};

// parse one raw source record into the standardized schema.
// raises UnknownLabel / EmptyText per the schema contract.
timeline_item standardize(const nlohmann::json & raw, dataset_id d,
                          const label_space & ls, int input_order);

// partition by sequence_key, order each timeline by (timestamp, input_order),
// assign item indices. timeline order follows first appearance in the input.
std::vector<timeline> group_and_sort(std::vector<timeline_item> items);

struct dataset_stats {
    int timelines = 0;
    int posts = 0;
    int labeled_posts = 0;
    double mean_posts_per_timeline = 0.0;
    double mean_words_per_post = 0.0;
    std::map<std::string, int> label_counts;
};

dataset_stats compute_stats(const std::vector<timeline> & tls);

// standardized jsonl round-trip
nlohmann::json item_to_json(const timeline_item & it);
timeline_item item_from_json(const nlohmann::json & j, const label_space & ls);
void write_items_jsonl(const std::string & path, const std::vector<timeline> & tls);
std::vector<timeline> read_items_jsonl(const std::string & path, const label_space & ls);

} // namespace lift
