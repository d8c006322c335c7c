#include "lift/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace lift {

const char * dataset_name(dataset_id d) {
    switch (d) {
        case dataset_id::annomi:   return "annomi";
        case dataset_id::lrs:      return "lrs";
        case dataset_id::talklife: return "talklife";
        case dataset_id::reddit:   return "reddit";
        case dataset_id::cmv:      return "cmv";
    }
    return "?";
}

dataset_id parse_dataset(const std::string & name) {
    for (int i = 0; i < DATASET_COUNT; i++) {
        if (name == dataset_name((dataset_id) i)) {
            return (dataset_id) i;
        }
    }
    fail(errc::bad_args, "unknown dataset '" + name + "'");
}

// ---------------------------------------------------------------- labels

label_space label_space::builtin() {
    label_space ls;
    auto add = [&](dataset_id d, const char * s) {
        int id = (int) ls.entries_.size();
        ls.entries_.push_back({d, s});
        if (s[0] != '\0') {
            ls.index_[{(int) d, s}] = id;
        }
    };
    add(dataset_id::annomi, "");  // id 0: NULL / unlabeled
    // alphabetical within each dataset, datasets in fixed order
    add(dataset_id::annomi, "Change");
    add(dataset_id::annomi, "Neutral");
    add(dataset_id::annomi, "Sustain");
    add(dataset_id::lrs, "N-Sw");
    add(dataset_id::lrs, "Sw");
    add(dataset_id::talklife, "IE");
    add(dataset_id::talklife, "IS");
    add(dataset_id::talklife, "O");
    add(dataset_id::reddit, "IE");
    add(dataset_id::reddit, "IS");
    add(dataset_id::reddit, "O");
    add(dataset_id::cmv, "0");
    add(dataset_id::cmv, "1");
    return ls;
}

int label_space::id_of(dataset_id d, const std::string & local_label) const {
    auto it = index_.find({(int) d, local_label});
    if (it == index_.end()) {
        fail(errc::unknown_label,
             std::string(dataset_name(d)) + " label '" + local_label + "'");
    }
    return it->second;
}

const std::string & label_space::label_of(int id) const {
    if (id < 0 || id >= (int) entries_.size()) {
        fail(errc::index_out_of_range, "label id " + std::to_string(id));
    }
    return entries_[id].label;
}

dataset_id label_space::dataset_of(int id) const {
    if (id < 0 || id >= (int) entries_.size()) {
        fail(errc::index_out_of_range, "label id " + std::to_string(id));
    }
    return entries_[id].dataset;
}

std::vector<std::string> label_space::labels_of(dataset_id d) const {
    std::vector<std::string> out;
    for (size_t i = 1; i < entries_.size(); i++) {
        if (entries_[i].dataset == d) {
            out.push_back(entries_[i].label);
        }
    }
    return out;
}

std::vector<int> label_space::ids_of(dataset_id d) const {
    std::vector<int> out;
    for (size_t i = 1; i < entries_.size(); i++) {
        if (entries_[i].dataset == d) {
            out.push_back((int) i);
        }
    }
    return out;
}

int label_space::alias_collapse(int id) const {
    if (id <= 0 || id >= (int) entries_.size()) {
        return id;
    }
    if (entries_[id].dataset != dataset_id::reddit) {
        return id;
    }
    auto it = index_.find({(int) dataset_id::talklife, entries_[id].label});
    return it == index_.end() ? id : it->second;
}

uint64_t label_space::content_hash() const {
    std::string blob;
    for (auto & e : entries_) {
        blob += dataset_name(e.dataset);
        blob += ':';
        blob += e.label;
        blob += '\n';
    }
    return fnv1a64(blob);
}

nlohmann::json label_space::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (auto & e : entries_) {
        arr.push_back({{"dataset", dataset_name(e.dataset)}, {"label", e.label}});
    }
    return {{"entries", arr}, {"hash", hex64(content_hash())}};
}

label_space label_space::from_json(const nlohmann::json & j) {
    label_space ls;
    for (auto & e : j.at("entries")) {
        dataset_id d = parse_dataset(e.at("dataset").get<std::string>());
        std::string lbl = e.at("label").get<std::string>();
        int id = (int) ls.entries_.size();
        ls.entries_.push_back({d, lbl});
        if (!lbl.empty()) {
            ls.index_[{(int) d, lbl}] = id;
        }
    }
    return ls;
}

// ---------------------------------------------------------------- adapters

static std::string pick_string(const nlohmann::json & j,
                               std::initializer_list<const char *> keys,
                               const std::string & dflt = "") {
    for (const char * k : keys) {
        if (j.contains(k)) {
            const auto & v = j.at(k);
            if (v.is_string()) {
                return v.get<std::string>();
            }
            if (v.is_number_integer()) {
                return std::to_string(v.get<int64_t>());
            }
            if (v.is_number_float()) {
                std::ostringstream ss;
                ss << v.get<double>();
                return ss.str();
            }
        }
    }
    return dflt;
}

static bool pick_time(const nlohmann::json & j, int64_t & out) {
    for (const char * k : {"timestamp", "created_utc", "time", "ts"}) {
        if (j.contains(k) && j.at(k).is_number()) {
            out = (int64_t) j.at(k).get<double>();
            return true;
        }
    }
    return false;
}

timeline_item standardize(const nlohmann::json & raw, dataset_id d,
                          const label_space & ls, int input_order) {
    timeline_item it;
    it.dataset = d;
    it.input_order = input_order;

    switch (d) {
        case dataset_id::annomi: {
            it.sequence_key = pick_string(raw, {"transcript_id", "conversation_id", "sequence_key"});
            it.text = pick_string(raw, {"utterance_text", "text"});
            it.speaker_role = pick_string(raw, {"interlocutor", "speaker_role", "role"});
            // client turns carry talk-type labels; therapist turns are context only
            std::string lbl = pick_string(raw, {"client_talk_type", "label"});
            if (it.speaker_role != "therapist" && !lbl.empty() && lbl != "n/a") {
                it.local_label = lbl;
                it.label_id = ls.id_of(d, lbl);
            }
            break;
        }
        case dataset_id::lrs: {
            it.sequence_key = pick_string(raw, {"user_id", "timeline_id", "sequence_key"});
            it.text = pick_string(raw, {"post_text", "text", "body"});
            std::string lbl = pick_string(raw, {"stance", "label"});
            if (!lbl.empty()) {
                it.local_label = lbl;
                it.label_id = ls.id_of(d, lbl);
            }
            break;
        }
        case dataset_id::talklife:
        case dataset_id::reddit: {
            it.sequence_key = pick_string(raw, {"timeline_id", "user_id", "sequence_key"});
            it.text = pick_string(raw, {"post_text", "text", "body", "content"});
            it.author = pick_string(raw, {"author", "user_id"});
            std::string lbl = pick_string(raw, {"moc", "label"});
            if (!lbl.empty()) {
                it.local_label = lbl;
                it.label_id = ls.id_of(d, lbl);
            }
            break;
        }
        case dataset_id::cmv: {
            it.sequence_key = pick_string(raw, {"discussion_id", "thread_id", "sequence_key"});
            it.text = pick_string(raw, {"comment_text", "text", "body"});
            it.author = pick_string(raw, {"author", "user"});
            it.topic = pick_string(raw, {"topic", "title"});
            std::string lbl = pick_string(raw, {"persuasion", "delta", "label"});
            if (!lbl.empty()) {
                it.local_label = lbl;
                it.label_id = ls.id_of(d, lbl);
            }
            break;
        }
    }

    if (it.text.empty()) {
        fail(errc::empty_text, std::string(dataset_name(d)) + " record #" +
             std::to_string(input_order) + " in sequence '" + it.sequence_key + "'");
    }
    if (it.sequence_key.empty()) {
        fail(errc::bad_args, std::string(dataset_name(d)) + " record #" +
             std::to_string(input_order) + " lacks a sequence key");
    }

    int64_t ts = 0;
    if (pick_time(raw, ts)) {
        it.timestamp = ts;
    } else {
        // no usable timestamp: fall back to arrival order
        it.timestamp = input_order;
        it.ordinal_time = true;
    }
    return it;
}

// ---------------------------------------------------------------- grouping

std::vector<timeline> group_and_sort(std::vector<timeline_item> items) {
    std::vector<timeline> out;
    std::map<std::pair<int, std::string>, size_t> slot;
    for (auto & it : items) {
        auto key = std::make_pair((int) it.dataset, it.sequence_key);
        auto found = slot.find(key);
        if (found == slot.end()) {
            slot[key] = out.size();
            out.push_back({it.dataset, it.sequence_key, {}});
            found = slot.find(key);
        }
        out[found->second].items.push_back(std::move(it));
    }
    for (auto & tl : out) {
        std::stable_sort(tl.items.begin(), tl.items.end(),
                         [](const timeline_item & a, const timeline_item & b) {
                             if (a.timestamp != b.timestamp) {
                                 return a.timestamp < b.timestamp;
                             }
                             return a.input_order < b.input_order;
                         });
        for (size_t i = 0; i < tl.items.size(); i++) {
            tl.items[i].index = (int) i;
        }
    }
    return out;
}

// ---------------------------------------------------------------- stats

static int word_count(const std::string & s) {
    int n = 0;
    bool in_word = false;
    for (unsigned char c : s) {
        if (isspace(c)) {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            n++;
        }
    }
    return n;
}

dataset_stats compute_stats(const std::vector<timeline> & tls) {
    dataset_stats st;
    int64_t words = 0;
    for (auto & tl : tls) {
        st.timelines++;
        for (auto & it : tl.items) {
            st.posts++;
            words += word_count(it.text);
            if (it.label_id != 0) {
                st.labeled_posts++;
                st.label_counts[it.local_label]++;
            }
        }
    }
    if (st.timelines > 0) {
        st.mean_posts_per_timeline = (double) st.posts / st.timelines;
    }
    if (st.posts > 0) {
        st.mean_words_per_post = (double) words / st.posts;
    }
    return st;
}

// ---------------------------------------------------------------- jsonl

nlohmann::json item_to_json(const timeline_item & it) {
    nlohmann::json j = {
        {"dataset", dataset_name(it.dataset)},
        {"sequence_key", it.sequence_key},
        {"timestamp", it.timestamp},
        {"ordinal_time", it.ordinal_time},
        {"index", it.index},
        {"text", it.text},
        {"label", it.local_label},
        {"label_id", it.label_id},
        {"input_order", it.input_order},
    };
    if (!it.speaker_role.empty()) j["speaker_role"] = it.speaker_role;
    if (!it.author.empty()) j["author"] = it.author;
    if (!it.topic.empty()) j["topic"] = it.topic;
    return j;
}

timeline_item item_from_json(const nlohmann::json & j, const label_space & ls) {
    timeline_item it;
    it.dataset = parse_dataset(j.at("dataset").get<std::string>());
    it.sequence_key = j.at("sequence_key").get<std::string>();
    it.timestamp = j.at("timestamp").get<int64_t>();
    it.ordinal_time = j.value("ordinal_time", false);
    it.index = j.value("index", -1);
    it.text = j.at("text").get<std::string>();
    it.local_label = j.value("label", std::string());
    it.input_order = j.value("input_order", -1);
    it.speaker_role = j.value("speaker_role", std::string());
    it.author = j.value("author", std::string());
    it.topic = j.value("topic", std::string());
    it.label_id = it.local_label.empty() ? 0 : ls.id_of(it.dataset, it.local_label);
    return it;
}

void write_items_jsonl(const std::string & path, const std::vector<timeline> & tls) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        fail(errc::io_error, "cannot write " + path);
    }
    for (auto & tl : tls) {
        for (auto & it : tl.items) {
            f << item_to_json(it).dump() << "\n";
        }
    }
}

std::vector<timeline> read_items_jsonl(const std::string & path, const label_space & ls) {
    std::vector<timeline_item> items;
    for (auto & line : read_lines(path)) {
        if (line.empty()) {
            continue;
        }
        items.push_back(item_from_json(nlohmann::json::parse(line), ls));
    }
    return group_and_sort(std::move(items));
}

} // namespace lift
