#include "lift/synthetic.hpp"

#include <filesystem>
#include <fstream>

namespace lift {

corpus_shape published_shape(dataset_id d) {
    switch (d) {
        case dataset_id::annomi:
            return {44, 6725};
        case dataset_id::lrs:
            return {274, 4239};
        case dataset_id::talklife:
            return {500, 18702};
        case dataset_id::reddit:
            return {255, 6195};
        case dataset_id::cmv:
            return {9456, 48570};
    }
    fail(errc::bad_args, "unknown dataset");
}

static corpus_shape desk_shape(dataset_id d) {
    switch (d) {
        case dataset_id::annomi:
            return {16, 16 * 16};   // 8 client turns per transcript, therapist between
        case dataset_id::lrs:
            return {20, 20 * 6};
        case dataset_id::talklife:
            return {24, 24 * 8};
        case dataset_id::reddit:
            return {10, 10 * 6};
        case dataset_id::cmv:
            return {8, 8 * 5};
    }
    fail(errc::bad_args, "unknown dataset");
}

std::string expected_label(dataset_id d, const std::vector<int> & moods, int t) {
    if (t < 0 || t >= (int) moods.size()) {
        fail(errc::index_out_of_range, "expected_label step");
    }
    bool same = t == 0 || moods[t] == moods[t - 1];
    bool stable_before = t < 2 || moods[t - 1] == moods[t - 2];
    int cls = same ? 0 : (stable_before ? 1 : 2);
    switch (d) {
        case dataset_id::annomi: {
            const char * names[3] = {"Neutral", "Change", "Sustain"};
            return names[cls];
        }
        case dataset_id::lrs:
            return cls == 0 ? "N-Sw" : "Sw";
        case dataset_id::talklife:
        case dataset_id::reddit: {
            const char * names[3] = {"O", "IS", "IE"};
            return names[cls];
        }
        case dataset_id::cmv:
            return cls == 0 ? "0" : "1";
    }
    fail(errc::bad_args, "unknown dataset");
}

namespace {

const std::vector<std::string> & down_words() {
    static const std::vector<std::string> w = {"heavy", "drained", "hopeless", "numb",
                                               "exhausted", "stuck", "low"};
    return w;
}

const std::vector<std::string> & up_words() {
    static const std::vector<std::string> w = {"lighter", "hopeful", "steady", "calm",
                                               "better", "brighter", "rested"};
    return w;
}

const std::vector<std::string> & filler_words() {
    static const std::vector<std::string> w = {
        "today", "after",  "the",   "week",  "and",  "work", "been", "things",
        "lately", "about", "home",  "again", "still", "really", "a",  "bit",
        "more",  "this",   "night", "day",   "with", "everything"};
    return w;
}

const std::vector<std::string> & therapist_words() {
    static const std::vector<std::string> w = {"can",  "you", "tell", "me",   "more",
                                               "about", "that", "how", "does", "it",
                                               "sound", "like", "what", "helps"};
    return w;
}

std::string mood_post(int mood, rng64 & rng) {
    const auto & moody = mood == 0 ? down_words() : up_words();
    const auto & fill = filler_words();
    std::string s = "i feel ";
    s += moody[rng.below(moody.size())];
    s += " and ";
    s += moody[rng.below(moody.size())];
    int extra = 3 + (int) rng.below(4);
    for (int i = 0; i < extra; i++) {
        s += " ";
        s += fill[rng.below(fill.size())];
    }
    return s;
}

std::string therapist_post(rng64 & rng) {
    const auto & w = therapist_words();
    std::string s;
    int len = 5 + (int) rng.below(4);
    for (int i = 0; i < len; i++) {
        if (i > 0) {
            s += " ";
        }
        s += w[rng.below(w.size())];
    }
    return s;
}

std::vector<int> mood_chain(int n, rng64 & rng) {
    std::vector<int> m(n);
    m[0] = (int) rng.below(2);
    for (int t = 1; t < n; t++) {
        m[t] = rng.uniform() < 0.4 ? 1 - m[t - 1] : m[t - 1];
    }
    return m;
}

// spread `posts` over `timelines`: the first (posts mod timelines) get one more
std::vector<int> spread(int timelines, int posts) {
    int base = posts / timelines;
    int rem = posts - base * timelines;
    std::vector<int> out(timelines, base);
    for (int i = 0; i < rem; i++) {
        out[i]++;
    }
    return out;
}

} // namespace

std::vector<nlohmann::json> make_synthetic_records(dataset_id d, const synth_options & opt) {
    corpus_shape shape = opt.paper_shape ? published_shape(d) : desk_shape(d);
    std::vector<int> sizes = spread(shape.timelines, shape.posts);
    rng64 base(opt.seed ^ (0x51u + (uint64_t) d * 0x1000u));

    std::vector<nlohmann::json> records;
    records.reserve(shape.posts);
    const int n_authors = opt.paper_shape ? 300 : 6;

    for (int tl = 0; tl < shape.timelines; tl++) {
        rng64 rng = base.fork((uint64_t) tl);
        int n = sizes[tl];
        int64_t ts = 1600000000LL + (int64_t) tl * 1000000LL;
        std::string key = dataset_name(d) + std::string("_") + std::to_string(tl);

        if (d == dataset_id::annomi) {
            // alternate therapist / client; labels follow the client chain
            int clients = n / 2;
            std::vector<int> moods = mood_chain(std::max(clients, 1), rng);
            int ci = 0;
            for (int i = 0; i < n; i++) {
                ts += 30 + (int64_t) rng.below(60);
                nlohmann::json r;
                r["transcript_id"] = key;
                r["timestamp"] = ts;
                if (i % 2 == 0) {
                    r["interlocutor"] = "therapist";
                    r["utterance_text"] = therapist_post(rng);
                    r["client_talk_type"] = "n/a";
                } else {
                    r["interlocutor"] = "client";
                    r["utterance_text"] = mood_post(moods[ci], rng);
                    r["client_talk_type"] = expected_label(d, moods, ci);
                    ci++;
                }
                records.push_back(std::move(r));
            }
            continue;
        }

        std::vector<int> moods = mood_chain(n, rng);
        for (int i = 0; i < n; i++) {
            ts += 300 + (int64_t) rng.below(600);
            nlohmann::json r;
            r["timestamp"] = ts;
            std::string text = mood_post(moods[i], rng);
            std::string label = expected_label(d, moods, i);
            switch (d) {
                case dataset_id::lrs:
                    r["user_id"] = key;
                    r["post_text"] = text;
                    r["stance"] = label;
                    break;
                case dataset_id::talklife:
                case dataset_id::reddit:
                    r["timeline_id"] = key;
                    r["post_text"] = text;
                    r["moc"] = label;
                    break;
                case dataset_id::cmv:
                    r["discussion_id"] = key;
                    r["comment_text"] = text;
                    r["author"] = "user_" + std::to_string((tl * 5 + i) % n_authors);
                    r["topic"] = "topic " + std::to_string(tl % std::max(shape.timelines / 2, 1));
                    r["delta"] = label;
                    break;
                default:
                    break;
            }
            records.push_back(std::move(r));
        }
    }
    return records;
}

std::vector<timeline> make_synthetic_timelines(dataset_id d, const label_space & ls,
                                               const synth_options & opt) {
    auto records = make_synthetic_records(d, opt);
    std::vector<timeline_item> items;
    items.reserve(records.size());
    for (size_t i = 0; i < records.size(); i++) {
        items.push_back(standardize(records[i], d, ls, (int) i));
    }
    return group_and_sort(std::move(items));
}

void write_synthetic_corpus(const std::string & dir, const synth_options & opt) {
    ensure_dir(dir);
    for (dataset_id d : {dataset_id::annomi, dataset_id::lrs, dataset_id::talklife,
                         dataset_id::reddit, dataset_id::cmv}) {
        auto records = make_synthetic_records(d, opt);
        std::string path = dir + "/" + dataset_name(d) + ".jsonl";
        std::ofstream out(path);
        if (!out) {
            fail(errc::io_error, "cannot write " + path);
        }
        for (const auto & r : records) {
            out << r.dump() << "\n";
        }
    }
}

} // namespace lift
