#include "lift/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace lift {

std::vector<label_candidate> candidates_for(const label_space & ls, dataset_id d) {
    std::vector<label_candidate> out;
    for (int id : ls.ids_of(d)) {
        out.push_back({id, ls.label_of(id)});
    }
    if (out.empty()) {
        fail(errc::unknown_label,
             std::string("dataset declares no labels: ") + dataset_name(d));
    }
    return out;
}

std::map<int, class_metrics> classification_metrics(const std::vector<int> & gold,
                                                    const std::vector<int> & pred,
                                                    const std::vector<int> & classes) {
    if (gold.size() != pred.size()) {
        fail(errc::dim_mismatch, "classification_metrics: gold/pred length mismatch");
    }
    std::map<int, class_metrics> out;
    for (int c : classes) {
        int tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < gold.size(); i++) {
            if (pred[i] == c && gold[i] == c) {
                tp++;
            } else if (pred[i] == c) {
                fp++;
            } else if (gold[i] == c) {
                fn++;
            }
        }
        class_metrics m;
        m.support = tp + fn;
        m.precision = tp + fp > 0 ? (double) tp / (tp + fp) : 0.0;
        m.recall = tp + fn > 0 ? (double) tp / (tp + fn) : 0.0;
        m.f1 = m.precision + m.recall > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        out[c] = m;
    }
    return out;
}

double macro_f1(const std::vector<int> & gold, const std::vector<int> & pred,
                bool full_set, const std::vector<int> * universe) {
    std::set<int> classes;
    if (full_set && universe != nullptr) {
        classes.insert(universe->begin(), universe->end());
    } else {
        classes.insert(gold.begin(), gold.end());
        classes.insert(pred.begin(), pred.end());
    }
    if (classes.empty()) {
        return 0.0;
    }
    auto metrics = classification_metrics(gold, pred, {classes.begin(), classes.end()});
    double sum = 0.0;
    for (auto & [c, m] : metrics) {
        (void) c;
        sum += m.f1;
    }
    return sum / (double) metrics.size();
}

cond_features eval_conditioning_features(const conditioning_config & cfg,
                                         int len, int timestep) {
    cond_features f;
    f.position.resize(len);
    f.rel_bucket.resize(len);
    f.label.assign(len, 0);
    f.timestep.resize(len);
    const int tau = std::min(std::max(timestep, 0), cfg.t_max - 1);
    for (int t = 0; t < len; t++) {
        f.position[t] = std::min(t, cfg.p_max - 1);
        f.rel_bucket[t] = rel_distance_bucket(len - 1 - t, cfg.p_max, cfg.r_buckets);
        f.timestep[t] = tau;
    }
    return f;
}

// log softmax of one logits row evaluated at a single index
static double row_log_prob(const tensor & logits, int r, int idx) {
    const double * p = logits.row_ptr(r);
    double mx = p[0];
    for (int j = 1; j < logits.cols; j++) {
        mx = std::max(mx, p[j]);
    }
    double z = 0.0;
    for (int j = 0; j < logits.cols; j++) {
        z += std::exp(p[j] - mx);
    }
    return p[idx] - mx - std::log(z);
}

std::vector<double> score_candidates(lift_model & m,
                                     const tokenizer & tok,
                                     const std::vector<int> & prompt_ids,
                                     int timestep,
                                     const std::vector<label_candidate> & cands,
                                     const patch_request * patch) {
    if (prompt_ids.empty()) {
        fail(errc::no_targets_found, "score_candidates: empty prompt");
    }
    std::vector<double> scores;
    scores.reserve(cands.size());
    for (const auto & c : cands) {
        std::vector<int> ids = prompt_ids;
        for (int t : tok.encode(c.text)) {
            ids.push_back(t);
        }
        ids.push_back(tok.eos_id());
        cond_features f = eval_conditioning_features(m.cond.cfg, (int) ids.size(), timestep);
        tensor inject = m.cond.inject_values(f);
        tensor logits = m.lm.forward_logits(ids, &inject, nullptr, patch);
        double s = 0.0;
        for (int t = (int) prompt_ids.size(); t < (int) ids.size(); t++) {
            s += row_log_prob(logits, t - 1, ids[t]);
        }
        scores.push_back(s);
    }
    return scores;
}

std::vector<int> greedy_generate(lift_model & m, const tokenizer & tok,
                                 const std::vector<int> & prompt_ids,
                                 int timestep, int max_tokens) {
    std::vector<int> ids = prompt_ids;
    std::vector<int> out;
    for (int step = 0; step < max_tokens; step++) {
        cond_features f = eval_conditioning_features(m.cond.cfg, (int) ids.size(), timestep);
        tensor inject = m.cond.inject_values(f);
        tensor logits = m.lm.forward_logits(ids, &inject);
        const double * p = logits.row_ptr(logits.rows - 1);
        int best = 0;
        for (int j = 1; j < logits.cols; j++) {
            if (p[j] > p[best]) {
                best = j;
            }
        }
        if (best == tok.eos_id()) {
            break;
        }
        out.push_back(best);
        ids.push_back(best);
    }
    return out;
}

// smallest label text among candidates, the deterministic fallback order
static int lexicographic_first(const std::vector<label_candidate> & cands) {
    int best = 0;
    for (int i = 1; i < (int) cands.size(); i++) {
        if (cands[i].text < cands[best].text) {
            best = i;
        }
    }
    return best;
}

prediction predict_example(lift_model & m, const tokenizer & tok,
                           const encoded_example & ex,
                           const std::vector<label_candidate> & cands,
                           const eval_options & opt,
                           const patch_request * patch) {
    prediction pr;
    pr.sequence_key = ex.sequence_key;
    pr.item_index = ex.item_index;
    pr.gold = ex.label_id;
    std::vector<int> prompt_ids(ex.input_ids.begin(), ex.input_ids.begin() + ex.prompt_len);

    if (opt.mode == eval_options::decode_mode::generate) {
        auto gen = greedy_generate(m, tok, prompt_ids, ex.timestep, opt.max_gen_tokens);
        std::string text = tok.decode(gen);
        // longest candidate surface found in the generation wins, so
        // "N-Sw" beats its own substring "Sw"
        int pick = -1;
        size_t pick_len = 0;
        for (int i = 0; i < (int) cands.size(); i++) {
            if (text.find(cands[i].text) == std::string::npos) {
                continue;
            }
            size_t len = cands[i].text.size();
            if (pick < 0 || len > pick_len ||
                (len == pick_len && cands[i].text < cands[pick].text)) {
                pick = i;
                pick_len = len;
            }
        }
        if (pick < 0) {
            pick = lexicographic_first(cands);
        }
        pr.pred = cands[pick].id;
        return pr;
    }

    pr.scores = score_candidates(m, tok, prompt_ids, ex.timestep, cands, patch);
    int best = 0;
    for (int i = 1; i < (int) cands.size(); i++) {
        if (pr.scores[i] > pr.scores[best] ||
            (pr.scores[i] == pr.scores[best] && cands[i].text < cands[best].text)) {
            best = i;
        }
    }
    pr.pred = cands[best].id;
    double rival = -1e300;
    for (int i = 0; i < (int) cands.size(); i++) {
        if (cands[i].id == ex.label_id) {
            pr.gold_score = pr.scores[i];
        } else {
            rival = std::max(rival, pr.scores[i]);
        }
    }
    pr.margin = pr.gold_score - rival;
    return pr;
}

eval_result evaluate(lift_model & m, const tokenizer & tok,
                     const std::vector<encoded_example> & examples,
                     const eval_options & opt) {
    if (examples.empty()) {
        fail(errc::empty_shard, "evaluate: no examples");
    }
    eval_result res;
    std::vector<int> gold;
    std::vector<int> pred;
    std::set<int> universe;
    for (const auto & ex : examples) {
        auto cands = candidates_for(m.labels, ex.dataset);
        for (const auto & c : cands) {
            universe.insert(c.id);
        }
        auto pr = predict_example(m, tok, ex, cands, opt);
        gold.push_back(pr.gold);
        pred.push_back(pr.pred);
        res.predictions.push_back(std::move(pr));
    }
    res.n = (int) examples.size();
    int hits = 0;
    for (size_t i = 0; i < gold.size(); i++) {
        hits += gold[i] == pred[i] ? 1 : 0;
    }
    res.accuracy = (double) hits / (double) gold.size();
    std::vector<int> uni(universe.begin(), universe.end());
    res.macro = macro_f1(gold, pred, opt.full_label_set, opt.full_label_set ? &uni : nullptr);
    std::set<int> present(gold.begin(), gold.end());
    present.insert(pred.begin(), pred.end());
    if (opt.full_label_set) {
        present = universe;
    }
    res.per_class = classification_metrics(gold, pred, {present.begin(), present.end()});

    std::string blob;
    for (const auto & ex : examples) {
        blob.append((const char *) ex.input_ids.data(),
                    ex.input_ids.size() * sizeof(int));
        blob.push_back('|');
    }
    res.prompt_hash = fnv1a64(blob);
    return res;
}

// ------------------------------------------------- cmv context sources

context_source parse_context_source(const std::string & name) {
    if (name == "conversation") {
        return context_source::conversation;
    }
    if (name == "author_all") {
        return context_source::author_all;
    }
    if (name == "author_topic") {
        return context_source::author_topic;
    }
    fail(errc::bad_args, "unknown context source: " + name);
}

demo_pool context_source_select(const std::vector<timeline> & corpus,
                                const context_query & q, context_source mode,
                                bool * degraded) {
    if (mode != context_source::conversation && q.author.empty()) {
        fail(errc::bad_args, "author modes need the query's author");
    }
    demo_pool pool;
    for (const auto & tl : corpus) {
        for (const auto & it : tl.items) {
            if (it.label_id == 0 || it.timestamp >= q.timestamp) {
                continue;
            }
            bool take = false;
            switch (mode) {
                case context_source::conversation:
                    take = tl.sequence_key == q.thread_key;
                    break;
                case context_source::author_all:
                    if (it.author.empty()) {
                        fail(errc::bad_args, "record without author metadata in '" +
                                                 tl.sequence_key + "'");
                    }
                    take = it.author == q.author;
                    break;
                case context_source::author_topic:
                    if (it.author.empty()) {
                        fail(errc::bad_args, "record without author metadata in '" +
                                                 tl.sequence_key + "'");
                    }
                    take = it.author == q.author && it.topic == q.topic;
                    break;
            }
            if (take) {
                pool.entries.push_back({tl.sequence_key,
                                        "t-0: " + it.text + " -> " + it.local_label,
                                        it.label_id});
            }
        }
    }
    if (degraded != nullptr) {
        *degraded = pool.entries.empty();
    }
    return pool;
}

const std::vector<reference_row> & reference_scores() {
    static const std::vector<reference_row> rows = {
        {"annomi", {0.278, 0.336, 0.321}, {0.306, 0.346, 0.365}},
        {"lrs", {0.401, 0.381, 0.410}, {0.551, 0.567, 0.578}},
        {"talklife", {0.056, 0.050, 0.059}, {0.104, 0.121, 0.123}},
        {"reddit", {0.275, 0.241, 0.259}, {0.283, 0.301, 0.333}},
        {"cmv", {0.487, 0.478, 0.513}, {0.543, 0.545, 0.564}},
    };
    return rows;
}

} // namespace lift
