#include "lift/interp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace lift {

static void check_layers(const std::vector<int> & layers, int n_layers) {
    if (layers.empty()) {
        fail(errc::bad_args, "no layers requested");
    }
    for (int l : layers) {
        if (l < 0 || l >= n_layers) {
            fail(errc::layer_out_of_range, "layer " + std::to_string(l) +
                                               " of " + std::to_string(n_layers));
        }
    }
}

// prompt-only forward with unstamped labels, capturing per-layer state
static capture_buf capture_prompt(lift_model & m, const encoded_example & ex) {
    std::vector<int> ids(ex.input_ids.begin(), ex.input_ids.begin() + ex.prompt_len);
    cond_features f = eval_conditioning_features(m.cond.cfg, ex.prompt_len, ex.timestep);
    tensor inject = m.cond.inject_values(f);
    capture_buf cap;
    m.lm.forward_logits(ids, &inject, &cap);
    return cap;
}

region_reps extract_region_reps(lift_model & m, const encoded_example & ex,
                                const std::vector<int> & layers) {
    check_layers(layers, m.lm.cfg.n_layers);
    capture_buf cap = capture_prompt(m, ex);

    std::vector<int> hist_idx, few_idx, curr_idx;
    for (int t = 0; t < ex.prompt_len; t++) {
        switch ((region) ex.regions[t]) {
            case region::hist:
                hist_idx.push_back(t);
                break;
            case region::fewshot:
                few_idx.push_back(t);
                break;
            case region::curr:
                curr_idx.push_back(t);
                break;
            default:
                break;
        }
    }

    const int d = m.lm.cfg.d_model;
    region_reps out;
    out.layers = layers;
    out.d_model = d;
    out.has_hist = !hist_idx.empty();
    out.has_fewshot = !few_idx.empty();
    out.has_curr = !curr_idx.empty();
    const int nl = (int) layers.size();
    out.hist_mean = tensor(nl, d);
    out.fewshot_mean = tensor(nl, d);
    out.curr_mean = tensor(nl, d);
    out.last_curr = tensor(nl, d);

    auto mean_rows = [&](const tensor & h, const std::vector<int> & idx, double * dst) {
        if (idx.empty()) {
            return;
        }
        for (int t : idx) {
            const double * src = h.row_ptr(t);
            for (int j = 0; j < d; j++) {
                dst[j] += src[j];
            }
        }
        for (int j = 0; j < d; j++) {
            dst[j] /= (double) idx.size();
        }
    };

    for (int li = 0; li < nl; li++) {
        const tensor & h = cap.hidden[layers[li]];
        mean_rows(h, hist_idx, out.hist_mean.row_ptr(li));
        mean_rows(h, few_idx, out.fewshot_mean.row_ptr(li));
        mean_rows(h, curr_idx, out.curr_mean.row_ptr(li));
        if (!curr_idx.empty()) {
            std::copy_n(h.row_ptr(curr_idx.back()), d, out.last_curr.row_ptr(li));
        }
    }
    return out;
}

// ------------------------------------------------------------------ probe

probe_scores probe(const tensor & features, const std::vector<int> & gold,
                   int folds, uint64_t seed) {
    const int n = features.rows;
    const int d = features.cols;
    if ((int) gold.size() != n) {
        fail(errc::dim_mismatch, "probe: features/gold length mismatch");
    }
    if (folds < 2) {
        fail(errc::bad_args, "probe: need at least 2 folds");
    }

    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < n; i++) {
        by_class[gold[i]].push_back(i);
    }
    for (const auto & [c, idx] : by_class) {
        if ((int) idx.size() < folds) {
            fail(errc::insufficient_class_support,
                 "class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                     " examples for " + std::to_string(folds) + " folds");
        }
    }

    // stratified fold assignment: shuffle inside each class, deal round-robin
    std::vector<int> fold(n, 0);
    for (const auto & [c, idx] : by_class) {
        std::vector<int> v = idx;
        rng64 r = rng64(seed).fork((uint64_t) c + 101);
        r.shuffle(v);
        for (size_t p = 0; p < v.size(); p++) {
            fold[v[p]] = (int) (p % (size_t) folds);
        }
    }

    std::vector<int> classes;
    for (const auto & [c, idx] : by_class) {
        (void) idx;
        classes.push_back(c);
    }
    const int K = (int) classes.size();
    std::map<int, int> local;
    for (int k = 0; k < K; k++) {
        local[classes[k]] = k;
    }

    const int iters = 300;
    const double lr = 0.5;
    std::vector<int> oof(n, -1);

    for (int f = 0; f < folds; f++) {
        std::vector<int> tr, va;
        for (int i = 0; i < n; i++) {
            (fold[i] == f ? va : tr).push_back(i);
        }
        const int ntr = (int) tr.size();

        // column statistics from the train split only
        std::vector<double> mu(d, 0.0), sd(d, 0.0);
        for (int i : tr) {
            const double * x = features.row_ptr(i);
            for (int j = 0; j < d; j++) {
                mu[j] += x[j];
            }
        }
        for (int j = 0; j < d; j++) {
            mu[j] /= (double) ntr;
        }
        for (int i : tr) {
            const double * x = features.row_ptr(i);
            for (int j = 0; j < d; j++) {
                double u = x[j] - mu[j];
                sd[j] += u * u;
            }
        }
        for (int j = 0; j < d; j++) {
            sd[j] = std::max(std::sqrt(sd[j] / (double) ntr), 1e-8);
        }

        tensor xs(ntr, d);
        for (int r = 0; r < ntr; r++) {
            const double * x = features.row_ptr(tr[r]);
            for (int j = 0; j < d; j++) {
                xs.at(r, j) = (x[j] - mu[j]) / sd[j];
            }
        }

        // inverse-frequency class weights on the train split
        std::vector<double> cls_w(K, 0.0);
        std::vector<int> cnt(K, 0);
        for (int i : tr) {
            cnt[local[gold[i]]]++;
        }
        double wsum = 0.0;
        std::vector<double> row_w(ntr, 0.0);
        for (int r = 0; r < ntr; r++) {
            int k = local[gold[tr[r]]];
            cls_w[k] = (double) ntr / ((double) K * (double) cnt[k]);
            row_w[r] = cls_w[k];
        }
        for (int r = 0; r < ntr; r++) {
            wsum += row_w[r];
        }

        tensor w(d, K);
        std::vector<double> b(K, 0.0);
        tensor delta(ntr, K);
        tensor gw(d, K);
        for (int it = 0; it < iters; it++) {
            tensor logits = matmul(xs, w);
            for (int r = 0; r < ntr; r++) {
                double * z = logits.row_ptr(r);
                double mx = -1e300;
                for (int k = 0; k < K; k++) {
                    z[k] += b[k];
                    mx = std::max(mx, z[k]);
                }
                double sum = 0.0;
                for (int k = 0; k < K; k++) {
                    z[k] = std::exp(z[k] - mx);
                    sum += z[k];
                }
                int y = local[gold[tr[r]]];
                double coef = row_w[r] / wsum;
                for (int k = 0; k < K; k++) {
                    delta.at(r, k) = coef * (z[k] / sum - (k == y ? 1.0 : 0.0));
                }
            }
            gw.fill(0.0);
            matmul_tn_acc(xs, delta, gw);
            for (int j = 0; j < d; j++) {
                for (int k = 0; k < K; k++) {
                    w.at(j, k) -= lr * gw.at(j, k);
                }
            }
            for (int k = 0; k < K; k++) {
                double g = 0.0;
                for (int r = 0; r < ntr; r++) {
                    g += delta.at(r, k);
                }
                b[k] -= lr * g;
            }
        }

        for (int i : va) {
            const double * x = features.row_ptr(i);
            int best = 0;
            double best_z = -1e300;
            for (int k = 0; k < K; k++) {
                double z = b[k];
                for (int j = 0; j < d; j++) {
                    z += (x[j] - mu[j]) / sd[j] * w.at(j, k);
                }
                if (z > best_z) {
                    best_z = z;
                    best = k;
                }
            }
            oof[i] = classes[best];
        }
    }

    probe_scores sc;
    int hits = 0;
    for (int i = 0; i < n; i++) {
        hits += oof[i] == gold[i] ? 1 : 0;
    }
    sc.accuracy = (double) hits / (double) n;
    sc.macro = macro_f1(gold, oof);
    return sc;
}

std::vector<probe_report_row> probe_regions(lift_model & m,
                                            const std::vector<encoded_example> & examples,
                                            const std::vector<int> & layers,
                                            int folds, uint64_t seed) {
    if (examples.empty()) {
        fail(errc::empty_shard, "probe_regions: no examples");
    }
    check_layers(layers, m.lm.cfg.n_layers);

    struct slot {
        std::vector<const double *> rows;
        std::vector<int> gold;
    };
    const char * names[4] = {"hist_mean", "fewshot_mean", "curr_mean", "last_curr"};
    const int nl = (int) layers.size();
    std::vector<std::array<slot, 4>> slots(nl);

    std::vector<region_reps> reps;
    reps.reserve(examples.size());
    for (const auto & ex : examples) {
        reps.push_back(extract_region_reps(m, ex, layers));
        const region_reps & r = reps.back();
        for (int li = 0; li < nl; li++) {
            const tensor * mats[4] = {&r.hist_mean, &r.fewshot_mean, &r.curr_mean, &r.last_curr};
            bool present[4] = {r.has_hist, r.has_fewshot, r.has_curr, r.has_curr};
            for (int g = 0; g < 4; g++) {
                if (!present[g]) {
                    continue;
                }
                slots[li][g].rows.push_back(mats[g]->row_ptr(li));
                slots[li][g].gold.push_back(ex.label_id);
            }
        }
    }

    std::vector<probe_report_row> out;
    const int d = m.lm.cfg.d_model;
    for (int li = 0; li < nl; li++) {
        for (int g = 0; g < 4; g++) {
            const slot & s = slots[li][g];
            if (s.rows.empty()) {
                continue;
            }
            tensor x((int) s.rows.size(), d);
            for (size_t r = 0; r < s.rows.size(); r++) {
                std::copy_n(s.rows[r], d, x.row_ptr((int) r));
            }
            probe_report_row row;
            row.layer = layers[li];
            row.region = names[g];
            row.n = x.rows;
            row.scores = probe(x, s.gold, folds, seed);
            out.push_back(std::move(row));
        }
    }
    return out;
}

// ---------------------------------------------------------------- routing

routing_report attention_routing(lift_model & m, const encoded_example & ex) {
    capture_buf cap = capture_prompt(m, ex);
    if (cap.attn.empty()) {
        fail(errc::no_attention_capture, "forward did not record attention");
    }
    const int pos = ex.prompt_len - 1;
    const int heads = m.lm.cfg.n_heads;
    const int n_layers = (int) cap.attn.size();
    const int m_lines = (int) ex.hist_line_ranges.size();
    const int bins = m_lines == 0 ? 0 : std::min(m_lines, 8) + (m_lines > 8 ? 1 : 0);

    routing_report rep;
    rep.hist_lines = m_lines;
    rep.region_mass.resize(n_layers);
    rep.recency.resize(n_layers);

    for (int l = 0; l < n_layers; l++) {
        std::vector<double> row(ex.prompt_len, 0.0);
        for (int h = 0; h < heads; h++) {
            const tensor & p = cap.attn[l][h];
            const double * pr = p.row_ptr(pos);
            for (int t = 0; t <= pos; t++) {
                row[t] += pr[t] / (double) heads;
            }
        }
        std::array<double, 5> mass = {0, 0, 0, 0, 0};
        for (int t = 0; t <= pos; t++) {
            switch ((region) ex.regions[t]) {
                case region::instruction:
                    mass[0] += row[t];
                    break;
                case region::fewshot:
                    mass[1] += row[t];
                    break;
                case region::hist:
                    mass[2] += row[t];
                    break;
                case region::curr:
                    mass[3] += row[t];
                    break;
                default:
                    mass[4] += row[t];
                    break;
            }
        }
        rep.region_mass[l] = mass;

        if (bins > 0) {
            std::vector<double> rec(bins, 0.0);
            for (int j = 0; j < m_lines; j++) {
                int rel = m_lines - j;   // newest line is rel 1
                int b = rel <= 8 ? rel - 1 : bins - 1;
                auto [tb, te] = ex.hist_line_ranges[j];
                for (int t = tb; t < te && t <= pos; t++) {
                    rec[b] += row[t];
                }
            }
            double sum = 0.0;
            for (double v : rec) {
                sum += v;
            }
            if (sum > 0.0) {
                for (double & v : rec) {
                    v /= sum;
                }
            }
            rep.recency[l] = std::move(rec);
        }
    }
    return rep;
}

routing_report average_routing(const std::vector<routing_report> & reports) {
    if (reports.empty()) {
        fail(errc::empty_shard, "average_routing: no reports");
    }
    routing_report avg;
    const int n_layers = (int) reports[0].region_mass.size();
    avg.region_mass.assign(n_layers, {0, 0, 0, 0, 0});
    size_t max_bins = 0;
    for (const auto & r : reports) {
        if ((int) r.region_mass.size() != n_layers) {
            fail(errc::dim_mismatch, "average_routing: layer count mismatch");
        }
        avg.hist_lines = std::max(avg.hist_lines, r.hist_lines);
        for (const auto & rec : r.recency) {
            max_bins = std::max(max_bins, rec.size());
        }
    }
    for (const auto & r : reports) {
        for (int l = 0; l < n_layers; l++) {
            for (int g = 0; g < 5; g++) {
                avg.region_mass[l][g] += r.region_mass[l][g] / (double) reports.size();
            }
        }
    }
    avg.recency.assign(n_layers, std::vector<double>(max_bins, 0.0));
    std::vector<int> with_hist(n_layers, 0);
    for (const auto & r : reports) {
        for (int l = 0; l < n_layers; l++) {
            if (r.recency[l].empty()) {
                continue;
            }
            with_hist[l]++;
            for (size_t b = 0; b < r.recency[l].size(); b++) {
                avg.recency[l][b] += r.recency[l][b];
            }
        }
    }
    for (int l = 0; l < n_layers; l++) {
        if (with_hist[l] == 0) {
            avg.recency[l].clear();
            continue;
        }
        for (double & v : avg.recency[l]) {
            v /= (double) with_hist[l];
        }
    }
    return avg;
}

// ---------------------------------------------------------------- patching

prompt_example shuffle_history(const prompt_example & ex, rng64 & rng) {
    const int m = (int) ex.spans.hist_lines.size();
    if (m < 2) {
        return ex;
    }
    const std::string & text = ex.prompt_text;
    std::vector<std::string> prefixes(m), payloads(m);
    for (int j = 0; j < m; j++) {
        auto [b, e] = ex.spans.hist_lines[j];
        std::string line = text.substr(b, e - b);
        size_t p = line.find(": ");
        if (p == std::string::npos) {
            fail(errc::span_alignment, "history line without a time stamp");
        }
        prefixes[j] = line.substr(0, p + 2);
        payloads[j] = line.substr(p + 2);
    }
    std::vector<int> perm = derangement(m, rng);

    prompt_example out = ex;
    std::string rebuilt;
    rebuilt.reserve(text.size());
    rebuilt.append(text, 0, (size_t) ex.spans.hist_lines[0].begin);
    for (int j = 0; j < m; j++) {
        int begin = (int) rebuilt.size();
        rebuilt += prefixes[j];
        rebuilt += payloads[perm[j]];
        out.spans.hist_lines[j] = {begin, (int) rebuilt.size()};
        int gap_from = ex.spans.hist_lines[j].end;
        int gap_to = j + 1 < m ? ex.spans.hist_lines[j + 1].begin : (int) text.size();
        rebuilt.append(text, (size_t) gap_from, (size_t)(gap_to - gap_from));
    }
    if (rebuilt.size() != text.size()) {
        fail(errc::span_alignment, "history shuffle changed the prompt length");
    }
    out.prompt_text = std::move(rebuilt);
    return out;
}

std::vector<int> stratified_sample(const std::vector<int> & gold, int n, uint64_t seed) {
    std::map<int, std::vector<int>> buckets;
    for (int i = 0; i < (int) gold.size(); i++) {
        buckets[gold[i]].push_back(i);
    }
    std::vector<std::vector<int>> order;
    for (auto & [c, idx] : buckets) {
        rng64 r = rng64(seed).fork((uint64_t) c + 7);
        r.shuffle(idx);
        order.push_back(idx);
    }
    std::vector<int> picked;
    size_t cursor = 0;
    while ((int) picked.size() < n) {
        bool any = false;
        for (auto & idx : order) {
            if (cursor < idx.size() && (int) picked.size() < n) {
                picked.push_back(idx[cursor]);
                any = true;
            }
        }
        if (!any) {
            break;
        }
        cursor++;
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

// first and one-past-last history token of the prompt
static std::pair<int, int> hist_token_range(const encoded_example & enc) {
    int hb = -1, he = -1;
    for (int t = 0; t < enc.prompt_len; t++) {
        if ((region) enc.regions[t] == region::hist) {
            if (hb < 0) {
                hb = t;
            }
            he = t + 1;
        }
    }
    if (hb < 0) {
        return {0, 0};
    }
    return {hb, he};
}

patch_report activation_patch(lift_model & m, const tokenizer & tok,
                              const std::vector<prompt_example> & pool,
                              const std::vector<int> & layers,
                              uint64_t seed, int n_examples,
                              corruption_mode mode) {
    if (pool.empty()) {
        fail(errc::empty_shard, "activation_patch: no examples");
    }
    check_layers(layers, m.lm.cfg.n_layers);

    std::vector<int> gold_all(pool.size());
    for (size_t i = 0; i < pool.size(); i++) {
        gold_all[i] = pool[i].label_id;
    }
    std::vector<int> picked = stratified_sample(gold_all, n_examples, seed);

    const int nl = (int) layers.size();
    const int d = m.lm.cfg.d_model;
    eval_options opt;
    rng64 shuffle_base(seed ^ 0x9a7cfb01ull);

    std::vector<int> gold, clean_pred;
    std::vector<std::vector<int>> layer_pred(nl);
    std::vector<double> sum_d_gold(nl, 0.0), sum_d_margin(nl, 0.0);
    std::vector<int> flips(nl, 0);

    for (int pi : picked) {
        const prompt_example & pe = pool[pi];
        encoded_example enc = encode_example(pe, tok);
        auto cands = candidates_for(m.labels, enc.dataset);
        prediction clean = predict_example(m, tok, enc, cands, opt);

        rng64 r = shuffle_base.fork(fnv1a64(pe.sequence_key + "#" + std::to_string(pe.item_index)));
        prompt_example corrupted =
            mode == corruption_mode::shuffled_history ? shuffle_history(pe, r) : pe;
        encoded_example enc2 = encode_example(corrupted, tok);
        auto [hb, he] = hist_token_range(enc);
        auto [hb2, he2] = hist_token_range(enc2);
        if (enc2.prompt_len != enc.prompt_len || hb2 != hb || he2 != he) {
            fail(errc::span_alignment, "corrupted history does not cover the clean span");
        }

        // the captured rows are spliced into scoring runs, which append the
        // candidate tokens and eos. the distance-to-end conditioning feature
        // sees that suffix, so the capture must be taken under the scoring
        // run's length anchor or the clean control would not be a no-op.
        int cand_len = -1;
        for (const auto & c : cands) {
            const int n = (int) tok.encode(c.text).size() + 1;
            if (cand_len >= 0 && n != cand_len) {
                fail(errc::span_alignment,
                     "activation_patch: candidate lengths differ, no shared scoring shape");
            }
            cand_len = n;
        }
        std::vector<int> ids2(enc2.input_ids.begin(), enc2.input_ids.begin() + enc2.prompt_len);
        cond_features f = eval_conditioning_features(m.cond.cfg,
                                                     enc2.prompt_len + cand_len,
                                                     enc2.timestep);
        f.position.resize(enc2.prompt_len);
        f.rel_bucket.resize(enc2.prompt_len);
        f.label.resize(enc2.prompt_len);
        f.timestep.resize(enc2.prompt_len);
        tensor inject = m.cond.inject_values(f);
        capture_buf cap;
        m.lm.forward_logits(ids2, &inject, &cap);

        gold.push_back(enc.label_id);
        clean_pred.push_back(clean.pred);

        for (int li = 0; li < nl; li++) {
            tensor rows(he - hb, d);
            const tensor & h = cap.hidden[layers[li]];
            for (int t = hb; t < he; t++) {
                std::copy_n(h.row_ptr(t), d, rows.row_ptr(t - hb));
            }
            patch_request pr;
            pr.layer = layers[li];
            pr.row_begin = hb;
            pr.row_end = he;
            pr.rows = std::move(rows);
            prediction patched = predict_example(m, tok, enc, cands, opt, &pr);
            layer_pred[li].push_back(patched.pred);
            sum_d_gold[li] += patched.gold_score - clean.gold_score;
            sum_d_margin[li] += patched.margin - clean.margin;
            flips[li] += patched.pred != clean.pred ? 1 : 0;
        }
    }

    patch_report rep;
    rep.n = (int) picked.size();
    rep.seed = seed;
    rep.clean_macro = macro_f1(gold, clean_pred);
    for (int li = 0; li < nl; li++) {
        patch_layer_delta pl;
        pl.layer = layers[li];
        pl.d_macro_f1 = macro_f1(gold, layer_pred[li]) - rep.clean_macro;
        pl.mean_d_gold = sum_d_gold[li] / (double) rep.n;
        pl.mean_d_margin = sum_d_margin[li] / (double) rep.n;
        pl.flip_rate = (double) flips[li] / (double) rep.n;
        rep.layers.push_back(pl);
    }
    return rep;
}

} // namespace lift
