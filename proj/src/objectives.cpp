#include "lift/objectives.hpp"

#include <cmath>

namespace lift {

static double row_log_prob(const tensor & logits, int row, int target) {
    const int V = logits.cols;
    if (target < 0 || target >= V) {
        fail(errc::vocab_overflow, "target id " + std::to_string(target));
    }
    const double * z = logits.row_ptr(row);
    double mx = z[0];
    for (int j = 1; j < V; j++) {
        if (z[j] > mx) {
            mx = z[j];
        }
    }
    double s = 0.0;
    for (int j = 0; j < V; j++) {
        s += std::exp(z[j] - mx);
    }
    return z[target] - (mx + std::log(s));
}

double prompt_ce(const tensor & logits, const std::vector<int> & ids,
                 const std::vector<uint8_t> & mask) {
    const int L = (int) ids.size();
    if (logits.rows != L || (int) mask.size() != L) {
        fail(errc::dim_mismatch, "prompt_ce lengths");
    }
    double total = 0.0;
    int n = 0;
    for (int t = 1; t < L; t++) {
        if (!mask[t]) {
            continue;
        }
        total -= row_log_prob(logits, t - 1, ids[t]);
        n++;
    }
    if (n == 0) {
        fail(errc::no_targets_found, "prompt_ce: empty mask");
    }
    return total / n;
}

double focal_lm(const tensor & logits, const std::vector<int> & ids,
                const std::vector<uint8_t> & mask, double gamma) {
    const int L = (int) ids.size();
    if (logits.rows != L || (int) mask.size() != L) {
        fail(errc::dim_mismatch, "focal_lm lengths");
    }
    double total = 0.0;
    int n = 0;
    for (int t = 1; t < L; t++) {
        if (!mask[t]) {
            continue;
        }
        const double lp = row_log_prob(logits, t - 1, ids[t]);
        const double p = std::exp(lp);
        total -= std::pow(1.0 - p, gamma) * lp;
        n++;
    }
    if (n == 0) {
        fail(errc::no_targets_found, "focal_lm: empty mask");
    }
    return total / n;
}

double focal_cls(const tensor & logits_row, int gold, double gamma,
                 const std::vector<double> * class_weights) {
    if (logits_row.rows != 1) {
        fail(errc::dim_mismatch, "focal_cls expects one row");
    }
    const double lp = row_log_prob(logits_row, 0, gold);
    const double p = std::exp(lp);
    const double w = class_weights ? (*class_weights)[gold] : 1.0;
    return -w * std::pow(1.0 - p, gamma) * lp;
}

double plain_cls(const tensor & logits_row, int gold,
                 const std::vector<double> * class_weights) {
    if (logits_row.rows != 1) {
        fail(errc::dim_mismatch, "plain_cls expects one row");
    }
    const double w = class_weights ? (*class_weights)[gold] : 1.0;
    return -w * row_log_prob(logits_row, 0, gold);
}

loss_nodes build_loss(tape & tp, int hidden, param & emb,
                      param & head_w, param & head_b,
                      param & hist_w, param & hist_b,
                      const encoded_example & ex, const loss_weights & w,
                      const std::vector<double> & class_weights) {
    loss_nodes n;
    std::vector<int> terms;
    std::vector<double> lambdas;

    if (w.lambda_ce != 0.0) {
        // the prompt may be history-only; then this term simply vanishes
        bool any = false;
        for (int t = 1; t < ex.size(); t++) {
            if (ex.prompt_ce_mask[t]) {
                any = true;
                break;
            }
        }
        if (any) {
            n.ce = tp.next_token_loss(hidden, emb, ex.input_ids, ex.prompt_ce_mask, 0.0);
            terms.push_back(n.ce);
            lambdas.push_back(w.lambda_ce);
        }
    }
    if (w.lambda_out != 0.0) {
        n.out = tp.next_token_loss(hidden, emb, ex.input_ids, ex.output_mask, w.gamma);
        terms.push_back(n.out);
        lambdas.push_back(w.lambda_out);
    }
    if (w.lambda_cls != 0.0) {
        int stamped = -1;
        for (int t = ex.size() - 1; t >= 0; t--) {
            if (ex.label_stamp[t] != 0) {
                stamped = t;
                break;
            }
        }
        if (stamped < 0) {
            fail(errc::no_stamped_position, "example '" + ex.sequence_key +
                 "' item " + std::to_string(ex.item_index));
        }
        int pooled = tp.row(hidden, stamped);
        int logits = tp.linear(pooled, head_w, &head_b);
        const double cw = ex.label_id < (int) class_weights.size() && !class_weights.empty()
                          ? class_weights[ex.label_id] : 1.0;
        n.cls = tp.focal_row_loss(logits, ex.label_id, w.gamma, cw);
        terms.push_back(n.cls);
        lambdas.push_back(w.lambda_cls);
    }
    if (w.lambda_hist != 0.0) {
        bool any_hist = false;
        for (uint8_t m : ex.hist_mask) {
            if (m) {
                any_hist = true;
                break;
            }
        }
        if (any_hist) {
            int pooled = tp.mean_rows_masked(hidden, ex.hist_mask);
            int logits = tp.linear(pooled, hist_w, &hist_b);
            n.hist = tp.focal_row_loss(logits, ex.label_id, w.gamma, 1.0);
            terms.push_back(n.hist);
            lambdas.push_back(w.lambda_hist);
        }
    }

    if (terms.empty()) {
        fail(errc::no_targets_found, "no active loss terms");
    }
    n.total = tp.weighted_sum(terms, lambdas);
    return n;
}

loss_values read_loss(const tape & tp, const loss_nodes & n, const loss_weights & w) {
    (void) w;
    loss_values v;
    if (n.ce >= 0) {
        v.ce = tp.scalar(n.ce);
        v.ce_present = true;
    }
    if (n.out >= 0) {
        v.out = tp.scalar(n.out);
    }
    if (n.cls >= 0) {
        v.cls = tp.scalar(n.cls);
    }
    if (n.hist >= 0) {
        v.hist = tp.scalar(n.hist);
        v.hist_present = true;
    }
    v.total = tp.scalar(n.total);
    return v;
}

std::vector<double> inverse_freq_weights(const std::vector<encoded_example> & shard,
                                         int n_labels) {
    std::vector<int64_t> counts(n_labels, 0);
    int64_t total = 0;
    for (auto & ex : shard) {
        if (ex.label_id > 0 && ex.label_id < n_labels) {
            counts[ex.label_id]++;
            total++;
        }
    }
    int present = 0;
    for (int64_t c : counts) {
        present += c > 0 ? 1 : 0;
    }
    std::vector<double> w(n_labels, 0.0);
    if (total == 0 || present == 0) {
        return w;
    }
    for (int i = 0; i < n_labels; i++) {
        if (counts[i] > 0) {
            w[i] = (double) total / ((double) present * (double) counts[i]);
        }
    }
    return w;
}

} // namespace lift
