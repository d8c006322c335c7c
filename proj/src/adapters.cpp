#include "lift/adapters.hpp"

namespace lift {

static void mask_for(lora_weights & lw) {
    // frozen ranks: columns [0,prefix) of a, rows [0,prefix) of b
    if (lw.frozen_prefix <= 0) {
        lw.a.update_mask.clear();
        lw.b.update_mask.clear();
        return;
    }
    lw.a.update_mask.assign(lw.a.w.size(), 1);
    for (int r = 0; r < lw.a.w.rows; r++) {
        for (int c = 0; c < lw.frozen_prefix; c++) {
            lw.a.update_mask[(size_t) r * lw.a.w.cols + c] = 0;
        }
    }
    lw.b.update_mask.assign(lw.b.w.size(), 1);
    for (int r = 0; r < lw.frozen_prefix; r++) {
        for (int c = 0; c < lw.b.w.cols; c++) {
            lw.b.update_mask[(size_t) r * lw.b.w.cols + c] = 0;
        }
    }
}

int attach_adapters(toylm & m, const adapter_config & cfg) {
    if (cfg.rank <= 0) {
        fail(errc::bad_args, "adapter rank must be positive");
    }
    auto targets = m.projections(cfg.target_attention, cfg.target_mlp);
    if (targets.empty()) {
        fail(errc::no_targets_found, "adapter target selector matched no projections");
    }
    rng64 rng(cfg.seed);
    int n = 0;
    for (linear_proj * p : targets) {
        if (p->lora) {
            continue;  // already adapted
        }
        lora_weights lw;
        lw.rank = cfg.rank;
        lw.alpha = cfg.alpha > 0.0 ? cfg.alpha : 2.0 * cfg.rank;
        lw.dropout = cfg.dropout;
        lw.frozen_prefix = 0;
        lw.a.name = p->name + ".lora_a";
        lw.a.resize(p->w.w.rows, cfg.rank);
        lw.a.init_normal(rng, cfg.init_std);
        lw.a.trainable = true;
        lw.b.name = p->name + ".lora_b";
        lw.b.resize(cfg.rank, p->w.w.cols);
        lw.b.trainable = true;
        p->lora = std::move(lw);
        n++;
    }
    if (n == 0) {
        fail(errc::no_targets_found, "every targeted projection is already adapted");
    }
    return n;
}

void grow_adapters(toylm & m, int new_rank, double init_std, uint64_t seed) {
    rng64 rng(seed);
    bool any = false;
    for (linear_proj * p : m.projections(true, true)) {
        if (!p->lora) {
            continue;
        }
        any = true;
        lora_weights & lw = *p->lora;
        const int r_old = lw.rank;
        if (new_rank <= r_old) {
            fail(errc::rank_shrink, p->name + ": rank " + std::to_string(r_old) +
                 " -> " + std::to_string(new_rank));
        }
        const int d_in = lw.a.w.rows;
        const int d_out = lw.b.w.cols;

        param a2;
        a2.name = lw.a.name;
        a2.resize(d_in, new_rank);
        for (int r = 0; r < d_in; r++) {
            for (int c = 0; c < r_old; c++) {
                a2.w.at(r, c) = lw.a.w.at(r, c);
            }
            for (int c = r_old; c < new_rank; c++) {
                a2.w.at(r, c) = rng.gaussian() * init_std;
            }
        }

        param b2;
        b2.name = lw.b.name;
        b2.resize(new_rank, d_out);
        for (int r = 0; r < r_old; r++) {
            for (int c = 0; c < d_out; c++) {
                b2.w.at(r, c) = lw.b.w.at(r, c);
            }
        }
        // rows [r_old,new_rank) stay zero: no function change until trained

        lw.a = std::move(a2);
        lw.b = std::move(b2);
        // scale alpha with rank so alpha/rank — the effective delta scale —
        // is untouched and the old slices keep their exact contribution
        lw.alpha = lw.alpha * new_rank / r_old;
        lw.rank = new_rank;
        lw.frozen_prefix = r_old;
        mask_for(lw);
    }
    if (!any) {
        fail(errc::no_targets_found, "grow_adapters: model has no adapters");
    }
}

size_t adapter_trainable_entries(toylm & m) {
    size_t n = 0;
    for (param * p : m.adapter_params()) {
        if (p->update_mask.empty()) {
            n += p->w.size();
        } else {
            for (uint8_t u : p->update_mask) {
                n += u ? 1 : 0;
            }
        }
    }
    return n;
}

void refresh_freeze_masks(toylm & m) {
    for (linear_proj * p : m.projections(true, true)) {
        if (p->lora) {
            mask_for(*p->lora);
        }
    }
}

} // namespace lift
