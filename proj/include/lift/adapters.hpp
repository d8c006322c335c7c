// adapters.hpp - low-rank adapters over attention and mlp projections,
// with function-preserving staged rank growth
#pragma once

#include "lift/toylm.hpp"

namespace lift {

struct adapter_config {
    int rank = 4;
    double alpha = 0.0;        // <= 0 picks 2 * rank
    double dropout = 0.05;
    double init_std = 0.02;
    bool target_attention = true;
    bool target_mlp = true;
    uint64_t seed = 4242;
};

// add a fresh adapter to every targeted projection. the zero-initialized
// up-projection keeps the model function identical at attach time.
// returns the number of projections adapted; NoTargetsFound when the
// selector matches nothing.
int attach_adapters(toylm & m, const adapter_config & cfg);

// widen every adapter from its current rank to new_rank. old down/up
// slices are copied verbatim and frozen (masked out of optimizer updates);
// new down columns get small random init, new up rows start at zero so the
// function is preserved exactly. RankShrink if new_rank <= current rank.
void grow_adapters(toylm & m, int new_rank, double init_std, uint64_t seed);

// number of adapter entries the optimizer may update
size_t adapter_trainable_entries(toylm & m);

// rebuild the update masks from each adapter's frozen prefix
void refresh_freeze_masks(toylm & m);

} // namespace lift
