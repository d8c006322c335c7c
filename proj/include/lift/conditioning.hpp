// conditioning.hpp - temporal and label features turned into an additive
// correction on the token embeddings
#pragma once

#include "lift/encode.hpp"
#include "lift/tensor.hpp"

namespace lift {

struct conditioning_config {
    int d_e = 32;          // per-feature embedding width
    int d_h = 128;         // mlp hidden width
    int r_buckets = 64;    // log-spaced distance-to-end buckets
    int t_max = 512;       // timestep clamp
    int p_max = 2048;      // absolute position table size
    int n_labels = 0;      // label vocabulary (incl. the unlabeled id 0)
    int d_model = 0;
    uint64_t seed = 99;
};

// per-token feature ids for one encoded example
struct cond_features {
    std::vector<int> position;    // absolute index, clamped to p_max-1
    std::vector<int> rel_bucket;  // bucketed distance to the last position
    std::vector<int> label;       // gold label on output tokens, else 0
    std::vector<int> timestep;    // timeline step of the current post, broadcast
};

// log-spaced bucket of a distance-to-end d in [0, p_max)
int rel_distance_bucket(int dist, int p_max, int n_buckets);

struct conditioning {
    conditioning_config cfg;
    param emb_position;   // [p_max, d_e]
    param emb_rel;        // [r_buckets, d_e]
    param emb_label;      // [n_labels, d_e]
    param emb_timestep;   // [t_max, d_e]
    param mlp_w1;         // [4*d_e, d_h]
    param mlp_b1;
    param mlp_w2;         // [d_h, d_e]
    param mlp_b2;
    param w_out;          // [d_e, d_model]; zero init keeps the base function

    static conditioning init(const conditioning_config & cfg);

    cond_features features(const encoded_example & ex) const;

    // graph node [L, d_model] to add onto the token embeddings
    int build_inject(tape & tp, const cond_features & f);

    // value-only version for evaluation paths
    tensor inject_values(const cond_features & f);

    // x + W mlp(e); DimMismatch when widths disagree
    tensor inject(const tensor & token_embeddings, const cond_features & f);

    std::vector<std::pair<std::string, param *>> params();
};

} // namespace lift
