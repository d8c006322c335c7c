// objectives.hpp - the four-term training objective and its value-level
// counterparts used for evaluation and verification
#pragma once

#include "lift/encode.hpp"
#include "lift/tensor.hpp"

namespace lift {

struct loss_weights {
    double lambda_ce = 1.0;     // prompt next-token cross-entropy
    double lambda_out = 1.0;    // focal lm loss on output tokens
    double lambda_cls = 0.5;    // focal classification, global head
    double lambda_hist = 0.25;  // focal classification from pooled history
    double gamma = 2.0;
};

// ---------------- value-level ops over materialized logits [L, V] ----------------

// mean cross-entropy of next-token targets at masked positions; plain CE,
// no focal modulation. targets at position t are scored from logits row t-1.
double prompt_ce(const tensor & logits, const std::vector<int> & ids,
                 const std::vector<uint8_t> & mask);

// focal variant; gamma shrinks the penalty on confident targets
double focal_lm(const tensor & logits, const std::vector<int> & ids,
                const std::vector<uint8_t> & mask, double gamma);

// focal cross-entropy of one classification row; optional per-class weight
double focal_cls(const tensor & logits_row, int gold, double gamma,
                 const std::vector<double> * class_weights = nullptr);

// plain-CE counterpart of focal_cls
double plain_cls(const tensor & logits_row, int gold,
                 const std::vector<double> * class_weights = nullptr);

// ---------------- graph-level composite ----------------

struct loss_nodes {
    int total = -1;
    int ce = -1;
    int out = -1;
    int cls = -1;
    int hist = -1;
};

struct loss_values {
    double ce = 0.0;
    double out = 0.0;
    double cls = 0.0;
    double hist = 0.0;
    double total = 0.0;
    bool hist_present = false;
    bool ce_present = false;
};

// builds the active loss terms on the tape; terms with zero weight are not
// constructed at all, so they cannot route gradient anywhere.
//   hidden:  final hidden state node [L, d_model]
//   emb:     tied readout matrix
//   heads:   global and history classification heads (width n_labels)
// NoStampedPosition if the example carries no labeled output position.
loss_nodes build_loss(tape & tp, int hidden, param & emb,
                      param & head_w, param & head_b,
                      param & hist_w, param & hist_b,
                      const encoded_example & ex, const loss_weights & w,
                      const std::vector<double> & class_weights);

loss_values read_loss(const tape & tp, const loss_nodes & n,
                      const loss_weights & w);

// inverse-frequency weights over global label ids present in a shard;
// absent classes get weight zero.
std::vector<double> inverse_freq_weights(const std::vector<encoded_example> & shard,
                                         int n_labels);

} // namespace lift
