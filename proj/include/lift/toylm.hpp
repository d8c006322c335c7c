// toylm.hpp - small decoder-only transformer backbone with frozen base
// weights, optional low-rank adapters, additive embedding injection,
// per-layer state capture, and hidden-state patching
#pragma once

#include "lift/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lift {

struct toylm_config {
    int n_layers = 4;
    int d_model = 64;
    int n_heads = 4;
    int d_ffn = 256;
    int max_positions = 2048;
    int vocab_size = 0;       // set from tokenizer
    uint64_t seed = 1234;
};

struct lora_weights {
    param a;                  // [d_in, rank], small random init
    param b;                  // [rank, d_out], zero init
    int rank = 0;
    int frozen_prefix = 0;    // leading ranks excluded from updates
    double alpha = 0.0;       // effective scale = alpha / rank
    double dropout = 0.05;
};

struct linear_proj {
    std::string name;
    param w;                  // [d_in, d_out], frozen base weight
    param bias;               // [1, d_out], frozen
    std::optional<lora_weights> lora;
};

struct lm_block {
    param ln1_g, ln1_b, ln2_g, ln2_b;
    linear_proj q, k, v, o, fc1, fc2;
};

// per-run observables
struct capture_buf {
    tensor embeddings;                      // layer-0 input after injection
    std::vector<tensor> hidden;             // per layer: residual stream output
    std::vector<std::vector<tensor>> attn;  // [layer][head] row-softmax probs
};

// replace rows [row_begin,row_end) of the residual stream that leaves
// `layer`, before it feeds the next layer
struct patch_request {
    int layer = 0;
    int row_begin = 0;
    int row_end = 0;
    tensor rows;
};

struct toylm {
    toylm_config cfg;
    param tok_emb;   // [V, d]; also the tied readout matrix
    param pos_emb;   // [max_positions, d]
    std::vector<lm_block> blocks;
    param lnf_g, lnf_b;

    static toylm init(const toylm_config & cfg);

    // builds the transformer graph; returns the node of the final hidden
    // state [L, d_model] after the closing layer norm.
    //   inject_node  >= 0: added to token+position embeddings before layer 0
    //   dropout_rng  != nullptr: adapter dropout active (training mode)
    int build(tape & tp, const std::vector<int> & ids, int inject_node,
              capture_buf * cap, const patch_request * patch, rng64 * dropout_rng);

    // eval-mode convenience: materialized logits [L, V]
    tensor forward_logits(const std::vector<int> & ids,
                          const tensor * inject = nullptr,
                          capture_buf * cap = nullptr,
                          const patch_request * patch = nullptr);

    std::vector<std::pair<std::string, param *>> base_params();
    std::vector<linear_proj *> projections(bool attention, bool mlp);
    std::vector<param *> adapter_params();

    uint64_t base_weights_hash() const;
};

} // namespace lift
