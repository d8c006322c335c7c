// tensor.hpp - dense 2d tensors, trainable params, and a reverse-mode tape
//
// everything runs in double precision, single threaded, fixed iteration
// order, so identical seeds give bitwise-identical runs.
#pragma once

#include "lift/common.hpp"

#include <functional>
#include <string>
#include <vector>

namespace lift {

struct tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    tensor() = default;
    tensor(int r, int c) : rows(r), cols(c), v((size_t) r * c, 0.0) {}

    static tensor zeros(int r, int c) { return tensor(r, c); }

    double * data() { return v.data(); }
    const double * data() const { return v.data(); }
    double & at(int r, int c) { return v[(size_t) r * cols + c]; }
    double at(int r, int c) const { return v[(size_t) r * cols + c]; }
    double * row_ptr(int r) { return v.data() + (size_t) r * cols; }
    const double * row_ptr(int r) const { return v.data() + (size_t) r * cols; }
    size_t size() const { return v.size(); }
    bool same_shape(const tensor & o) const { return rows == o.rows && cols == o.cols; }
    void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

// c[r,n] = a[r,k] * b[k,n]
tensor matmul(const tensor & a, const tensor & b);
// c[r,n] = a[r,k] * b[n,k]^T
tensor matmul_nt(const tensor & a, const tensor & b);
// c[k,n] += a[r,k]^T * b[r,n], accumulated into c
void matmul_tn_acc(const tensor & a, const tensor & b, tensor & c);

void check_finite(const tensor & t, const char * what);

// named trainable (or frozen) leaf
struct param {
    std::string name;
    tensor w;
    tensor g;
    bool trainable = true;
    // per-entry optimizer gate; empty means every entry updates.
    // 0 entries are skipped entirely (no moment update, no decay).
    std::vector<uint8_t> update_mask;
    tensor m;   // adam first moment, sized on first optimizer step
    tensor v2;  // adam second moment

    void resize(int r, int c) {
        w = tensor(r, c);
        g = tensor(r, c);
    }
    void init_normal(rng64 & rng, double stddev) {
        for (auto & x : w.v) {
            x = rng.gaussian() * stddev;
        }
    }
    void zero_grad() { g.fill(0.0); }
};

// ------------------------------------------------------------------ tape

class tape {
public:
    // leaf activation; set needs_grad to read d loss / d value afterwards
    int input(tensor val, bool needs_grad = false);

    // rows of an embedding table: out[i] = table.w[ids[i]]
    int embed_rows(param & table, const std::vector<int> & ids);

    int add(int a, int b);
    int scale(int a, double c);
    // x * keep / keep_prob, keep entries in {0,1}
    int dropout(int a, const std::vector<uint8_t> & keep, double keep_prob);
    int concat_cols(const std::vector<int> & parts);
    int row(int a, int r);
    int mean_rows_masked(int a, const std::vector<uint8_t> & mask);
    // val = a with rows [begin,end) replaced by fixed values
    int patch_rows(int a, int begin, int end, const tensor & replacement);

    // x[r,in] * w[in,out] + b
    int linear(int x, param & w, param * b);
    // x[r,d] * emb[v,d]^T  (tied readout)
    int matmul_nt_param(int x, param & emb);

    int layer_norm(int x, param & gain, param & bias, double eps = 1e-5);
    int gelu(int x);

    // fused causal multi-head attention over already-projected q,k,v.
    // attention probabilities are kept on the node for capture/backward.
    int causal_attention(int q, int k, int v, int heads);
    // row-probabilities of head h for an attention node
    const tensor & attention_probs(int node, int head) const;

    // mean focal loss over next-token targets: positions t>=1 with
    // target_mask[t]=1 are scored from hidden[t-1] against ids[t].
    // gamma = 0 is the plain cross-entropy path.
    int next_token_loss(int hidden, param & emb, const std::vector<int> & ids,
                        const std::vector<uint8_t> & target_mask, double gamma);

    // focal cross-entropy of a single logits row against gold
    int focal_row_loss(int logits_row, int gold, double gamma, double class_weight);

    // weighted sum of scalar nodes
    int weighted_sum(const std::vector<int> & nodes, const std::vector<double> & weights);

    void backward(int loss_node);

    const tensor & val(int node) const { return nodes_[node].val; }
    const tensor & grad(int node) const;
    double scalar(int node) const;

    size_t size() const { return nodes_.size(); }

private:
    struct node {
        tensor val;
        tensor grad;
        bool needs = false;
        std::function<void()> back;
        // saved state for attention capture
        std::vector<tensor> attn_probs;
    };

    int push(tensor val, bool needs);
    node & at(int i) { return nodes_[i]; }

    std::vector<node> nodes_;
};

} // namespace lift
