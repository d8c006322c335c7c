#include "lift/tensor.hpp"

#include <cmath>
#include <memory>

namespace lift {

// ------------------------------------------------------------ raw kernels

tensor matmul(const tensor & a, const tensor & b) {
    if (a.cols != b.rows) {
        fail(errc::dim_mismatch, "matmul " + std::to_string(a.rows) + "x" +
             std::to_string(a.cols) + " * " + std::to_string(b.rows) + "x" +
             std::to_string(b.cols));
    }
    tensor c(a.rows, b.cols);
    // i-k-j order keeps the inner loop contiguous in b and c
    for (int i = 0; i < a.rows; i++) {
        const double * ar = a.row_ptr(i);
        double * cr = c.row_ptr(i);
        for (int k = 0; k < a.cols; k++) {
            const double av = ar[k];
            if (av == 0.0) {
                continue;
            }
            const double * br = b.row_ptr(k);
            for (int j = 0; j < b.cols; j++) {
                cr[j] += av * br[j];
            }
        }
    }
    return c;
}

tensor matmul_nt(const tensor & a, const tensor & b) {
    if (a.cols != b.cols) {
        fail(errc::dim_mismatch, "matmul_nt inner " + std::to_string(a.cols) +
             " vs " + std::to_string(b.cols));
    }
    tensor c(a.rows, b.rows);
    for (int i = 0; i < a.rows; i++) {
        const double * ar = a.row_ptr(i);
        double * cr = c.row_ptr(i);
        for (int j = 0; j < b.rows; j++) {
            const double * br = b.row_ptr(j);
            double acc = 0.0;
            for (int k = 0; k < a.cols; k++) {
                acc += ar[k] * br[k];
            }
            cr[j] = acc;
        }
    }
    return c;
}

void matmul_tn_acc(const tensor & a, const tensor & b, tensor & c) {
    if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols) {
        fail(errc::dim_mismatch, "matmul_tn_acc shapes");
    }
    for (int r = 0; r < a.rows; r++) {
        const double * ar = a.row_ptr(r);
        const double * br = b.row_ptr(r);
        for (int k = 0; k < a.cols; k++) {
            const double av = ar[k];
            if (av == 0.0) {
                continue;
            }
            double * cr = c.row_ptr(k);
            for (int j = 0; j < b.cols; j++) {
                cr[j] += av * br[j];
            }
        }
    }
}

void check_finite(const tensor & t, const char * what) {
    for (double x : t.v) {
        if (!std::isfinite(x)) {
            fail(errc::non_finite, what);
        }
    }
}

// ------------------------------------------------------------ tape core

int tape::push(tensor val, bool needs) {
    node n;
    n.val = std::move(val);
    n.needs = needs;
    if (needs) {
        n.grad = tensor(n.val.rows, n.val.cols);
    }
    nodes_.push_back(std::move(n));
    return (int) nodes_.size() - 1;
}

const tensor & tape::grad(int i) const {
    if (!nodes_[i].needs) {
        fail(errc::bad_args, "node has no gradient");
    }
    return nodes_[i].grad;
}

double tape::scalar(int i) const {
    const tensor & t = nodes_[i].val;
    if (t.rows != 1 || t.cols != 1) {
        fail(errc::dim_mismatch, "scalar() on non 1x1 node");
    }
    return t.v[0];
}

void tape::backward(int loss_node) {
    const tensor & lv = nodes_[loss_node].val;
    if (lv.rows != 1 || lv.cols != 1) {
        fail(errc::dim_mismatch, "backward from non-scalar node");
    }
    if (!nodes_[loss_node].needs) {
        fail(errc::bad_args, "backward from a constant node");
    }
    nodes_[loss_node].grad.v[0] = 1.0;
    for (int i = loss_node; i >= 0; i--) {
        if (nodes_[i].needs && nodes_[i].back) {
            nodes_[i].back();
        }
    }
}

// ------------------------------------------------------------ simple ops

int tape::input(tensor val, bool needs_grad) {
    return push(std::move(val), needs_grad);
}

int tape::embed_rows(param & table, const std::vector<int> & ids) {
    const int d = table.w.cols;
    tensor out((int) ids.size(), d);
    for (size_t i = 0; i < ids.size(); i++) {
        int id = ids[i];
        if (id < 0 || id >= table.w.rows) {
            fail(errc::vocab_overflow, table.name + " id " + std::to_string(id) +
                 " outside [0," + std::to_string(table.w.rows) + ")");
        }
        std::copy_n(table.w.row_ptr(id), d, out.row_ptr(i));
    }
    bool needs = table.trainable;
    int idx = push(std::move(out), needs);
    if (needs) {
        std::vector<int> ids_copy = ids;
        nodes_[idx].back = [this, idx, &table, ids_copy]() {
            const tensor & go = nodes_[idx].grad;
            for (size_t i = 0; i < ids_copy.size(); i++) {
                double * dst = table.g.row_ptr(ids_copy[i]);
                const double * src = go.row_ptr((int) i);
                for (int j = 0; j < go.cols; j++) {
                    dst[j] += src[j];
                }
            }
        };
    }
    return idx;
}

int tape::add(int a, int b) {
    const tensor & av = nodes_[a].val;
    const tensor & bv = nodes_[b].val;
    if (!av.same_shape(bv)) {
        fail(errc::dim_mismatch, "add shapes");
    }
    tensor out = av;
    for (size_t i = 0; i < out.size(); i++) {
        out.v[i] += bv.v[i];
    }
    bool needs = nodes_[a].needs || nodes_[b].needs;
    int idx = push(std::move(out), needs);
    if (needs) {
        nodes_[idx].back = [this, idx, a, b]() {
            const tensor & go = nodes_[idx].grad;
            if (nodes_[a].needs) {
                for (size_t i = 0; i < go.size(); i++) {
                    nodes_[a].grad.v[i] += go.v[i];
                }
            }
            if (nodes_[b].needs) {
                for (size_t i = 0; i < go.size(); i++) {
                    nodes_[b].grad.v[i] += go.v[i];
                }
            }
        };
    }
    return idx;
}

int tape::scale(int a, double c) {
    tensor out = nodes_[a].val;
    for (auto & x : out.v) {
        x *= c;
    }
    bool needs = nodes_[a].needs;
    int idx = push(std::move(out), needs);
    if (needs) {
        nodes_[idx].back = [this, idx, a, c]() {
            const tensor & go = nodes_[idx].grad;
            for (size_t i = 0; i < go.size(); i++) {
                nodes_[a].grad.v[i] += c * go.v[i];
            }
        };
    }
    return idx;
}

int tape::dropout(int a, const std::vector<uint8_t> & keep, double keep_prob) {
    const tensor & av = nodes_[a].val;
    if (keep.size() != av.size() || keep_prob <= 0.0) {
        fail(errc::bad_args, "dropout mask size / keep prob");
    }
    tensor out = av;
    const double inv = 1.0 / keep_prob;
    for (size_t i = 0; i < out.size(); i++) {
        out.v[i] = keep[i] ? out.v[i] * inv : 0.0;
    }
    bool needs = nodes_[a].needs;
    int idx = push(std::move(out), needs);
    if (needs) {
        std::vector<uint8_t> keep_copy = keep;
        nodes_[idx].back = [this, idx, a, keep_copy, inv]() {
            const tensor & go = nodes_[idx].grad;
            for (size_t i = 0; i < go.size(); i++) {
                if (keep_copy[i]) {
                    nodes_[a].grad.v[i] += go.v[i] * inv;
                }
            }
        };
    }
    return idx;
}

int tape::concat_cols(const std::vector<int> & parts) {
    if (parts.empty()) {
        fail(errc::bad_args, "concat_cols with no parts");
    }
    int rows = nodes_[parts[0]].val.rows;
    int cols = 0;
    bool needs = false;
    for (int p : parts) {
        if (nodes_[p].val.rows != rows) {
            fail(errc::dim_mismatch, "concat_cols row counts");
        }
        cols += nodes_[p].val.cols;
        needs = needs || nodes_[p].needs;
    }
    tensor out(rows, cols);
    int off = 0;
    for (int p : parts) {
        const tensor & pv = nodes_[p].val;
        for (int r = 0; r < rows; r++) {
            std::copy_n(pv.row_ptr(r), pv.cols, out.row_ptr(r) + off);
        }
        off += pv.cols;
    }
    int idx = push(std::move(out), needs);
    if (needs) {
        std::vector<int> parts_copy = parts;
        nodes_[idx].back = [this, idx, parts_copy]() {
            const tensor & go = nodes_[idx].grad;
            int off2 = 0;
            for (int p : parts_copy) {
                tensor & pg = nodes_[p].grad;
                if (nodes_[p].needs) {
                    for (int r = 0; r < go.rows; r++) {
                        const double * src = go.row_ptr(r) + off2;
                        double * dst = pg.row_ptr(r);
                        for (int j = 0; j < nodes_[p].val.cols; j++) {
                            dst[j] += src[j];
                        }
                    }
                }
                off2 += nodes_[p].val.cols;
            }
        };
    }
    return idx;
}

int tape::row(int a, int r) {
    const tensor & av = nodes_[a].val;
    if (r < 0 || r >= av.rows) {
        fail(errc::index_out_of_range, "row " + std::to_string(r));
    }
    tensor out(1, av.cols);
    std::copy_n(av.row_ptr(r), av.cols, out.data());
    bool needs = nodes_[a].needs;
    int idx = push(std::move(out), needs);
    if (needs) {
        nodes_[idx].back = [this, idx, a, r]() {
            const tensor & go = nodes_[idx].grad;
            double * dst = nodes_[a].grad.row_ptr(r);
            for (int j = 0; j < go.cols; j++) {
                dst[j] += go.v[j];
            }
        };
    }
    return idx;
}

int tape::mean_rows_masked(int a, const std::vector<uint8_t> & mask) {
    const tensor & av = nodes_[a].val;
    if ((int) mask.size() != av.rows) {
        fail(errc::dim_mismatch, "mean_rows_masked mask length");
    }
    int count = 0;
    for (uint8_t m : mask) {
        count += m ? 1 : 0;
    }
    if (count == 0) {
        fail(errc::no_targets_found, "mean_rows_masked: empty mask");
    }
    tensor out(1, av.cols);
    for (int r = 0; r < av.rows; r++) {
        if (!mask[r]) {
            continue;
        }
        const double * src = av.row_ptr(r);
        for (int j = 0; j < av.cols; j++) {
            out.v[j] += src[j];
        }
    }
    const double inv = 1.0 / count;
    for (auto & x : out.v) {
        x *= inv;
    }
    bool needs = nodes_[a].needs;
    int idx = push(std::move(out), needs);
    if (needs) {
        std::vector<uint8_t> mask_copy = mask;
        nodes_[idx].back = [this, idx, a, mask_copy, inv]() {
            const tensor & go = nodes_[idx].grad;
            for (int r = 0; r < nodes_[a].val.rows; r++) {
                if (!mask_copy[r]) {
                    continue;
                }
                double * dst = nodes_[a].grad.row_ptr(r);
                for (int j = 0; j < go.cols; j++) {
                    dst[j] += go.v[j] * inv;
                }
            }
        };
    }
    return idx;
}

int tape::patch_rows(int a, int begin, int end, const tensor & replacement) {
    const tensor & av = nodes_[a].val;
    if (begin < 0 || end > av.rows || begin > end) {
        fail(errc::index_out_of_range, "patch_rows range");
    }
    if (replacement.rows != end - begin || replacement.cols != av.cols) {
        fail(errc::dim_mismatch, "patch_rows replacement shape");
    }
    tensor out = av;
    for (int r = begin; r < end; r++) {
        std::copy_n(replacement.row_ptr(r - begin), av.cols, out.row_ptr(r));
    }
    bool needs = nodes_[a].needs;
    int idx = push(std::move(out), needs);
    if (needs) {
        nodes_[idx].back = [this, idx, a, begin, end]() {
            const tensor & go = nodes_[idx].grad;
            for (int r = 0; r < go.rows; r++) {
                if (r >= begin && r < end) {
                    continue;  // replaced rows block gradient
                }
                double * dst = nodes_[a].grad.row_ptr(r);
                const double * src = go.row_ptr(r);
                for (int j = 0; j < go.cols; j++) {
                    dst[j] += src[j];
                }
            }
        };
    }
    return idx;
}

// ------------------------------------------------------------ linear ops

int tape::linear(int x, param & w, param * b) {
    const tensor & xv = nodes_[x].val;
    tensor out = matmul(xv, w.w);
    if (b) {
        if (b->w.rows != 1 || b->w.cols != out.cols) {
            fail(errc::dim_mismatch, "linear bias shape for " + b->name);
        }
        for (int r = 0; r < out.rows; r++) {
            double * orow = out.row_ptr(r);
            for (int j = 0; j < out.cols; j++) {
                orow[j] += b->w.v[j];
            }
        }
    }
    bool needs = nodes_[x].needs || w.trainable || (b && b->trainable);
    int idx = push(std::move(out), needs);
    if (needs) {
        nodes_[idx].back = [this, idx, x, &w, b]() {
            const tensor & go = nodes_[idx].grad;
            const tensor & xv2 = nodes_[x].val;
            if (nodes_[x].needs) {
                // dx += go * w^T
                tensor dx = matmul_nt(go, w.w);
                for (size_t i = 0; i < dx.size(); i++) {
                    nodes_[x].grad.v[i] += dx.v[i];
                }
            }
            if (w.trainable) {
                matmul_tn_acc(xv2, go, w.g);
            }
            if (b && b->trainable) {
                for (int r = 0; r < go.rows; r++) {
                    const double * src = go.row_ptr(r);
                    for (int j = 0; j < go.cols; j++) {
                        b->g.v[j] += src[j];
                    }
                }
            }
        };
    }
    return idx;
}

int tape::matmul_nt_param(int x, param & emb) {
    const tensor & xv = nodes_[x].val;
    tensor out = matmul_nt(xv, emb.w);
    bool needs = nodes_[x].needs || emb.trainable;
    int idx = push(std::move(out), needs);
    if (needs) {
        nodes_[idx].back = [this, idx, x, &emb]() {
            const tensor & go = nodes_[idx].grad;
            if (nodes_[x].needs) {
                // dx += go * emb
                tensor dx = matmul(go, emb.w);
                for (size_t i = 0; i < dx.size(); i++) {
                    nodes_[x].grad.v[i] += dx.v[i];
                }
            }
            if (emb.trainable) {
                matmul_tn_acc(go, nodes_[x].val, emb.g);
            }
        };
    }
    return idx;
}

// ------------------------------------------------------------ nonlinear

int tape::layer_norm(int x, param & gain, param & bias, double eps) {
    const tensor & xv = nodes_[x].val;
    const int d = xv.cols;
    if (gain.w.cols != d || bias.w.cols != d) {
        fail(errc::dim_mismatch, "layer_norm affine shape");
    }
    tensor out(xv.rows, d);
    tensor xhat(xv.rows, d);
    std::vector<double> inv_sigma(xv.rows);
    for (int r = 0; r < xv.rows; r++) {
        const double * src = xv.row_ptr(r);
        double mu = 0.0;
        for (int j = 0; j < d; j++) {
            mu += src[j];
        }
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; j++) {
            const double c = src[j] - mu;
            var += c * c;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = is;
        double * hrow = xhat.row_ptr(r);
        double * orow = out.row_ptr(r);
        for (int j = 0; j < d; j++) {
            hrow[j] = (src[j] - mu) * is;
            orow[j] = hrow[j] * gain.w.v[j] + bias.w.v[j];
        }
    }
    bool needs = nodes_[x].needs || gain.trainable || bias.trainable;
    int idx = push(std::move(out), needs);
    if (needs) {
        nodes_[idx].back = [this, idx, x, &gain, &bias, xhat, inv_sigma]() {
            const tensor & go = nodes_[idx].grad;
            const int dd = go.cols;
            for (int r = 0; r < go.rows; r++) {
                const double * g = go.row_ptr(r);
                const double * h = xhat.row_ptr(r);
                if (gain.trainable) {
                    for (int j = 0; j < dd; j++) {
                        gain.g.v[j] += g[j] * h[j];
                    }
                }
                if (bias.trainable) {
                    for (int j = 0; j < dd; j++) {
                        bias.g.v[j] += g[j];
                    }
                }
                if (nodes_[x].needs) {
                    double m1 = 0.0;
                    double m2 = 0.0;
                    for (int j = 0; j < dd; j++) {
                        const double gg = g[j] * gain.w.v[j];
                        m1 += gg;
                        m2 += gg * h[j];
                    }
                    m1 /= dd;
                    m2 /= dd;
                    double * dst = nodes_[x].grad.row_ptr(r);
                    for (int j = 0; j < dd; j++) {
                        const double gg = g[j] * gain.w.v[j];
                        dst[j] += inv_sigma[r] * (gg - m1 - h[j] * m2);
                    }
                }
            }
        };
    }
    return idx;
}

static inline double gelu_fwd(double x) {
    const double c = 0.797884560802865355;  // sqrt(2/pi)
    const double u = c * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

static inline double gelu_bwd(double x) {
    const double c = 0.797884560802865355;
    const double u = c * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

int tape::gelu(int x) {
    tensor out = nodes_[x].val;
    for (auto & v : out.v) {
        v = gelu_fwd(v);
    }
    bool needs = nodes_[x].needs;
    int idx = push(std::move(out), needs);
    if (needs) {
        nodes_[idx].back = [this, idx, x]() {
            const tensor & go = nodes_[idx].grad;
            const tensor & xv = nodes_[x].val;
            for (size_t i = 0; i < go.size(); i++) {
                nodes_[x].grad.v[i] += go.v[i] * gelu_bwd(xv.v[i]);
            }
        };
    }
    return idx;
}

// ------------------------------------------------------------ attention

int tape::causal_attention(int q, int k, int v, int heads) {
    const tensor & qv = nodes_[q].val;
    const tensor & kv = nodes_[k].val;
    const tensor & vv = nodes_[v].val;
    if (!qv.same_shape(kv) || !qv.same_shape(vv)) {
        fail(errc::dim_mismatch, "attention q/k/v shapes");
    }
    const int L = qv.rows;
    const int d = qv.cols;
    if (heads <= 0 || d % heads != 0) {
        fail(errc::dim_mismatch, "attention heads must divide width");
    }
    const int dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt((double) dh);

    tensor out(L, d);
    std::vector<tensor> probs(heads, tensor(L, L));
    for (int h = 0; h < heads; h++) {
        const int off = h * dh;
        tensor & P = probs[h];
        for (int i = 0; i < L; i++) {
            const double * qi = qv.row_ptr(i) + off;
            double mx = -1e300;
            double * prow = P.row_ptr(i);
            for (int j = 0; j <= i; j++) {
                const double * kj = kv.row_ptr(j) + off;
                double s = 0.0;
                for (int t = 0; t < dh; t++) {
                    s += qi[t] * kj[t];
                }
                s *= inv_sqrt;
                prow[j] = s;
                if (s > mx) {
                    mx = s;
                }
            }
            double z = 0.0;
            for (int j = 0; j <= i; j++) {
                prow[j] = std::exp(prow[j] - mx);
                z += prow[j];
            }
            const double inv_z = 1.0 / z;
            double * orow = out.row_ptr(i) + off;
            for (int j = 0; j <= i; j++) {
                prow[j] *= inv_z;
                const double * vj = vv.row_ptr(j) + off;
                const double p = prow[j];
                for (int t = 0; t < dh; t++) {
                    orow[t] += p * vj[t];
                }
            }
        }
    }

    bool needs = nodes_[q].needs || nodes_[k].needs || nodes_[v].needs;
    int idx = push(std::move(out), needs);
    nodes_[idx].attn_probs = std::move(probs);
    if (needs) {
        nodes_[idx].back = [this, idx, q, k, v, heads, dh, inv_sqrt, L]() {
            const tensor & go = nodes_[idx].grad;
            const tensor & qv2 = nodes_[q].val;
            const tensor & kv2 = nodes_[k].val;
            const tensor & vv2 = nodes_[v].val;
            for (int h = 0; h < heads; h++) {
                const int off = h * dh;
                const tensor & P = nodes_[idx].attn_probs[h];
                for (int i = 0; i < L; i++) {
                    const double * gout = go.row_ptr(i) + off;
                    const double * prow = P.row_ptr(i);
                    // dP and softmax backward, row i has support [0,i]
                    double dot = 0.0;
                    std::vector<double> dp(i + 1);
                    for (int j = 0; j <= i; j++) {
                        const double * vj = vv2.row_ptr(j) + off;
                        double s = 0.0;
                        for (int t = 0; t < dh; t++) {
                            s += gout[t] * vj[t];
                        }
                        dp[j] = s;
                        dot += s * prow[j];
                    }
                    for (int j = 0; j <= i; j++) {
                        const double ds = prow[j] * (dp[j] - dot) * inv_sqrt;
                        if (nodes_[q].needs) {
                            double * dq = nodes_[q].grad.row_ptr(i) + off;
                            const double * kj = kv2.row_ptr(j) + off;
                            for (int t = 0; t < dh; t++) {
                                dq[t] += ds * kj[t];
                            }
                        }
                        if (nodes_[k].needs) {
                            double * dk = nodes_[k].grad.row_ptr(j) + off;
                            const double * qi = qv2.row_ptr(i) + off;
                            for (int t = 0; t < dh; t++) {
                                dk[t] += ds * qi[t];
                            }
                        }
                        if (nodes_[v].needs) {
                            double * dv = nodes_[v].grad.row_ptr(j) + off;
                            const double p = prow[j];
                            for (int t = 0; t < dh; t++) {
                                dv[t] += p * gout[t];
                            }
                        }
                    }
                }
            }
        };
    }
    return idx;
}

const tensor & tape::attention_probs(int node, int head) const {
    const auto & probs = nodes_[node].attn_probs;
    if (probs.empty()) {
        fail(errc::no_attention_capture, "node holds no attention probabilities");
    }
    if (head < 0 || head >= (int) probs.size()) {
        fail(errc::index_out_of_range, "attention head " + std::to_string(head));
    }
    return probs[head];
}

// ------------------------------------------------------------ losses

// log-softmax of a row; returns log-probs and the log-sum-exp pieces
static void log_softmax_row(const double * z, int n, std::vector<double> & logp) {
    double mx = z[0];
    for (int j = 1; j < n; j++) {
        if (z[j] > mx) {
            mx = z[j];
        }
    }
    double s = 0.0;
    for (int j = 0; j < n; j++) {
        s += std::exp(z[j] - mx);
    }
    const double lse = mx + std::log(s);
    logp.resize(n);
    for (int j = 0; j < n; j++) {
        logp[j] = z[j] - lse;
    }
}

// focal term value and the scalar multiplier for dL/dlogit composition.
// with gamma == 0 this is exactly plain cross-entropy.
static void focal_terms(double logp_gold, double gamma, double weight,
                        double & loss, double & dl_dlogp) {
    const double p = std::exp(logp_gold);
    if (gamma == 0.0) {
        loss = -weight * logp_gold;
        dl_dlogp = -weight;
        return;
    }
    const double u = 1.0 - p;
    if (u <= 0.0) {
        loss = 0.0;
        dl_dlogp = 0.0;
        return;
    }
    const double ug = std::pow(u, gamma);
    loss = -weight * ug * logp_gold;
    dl_dlogp = weight * (gamma * std::pow(u, gamma - 1.0) * p * logp_gold - ug);
}

int tape::next_token_loss(int hidden, param & emb, const std::vector<int> & ids,
                          const std::vector<uint8_t> & target_mask, double gamma) {
    const tensor & hv = nodes_[hidden].val;
    const int L = (int) ids.size();
    if (hv.rows != L || (int) target_mask.size() != L) {
        fail(errc::dim_mismatch, "next_token_loss lengths");
    }
    const int V = emb.w.rows;
    const int d = emb.w.cols;
    if (hv.cols != d) {
        fail(errc::dim_mismatch, "next_token_loss hidden width");
    }

    std::vector<int> pos;        // target positions t (scored from t-1)
    for (int t = 1; t < L; t++) {
        if (target_mask[t]) {
            if (ids[t] < 0 || ids[t] >= V) {
                fail(errc::vocab_overflow, "target id " + std::to_string(ids[t]));
            }
            pos.push_back(t);
        }
    }
    if (pos.empty()) {
        fail(errc::no_targets_found, "next_token_loss: no supervised positions");
    }

    // saved per supervised position: log-probs and the dL/dlogp scalar
    auto logp_rows = std::make_shared<std::vector<std::vector<double>>>(pos.size());
    auto dl_scalars = std::make_shared<std::vector<double>>(pos.size());

    double total = 0.0;
    std::vector<double> logits(V);
    for (size_t i = 0; i < pos.size(); i++) {
        const int t = pos[i];
        const double * hrow = hv.row_ptr(t - 1);
        for (int vtok = 0; vtok < V; vtok++) {
            const double * er = emb.w.row_ptr(vtok);
            double s = 0.0;
            for (int j = 0; j < d; j++) {
                s += hrow[j] * er[j];
            }
            logits[vtok] = s;
        }
        log_softmax_row(logits.data(), V, (*logp_rows)[i]);
        double loss;
        double dl;
        focal_terms((*logp_rows)[i][ids[t]], gamma, 1.0, loss, dl);
        (*dl_scalars)[i] = dl;
        total += loss;
    }
    const double inv_n = 1.0 / (double) pos.size();
    tensor out(1, 1);
    out.v[0] = total * inv_n;

    bool needs = nodes_[hidden].needs || emb.trainable;
    int idx = push(std::move(out), needs);
    if (needs) {
        std::vector<int> ids_copy = ids;
        nodes_[idx].back = [this, idx, hidden, &emb, ids_copy, pos, logp_rows,
                            dl_scalars, inv_n, V, d]() {
            const double go = nodes_[idx].grad.v[0] * inv_n;
            const tensor & hv2 = nodes_[hidden].val;
            for (size_t i = 0; i < pos.size(); i++) {
                const int t = pos[i];
                const int gold = ids_copy[t];
                const std::vector<double> & logp = (*logp_rows)[i];
                const double dl = (*dl_scalars)[i] * go;
                if (dl == 0.0) {
                    continue;
                }
                // dz_j = dl * (delta_gold - p_j); dh = dz * emb, demb = dz^T h
                const double * hrow = hv2.row_ptr(t - 1);
                double * hgrad = nodes_[hidden].needs ?
                                 nodes_[hidden].grad.row_ptr(t - 1) : nullptr;
                for (int vtok = 0; vtok < V; vtok++) {
                    const double pj = std::exp(logp[vtok]);
                    const double dz = dl * ((vtok == gold ? 1.0 : 0.0) - pj);
                    if (dz == 0.0) {
                        continue;
                    }
                    const double * er = emb.w.row_ptr(vtok);
                    if (hgrad) {
                        for (int j = 0; j < d; j++) {
                            hgrad[j] += dz * er[j];
                        }
                    }
                    if (emb.trainable) {
                        double * eg = emb.g.row_ptr(vtok);
                        for (int j = 0; j < d; j++) {
                            eg[j] += dz * hrow[j];
                        }
                    }
                }
            }
        };
    }
    return idx;
}

int tape::focal_row_loss(int logits_row, int gold, double gamma, double class_weight) {
    const tensor & zv = nodes_[logits_row].val;
    if (zv.rows != 1) {
        fail(errc::dim_mismatch, "focal_row_loss expects a single row");
    }
    const int K = zv.cols;
    if (gold < 0 || gold >= K) {
        fail(errc::index_out_of_range, "gold class " + std::to_string(gold));
    }
    auto logp = std::make_shared<std::vector<double>>();
    log_softmax_row(zv.data(), K, *logp);
    double loss;
    double dl;
    focal_terms((*logp)[gold], gamma, class_weight, loss, dl);
    tensor out(1, 1);
    out.v[0] = loss;
    bool needs = nodes_[logits_row].needs;
    int idx = push(std::move(out), needs);
    if (needs) {
        nodes_[idx].back = [this, idx, logits_row, gold, logp, dl]() {
            const double go = nodes_[idx].grad.v[0];
            const double s = dl * go;
            if (s == 0.0) {
                return;
            }
            double * dst = nodes_[logits_row].grad.data();
            const int KK = nodes_[logits_row].val.cols;
            for (int j = 0; j < KK; j++) {
                const double pj = std::exp((*logp)[j]);
                dst[j] += s * ((j == gold ? 1.0 : 0.0) - pj);
            }
        };
    }
    return idx;
}

int tape::weighted_sum(const std::vector<int> & terms, const std::vector<double> & weights) {
    if (terms.size() != weights.size() || terms.empty()) {
        fail(errc::bad_args, "weighted_sum arity");
    }
    double total = 0.0;
    bool needs = false;
    for (size_t i = 0; i < terms.size(); i++) {
        const tensor & tv = nodes_[terms[i]].val;
        if (tv.rows != 1 || tv.cols != 1) {
            fail(errc::dim_mismatch, "weighted_sum expects scalars");
        }
        total += weights[i] * tv.v[0];
        needs = needs || nodes_[terms[i]].needs;
    }
    tensor out(1, 1);
    out.v[0] = total;
    int idx = push(std::move(out), needs);
    if (needs) {
        std::vector<int> t2 = terms;
        std::vector<double> w2 = weights;
        nodes_[idx].back = [this, idx, t2, w2]() {
            const double go = nodes_[idx].grad.v[0];
            for (size_t i = 0; i < t2.size(); i++) {
                if (nodes_[t2[i]].needs) {
                    nodes_[t2[i]].grad.v[0] += go * w2[i];
                }
            }
        };
    }
    return idx;
}

} // namespace lift
