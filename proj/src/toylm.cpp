#include "lift/toylm.hpp"

#include <cmath>
#include <cstring>

namespace lift {

static void init_linear(linear_proj & p, const std::string & name,
                        int d_in, int d_out, rng64 & rng, double stddev) {
    p.name = name;
    p.w.name = name + ".w";
    p.w.resize(d_in, d_out);
    p.w.init_normal(rng, stddev);
    p.w.trainable = false;
    p.bias.name = name + ".bias";
    p.bias.resize(1, d_out);
    p.bias.trainable = false;
}

toylm toylm::init(const toylm_config & cfg) {
    if (cfg.vocab_size <= 0) {
        fail(errc::bad_args, "toylm vocab_size must be set");
    }
    if (cfg.d_model % cfg.n_heads != 0) {
        fail(errc::dim_mismatch, "d_model must be divisible by n_heads");
    }
    toylm m;
    m.cfg = cfg;
    rng64 rng(cfg.seed);
    const double stddev = 0.02;
    // residual-feeding projections get the depth-scaled variant
    const double res_std = stddev / std::sqrt(2.0 * cfg.n_layers);

    m.tok_emb.name = "tok_emb";
    m.tok_emb.resize(cfg.vocab_size, cfg.d_model);
    m.tok_emb.init_normal(rng, stddev);
    m.tok_emb.trainable = false;

    m.pos_emb.name = "pos_emb";
    m.pos_emb.resize(cfg.max_positions, cfg.d_model);
    m.pos_emb.init_normal(rng, stddev);
    m.pos_emb.trainable = false;

    for (int l = 0; l < cfg.n_layers; l++) {
        lm_block b;
        std::string base = "block" + std::to_string(l);
        auto init_ln = [&](param & g, param & bb, const std::string & n) {
            g.name = base + "." + n + ".g";
            g.resize(1, cfg.d_model);
            g.w.fill(1.0);
            g.trainable = false;
            bb.name = base + "." + n + ".b";
            bb.resize(1, cfg.d_model);
            bb.trainable = false;
        };
        init_ln(b.ln1_g, b.ln1_b, "ln1");
        init_ln(b.ln2_g, b.ln2_b, "ln2");
        init_linear(b.q, base + ".q", cfg.d_model, cfg.d_model, rng, stddev);
        init_linear(b.k, base + ".k", cfg.d_model, cfg.d_model, rng, stddev);
        init_linear(b.v, base + ".v", cfg.d_model, cfg.d_model, rng, stddev);
        init_linear(b.o, base + ".o", cfg.d_model, cfg.d_model, rng, res_std);
        init_linear(b.fc1, base + ".fc1", cfg.d_model, cfg.d_ffn, rng, stddev);
        init_linear(b.fc2, base + ".fc2", cfg.d_ffn, cfg.d_model, rng, res_std);
        m.blocks.push_back(std::move(b));
    }

    m.lnf_g.name = "lnf.g";
    m.lnf_g.resize(1, cfg.d_model);
    m.lnf_g.w.fill(1.0);
    m.lnf_g.trainable = false;
    m.lnf_b.name = "lnf.b";
    m.lnf_b.resize(1, cfg.d_model);
    m.lnf_b.trainable = false;
    return m;
}

// projection with optional low-rank delta:
// y = x w + bias + (alpha/rank) * drop(x) a b
static int apply_proj(tape & tp, int x, linear_proj & p, rng64 * dropout_rng) {
    int y = tp.linear(x, p.w, &p.bias);
    if (!p.lora) {
        return y;
    }
    lora_weights & lw = *p.lora;
    int xin = x;
    if (dropout_rng && lw.dropout > 0.0) {
        const tensor & xv = tp.val(x);
        std::vector<uint8_t> keep(xv.size());
        const double keep_prob = 1.0 - lw.dropout;
        for (auto & kbit : keep) {
            kbit = dropout_rng->uniform() < keep_prob ? 1 : 0;
        }
        xin = tp.dropout(x, keep, keep_prob);
    }
    int d1 = tp.linear(xin, lw.a, nullptr);
    int d2 = tp.linear(d1, lw.b, nullptr);
    int scaled = tp.scale(d2, lw.alpha / lw.rank);
    return tp.add(y, scaled);
}

int toylm::build(tape & tp, const std::vector<int> & ids, int inject_node,
                 capture_buf * cap, const patch_request * patch, rng64 * dropout_rng) {
    const int L = (int) ids.size();
    if (L == 0) {
        fail(errc::bad_args, "empty input");
    }
    if (L > cfg.max_positions) {
        fail(errc::length_overflow, std::to_string(L) + " tokens > max positions " +
             std::to_string(cfg.max_positions));
    }
    if (patch) {
        if (patch->layer < 0 || patch->layer >= cfg.n_layers) {
            fail(errc::layer_out_of_range, "patch layer " + std::to_string(patch->layer));
        }
        if (patch->row_begin < 0 || patch->row_end > L || patch->row_begin > patch->row_end) {
            fail(errc::index_out_of_range, "patch rows");
        }
    }

    std::vector<int> pos_ids(L);
    for (int i = 0; i < L; i++) {
        pos_ids[i] = i;
    }
    int x = tp.add(tp.embed_rows(tok_emb, ids), tp.embed_rows(pos_emb, pos_ids));
    if (inject_node >= 0) {
        x = tp.add(x, inject_node);
    }
    if (cap) {
        cap->embeddings = tp.val(x);
        cap->hidden.clear();
        cap->attn.clear();
    }

    for (int l = 0; l < cfg.n_layers; l++) {
        lm_block & b = blocks[l];
        int a_in = tp.layer_norm(x, b.ln1_g, b.ln1_b);
        int q = apply_proj(tp, a_in, b.q, dropout_rng);
        int k = apply_proj(tp, a_in, b.k, dropout_rng);
        int v = apply_proj(tp, a_in, b.v, dropout_rng);
        int att = tp.causal_attention(q, k, v, cfg.n_heads);
        int att_o = apply_proj(tp, att, b.o, dropout_rng);
        int h1 = tp.add(x, att_o);
        int m_in = tp.layer_norm(h1, b.ln2_g, b.ln2_b);
        int f1 = tp.gelu(apply_proj(tp, m_in, b.fc1, dropout_rng));
        int f2 = apply_proj(tp, f1, b.fc2, dropout_rng);
        int h2 = tp.add(h1, f2);

        if (patch && patch->layer == l) {
            h2 = tp.patch_rows(h2, patch->row_begin, patch->row_end, patch->rows);
        }
        if (cap) {
            cap->hidden.push_back(tp.val(h2));
            std::vector<tensor> heads;
            for (int h = 0; h < cfg.n_heads; h++) {
                heads.push_back(tp.attention_probs(att, h));
            }
            cap->attn.push_back(std::move(heads));
        }
        x = h2;
    }
    return tp.layer_norm(x, lnf_g, lnf_b);
}

tensor toylm::forward_logits(const std::vector<int> & ids, const tensor * inject,
                             capture_buf * cap, const patch_request * patch) {
    tape tp;
    int inj = -1;
    if (inject) {
        inj = tp.input(*inject, false);
    }
    int hidden = build(tp, ids, inj, cap, patch, nullptr);
    int logits = tp.matmul_nt_param(hidden, tok_emb);
    return tp.val(logits);
}

std::vector<std::pair<std::string, param *>> toylm::base_params() {
    std::vector<std::pair<std::string, param *>> out;
    out.push_back({tok_emb.name, &tok_emb});
    out.push_back({pos_emb.name, &pos_emb});
    for (auto & b : blocks) {
        for (param * p : {&b.ln1_g, &b.ln1_b, &b.ln2_g, &b.ln2_b}) {
            out.push_back({p->name, p});
        }
        for (linear_proj * lp : {&b.q, &b.k, &b.v, &b.o, &b.fc1, &b.fc2}) {
            out.push_back({lp->w.name, &lp->w});
            out.push_back({lp->bias.name, &lp->bias});
        }
    }
    out.push_back({lnf_g.name, &lnf_g});
    out.push_back({lnf_b.name, &lnf_b});
    return out;
}

std::vector<linear_proj *> toylm::projections(bool attention, bool mlp) {
    std::vector<linear_proj *> out;
    for (auto & b : blocks) {
        if (attention) {
            out.push_back(&b.q);
            out.push_back(&b.k);
            out.push_back(&b.v);
            out.push_back(&b.o);
        }
        if (mlp) {
            out.push_back(&b.fc1);
            out.push_back(&b.fc2);
        }
    }
    return out;
}

std::vector<param *> toylm::adapter_params() {
    std::vector<param *> out;
    for (linear_proj * p : projections(true, true)) {
        if (p->lora) {
            out.push_back(&p->lora->a);
            out.push_back(&p->lora->b);
        }
    }
    return out;
}

uint64_t toylm::base_weights_hash() const {
    uint64_t h = 0xCBF29CE484222325ull;
    auto mix = [&h](const tensor & t) {
        const unsigned char * p = (const unsigned char *) t.v.data();
        const size_t n = t.size() * sizeof(double);
        for (size_t i = 0; i < n; i++) {
            h ^= p[i];
            h *= 0x100000001B3ull;
        }
    };
    mix(tok_emb.w);
    mix(pos_emb.w);
    for (auto & b : blocks) {
        mix(b.ln1_g.w);
        mix(b.ln1_b.w);
        mix(b.ln2_g.w);
        mix(b.ln2_b.w);
        for (const linear_proj * lp : {&b.q, &b.k, &b.v, &b.o, &b.fc1, &b.fc2}) {
            mix(lp->w.w);
            mix(lp->bias.w);
        }
    }
    mix(lnf_g.w);
    mix(lnf_b.w);
    return h;
}

} // namespace lift
