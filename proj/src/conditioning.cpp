#include "lift/conditioning.hpp"

#include <cmath>

namespace lift {

int rel_distance_bucket(int dist, int p_max, int n_buckets) {
    if (dist < 0) {
        fail(errc::bad_args, "negative distance");
    }
    if (dist >= p_max) {
        dist = p_max - 1;
    }
    // log spacing: short distances resolve finely, long ones coarsely
    const double t = std::log1p((double) dist) / std::log1p((double) p_max - 1.0);
    int b = (int) ((double) n_buckets * t);
    if (b >= n_buckets) {
        b = n_buckets - 1;
    }
    return b;
}

conditioning conditioning::init(const conditioning_config & cfg) {
    if (cfg.n_labels <= 0 || cfg.d_model <= 0) {
        fail(errc::bad_args, "conditioning needs n_labels and d_model");
    }
    conditioning c;
    c.cfg = cfg;
    rng64 rng(cfg.seed);
    const double stddev = 0.02;
    auto setup = [&](param & p, const char * name, int rows, int cols, bool zero) {
        p.name = std::string("cond.") + name;
        p.resize(rows, cols);
        if (!zero) {
            p.init_normal(rng, stddev);
        }
        p.trainable = true;
    };
    setup(c.emb_position, "emb_position", cfg.p_max, cfg.d_e, false);
    setup(c.emb_rel, "emb_rel", cfg.r_buckets, cfg.d_e, false);
    setup(c.emb_label, "emb_label", cfg.n_labels, cfg.d_e, false);
    setup(c.emb_timestep, "emb_timestep", cfg.t_max, cfg.d_e, false);
    setup(c.mlp_w1, "mlp_w1", 4 * cfg.d_e, cfg.d_h, false);
    setup(c.mlp_b1, "mlp_b1", 1, cfg.d_h, true);
    setup(c.mlp_w2, "mlp_w2", cfg.d_h, cfg.d_e, false);
    setup(c.mlp_b2, "mlp_b2", 1, cfg.d_e, true);
    // zero start: injection is exactly the null function until trained
    setup(c.w_out, "w_out", cfg.d_e, cfg.d_model, true);
    return c;
}

cond_features conditioning::features(const encoded_example & ex) const {
    const int L = ex.size();
    cond_features f;
    f.position.resize(L);
    f.rel_bucket.resize(L);
    f.label.resize(L);
    f.timestep.resize(L);
    const int tau = std::min(std::max(ex.timestep, 0), cfg.t_max - 1);
    for (int t = 0; t < L; t++) {
        f.position[t] = std::min(t, cfg.p_max - 1);
        f.rel_bucket[t] = rel_distance_bucket(L - 1 - t, cfg.p_max, cfg.r_buckets);
        int z = ex.label_stamp[t];
        if (z < 0 || z >= cfg.n_labels) {
            fail(errc::index_out_of_range, "label stamp " + std::to_string(z));
        }
        f.label[t] = z;
        f.timestep[t] = tau;
    }
    return f;
}

int conditioning::build_inject(tape & tp, const cond_features & f) {
    int ep = tp.embed_rows(emb_position, f.position);
    int er = tp.embed_rows(emb_rel, f.rel_bucket);
    int ez = tp.embed_rows(emb_label, f.label);
    int et = tp.embed_rows(emb_timestep, f.timestep);
    int e = tp.concat_cols({ep, er, ez, et});
    int h = tp.gelu(tp.linear(e, mlp_w1, &mlp_b1));
    int u = tp.linear(h, mlp_w2, &mlp_b2);
    return tp.linear(u, w_out, nullptr);
}

tensor conditioning::inject_values(const cond_features & f) {
    tape tp;
    return tp.val(build_inject(tp, f));
}

tensor conditioning::inject(const tensor & token_embeddings, const cond_features & f) {
    if (token_embeddings.cols != cfg.d_model ||
        token_embeddings.rows != (int) f.position.size()) {
        fail(errc::dim_mismatch, "inject: embeddings " +
             std::to_string(token_embeddings.rows) + "x" +
             std::to_string(token_embeddings.cols) + " vs features " +
             std::to_string(f.position.size()) + ", width " +
             std::to_string(cfg.d_model));
    }
    tensor add = inject_values(f);
    tensor out = token_embeddings;
    for (size_t i = 0; i < out.size(); i++) {
        out.v[i] += add.v[i];
    }
    return out;
}

std::vector<std::pair<std::string, param *>> conditioning::params() {
    return {
        {emb_position.name, &emb_position},
        {emb_rel.name, &emb_rel},
        {emb_label.name, &emb_label},
        {emb_timestep.name, &emb_timestep},
        {mlp_w1.name, &mlp_w1},
        {mlp_b1.name, &mlp_b1},
        {mlp_w2.name, &mlp_w2},
        {mlp_b2.name, &mlp_b2},
        {w_out.name, &w_out},
    };
}

} // namespace lift
