#include "lift/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace lift {

// ---------------------------------------------------------------- model

std::vector<param *> lift_model::trainable_params() {
    std::vector<param *> out = lm.adapter_params();
    for (auto & [name, p] : cond.params()) {
        out.push_back(p);
    }
    out.push_back(&head_w);
    out.push_back(&head_b);
    out.push_back(&hist_w);
    out.push_back(&hist_b);
    return out;
}

int lift_model::current_adapter_rank() const {
    for (auto & b : lm.blocks) {
        if (b.q.lora) {
            return b.q.lora->rank;
        }
    }
    return 0;
}

lift_model make_model(const toylm_config & lm_cfg, conditioning_config cond_cfg,
                      const label_space & labels, uint64_t head_seed) {
    lift_model m{toylm::init(lm_cfg), {}, {}, {}, {}, {}, labels};
    cond_cfg.n_labels = labels.size();
    cond_cfg.d_model = lm_cfg.d_model;
    m.cond = conditioning::init(cond_cfg);

    rng64 rng(head_seed);
    const int d = lm_cfg.d_model;
    const int k = labels.size();
    m.head_w.name = "head.w";
    m.head_w.resize(d, k);
    m.head_w.init_normal(rng, 0.02);
    m.head_b.name = "head.b";
    m.head_b.resize(1, k);
    m.hist_w.name = "hist_head.w";
    m.hist_w.resize(d, k);
    m.hist_w.init_normal(rng, 0.02);
    m.hist_b.name = "hist_head.b";
    m.hist_b.resize(1, k);
    return m;
}

// ---------------------------------------------------------------- adamw

double adamw_step(std::vector<param *> & params, double lr, int t,
                  const trainer_config & cfg, double grad_scale) {
    // frozen entries contribute nothing: zero their grads first
    for (param * p : params) {
        if (!p->update_mask.empty()) {
            for (size_t i = 0; i < p->g.size(); i++) {
                if (!p->update_mask[i]) {
                    p->g.v[i] = 0.0;
                }
            }
        }
    }
    double sq = 0.0;
    for (param * p : params) {
        for (double g : p->g.v) {
            const double s = g * grad_scale;
            sq += s * s;
        }
    }
    const double norm = std::sqrt(sq);
    double factor = grad_scale;
    if (cfg.clip > 0.0 && norm > cfg.clip) {
        factor *= cfg.clip / norm;
    }

    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (param * p : params) {
        if (p->m.size() != p->w.size()) {
            p->m = tensor(p->w.rows, p->w.cols);
            p->v2 = tensor(p->w.rows, p->w.cols);
        }
        for (size_t i = 0; i < p->w.size(); i++) {
            if (!p->update_mask.empty() && !p->update_mask[i]) {
                continue;   // frozen: value, moments and decay all untouched
            }
            const double g = p->g.v[i] * factor;
            p->m.v[i] = cfg.beta1 * p->m.v[i] + (1.0 - cfg.beta1) * g;
            p->v2.v[i] = cfg.beta2 * p->v2.v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = p->m.v[i] / bc1;
            const double vhat = p->v2.v[i] / bc2;
            p->w.v[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) +
                               cfg.weight_decay * p->w.v[i]);
        }
        p->zero_grad();
    }
    return norm;
}

double cosine_lr(double base, int steps_done, int total_steps) {
    if (total_steps <= 0) {
        return base;
    }
    const double f = (double) steps_done / (double) total_steps;
    return base * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, f)));
}

// ---------------------------------------------------------------- split

std::vector<std::string> pick_val_keys(const std::vector<encoded_example> & shard,
                                       double val_frac, uint64_t seed) {
    std::vector<std::string> keys;
    for (auto & ex : shard) {
        if (std::find(keys.begin(), keys.end(), ex.sequence_key) == keys.end()) {
            keys.push_back(ex.sequence_key);
        }
    }
    if (keys.size() < 2 || val_frac <= 0.0) {
        return {};
    }
    std::sort(keys.begin(), keys.end(), [seed](const std::string & a, const std::string & b) {
        // seed leads so it avalanches through every key byte; as a
        // suffix it would only stir the low bits and barely move the order
        const uint64_t ha = fnv1a64(hex64(seed) + "#" + a);
        const uint64_t hb = fnv1a64(hex64(seed) + "#" + b);
        if (ha != hb) {
            return ha < hb;
        }
        return a < b;
    });
    size_t n_val = (size_t) std::llround(val_frac * (double) keys.size());
    n_val = std::max<size_t>(1, std::min(n_val, keys.size() - 1));
    keys.resize(n_val);
    return keys;
}

// ---------------------------------------------------------------- forward

struct example_pass {
    loss_values values;
};

static example_pass run_example(lift_model & m, const encoded_example & ex,
                                const loss_weights & w,
                                const std::vector<double> & class_weights,
                                rng64 * dropout_rng, bool backward) {
    tape tp;
    cond_features f = m.cond.features(ex);
    int inj = m.cond.build_inject(tp, f);
    int hidden = m.lm.build(tp, ex.input_ids, inj, nullptr, nullptr, dropout_rng);
    loss_nodes nodes = build_loss(tp, hidden, m.lm.tok_emb, m.head_w, m.head_b,
                                  m.hist_w, m.hist_b, ex, w, class_weights);
    example_pass out;
    out.values = read_loss(tp, nodes, w);
    if (!is_finite_num(out.values.total)) {
        fail(errc::non_finite_loss, "sequence '" + ex.sequence_key + "' item " +
             std::to_string(ex.item_index));
    }
    if (backward) {
        tp.backward(nodes.total);
    }
    return out;
}

double validate(lift_model & m, const std::vector<encoded_example> & val,
                const loss_weights & w, const std::vector<double> & class_weights) {
    if (val.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (auto & ex : val) {
        total += run_example(m, ex, w, class_weights, nullptr, false).values.total;
    }
    return total / (double) val.size();
}

// ---------------------------------------------------------------- stage

static void append_metrics(const std::string & run_dir, const nlohmann::json & j) {
    if (run_dir.empty()) {
        return;
    }
    std::ofstream f(run_dir + "/metrics.jsonl", std::ios::app);
    f << j.dump() << "\n";
}

stage_report run_stage(lift_model & m, const std::vector<encoded_example> & shard,
                       const curriculum_stage & st, const trainer_config & cfg) {
    if (shard.empty()) {
        fail(errc::empty_shard, "stage " + std::to_string(st.stage));
    }

    // adapters reach the stage's rank: attach fresh or grow in place
    const int have = m.current_adapter_rank();
    if (have == 0) {
        adapter_config acfg;
        acfg.rank = st.lora_rank;
        acfg.seed = cfg.seed ^ 0xADA97Cull ^ (uint64_t) st.stage;
        attach_adapters(m.lm, acfg);
    } else if (have < st.lora_rank) {
        grow_adapters(m.lm, st.lora_rank, 0.02,
                      cfg.seed ^ 0x6709Bull ^ (uint64_t) st.stage);
    } else if (have > st.lora_rank) {
        fail(errc::rank_shrink, "stage " + std::to_string(st.stage) + " wants rank " +
             std::to_string(st.lora_rank) + " but model has " + std::to_string(have));
    }

    std::vector<std::string> val_keys = pick_val_keys(shard, cfg.val_frac, cfg.seed);
    std::vector<encoded_example> train;
    std::vector<encoded_example> val;
    for (auto & ex : shard) {
        const bool in_val = std::find(val_keys.begin(), val_keys.end(),
                                      ex.sequence_key) != val_keys.end();
        (in_val ? val : train).push_back(ex);
    }
    if (train.empty()) {
        train = shard;   // degenerate tiny shard: train on all, no held-out
        val.clear();
    }

    std::vector<double> class_weights = inverse_freq_weights(train, m.labels.size());
    std::vector<param *> params = m.trainable_params();
    for (param * p : params) {
        p->zero_grad();
        p->m = tensor();
        p->v2 = tensor();
    }

    const int n_train = (int) train.size();
    const int total_steps = (cfg.epochs * n_train + cfg.grad_accum - 1) / cfg.grad_accum;
    const bool cosine = st.lr_schedule == "cosine";

    stage_report rep;
    rep.stage = st.stage;
    rep.train_examples = n_train;
    rep.val_examples = (int) val.size();
    rep.class_weights = class_weights;
    rep.best_val_loss = 1e300;

    std::string stage_dir;
    if (!cfg.run_dir.empty()) {
        stage_dir = cfg.run_dir + "/stage" + std::to_string(st.stage);
        ensure_dir(stage_dir);
    }

    rng64 order_rng(cfg.seed ^ 0x5EED5EEDull ^ ((uint64_t) st.stage << 32));
    rng64 dropout_rng(cfg.seed ^ 0xD20900Full ^ ((uint64_t) st.stage << 16));

    auto run_validation = [&](int step, double lr_now) {
        const double vl = val.empty()
            ? 0.0 : validate(m, val, cfg.weights, class_weights);
        append_metrics(cfg.run_dir, {{"stage", st.stage}, {"step", step},
                                     {"val_loss", vl}, {"lr", lr_now}});
        return vl;
    };
    auto checkpoint = [&](int step, double vl) {
        if (stage_dir.empty()) {
            return std::string();
        }
        char name[32];
        snprintf(name, sizeof(name), "step%06d", step);
        std::string dir = stage_dir + "/" + name;
        save_checkpoint(m, dir, {{"stage", st.stage}, {"step", step},
                                 {"val_loss", vl},
                                 {"lr_schedule", st.lr_schedule},
                                 {"class_weights", class_weights}});
        return dir;
    };

    int step = 0;
    int group_n = 0;
    double group_loss = 0.0;
    double group_ce = 0.0;
    double group_out = 0.0;
    double group_cls = 0.0;
    double group_hist = 0.0;
    double lr_now = st.lr;

    auto optimizer_step = [&]() {
        if (group_n == 0) {
            return;
        }
        lr_now = cosine ? cosine_lr(st.lr, step, total_steps) : st.lr;
        const double gnorm = adamw_step(params, lr_now, step + 1, cfg,
                                        1.0 / (double) group_n);
        step++;
        append_metrics(cfg.run_dir,
                       {{"stage", st.stage}, {"step", step}, {"lr", lr_now},
                        {"loss", group_loss / group_n}, {"ce", group_ce / group_n},
                        {"out", group_out / group_n}, {"cls", group_cls / group_n},
                        {"hist", group_hist / group_n}, {"grad_norm", gnorm}});
        group_n = 0;
        group_loss = group_ce = group_out = group_cls = group_hist = 0.0;

        if (cfg.ckpt_every > 0 && step % cfg.ckpt_every == 0) {
            const double vl = run_validation(step, lr_now);
            std::string dir = checkpoint(step, vl);
            if (!val.empty() && vl < rep.best_val_loss) {
                rep.best_val_loss = vl;
                rep.best_step = step;
                rep.best_ckpt = dir;
            }
        }
    };

    for (int epoch = 0; epoch < cfg.epochs; epoch++) {
        std::vector<int> order(n_train);
        for (int i = 0; i < n_train; i++) {
            order[i] = i;
        }
        rng64 erng = order_rng.fork((uint64_t) epoch);
        erng.shuffle(order);
        for (int idx : order) {
            example_pass pass = run_example(m, train[idx], cfg.weights, class_weights,
                                            cfg.adapter_dropout ? &dropout_rng : nullptr,
                                            true);
            group_n++;
            group_loss += pass.values.total;
            group_ce += pass.values.ce;
            group_out += pass.values.out;
            group_cls += pass.values.cls;
            group_hist += pass.values.hist;
            if (group_n == cfg.grad_accum) {
                optimizer_step();
            }
        }
    }
    optimizer_step();   // flush a trailing partial group

    // stage-end validation + checkpoint, always
    const double vl = val.empty()
        ? 0.0 : validate(m, val, cfg.weights, class_weights);
    append_metrics(cfg.run_dir, {{"stage", st.stage}, {"step", step},
                                 {"val_loss", vl}, {"lr", lr_now}, {"final", true}});
    std::string dir = checkpoint(step, vl);
    if (rep.best_ckpt.empty() || (!val.empty() && vl < rep.best_val_loss)) {
        rep.best_val_loss = vl;
        rep.best_step = step;
        rep.best_ckpt = dir;
    }
    rep.steps = step;
    rep.final_val_loss = vl;
    rep.final_lr = lr_now;
    return rep;
}

std::vector<stage_report> run_curriculum(lift_model & m,
                                         const std::map<int, std::vector<encoded_example>> & shards,
                                         const trainer_config & cfg) {
    std::vector<stage_report> reports;
    for (auto & st : default_curriculum()) {
        auto it = shards.find(st.stage);
        if (it == shards.end() || it->second.empty()) {
            fail(errc::missing_stage_shard, "stage " + std::to_string(st.stage));
        }
        reports.push_back(run_stage(m, it->second, st, cfg));
    }
    return reports;
}

// ---------------------------------------------------------------- ckpt

static std::vector<std::pair<std::string, param *>> saved_params(lift_model & m) {
    std::vector<std::pair<std::string, param *>> out;
    for (linear_proj * p : m.lm.projections(true, true)) {
        if (p->lora) {
            out.push_back({p->lora->a.name, &p->lora->a});
            out.push_back({p->lora->b.name, &p->lora->b});
        }
    }
    for (auto & [name, p] : m.cond.params()) {
        out.push_back({name, p});
    }
    out.push_back({m.head_w.name, &m.head_w});
    out.push_back({m.head_b.name, &m.head_b});
    out.push_back({m.hist_w.name, &m.hist_w});
    out.push_back({m.hist_b.name, &m.hist_b});
    return out;
}

void save_checkpoint(lift_model & m, const std::string & dir,
                     const nlohmann::json & extra_meta) {
    ensure_dir(dir);
    auto params = saved_params(m);

    nlohmann::json tensors = nlohmann::json::array();
    std::ofstream bin(dir + "/tensors.bin", std::ios::binary);
    if (!bin) {
        fail(errc::io_error, "cannot write " + dir + "/tensors.bin");
    }
    for (auto & [name, p] : params) {
        tensors.push_back({{"name", name}, {"rows", p->w.rows}, {"cols", p->w.cols}});
        bin.write((const char *) p->w.v.data(),
                  (std::streamsize) (p->w.size() * sizeof(double)));
    }
    bin.close();

    int rank = m.current_adapter_rank();
    int frozen = 0;
    double alpha = 0.0;
    double dropout = 0.0;
    for (auto & b : m.lm.blocks) {
        if (b.q.lora) {
            frozen = b.q.lora->frozen_prefix;
            alpha = b.q.lora->alpha;
            dropout = b.q.lora->dropout;
            break;
        }
    }

    nlohmann::json meta = {
        {"format", 1},
        {"backbone", {
            {"n_layers", m.lm.cfg.n_layers}, {"d_model", m.lm.cfg.d_model},
            {"n_heads", m.lm.cfg.n_heads}, {"d_ffn", m.lm.cfg.d_ffn},
            {"max_positions", m.lm.cfg.max_positions},
            {"vocab_size", m.lm.cfg.vocab_size}, {"seed", m.lm.cfg.seed},
            {"weights_hash", hex64(m.lm.base_weights_hash())},
        }},
        {"conditioning", {
            {"d_e", m.cond.cfg.d_e}, {"d_h", m.cond.cfg.d_h},
            {"r_buckets", m.cond.cfg.r_buckets}, {"t_max", m.cond.cfg.t_max},
            {"p_max", m.cond.cfg.p_max}, {"n_labels", m.cond.cfg.n_labels},
            {"d_model", m.cond.cfg.d_model}, {"seed", m.cond.cfg.seed},
        }},
        {"adapters", {
            {"rank", rank}, {"frozen_prefix", frozen},
            {"alpha", alpha}, {"dropout", dropout},
        }},
        {"label_space", m.labels.to_json()},
        {"tensors", tensors},
    };
    for (auto & [k, v] : extra_meta.items()) {
        meta[k] = v;
    }
    write_text_file(dir + "/meta.json", meta.dump(2) + "\n");
}

nlohmann::json checkpoint_meta(const std::string & dir) {
    return nlohmann::json::parse(read_text_file(dir + "/meta.json"));
}

lift_model load_checkpoint(const std::string & dir) {
    nlohmann::json meta = checkpoint_meta(dir);
    const auto & bb = meta.at("backbone");
    toylm_config lm_cfg;
    lm_cfg.n_layers = bb.at("n_layers").get<int>();
    lm_cfg.d_model = bb.at("d_model").get<int>();
    lm_cfg.n_heads = bb.at("n_heads").get<int>();
    lm_cfg.d_ffn = bb.at("d_ffn").get<int>();
    lm_cfg.max_positions = bb.at("max_positions").get<int>();
    lm_cfg.vocab_size = bb.at("vocab_size").get<int>();
    lm_cfg.seed = bb.at("seed").get<uint64_t>();

    const auto & cj = meta.at("conditioning");
    conditioning_config cond_cfg;
    cond_cfg.d_e = cj.at("d_e").get<int>();
    cond_cfg.d_h = cj.at("d_h").get<int>();
    cond_cfg.r_buckets = cj.at("r_buckets").get<int>();
    cond_cfg.t_max = cj.at("t_max").get<int>();
    cond_cfg.p_max = cj.at("p_max").get<int>();
    cond_cfg.n_labels = cj.at("n_labels").get<int>();
    cond_cfg.d_model = cj.at("d_model").get<int>();
    cond_cfg.seed = cj.at("seed").get<uint64_t>();

    label_space ls = label_space::from_json(meta.at("label_space"));
    lift_model m = make_model(lm_cfg, cond_cfg, ls);

    const std::string stored_hash = bb.at("weights_hash").get<std::string>();
    if (hex64(m.lm.base_weights_hash()) != stored_hash) {
        fail(errc::bad_args, "backbone rebuilt from seed does not match checkpoint hash");
    }

    const auto & aj = meta.at("adapters");
    const int rank = aj.at("rank").get<int>();
    if (rank > 0) {
        adapter_config acfg;
        acfg.rank = rank;
        acfg.dropout = aj.at("dropout").get<double>();
        attach_adapters(m.lm, acfg);
        const int frozen = aj.at("frozen_prefix").get<int>();
        const double alpha = aj.at("alpha").get<double>();
        for (linear_proj * p : m.lm.projections(true, true)) {
            if (p->lora) {
                p->lora->frozen_prefix = frozen;
                p->lora->alpha = alpha;
            }
        }
        refresh_freeze_masks(m.lm);
    }

    auto params = saved_params(m);
    std::ifstream bin(dir + "/tensors.bin", std::ios::binary);
    if (!bin) {
        fail(errc::io_error, "cannot open " + dir + "/tensors.bin");
    }
    size_t i = 0;
    for (auto & tj : meta.at("tensors")) {
        if (i >= params.size()) {
            fail(errc::bad_args, "checkpoint lists more tensors than the model holds");
        }
        auto & [name, p] = params[i];
        if (tj.at("name").get<std::string>() != name ||
            tj.at("rows").get<int>() != p->w.rows ||
            tj.at("cols").get<int>() != p->w.cols) {
            fail(errc::dim_mismatch, "checkpoint tensor '" +
                 tj.at("name").get<std::string>() + "' does not match model slot '" +
                 name + "'");
        }
        bin.read((char *) p->w.v.data(), (std::streamsize) (p->w.size() * sizeof(double)));
        if (!bin) {
            fail(errc::io_error, "short read in tensors.bin");
        }
        i++;
    }
    if (i != params.size()) {
        fail(errc::bad_args, "checkpoint holds fewer tensors than the model");
    }
    return m;
}

} // namespace lift
