#include "lift/objectives.hpp"
#include "lift/toylm.hpp"

#include <doctest.h>

#include <cmath>

using namespace lift;

// independent log-softmax, written against the math rather than the library
static double ref_log_prob(const std::vector<double> & z, int target) {
    double mx = z[0];
    for (double x : z) {
        mx = std::max(mx, x);
    }
    double s = 0.0;
    for (double x : z) {
        s += std::exp(x - mx);
    }
    return z[target] - (mx + std::log(s));
}

static tensor random_logits(int rows, int cols, uint64_t seed, double scale = 2.0) {
    rng64 rng(seed);
    tensor t(rows, cols);
    for (auto & x : t.v) {
        x = rng.gaussian() * scale;
    }
    return t;
}

TEST_CASE("prompt cross-entropy against a by-hand recompute") {
    tensor logits = random_logits(5, 4, 11);
    std::vector<int> ids = {2, 0, 3, 1, 2};
    std::vector<uint8_t> mask = {0, 1, 0, 1, 1};

    double want = 0.0;
    int n = 0;
    for (int t = 1; t < 5; t++) {
        if (!mask[t]) {
            continue;
        }
        std::vector<double> row(logits.row_ptr(t - 1), logits.row_ptr(t - 1) + 4);
        want -= ref_log_prob(row, ids[t]);
        n++;
    }
    want /= n;
    CHECK(prompt_ce(logits, ids, mask) == doctest::Approx(want).epsilon(1e-12));

    // mask[0] can never contribute: targets start at t=1
    std::vector<uint8_t> only_first = {1, 0, 0, 0, 0};
    CHECK_THROWS_AS(prompt_ce(logits, ids, only_first), lift_error);
    CHECK_THROWS_AS(prompt_ce(logits, ids, std::vector<uint8_t>(5, 0)), lift_error);
    CHECK_THROWS_AS(prompt_ce(logits, {2, 99, 3, 1, 2}, mask), lift_error);
    // an out-of-vocab id at a masked-out slot is never read
    CHECK(std::isfinite(prompt_ce(logits, {2, 0, 99, 1, 2}, mask)));
}

TEST_CASE("focal terms reduce to plain cross-entropy at gamma zero") {
    for (uint64_t seed = 0; seed < 100; seed++) {
        rng64 rng(seed + 3000);
        tensor row = random_logits(1, 8, seed);
        int gold = (int) rng.below(8);
        std::vector<double> cw(8, 1.0);
        cw[gold] = 0.5 + rng.below(5);
        CHECK(focal_cls(row, gold, 0.0, &cw) ==
              doctest::Approx(plain_cls(row, gold, &cw)).epsilon(1e-12));

        tensor logits = random_logits(6, 8, seed + 500);
        std::vector<int> ids(6);
        std::vector<uint8_t> mask(6, 0);
        for (int t = 0; t < 6; t++) {
            ids[t] = (int) rng.below(8);
            mask[t] = rng.below(2) ? 1 : 0;
        }
        mask[3] = 1;
        CHECK(focal_lm(logits, ids, mask, 0.0) ==
              doctest::Approx(prompt_ce(logits, ids, mask)).epsilon(1e-12));
    }
}

TEST_CASE("focal modulation discounts confident predictions") {
    tensor row(1, 4);
    row.at(0, 2) = 6.0;  // model is already sure about the gold class
    double plain = plain_cls(row, 2);
    double focal = focal_cls(row, 2, 2.0);
    CHECK(focal < plain);
    CHECK(focal < 1e-4);

    // on a wrong confident prediction the discount nearly vanishes
    double plain_wrong = plain_cls(row, 1);
    double focal_wrong = focal_cls(row, 1, 2.0);
    CHECK(focal_wrong > 0.9 * plain_wrong);

    // class weight is a pure scale factor
    std::vector<double> cw = {1.0, 2.5, 1.0, 1.0};
    CHECK(focal_cls(row, 1, 2.0, &cw) == doctest::Approx(2.5 * focal_wrong).epsilon(1e-12));
    CHECK_THROWS_AS(focal_cls(random_logits(2, 4, 1), 0, 2.0), lift_error);
}

TEST_CASE("inverse frequency weights") {
    auto make = [](int label) {
        encoded_example ex;
        ex.label_id = label;
        return ex;
    };
    std::vector<encoded_example> shard = {
        make(1), make(1), make(2), make(3), make(3), make(3), make(0),
    };
    auto w = inverse_freq_weights(shard, 5);
    REQUIRE(w.size() == 5);
    CHECK(w[0] == 0.0);  // the unlabeled id never counts
    CHECK(w[1] == doctest::Approx(6.0 / (3.0 * 2.0)));
    CHECK(w[2] == doctest::Approx(6.0 / (3.0 * 1.0)));
    CHECK(w[3] == doctest::Approx(6.0 / (3.0 * 3.0)));
    CHECK(w[4] == 0.0);

    // weighted mean over the shard is 1: each present class contributes equally
    double mean = 0.0;
    for (auto & ex : shard) {
        if (ex.label_id > 0) {
            mean += w[ex.label_id];
        }
    }
    CHECK(mean / 6.0 == doctest::Approx(1.0));

    CHECK(inverse_freq_weights({}, 4) == std::vector<double>(4, 0.0));
}

// a small labeled example over a 40-token vocabulary
static encoded_example loss_fixture() {
    encoded_example ex;
    ex.input_ids = {4, 17, 9, 22, 3, 30, 12, 7};
    ex.prompt_len = 6;
    ex.prompt_ce_mask = {1, 1, 0, 0, 1, 1, 0, 0};
    ex.output_mask = {0, 0, 0, 0, 0, 0, 1, 1};
    ex.hist_mask = {0, 0, 1, 1, 0, 0, 0, 0};
    ex.label_stamp = {0, 0, 0, 0, 0, 0, 3, 3};
    ex.label_id = 3;
    ex.sequence_key = "fix";
    return ex;
}

struct loss_rig {
    toylm m;
    param head_w, head_b, hist_w, hist_b;
    std::vector<double> cw;

    loss_rig() {
        toylm_config cfg;
        cfg.n_layers = 2;
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.d_ffn = 32;
        cfg.max_positions = 32;
        cfg.vocab_size = 40;
        cfg.seed = 321;
        m = toylm::init(cfg);
        rng64 rng(9);
        head_w.resize(16, 14);
        head_b.resize(1, 14);
        hist_w.resize(16, 14);
        hist_b.resize(1, 14);
        for (param * p : {&head_w, &head_b, &hist_w, &hist_b}) {
            for (auto & x : p->w.v) {
                x = rng.gaussian() * 0.3;
            }
        }
        cw.assign(14, 1.0);
        cw[3] = 1.75;
    }

    loss_nodes run(tape & tp, const encoded_example & ex, const loss_weights & w) {
        int hidden = m.build(tp, ex.input_ids, -1, nullptr, nullptr, nullptr);
        return build_loss(tp, hidden, m.tok_emb, head_w, head_b, hist_w, hist_b, ex, w, cw);
    }
};

TEST_CASE("composite loss agrees with the value-level pieces") {
    loss_rig rig;
    encoded_example ex = loss_fixture();
    loss_weights w;

    tape tp;
    int hidden = rig.m.build(tp, ex.input_ids, -1, nullptr, nullptr, nullptr);
    loss_nodes n = build_loss(tp, hidden, rig.m.tok_emb, rig.head_w, rig.head_b,
                              rig.hist_w, rig.hist_b, ex, w, rig.cw);
    loss_values v = read_loss(tp, n, w);

    const tensor & h = tp.val(hidden);
    tensor logits = matmul_nt(h, rig.m.tok_emb.w);

    CHECK(v.ce_present);
    CHECK(v.ce == doctest::Approx(prompt_ce(logits, ex.input_ids, ex.prompt_ce_mask)).epsilon(1e-9));
    CHECK(v.out == doctest::Approx(focal_lm(logits, ex.input_ids, ex.output_mask, w.gamma)).epsilon(1e-9));

    // classification head reads the last stamped row (the eos here)
    tensor cls_row(1, 14);
    for (int j = 0; j < 14; j++) {
        double s = rig.head_b.w.at(0, j);
        for (int d = 0; d < 16; d++) {
            s += h.at(7, d) * rig.head_w.w.at(d, j);
        }
        cls_row.at(0, j) = s;
    }
    CHECK(v.cls == doctest::Approx(focal_cls(cls_row, 3, w.gamma, &rig.cw)).epsilon(1e-9));

    // history head reads the masked row mean
    tensor hist_row(1, 14);
    for (int j = 0; j < 14; j++) {
        double s = rig.hist_b.w.at(0, j);
        for (int d = 0; d < 16; d++) {
            s += 0.5 * (h.at(2, d) + h.at(3, d)) * rig.hist_w.w.at(d, j);
        }
        hist_row.at(0, j) = s;
    }
    CHECK(v.hist_present);
    CHECK(v.hist == doctest::Approx(focal_cls(hist_row, 3, w.gamma)).epsilon(1e-9));

    double total = 1.0 * v.ce + 1.0 * v.out + 0.5 * v.cls + 0.25 * v.hist;
    CHECK(v.total == doctest::Approx(total).epsilon(1e-9));
}

TEST_CASE("zero-weight terms never reach the tape") {
    loss_rig rig;
    encoded_example ex = loss_fixture();
    loss_weights w;
    w.lambda_ce = 0.0;
    w.lambda_cls = 0.0;
    w.lambda_hist = 0.0;

    tape tp;
    loss_nodes n = rig.run(tp, ex, w);
    CHECK(n.ce == -1);
    CHECK(n.cls == -1);
    CHECK(n.hist == -1);
    CHECK(n.out >= 0);
    loss_values v = read_loss(tp, n, w);
    CHECK(!v.ce_present);
    CHECK(!v.hist_present);
    CHECK(v.total == doctest::Approx(1.0 * v.out));
}

TEST_CASE("degenerate examples") {
    loss_rig rig;
    loss_weights w;

    // history-only prompt: the prompt-CE term quietly drops out
    encoded_example hist_only = loss_fixture();
    hist_only.prompt_ce_mask = {1, 0, 0, 0, 0, 0, 0, 0};
    {
        tape tp;
        loss_nodes n = rig.run(tp, hist_only, w);
        CHECK(n.ce == -1);
        CHECK(!read_loss(tp, n, w).ce_present);
    }

    // no history rows: the pooled-history term drops out
    encoded_example no_hist = loss_fixture();
    no_hist.hist_mask.assign(8, 0);
    {
        tape tp;
        loss_nodes n = rig.run(tp, no_hist, w);
        CHECK(n.hist == -1);
        CHECK(n.cls >= 0);
    }

    // a labeled example must stamp its label somewhere
    encoded_example no_stamp = loss_fixture();
    no_stamp.label_stamp.assign(8, 0);
    {
        tape tp;
        CHECK_THROWS_AS(rig.run(tp, no_stamp, w), lift_error);
    }
    // ...unless the classification term is off entirely
    loss_weights no_cls = w;
    no_cls.lambda_cls = 0.0;
    {
        tape tp;
        loss_nodes n = rig.run(tp, no_stamp, no_cls);
        CHECK(n.cls == -1);
        CHECK(n.out >= 0);
    }
}
