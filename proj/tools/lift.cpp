// lift - pipeline driver: corpus -> build -> encode -> train -> eval ->
// probe/attn/patch -> report. every command works inside a run directory
// and keeps its manifest current, so a finished run is self-describing.

#include "lift/evalharness.hpp"
#include "lift/interp.hpp"
#include "lift/synthetic.hpp"
#include "lift/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <unistd.h>

using namespace lift;

static const char * LIFT_VERSION = "0.1.0";

// ---------------------------------------------------------------- helpers

static std::vector<std::string> split_csv(const std::string & s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) {
                out.push_back(cur);
            }
            cur.clear();
        } else if (!isspace((unsigned char) c)) {
            cur += c;
        }
    }
    if (!cur.empty()) {
        out.push_back(cur);
    }
    return out;
}

static std::vector<int> parse_int_list(const std::string & s) {
    std::vector<int> out;
    for (auto & tok : split_csv(s)) {
        out.push_back(std::stoi(tok));
    }
    return out;
}

static std::vector<int> parse_layers(const std::string & s, int n_layers) {
    if (s == "all") {
        std::vector<int> out(n_layers);
        for (int i = 0; i < n_layers; i++) {
            out[i] = i;
        }
        return out;
    }
    return parse_int_list(s);
}

// ---------------------------------------------------------------- manifest

static std::string manifest_path(const std::string & run) {
    return run + "/manifest.json";
}

static nlohmann::json manifest_load(const std::string & run) {
    if (!file_exists(manifest_path(run))) {
        nlohmann::json man;
        man["tool_version"] = LIFT_VERSION;
        man["label_space"] = hex64(label_space::builtin().content_hash());
        man["artifacts"] = nlohmann::json::object();
        man["config"] = nlohmann::json::object();
        man["seeds"] = nlohmann::json::object();
        return man;
    }
    return nlohmann::json::parse(read_text_file(manifest_path(run)));
}

static void manifest_save(const std::string & run, const nlohmann::json & man) {
    write_text_file(manifest_path(run), man.dump(2) + "\n");
}

static void manifest_record(nlohmann::json & man, const std::string & run,
                            const std::string & rel) {
    man["artifacts"][rel] = hex64(fnv1a64_file(run + "/" + rel));
}

// advisory per-run lock: concurrent invocations must use distinct runs
struct run_lock {
    std::string path;
    explicit run_lock(const std::string & run) {
        ensure_dir(run);
        path = run + "/lock";
        if (file_exists(path)) {
            fail(errc::io_error, "run already locked (" + path +
                                     "); concurrent commands need distinct runs");
        }
        write_text_file(path, std::to_string((long) getpid()) + "\n");
    }
    ~run_lock() {
        std::error_code ec;
        std::filesystem::remove(path, ec);
    }
};

static void write_json_artifact(nlohmann::json & man, const std::string & run,
                                const std::string & rel, const nlohmann::json & j) {
    write_text_file(run + "/" + rel, j.dump(2) + "\n");
    manifest_record(man, run, rel);
}

// ---------------------------------------------------------------- corpus

struct corpus_opts {
    std::string run = "run";
    std::string raw_dir;
    bool paper_shape = false;
    uint64_t seed = 2026;
    std::string datasets = "annomi,lrs,talklife,reddit,cmv";
};

static int cmd_corpus(const corpus_opts & o) {
    run_lock lock(o.run);
    nlohmann::json man = manifest_load(o.run);
    label_space ls = label_space::builtin();
    ensure_dir(o.run + "/corpus");

    nlohmann::json stats_all;
    for (auto & name : split_csv(o.datasets)) {
        dataset_id d = parse_dataset(name);
        std::vector<timeline> tls;
        if (!o.raw_dir.empty()) {
            std::vector<timeline_item> items;
            auto lines = read_lines(o.raw_dir + "/" + name + ".jsonl");
            for (size_t i = 0; i < lines.size(); i++) {
                if (lines[i].empty()) {
                    continue;
                }
                items.push_back(standardize(nlohmann::json::parse(lines[i]), d, ls,
                                            (int) i));
            }
            tls = group_and_sort(std::move(items));
        } else {
            synth_options so;
            so.seed = o.seed;
            so.paper_shape = o.paper_shape;
            tls = make_synthetic_timelines(d, ls, so);
        }
        write_items_jsonl(o.run + "/corpus/" + name + ".jsonl", tls);
        manifest_record(man, o.run, "corpus/" + name + ".jsonl");

        dataset_stats st = compute_stats(tls);
        stats_all[name] = {{"timelines", st.timelines},
                           {"posts", st.posts},
                           {"labeled_posts", st.labeled_posts},
                           {"mean_posts_per_timeline", st.mean_posts_per_timeline},
                           {"mean_words_per_post", st.mean_words_per_post},
                           {"labels", st.label_counts}};
        std::cout << "corpus " << name << ": " << st.timelines << " timelines, "
                  << st.posts << " posts, " << st.labeled_posts << " labeled\n";
    }
    write_json_artifact(man, o.run, "corpus/stats.json", stats_all);
    man["seeds"]["corpus"] = o.seed;
    man["config"]["corpus"] = {{"raw_dir", o.raw_dir},
                               {"paper_shape", o.paper_shape},
                               {"seed", o.seed},
                               {"datasets", o.datasets}};
    manifest_save(o.run, man);
    return 0;
}

// ---------------------------------------------------------------- build

struct cli_build_opts {
    std::string run = "run";
    int max_tokens = 2048;
    uint64_t seed = 17;
    int vocab = 4096;
    bool mask_history = false;
    bool no_history_labels = false;
    bool stratified_demos = false;
    std::string templates = "templates";
};

static std::map<dataset_id, std::vector<timeline>> load_corpus_dir(const std::string & run,
                                                                   const label_space & ls) {
    std::map<dataset_id, std::vector<timeline>> out;
    for (dataset_id d : {dataset_id::annomi, dataset_id::lrs, dataset_id::talklife,
                         dataset_id::reddit, dataset_id::cmv}) {
        std::string path = run + "/corpus/" + dataset_name(d) + ".jsonl";
        if (file_exists(path)) {
            out[d] = read_items_jsonl(path, ls);
        }
    }
    if (out.empty()) {
        fail(errc::empty_shard, "no corpus files under " + run + "/corpus");
    }
    return out;
}

static build_options to_build_options(const cli_build_opts & o) {
    build_options b;
    b.max_tokens = o.max_tokens;
    b.seed = o.seed;
    b.history_labels = !o.no_history_labels;
    b.mask_history = o.mask_history;
    b.stratified_demos = o.stratified_demos;
    b.templates_dir = o.templates;
    return b;
}

static int cmd_build(const cli_build_opts & o) {
    run_lock lock(o.run);
    nlohmann::json man = manifest_load(o.run);
    label_space ls = label_space::builtin();
    auto corpus = load_corpus_dir(o.run, ls);

    // word vocabulary from every corpus text plus the instruction templates
    std::vector<std::string> texts;
    for (auto & [d, tls] : corpus) {
        for (auto & tl : tls) {
            for (auto & it : tl.items) {
                texts.push_back(it.text);
            }
        }
        texts.push_back(load_instruction(o.templates, d));
        for (auto & lbl : ls.labels_of(d)) {
            texts.push_back(lbl);
        }
    }
    tokenizer tok = extend_vocab(tokenizer());
    tok.build_word_vocab(texts, o.vocab);
    tok.save(o.run + "/tokenizer.json");
    manifest_record(man, o.run, "tokenizer.json");

    build_options bopt = to_build_options(o);
    ensure_dir(o.run + "/shards");
    nlohmann::json bstats;
    for (const auto & st : default_curriculum()) {
        auto found = corpus.find(st.dataset);
        if (found == corpus.end()) {
            fail(errc::missing_stage_shard,
                 std::string("stage ") + std::to_string(st.stage) + " needs " +
                     dataset_name(st.dataset));
        }
        stage_shard shard = build_stage_shard(found->second, st, tok, bopt);
        std::string rel = "shards/stage" + std::to_string(st.stage) + ".jsonl";
        write_shard_jsonl(o.run + "/" + rel, shard.examples);
        manifest_record(man, o.run, rel);
        bstats["stage" + std::to_string(st.stage)] = {
            {"dataset", dataset_name(st.dataset)},
            {"k_shots", st.k_shots},
            {"examples", shard.stats.examples},
            {"dropped", shard.stats.dropped},
            {"demos_reduced", shard.stats.demos_reduced},
            {"histories_truncated", shard.stats.histories_truncated},
            {"mean_context_tokens", shard.stats.mean_context_tokens},
            {"mean_prompt_tokens", shard.stats.mean_prompt_tokens}};
        std::cout << "stage " << st.stage << " (" << dataset_name(st.dataset)
                  << "): " << shard.stats.examples << " examples, "
                  << shard.stats.dropped << " dropped, "
                  << shard.stats.histories_truncated << " truncated\n";
    }
    write_json_artifact(man, o.run, "shards/build_stats.json", bstats);
    man["seeds"]["build"] = o.seed;
    man["config"]["build"] = {{"max_tokens", o.max_tokens},
                              {"seed", o.seed},
                              {"vocab", o.vocab},
                              {"mask_history", o.mask_history},
                              {"history_labels", !o.no_history_labels},
                              {"stratified_demos", o.stratified_demos},
                              {"templates", o.templates},
                              {"tokenizer_hash", hex64(tok.content_hash())}};
    manifest_save(o.run, man);
    return 0;
}

// ---------------------------------------------------------------- encode

struct encode_opts {
    std::string run = "run";
};

static int cmd_encode(const encode_opts & o) {
    run_lock lock(o.run);
    nlohmann::json man = manifest_load(o.run);
    tokenizer tok = tokenizer::load(o.run + "/tokenizer.json");
    ensure_dir(o.run + "/encoded");
    for (int stage = 1; stage <= 3; stage++) {
        std::string in = o.run + "/shards/stage" + std::to_string(stage) + ".jsonl";
        if (!file_exists(in)) {
            fail(errc::missing_stage_shard, in);
        }
        auto shard = read_shard_jsonl(in);
        std::vector<encoded_example> enc;
        enc.reserve(shard.size());
        for (auto & ex : shard) {
            enc.push_back(encode_example(ex, tok));
        }
        std::string rel = "encoded/stage" + std::to_string(stage) + ".jsonl";
        write_encoded_jsonl(o.run + "/" + rel, enc);
        manifest_record(man, o.run, rel);
        std::cout << "encoded stage " << stage << ": " << enc.size() << " examples\n";
    }
    manifest_save(o.run, man);
    return 0;
}

// ---------------------------------------------------------------- train

struct train_opts {
    std::string run = "run";
    int epochs = 2;
    int accum = 32;
    uint64_t seed = 7;
    double val_frac = 0.10;
    int ckpt_every = 25;
    int d_model = 64;
    int n_layers = 4;
    int n_heads = 4;
    int d_ffn = 256;
    int max_positions = 2048;
    uint64_t lm_seed = 1234;
    bool no_dropout = false;
};

static int cmd_train(const train_opts & o) {
    run_lock lock(o.run);
    nlohmann::json man = manifest_load(o.run);
    tokenizer tok = tokenizer::load(o.run + "/tokenizer.json");
    label_space ls = label_space::builtin();

    toylm_config lmc;
    lmc.n_layers = o.n_layers;
    lmc.d_model = o.d_model;
    lmc.n_heads = o.n_heads;
    lmc.d_ffn = o.d_ffn;
    lmc.max_positions = o.max_positions;
    lmc.vocab_size = tok.vocab_size();
    lmc.seed = o.lm_seed;
    conditioning_config cc;
    cc.p_max = o.max_positions;
    lift_model m = make_model(lmc, cc, ls);

    std::map<int, std::vector<encoded_example>> shards;
    for (int stage = 1; stage <= 3; stage++) {
        std::string path = o.run + "/encoded/stage" + std::to_string(stage) + ".jsonl";
        if (!file_exists(path)) {
            fail(errc::missing_stage_shard, path);
        }
        shards[stage] = read_encoded_jsonl(path);
    }

    trainer_config tc;
    tc.epochs = o.epochs;
    tc.grad_accum = o.accum;
    tc.seed = o.seed;
    tc.val_frac = o.val_frac;
    tc.ckpt_every = o.ckpt_every;
    tc.adapter_dropout = !o.no_dropout;
    tc.run_dir = o.run + "/train";
    ensure_dir(tc.run_dir);

    auto reports = run_curriculum(m, shards, tc);

    nlohmann::json stages = nlohmann::json::array();
    for (size_t i = 0; i < reports.size(); i++) {
        const auto & r = reports[i];
        const auto & st = default_curriculum()[i];
        stages.push_back({{"stage", r.stage},
                          {"dataset", dataset_name(st.dataset)},
                          {"k_shots", st.k_shots},
                          {"lora_rank", st.lora_rank},
                          {"lr", st.lr},
                          {"lr_schedule", st.lr_schedule},
                          {"grad_accum", tc.grad_accum},
                          {"clip", tc.clip},
                          {"ckpt_every", tc.ckpt_every},
                          {"steps", r.steps},
                          {"train_examples", r.train_examples},
                          {"val_examples", r.val_examples},
                          {"best_step", r.best_step},
                          {"best_val_loss", r.best_val_loss},
                          {"final_val_loss", r.final_val_loss},
                          {"best_ckpt", r.best_ckpt}});
        std::cout << "stage " << r.stage << ": shots " << st.k_shots << ", rank "
                  << st.lora_rank << ", lr " << st.lr << " (" << st.lr_schedule
                  << "), steps " << r.steps << ", best val " << r.best_val_loss
                  << " @ step " << r.best_step << "\n";
    }
    man["stages"] = stages;

    save_checkpoint(m, tc.run_dir + "/final", {{"run", o.run}});
    man["model"] = {{"backbone",
                     {{"n_layers", lmc.n_layers},
                      {"d_model", lmc.d_model},
                      {"n_heads", lmc.n_heads},
                      {"d_ffn", lmc.d_ffn},
                      {"max_positions", lmc.max_positions},
                      {"vocab_size", lmc.vocab_size},
                      {"seed", lmc.seed},
                      {"weights_hash", hex64(m.lm.base_weights_hash())}}},
                    {"final_ckpt", tc.run_dir + "/final"}};
    man["seeds"]["train"] = o.seed;
    man["config"]["train"] = {{"epochs", o.epochs},
                              {"grad_accum", o.accum},
                              {"val_frac", o.val_frac},
                              {"ckpt_every", o.ckpt_every},
                              {"seed", o.seed},
                              {"adapter_dropout", !o.no_dropout}};
    manifest_save(o.run, man);
    return 0;
}

// ---------------------------------------------------------------- eval

struct cli_eval_opts {
    std::string run = "run";
    std::string ckpt = "auto";   // auto | base | <checkpoint dir>
    std::string dataset = "talklife";
    std::string shots = "0,1,3";
    std::string mode = "rank";   // rank | generate
    std::string context_src;     // cmv only: conversation | author_all | author_topic
    int limit = 0;
    bool full_label_set = false;
    uint64_t seed = 17;
    int max_tokens = 2048;
    std::string templates = "templates";
    bool mask_history = false;
    bool no_history_labels = false;
};

// base = fresh model around the run's backbone config (or defaults)
static lift_model base_model(const std::string & run, const nlohmann::json & man,
                             const tokenizer & tok) {
    toylm_config lmc;
    conditioning_config cc;
    if (man.contains("model")) {
        const auto & b = man["model"]["backbone"];
        lmc.n_layers = b["n_layers"];
        lmc.d_model = b["d_model"];
        lmc.n_heads = b["n_heads"];
        lmc.d_ffn = b["d_ffn"];
        lmc.max_positions = b["max_positions"];
        lmc.vocab_size = b["vocab_size"];
        lmc.seed = b["seed"];
    } else {
        lmc.vocab_size = tok.vocab_size();
    }
    cc.p_max = lmc.max_positions;
    (void) run;
    return make_model(lmc, cc, label_space::builtin());
}

static lift_model resolve_model(const std::string & run, const nlohmann::json & man,
                                const tokenizer & tok, const std::string & ckpt) {
    if (ckpt == "base") {
        return base_model(run, man, tok);
    }
    if (ckpt == "auto") {
        if (man.contains("model") && man["model"].contains("final_ckpt")) {
            return load_checkpoint(man["model"]["final_ckpt"].get<std::string>());
        }
        fail(errc::bad_args, "run has no trained checkpoint; pass --ckpt");
    }
    return load_checkpoint(ckpt);
}

static std::string model_tag(const std::string & ckpt) {
    return ckpt == "base" ? "base" : "lift";
}

static nlohmann::json per_class_json(const label_space & ls,
                                     const std::map<int, class_metrics> & per_class) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto & [id, cm] : per_class) {
        std::string name = id == 0 ? "NULL" : ls.label_of(id);
        out[name] = {{"support", cm.support},
                     {"precision", cm.precision},
                     {"recall", cm.recall},
                     {"f1", cm.f1}};
    }
    return out;
}

static const reference_row * reference_for(const std::string & ds) {
    for (const auto & r : reference_scores()) {
        if (ds == r.dataset) {
            return &r;
        }
    }
    return nullptr;
}

static int shot_slot(int k) {
    if (k == 0) {
        return 0;
    }
    if (k == 1) {
        return 1;
    }
    if (k == 3) {
        return 2;
    }
    return -1;
}

static int cmd_eval(const cli_eval_opts & o) {
    run_lock lock(o.run);
    nlohmann::json man = manifest_load(o.run);
    tokenizer tok = tokenizer::load(o.run + "/tokenizer.json");
    label_space ls = label_space::builtin();
    dataset_id d = parse_dataset(o.dataset);
    lift_model m = resolve_model(o.run, man, tok, o.ckpt);
    std::string tag = model_tag(o.ckpt);

    auto tls = read_items_jsonl(o.run + "/corpus/" + o.dataset + ".jsonl", ls);

    cli_build_opts bo;
    bo.run = o.run;
    bo.max_tokens = o.max_tokens;
    bo.seed = o.seed;
    bo.mask_history = o.mask_history;
    bo.no_history_labels = o.no_history_labels;
    bo.templates = o.templates;
    build_options bopt = to_build_options(bo);

    demo_pool pool = build_demo_pool(tls, bopt.history_labels,
                                     bopt.mask_history ? 0 : bopt.demo_max_hist);

    ensure_dir(o.run + "/eval");
    std::string csv = "dataset,shots,mode,model,n,accuracy,macro_f1,prompt_hash,"
                      "reference_base,reference_lift\n";

    for (int k : parse_int_list(o.shots)) {
        std::vector<prompt_example> pes;
        int degraded = 0;
        if (o.context_src.empty()) {
            pes = build_eval_examples(tls, d, k, tok, bopt, pool);
        } else {
            if (d != dataset_id::cmv) {
                fail(errc::bad_args, "context sources are a cmv evaluation mode");
            }
            context_source src = parse_context_source(o.context_src);
            for (const auto & tl : tls) {
                for (const auto & it : tl.items) {
                    if (it.label_id == 0) {
                        continue;
                    }
                    context_query q{tl.sequence_key, it.author, it.topic, it.timestamp};
                    bool empty_pool = false;
                    demo_pool p2 = context_source_select(tls, q, src, &empty_pool);
                    degraded += empty_pool && k > 0 ? 1 : 0;
                    auto pe = build_eval_one(tl, it.index, k, tok, bopt, p2, false);
                    if (pe) {
                        pes.push_back(std::move(*pe));
                    }
                }
            }
        }
        if (o.limit > 0 && (int) pes.size() > o.limit) {
            pes.resize(o.limit);
        }
        std::vector<encoded_example> enc;
        enc.reserve(pes.size());
        for (auto & pe : pes) {
            enc.push_back(encode_example(pe, tok));
        }

        eval_options eopt;
        eopt.mode = o.mode == "generate" ? eval_options::decode_mode::generate
                                         : eval_options::decode_mode::likelihood;
        eopt.full_label_set = o.full_label_set;
        eval_result res = evaluate(m, tok, enc, eopt);

        nlohmann::json rep;
        rep["dataset"] = o.dataset;
        rep["shots"] = k;
        rep["decode_mode"] = o.mode;
        rep["model"] = tag;
        rep["ckpt"] = o.ckpt;
        rep["n"] = res.n;
        rep["accuracy"] = res.accuracy;
        rep["macro_f1"] = res.macro;
        rep["per_class"] = per_class_json(ls, res.per_class);
        rep["prompt_hash"] = hex64(res.prompt_hash);
        rep["demo_seed"] = o.seed;
        if (!o.context_src.empty()) {
            rep["context_source"] = o.context_src;
            rep["degraded_to_zero_shot"] = degraded;
        }
        const reference_row * ref = reference_for(o.dataset);
        int slot = shot_slot(k);
        std::string ref_base = "", ref_lift = "";
        if (ref != nullptr && slot >= 0) {
            rep["reference_base"] = ref->base[slot];
            rep["reference_lift"] = ref->lift[slot];
            ref_base = std::to_string(ref->base[slot]);
            ref_lift = std::to_string(ref->lift[slot]);
        }

        std::string suffix = o.context_src.empty() ? "" : "_" + o.context_src;
        std::string rel = "eval/" + o.dataset + "_k" + std::to_string(k) + suffix +
                          "_" + tag + ".json";
        write_json_artifact(man, o.run, rel, rep);
        csv += o.dataset + "," + std::to_string(k) + "," + o.mode + "," + tag + "," +
               std::to_string(res.n) + "," + std::to_string(res.accuracy) + "," +
               std::to_string(res.macro) + "," + hex64(res.prompt_hash) + "," +
               ref_base + "," + ref_lift + "\n";
        std::cout << o.dataset << " k=" << k << " (" << tag << "): macro-f1 "
                  << res.macro << ", accuracy " << res.accuracy << " over " << res.n
                  << " examples\n";
    }

    std::string suffix = o.context_src.empty() ? "" : "_" + o.context_src;
    std::string rel = "eval/" + o.dataset + suffix + "_" + tag + "_report.csv";
    write_text_file(o.run + "/" + rel, csv);
    manifest_record(man, o.run, rel);
    manifest_save(o.run, man);
    return 0;
}

// ---------------------------------------------------------------- interp

struct interp_opts {
    std::string run = "run";
    std::string ckpt = "auto";
    std::string dataset = "talklife";
    std::string layers = "all";
    int shots = 1;
    int limit = 0;
    int folds = 5;
    uint64_t seed = 5;
    int n_examples = 150;
    bool control = false;
    int max_tokens = 2048;
    std::string templates = "templates";
};

static std::vector<prompt_example> interp_pool(const interp_opts & o,
                                               const tokenizer & tok,
                                               const label_space & ls, dataset_id d) {
    auto tls = read_items_jsonl(o.run + "/corpus/" + o.dataset + ".jsonl", ls);
    cli_build_opts bo;
    bo.run = o.run;
    bo.max_tokens = o.max_tokens;
    bo.templates = o.templates;
    build_options bopt = to_build_options(bo);
    demo_pool pool = build_demo_pool(tls, bopt.history_labels, bopt.demo_max_hist);
    auto pes = build_eval_examples(tls, d, o.shots, tok, bopt, pool);
    if (o.limit > 0 && (int) pes.size() > o.limit) {
        pes.resize(o.limit);
    }
    return pes;
}

static int cmd_probe(const interp_opts & o) {
    run_lock lock(o.run);
    nlohmann::json man = manifest_load(o.run);
    tokenizer tok = tokenizer::load(o.run + "/tokenizer.json");
    label_space ls = label_space::builtin();
    dataset_id d = parse_dataset(o.dataset);
    lift_model m = resolve_model(o.run, man, tok, o.ckpt);
    std::string tag = model_tag(o.ckpt);

    auto pes = interp_pool(o, tok, ls, d);
    std::vector<encoded_example> enc;
    for (auto & pe : pes) {
        enc.push_back(encode_example(pe, tok));
    }
    auto layers = parse_layers(o.layers, m.lm.cfg.n_layers);
    auto rows = probe_regions(m, enc, layers, o.folds, o.seed);

    ensure_dir(o.run + "/interp");
    nlohmann::json rep;
    rep["dataset"] = o.dataset;
    rep["model"] = tag;
    rep["folds"] = o.folds;
    rep["seed"] = o.seed;
    rep["shots"] = o.shots;
    nlohmann::json jr = nlohmann::json::array();
    std::string csv = "layer,region,n,accuracy,macro_f1\n";
    for (const auto & r : rows) {
        jr.push_back({{"layer", r.layer},
                      {"region", r.region},
                      {"n", r.n},
                      {"accuracy", r.scores.accuracy},
                      {"macro_f1", r.scores.macro}});
        csv += std::to_string(r.layer) + "," + r.region + "," + std::to_string(r.n) +
               "," + std::to_string(r.scores.accuracy) + "," +
               std::to_string(r.scores.macro) + "\n";
        std::cout << "probe layer " << r.layer << " " << r.region << ": acc "
                  << r.scores.accuracy << ", macro-f1 " << r.scores.macro << "\n";
    }
    rep["rows"] = jr;
    write_json_artifact(man, o.run, "interp/probe_" + o.dataset + "_" + tag + ".json", rep);
    std::string rel = "interp/probe_" + o.dataset + "_" + tag + ".csv";
    write_text_file(o.run + "/" + rel, csv);
    manifest_record(man, o.run, rel);
    manifest_save(o.run, man);
    return 0;
}

static int cmd_attn(const interp_opts & o) {
    run_lock lock(o.run);
    nlohmann::json man = manifest_load(o.run);
    tokenizer tok = tokenizer::load(o.run + "/tokenizer.json");
    label_space ls = label_space::builtin();
    dataset_id d = parse_dataset(o.dataset);
    lift_model m = resolve_model(o.run, man, tok, o.ckpt);
    std::string tag = model_tag(o.ckpt);

    auto pes = interp_pool(o, tok, ls, d);
    std::vector<routing_report> reports;
    for (auto & pe : pes) {
        reports.push_back(attention_routing(m, encode_example(pe, tok)));
    }
    routing_report avg = average_routing(reports);

    ensure_dir(o.run + "/interp");
    nlohmann::json rep;
    rep["dataset"] = o.dataset;
    rep["model"] = tag;
    rep["n"] = (int) reports.size();
    rep["shots"] = o.shots;
    nlohmann::json jl = nlohmann::json::array();
    std::string csv = "layer,instruction,fewshot,hist,curr,other\n";
    std::string rcsv = "layer,bin,mass\n";
    for (size_t l = 0; l < avg.region_mass.size(); l++) {
        const auto & ms = avg.region_mass[l];
        jl.push_back({{"layer", (int) l},
                      {"instruction", ms[0]},
                      {"fewshot", ms[1]},
                      {"hist", ms[2]},
                      {"curr", ms[3]},
                      {"other", ms[4]},
                      {"recency", avg.recency[l]}});
        csv += std::to_string(l);
        for (double v : ms) {
            csv += "," + std::to_string(v);
        }
        csv += "\n";
        for (size_t b = 0; b < avg.recency[l].size(); b++) {
            rcsv += std::to_string(l) + "," + std::to_string(b + 1) + "," +
                    std::to_string(avg.recency[l][b]) + "\n";
        }
        std::cout << "attn layer " << l << ": inst " << ms[0] << ", fewshot " << ms[1]
                  << ", hist " << ms[2] << ", curr " << ms[3] << ", other " << ms[4]
                  << "\n";
    }
    rep["layers"] = jl;
    write_json_artifact(man, o.run, "interp/attn_" + o.dataset + "_" + tag + ".json", rep);
    std::string rel = "interp/attn_" + o.dataset + "_" + tag + ".csv";
    write_text_file(o.run + "/" + rel, csv);
    manifest_record(man, o.run, rel);
    rel = "interp/recency_" + o.dataset + "_" + tag + ".csv";
    write_text_file(o.run + "/" + rel, rcsv);
    manifest_record(man, o.run, rel);
    manifest_save(o.run, man);
    return 0;
}

static int cmd_patch(const interp_opts & o) {
    run_lock lock(o.run);
    nlohmann::json man = manifest_load(o.run);
    tokenizer tok = tokenizer::load(o.run + "/tokenizer.json");
    label_space ls = label_space::builtin();
    dataset_id d = parse_dataset(o.dataset);
    lift_model m = resolve_model(o.run, man, tok, o.ckpt);
    std::string tag = model_tag(o.ckpt);

    auto pes = interp_pool(o, tok, ls, d);
    auto layers = parse_layers(o.layers, m.lm.cfg.n_layers);
    corruption_mode mode =
        o.control ? corruption_mode::clean_control : corruption_mode::shuffled_history;
    patch_report rep = activation_patch(m, tok, pes, layers, o.seed, o.n_examples, mode);

    ensure_dir(o.run + "/interp");
    nlohmann::json j;
    j["dataset"] = o.dataset;
    j["model"] = tag;
    j["mode"] = o.control ? "clean_control" : "shuffled_history";
    j["n"] = rep.n;
    j["seed"] = rep.seed;
    j["clean_macro_f1"] = rep.clean_macro;
    j["shots"] = o.shots;
    nlohmann::json jl = nlohmann::json::array();
    std::string csv = "layer,d_macro_f1,mean_d_gold,mean_d_margin,flip_rate\n";
    for (const auto & pl : rep.layers) {
        jl.push_back({{"layer", pl.layer},
                      {"d_macro_f1", pl.d_macro_f1},
                      {"mean_d_gold", pl.mean_d_gold},
                      {"mean_d_margin", pl.mean_d_margin},
                      {"flip_rate", pl.flip_rate}});
        csv += std::to_string(pl.layer) + "," + std::to_string(pl.d_macro_f1) + "," +
               std::to_string(pl.mean_d_gold) + "," + std::to_string(pl.mean_d_margin) +
               "," + std::to_string(pl.flip_rate) + "\n";
        std::cout << "patch layer " << pl.layer << ": d-macro " << pl.d_macro_f1
                  << ", d-gold " << pl.mean_d_gold << ", d-margin " << pl.mean_d_margin
                  << ", flips " << pl.flip_rate << "\n";
    }
    j["layers"] = jl;
    std::string stem = "interp/patch_" + o.dataset + "_" + tag +
                       (o.control ? "_control" : "");
    write_json_artifact(man, o.run, stem + ".json", j);
    write_text_file(o.run + "/" + stem + ".csv", csv);
    manifest_record(man, o.run, stem + ".csv");
    manifest_save(o.run, man);
    return 0;
}

// ---------------------------------------------------------------- report

struct report_opts {
    std::string run = "run";
};

static std::vector<nlohmann::json> load_json_glob(const std::string & dir,
                                                  const std::string & prefix) {
    std::vector<nlohmann::json> out;
    if (!std::filesystem::exists(dir)) {
        return out;
    }
    std::vector<std::string> paths;
    for (const auto & e : std::filesystem::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        if (name.rfind(prefix, 0) == 0 && name.size() > 5 &&
            name.substr(name.size() - 5) == ".json") {
            paths.push_back(e.path().string());
        }
    }
    std::sort(paths.begin(), paths.end());
    for (const auto & p : paths) {
        out.push_back(nlohmann::json::parse(read_text_file(p)));
    }
    return out;
}

static int cmd_report(const report_opts & o) {
    run_lock lock(o.run);
    nlohmann::json man = manifest_load(o.run);
    ensure_dir(o.run + "/report");

    // headline table: desk results next to the published reference scores
    auto evals = load_json_glob(o.run + "/eval", "");
    std::string results = "dataset,shots,model,decode_mode,n,accuracy,macro_f1,"
                          "prompt_hash,reference_base,reference_lift\n";
    // (dataset, shots, context) -> model -> prompt hash, for the byte-identical
    // prompt guarantee between base and lift rows
    std::map<std::string, std::map<std::string, std::string>> hashes;
    for (const auto & e : evals) {
        if (!e.contains("macro_f1")) {
            continue;
        }
        std::string ds = e["dataset"];
        std::string model = e["model"];
        std::string ctx = e.contains("context_source") ? e["context_source"] : "";
        int k = e["shots"];
        results += ds + "," + std::to_string(k) + "," + model + "," +
                   e["decode_mode"].get<std::string>() + "," +
                   std::to_string(e["n"].get<int>()) + "," +
                   std::to_string(e["accuracy"].get<double>()) + "," +
                   std::to_string(e["macro_f1"].get<double>()) + "," +
                   e["prompt_hash"].get<std::string>() + "," +
                   (e.contains("reference_base")
                        ? std::to_string(e["reference_base"].get<double>())
                        : "") +
                   "," +
                   (e.contains("reference_lift")
                        ? std::to_string(e["reference_lift"].get<double>())
                        : "") +
                   "\n";
        hashes[ds + "|" + std::to_string(k) + "|" + ctx][model] =
            e["prompt_hash"].get<std::string>();
    }
    std::string cmp = "dataset,shots,context,prompts_match\n";
    for (const auto & [key, models] : hashes) {
        auto b = models.find("base");
        auto l = models.find("lift");
        if (b == models.end() || l == models.end()) {
            continue;
        }
        auto parts = key;
        for (auto & c : parts) {
            if (c == '|') {
                c = ',';
            }
        }
        cmp += parts + "," + (b->second == l->second ? "yes" : "NO") + "\n";
    }
    write_text_file(o.run + "/report/results.csv", results);
    manifest_record(man, o.run, "report/results.csv");
    write_text_file(o.run + "/report/prompt_parity.csv", cmp);
    manifest_record(man, o.run, "report/prompt_parity.csv");

    // panel a: probe scores, with lift-minus-base deltas when both exist
    auto probes = load_json_glob(o.run + "/interp", "probe_");
    std::map<std::string, std::map<std::string, double>> probe_acc;
    std::string probe_csv = "dataset,layer,region,model,n,accuracy,macro_f1\n";
    for (const auto & p : probes) {
        std::string ds = p["dataset"];
        std::string model = p["model"];
        for (const auto & r : p["rows"]) {
            probe_csv += ds + "," + std::to_string(r["layer"].get<int>()) + "," +
                         r["region"].get<std::string>() + "," + model + "," +
                         std::to_string(r["n"].get<int>()) + "," +
                         std::to_string(r["accuracy"].get<double>()) + "," +
                         std::to_string(r["macro_f1"].get<double>()) + "\n";
            std::string key = ds + "," + std::to_string(r["layer"].get<int>()) + "," +
                              r["region"].get<std::string>();
            probe_acc[key][model] = r["accuracy"].get<double>();
        }
    }
    std::string delta_csv = "dataset,layer,region,accuracy_delta\n";
    for (const auto & [key, models] : probe_acc) {
        auto b = models.find("base");
        auto l = models.find("lift");
        if (b != models.end() && l != models.end()) {
            delta_csv += key + "," + std::to_string(l->second - b->second) + "\n";
        }
    }
    write_text_file(o.run + "/report/probe.csv", probe_csv);
    manifest_record(man, o.run, "report/probe.csv");
    write_text_file(o.run + "/report/probe_delta.csv", delta_csv);
    manifest_record(man, o.run, "report/probe_delta.csv");

    // panel b: recency profiles; panel d: routing shift
    auto attns = load_json_glob(o.run + "/interp", "attn_");
    std::string rec_csv = "dataset,model,layer,bin,mass\n";
    std::string route_csv = "dataset,model,layer,instruction,fewshot,hist,curr,other\n";
    for (const auto & a : attns) {
        std::string ds = a["dataset"];
        std::string model = a["model"];
        for (const auto & l : a["layers"]) {
            int layer = l["layer"];
            route_csv += ds + "," + model + "," + std::to_string(layer);
            for (const char * k : {"instruction", "fewshot", "hist", "curr", "other"}) {
                route_csv += "," + std::to_string(l[k].get<double>());
            }
            route_csv += "\n";
            const auto & rec = l["recency"];
            for (size_t b = 0; b < rec.size(); b++) {
                rec_csv += ds + "," + model + "," + std::to_string(layer) + "," +
                           std::to_string(b + 1) + "," +
                           std::to_string(rec[b].get<double>()) + "\n";
            }
        }
    }
    write_text_file(o.run + "/report/recency.csv", rec_csv);
    manifest_record(man, o.run, "report/recency.csv");
    write_text_file(o.run + "/report/routing.csv", route_csv);
    manifest_record(man, o.run, "report/routing.csv");

    // panel c: patch harm by layer
    auto patches = load_json_glob(o.run + "/interp", "patch_");
    std::string patch_csv =
        "dataset,model,mode,layer,d_macro_f1,mean_d_gold,mean_d_margin,flip_rate\n";
    for (const auto & p : patches) {
        std::string ds = p["dataset"];
        std::string model = p["model"];
        std::string mode = p["mode"];
        for (const auto & l : p["layers"]) {
            patch_csv += ds + "," + model + "," + mode + "," +
                         std::to_string(l["layer"].get<int>()) + "," +
                         std::to_string(l["d_macro_f1"].get<double>()) + "," +
                         std::to_string(l["mean_d_gold"].get<double>()) + "," +
                         std::to_string(l["mean_d_margin"].get<double>()) + "," +
                         std::to_string(l["flip_rate"].get<double>()) + "\n";
        }
    }
    write_text_file(o.run + "/report/patch.csv", patch_csv);
    manifest_record(man, o.run, "report/patch.csv");

    manifest_save(o.run, man);
    std::cout << "report: " << evals.size() << " eval files, " << probes.size()
              << " probe files, " << attns.size() << " routing files, "
              << patches.size() << " patch files\n";
    return 0;
}

// ---------------------------------------------------------------- main

int main(int argc, char ** argv) {
    CLI::App app{"longitudinal fine-tuning pipeline"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file; flags override");

    corpus_opts co;
    auto * c_corpus = app.add_subcommand("corpus", "standardize or synthesize the corpora");
    c_corpus->add_option("--run", co.run, "run directory");
    c_corpus->add_option("--raw-dir", co.raw_dir, "directory of raw <dataset>.jsonl files");
    c_corpus->add_flag("--paper-shape", co.paper_shape, "published timeline/post totals");
    c_corpus->add_option("--seed", co.seed)->envname("LIFT_SEED");
    c_corpus->add_option("--datasets", co.datasets, "comma list");

    cli_build_opts bo;
    auto * c_build = app.add_subcommand("build", "tokenizer + curriculum stage shards");
    c_build->add_option("--run", bo.run);
    c_build->add_option("--max-tokens", bo.max_tokens)->envname("LIFT_MAX_TOKENS");
    c_build->add_option("--seed", bo.seed)->envname("LIFT_SEED");
    c_build->add_option("--vocab", bo.vocab, "word vocabulary cap");
    c_build->add_flag("--mask-history", bo.mask_history, "ablation: blank history content");
    c_build->add_flag("--no-history-labels", bo.no_history_labels);
    c_build->add_flag("--stratified-demos", bo.stratified_demos);
    c_build->add_option("--templates", bo.templates, "instruction template directory");

    encode_opts eo;
    auto * c_encode = app.add_subcommand("encode", "token ids + region masks per shard");
    c_encode->add_option("--run", eo.run);

    train_opts to;
    auto * c_train = app.add_subcommand("train", "three-stage curriculum training");
    c_train->add_option("--run", to.run);
    c_train->add_option("--epochs", to.epochs);
    c_train->add_option("--accum", to.accum, "gradient accumulation group");
    c_train->add_option("--seed", to.seed)->envname("LIFT_SEED");
    c_train->add_option("--val-frac", to.val_frac);
    c_train->add_option("--ckpt-every", to.ckpt_every);
    c_train->add_option("--d-model", to.d_model);
    c_train->add_option("--layers", to.n_layers);
    c_train->add_option("--heads", to.n_heads);
    c_train->add_option("--ffn", to.d_ffn);
    c_train->add_option("--max-positions", to.max_positions);
    c_train->add_option("--lm-seed", to.lm_seed, "frozen backbone init seed");
    c_train->add_flag("--no-dropout", to.no_dropout);

    cli_eval_opts vo;
    auto * c_eval = app.add_subcommand("eval", "in-context evaluation at k shots");
    c_eval->add_option("--run", vo.run);
    c_eval->add_option("--ckpt", vo.ckpt, "auto | base | checkpoint dir");
    c_eval->add_option("--dataset", vo.dataset);
    c_eval->add_option("--shots", vo.shots, "comma list, e.g. 0,1,3");
    c_eval->add_option("--mode", vo.mode, "rank | generate");
    c_eval->add_option("--context-source", vo.context_src,
                       "cmv demo pools: conversation | author_all | author_topic");
    c_eval->add_option("--limit", vo.limit, "cap examples (0 = all)");
    c_eval->add_flag("--full-label-set", vo.full_label_set);
    c_eval->add_option("--seed", vo.seed)->envname("LIFT_SEED");
    c_eval->add_option("--max-tokens", vo.max_tokens);
    c_eval->add_option("--templates", vo.templates);
    c_eval->add_flag("--mask-history", vo.mask_history);
    c_eval->add_flag("--no-history-labels", vo.no_history_labels);

    interp_opts io;
    auto * c_probe = app.add_subcommand("probe", "linear probes over region states");
    auto * c_attn = app.add_subcommand("attn", "attention routing over prompt regions");
    auto * c_patch = app.add_subcommand("patch", "history activation patching");
    for (auto * c : {c_probe, c_attn, c_patch}) {
        c->add_option("--run", io.run);
        c->add_option("--ckpt", io.ckpt, "auto | base | checkpoint dir");
        c->add_option("--dataset", io.dataset);
        c->add_option("--shots", io.shots);
        c->add_option("--limit", io.limit, "cap examples (0 = all)");
        c->add_option("--max-tokens", io.max_tokens);
        c->add_option("--templates", io.templates);
        c->add_option("--seed", io.seed)->envname("LIFT_SEED");
    }
    c_probe->add_option("--layers", io.layers, "comma list or 'all'");
    c_patch->add_option("--layers", io.layers, "comma list or 'all'");
    c_probe->add_option("--folds", io.folds);
    c_patch->add_option("--n", io.n_examples, "stratified sample size");
    c_patch->add_flag("--control", io.control, "clean-into-clean no-op patch");

    report_opts ro;
    auto * c_report = app.add_subcommand("report", "aggregate CSV/JSON reports");
    c_report->add_option("--run", ro.run);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp & e) {
        return app.exit(e);
    } catch (const CLI::ParseError & e) {
        app.exit(e);
        return 2;
    }

    try {
        if (c_corpus->parsed()) {
            return cmd_corpus(co);
        }
        if (c_build->parsed()) {
            return cmd_build(bo);
        }
        if (c_encode->parsed()) {
            return cmd_encode(eo);
        }
        if (c_train->parsed()) {
            return cmd_train(to);
        }
        if (c_eval->parsed()) {
            return cmd_eval(vo);
        }
        if (c_probe->parsed()) {
            return cmd_probe(io);
        }
        if (c_attn->parsed()) {
            return cmd_attn(io);
        }
        if (c_patch->parsed()) {
            return cmd_patch(io);
        }
        if (c_report->parsed()) {
            return cmd_report(ro);
        }
    } catch (const lift_error & e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == errc::bad_args ? 2 : 1;
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
