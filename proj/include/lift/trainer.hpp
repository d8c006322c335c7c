// trainer.hpp - staged curriculum training loop: adapters + conditioning +
// heads train against the four-term objective over a frozen backbone
#pragma once

#include "lift/adapters.hpp"
#include "lift/builder.hpp"
#include "lift/conditioning.hpp"
#include "lift/encode.hpp"
#include "lift/objectives.hpp"
#include "lift/toylm.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace lift {

struct lift_model {
    toylm lm;
    conditioning cond;
    param head_w, head_b;   // global label head, width = label space size
    param hist_w, hist_b;   // history-pooled head (separate by default)
    label_space labels;

    std::vector<param *> trainable_params();
    int current_adapter_rank() const;   // 0 when no adapters attached
};

lift_model make_model(const toylm_config & lm_cfg, conditioning_config cond_cfg,
                      const label_space & labels, uint64_t head_seed = 7001);

struct trainer_config {
    int epochs = 2;
    int grad_accum = 32;
    double clip = 1.0;            // global grad-norm ceiling
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double val_frac = 0.10;       // split by timeline, not by example
    int ckpt_every = 25;          // optimizer steps between checkpoints
    uint64_t seed = 7;
    loss_weights weights;
    bool adapter_dropout = true;
    std::string run_dir;          // empty: no checkpoints / metrics on disk
};

struct stage_report {
    int stage = 0;
    int steps = 0;
    int train_examples = 0;
    int val_examples = 0;
    double final_val_loss = 0.0;
    double best_val_loss = 0.0;
    int best_step = 0;
    std::string best_ckpt;
    std::vector<double> class_weights;
    double final_lr = 0.0;
};

// adamw over the given params; per-entry update masks gate the whole
// update, so masked entries keep value, moments and decay untouched.
// grads are consumed (zeroed). returns the pre-clip global grad norm.
double adamw_step(std::vector<param *> & params, double lr, int t,
                  const trainer_config & cfg, double grad_scale);

double cosine_lr(double base, int steps_done, int total_steps);

// timeline-level validation split: returns the sequence keys held out
std::vector<std::string> pick_val_keys(const std::vector<encoded_example> & shard,
                                       double val_frac, uint64_t seed);

double validate(lift_model & m, const std::vector<encoded_example> & val,
                const loss_weights & w, const std::vector<double> & class_weights);

stage_report run_stage(lift_model & m, const std::vector<encoded_example> & shard,
                       const curriculum_stage & st, const trainer_config & cfg);

// stages must cover 1..3; MissingStageShard otherwise
std::vector<stage_report> run_curriculum(lift_model & m,
                                         const std::map<int, std::vector<encoded_example>> & shards,
                                         const trainer_config & cfg);

// ---------------- checkpoints ----------------
// a checkpoint stores the trained deltas only (adapters, conditioning,
// heads) plus everything needed to rebuild the frozen backbone by seed.

void save_checkpoint(lift_model & m, const std::string & dir,
                     const nlohmann::json & extra_meta);
lift_model load_checkpoint(const std::string & dir);
nlohmann::json checkpoint_meta(const std::string & dir);

} // namespace lift
