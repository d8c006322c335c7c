// common.hpp - errors, deterministic rng, hashing, config, small io helpers
#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace lift {

// ---------------------------------------------------------------- errors

enum class errc {
    unknown_label,
    empty_text,
    index_out_of_range,
    budget_too_small,
    not_a_curriculum_dataset,
    span_alignment,
    dim_mismatch,
    no_targets_found,
    rank_shrink,
    non_finite_loss,
    empty_shard,
    missing_stage_shard,
    no_stamped_position,
    insufficient_class_support,
    layer_out_of_range,
    no_attention_capture,
    vocab_overflow,
    length_overflow,
    non_finite,
    bad_args,
    io_error,
};

const char * errc_name(errc c);

class lift_error : public std::runtime_error {
public:
    lift_error(errc c, const std::string & msg)
        : std::runtime_error(std::string(errc_name(c)) + ": " + msg), code_(c) {}
    errc code() const { return code_; }

private:
    errc code_;
};

[[noreturn]] void fail(errc c, const std::string & msg);

// ---------------------------------------------------------------- rng
//
// xoshiro256** seeded via splitmix64. fixed algorithm so streams are
// reproducible across platforms and standard library versions.

class rng64 {
public:
    explicit rng64(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed);

    uint64_t next_u64();

    // [0,1)
    double uniform();

    // unbiased integer in [0,n)
    uint64_t below(uint64_t n);

    // standard normal via box-muller, one spare cached
    double gaussian();

    // fisher-yates
    template <typename T> void shuffle(std::vector<T> & v) {
        for (size_t i = v.size(); i > 1; i--) {
            size_t j = (size_t) below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // independent child stream
    rng64 fork(uint64_t stream) const;

    // serializable state
    std::vector<uint64_t> state() const;
    void set_state(const std::vector<uint64_t> & st);

private:
    uint64_t s_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// a permutation of [0,n) with no fixed point (n >= 2), deterministic in seed
std::vector<int> derangement(int n, rng64 & rng);

// ---------------------------------------------------------------- hashing

uint64_t fnv1a64(const void * data, size_t n);
uint64_t fnv1a64(const std::string & s);
uint64_t fnv1a64_file(const std::string & path);
std::string hex64(uint64_t h);

// ---------------------------------------------------------------- config
//
// flat key=value file; '#' comments. env vars LIFT_<UPPERCASED_KEY>
// override file values, explicit set() overrides both.

struct config {
    std::map<std::string, std::string> kv;

    static config load(const std::string & path, bool env_overlay = true);
    void apply_env_overlay();

    bool has(const std::string & key) const { return kv.count(key) != 0; }
    void set(const std::string & key, const std::string & val) { kv[key] = val; }

    std::string get(const std::string & key, const std::string & dflt) const;
    int64_t get_int(const std::string & key, int64_t dflt) const;
    double get_double(const std::string & key, double dflt) const;
    bool get_bool(const std::string & key, bool dflt) const;
};

// ---------------------------------------------------------------- io

std::string read_text_file(const std::string & path);
void write_text_file(const std::string & path, const std::string & content);
std::vector<std::string> read_lines(const std::string & path);
bool file_exists(const std::string & path);
void ensure_dir(const std::string & path);

bool is_finite_num(double x);

} // namespace lift
