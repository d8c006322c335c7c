#include "lift/common.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace lift {

const char * errc_name(errc c) {
    switch (c) {
        case errc::unknown_label:              return "UnknownLabel";
        case errc::empty_text:                 return "EmptyText";
        case errc::index_out_of_range:         return "IndexOutOfRange";
        case errc::budget_too_small:           return "BudgetTooSmall";
        case errc::not_a_curriculum_dataset:   return "NotACurriculumDataset";
        case errc::span_alignment:             return "SpanAlignment";
        case errc::dim_mismatch:               return "DimMismatch";
        case errc::no_targets_found:           return "NoTargetsFound";
        case errc::rank_shrink:                return "RankShrink";
        case errc::non_finite_loss:            return "NonFiniteLoss";
        case errc::empty_shard:                return "EmptyShard";
        case errc::missing_stage_shard:        return "MissingStageShard";
        case errc::no_stamped_position:        return "NoStampedPosition";
        case errc::insufficient_class_support: return "InsufficientClassSupport";
        case errc::layer_out_of_range:         return "LayerOutOfRange";
        case errc::no_attention_capture:       return "NoAttentionCapture";
        case errc::vocab_overflow:             return "VocabOverflow";
        case errc::length_overflow:            return "LengthOverflow";
        case errc::non_finite:                 return "NonFinite";
        case errc::bad_args:                   return "BadArgs";
        case errc::io_error:                   return "IoError";
    }
    return "UnknownError";
}

void fail(errc c, const std::string & msg) {
    throw lift_error(c, msg);
}

// ---------------------------------------------------------------- rng

static uint64_t splitmix64(uint64_t & x) {
    x += 0x9E3779B97F4A7C15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

void rng64::reseed(uint64_t seed) {
    uint64_t sm = seed;
    for (int i = 0; i < 4; i++) {
        s_[i] = splitmix64(sm);
    }
    have_spare_ = false;
    spare_ = 0.0;
}

static inline uint64_t rotl64(uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

uint64_t rng64::next_u64() {
    const uint64_t result = rotl64(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl64(s_[3], 45);
    return result;
}

double rng64::uniform() {
    // 53 random mantissa bits
    return (double) (next_u64() >> 11) * 0x1.0p-53;
}

uint64_t rng64::below(uint64_t n) {
    if (n == 0) {
        fail(errc::bad_args, "rng64::below(0)");
    }
    // rejection sampling for an unbiased draw
    const uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= lim);
    return x % n;
}

double rng64::gaussian() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) {
        u1 = uniform();
    }
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

rng64 rng64::fork(uint64_t stream) const {
    // derive a child seed from current state and the stream tag
    uint64_t mix = s_[0] ^ rotl64(s_[1], 13) ^ rotl64(s_[2], 29) ^ rotl64(s_[3], 47);
    uint64_t sm = mix ^ (0xA0761D6478BD642Full + stream * 0xE7037ED1A0B428DBull);
    uint64_t seed = splitmix64(sm);
    return rng64(seed);
}

std::vector<uint64_t> rng64::state() const {
    std::vector<uint64_t> st(5);
    for (int i = 0; i < 4; i++) {
        st[i] = s_[i];
    }
    st[4] = have_spare_ ? 1u : 0u;
    // note: a cached gaussian spare is dropped on round-trip; acceptable
    // because state is only captured at step boundaries.
    return st;
}

void rng64::set_state(const std::vector<uint64_t> & st) {
    if (st.size() < 4) {
        fail(errc::bad_args, "rng64 state must have at least 4 words");
    }
    for (int i = 0; i < 4; i++) {
        s_[i] = st[i];
    }
    have_spare_ = false;
}

std::vector<int> derangement(int n, rng64 & rng) {
    if (n < 2) {
        fail(errc::bad_args, "derangement needs n >= 2");
    }
    std::vector<int> p(n);
    while (true) {
        for (int i = 0; i < n; i++) {
            p[i] = i;
        }
        rng.shuffle(p);
        bool ok = true;
        for (int i = 0; i < n; i++) {
            if (p[i] == i) {
                ok = false;
                break;
            }
        }
        if (ok) {
            return p;
        }
    }
}

// ---------------------------------------------------------------- hashing

uint64_t fnv1a64(const void * data, size_t n) {
    const unsigned char * p = (const unsigned char *) data;
    uint64_t h = 0xCBF29CE484222325ull;
    for (size_t i = 0; i < n; i++) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

uint64_t fnv1a64(const std::string & s) {
    return fnv1a64(s.data(), s.size());
}

uint64_t fnv1a64_file(const std::string & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        fail(errc::io_error, "cannot open " + path);
    }
    uint64_t h = 0xCBF29CE484222325ull;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof(buf));
        std::streamsize got = f.gcount();
        for (std::streamsize i = 0; i < got; i++) {
            h ^= (unsigned char) buf[i];
            h *= 0x100000001B3ull;
        }
    }
    return h;
}

std::string hex64(uint64_t h) {
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", (unsigned long long) h);
    return std::string(buf);
}

// ---------------------------------------------------------------- config

static std::string trim(const std::string & s) {
    size_t a = 0;
    size_t b = s.size();
    while (a < b && isspace((unsigned char) s[a])) a++;
    while (b > a && isspace((unsigned char) s[b - 1])) b--;
    return s.substr(a, b - a);
}

config config::load(const std::string & path, bool env_overlay) {
    config c;
    std::ifstream f(path);
    if (!f) {
        fail(errc::io_error, "cannot open config " + path);
    }
    std::string line;
    while (std::getline(f, line)) {
        size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            fail(errc::bad_args, "config line without '=': " + line);
        }
        c.kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    if (env_overlay) {
        c.apply_env_overlay();
    }
    return c;
}

void config::apply_env_overlay() {
    for (auto & [k, v] : kv) {
        std::string env_key = "LIFT_";
        for (char ch : k) {
            env_key += (char) (ch == '.' || ch == '-' ? '_' : toupper((unsigned char) ch));
        }
        const char * ev = getenv(env_key.c_str());
        if (ev) {
            v = ev;
        }
    }
}

std::string config::get(const std::string & key, const std::string & dflt) const {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : it->second;
}

int64_t config::get_int(const std::string & key, int64_t dflt) const {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : (int64_t) strtoll(it->second.c_str(), nullptr, 10);
}

double config::get_double(const std::string & key, double dflt) const {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : strtod(it->second.c_str(), nullptr);
}

bool config::get_bool(const std::string & key, bool dflt) const {
    auto it = kv.find(key);
    if (it == kv.end()) {
        return dflt;
    }
    const std::string & v = it->second;
    return v == "1" || v == "true" || v == "yes" || v == "on";
}

// ---------------------------------------------------------------- io

std::string read_text_file(const std::string & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        fail(errc::io_error, "cannot open " + path);
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text_file(const std::string & path, const std::string & content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        fail(errc::io_error, "cannot write " + path);
    }
    f << content;
}

std::vector<std::string> read_lines(const std::string & path) {
    std::ifstream f(path);
    if (!f) {
        fail(errc::io_error, "cannot open " + path);
    }
    std::vector<std::string> out;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        out.push_back(line);
    }
    return out;
}

bool file_exists(const std::string & path) {
    return std::filesystem::exists(path);
}

void ensure_dir(const std::string & path) {
    std::filesystem::create_directories(path);
}

bool is_finite_num(double x) {
    return std::isfinite(x);
}

} // namespace lift
