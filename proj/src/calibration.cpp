#include "fasp/calibration.hpp"

#include "fasp/linalg.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace fasp {

namespace {

static_assert(std::endian::native == std::endian::little,
              ".tokens files store little-endian ids");

// 53-bit uniform in [0, 1); avoids distribution objects whose sequences are
// implementation defined, so corpora reproduce across standard libraries.
double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Cumulative zipf mass over ranks 0..vocab-1.
std::vector<double> zipf_cumulative(int vocab, double exponent) {
    std::vector<double> cum(static_cast<size_t>(vocab));
    double total = 0.0;
    for (int r = 0; r < vocab; ++r) {
        total += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
        cum[static_cast<size_t>(r)] = total;
    }
    for (double& c : cum) c /= total;
    cum.back() = 1.0;
    return cum;
}

int sample_rank(const std::vector<double>& cum, std::mt19937_64& rng) {
    const double u = unit_uniform(rng);
    const auto it = std::upper_bound(cum.begin(), cum.end(), u);
    return static_cast<int>(it - cum.begin());
}

void validate_corpus_args(int vocab, size_t n_tokens, double exponent) {
    if (vocab < 2) throw data_error("corpus synthesis needs a vocabulary of at least 2");
    if (n_tokens == 0) throw data_error("corpus synthesis needs a positive token count");
    if (!(exponent > 0.0)) throw data_error("corpus synthesis needs a positive exponent");
}

}  // namespace

corpus load_corpus(const std::filesystem::path& file, int vocab) {
    if (vocab < 2) throw data_error("corpus vocabulary must be at least 2");
    corpus c;
    c.vocab = vocab;

    const std::string ext = file.extension().string();
    if (ext == ".tokens") {
        std::ifstream f(file, std::ios::binary | std::ios::ate);
        if (!f) throw data_error("cannot open corpus " + file.string());
        const auto bytes = static_cast<size_t>(f.tellg());
        if (bytes % sizeof(token_id) != 0) {
            throw data_error("corpus " + file.string() + " is not a whole number of int32 ids");
        }
        c.tokens.resize(bytes / sizeof(token_id));
        f.seekg(0);
        f.read(reinterpret_cast<char*>(c.tokens.data()), static_cast<std::streamsize>(bytes));
        if (!f) throw data_error("short read from corpus " + file.string());
    } else if (ext == ".txt") {
        std::ifstream f(file);
        if (!f) throw data_error("cannot open corpus " + file.string());
        int64_t v;
        while (f >> v) {
            c.tokens.push_back(static_cast<token_id>(v));
        }
        if (!f.eof()) {
            throw data_error("corpus " + file.string() + " contains non-integer text");
        }
    } else {
        throw data_error("corpus " + file.string() + " must end in .tokens or .txt");
    }

    if (c.tokens.empty()) throw data_error("corpus " + file.string() + " is empty");
    for (token_id t : c.tokens) {
        if (t < 0 || t >= vocab) {
            throw data_error("corpus " + file.string() + " holds token " + std::to_string(t) +
                             " outside vocabulary of " + std::to_string(vocab));
        }
    }
    return c;
}

void save_corpus(const corpus& c, const std::filesystem::path& file) {
    const std::string ext = file.extension().string();
    if (ext == ".tokens") {
        std::ofstream f(file, std::ios::binary);
        if (!f) throw data_error("cannot write corpus " + file.string());
        f.write(reinterpret_cast<const char*>(c.tokens.data()),
                static_cast<std::streamsize>(c.tokens.size() * sizeof(token_id)));
        if (!f) throw data_error("short write to corpus " + file.string());
    } else if (ext == ".txt") {
        std::ofstream f(file);
        if (!f) throw data_error("cannot write corpus " + file.string());
        for (size_t i = 0; i < c.tokens.size(); ++i) {
            f << c.tokens[i] << (i + 1 == c.tokens.size() ? '\n' : ' ');
        }
    } else {
        throw data_error("corpus " + file.string() + " must end in .tokens or .txt");
    }
}

corpus synth_zipf_corpus(int vocab, size_t n_tokens, double exponent, uint64_t seed) {
    validate_corpus_args(vocab, n_tokens, exponent);
    const auto cum = zipf_cumulative(vocab, exponent);
    std::mt19937_64 rng(seed);
    corpus c;
    c.vocab = vocab;
    c.tokens.resize(n_tokens);
    for (auto& t : c.tokens) {
        t = static_cast<token_id>(sample_rank(cum, rng));
    }
    return c;
}

corpus synth_bigram_corpus(int vocab, size_t n_tokens, double exponent, uint64_t seed) {
    validate_corpus_args(vocab, n_tokens, exponent);
    if (vocab > 8192) {
        throw resource_error("bigram corpus table for vocabulary " + std::to_string(vocab) +
                             " exceeds the supported size");
    }
    const auto cum = zipf_cumulative(vocab, exponent);

    // Per-state rank-to-token permutation, each shuffled by its own stream so
    // conditionals differ state to state but reproduce for a fixed seed.
    std::vector<std::vector<token_id>> perm(static_cast<size_t>(vocab));
    for (int s = 0; s < vocab; ++s) {
        auto& p = perm[static_cast<size_t>(s)];
        p.resize(static_cast<size_t>(vocab));
        std::iota(p.begin(), p.end(), 0);
        std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(s) + 1);
        for (size_t i = p.size() - 1; i > 0; --i) {
            const size_t j = static_cast<size_t>(rng() % (i + 1));
            std::swap(p[i], p[j]);
        }
    }

    std::mt19937_64 rng(seed);
    corpus c;
    c.vocab = vocab;
    c.tokens.resize(n_tokens);
    token_id state = static_cast<token_id>(sample_rank(cum, rng));
    for (auto& t : c.tokens) {
        t = state;
        state = perm[static_cast<size_t>(state)][static_cast<size_t>(sample_rank(cum, rng))];
    }
    return c;
}

std::vector<token_sequence> sample_corpus(const corpus& c, int n_samples, int seq_len,
                                          uint64_t seed) {
    if (n_samples < 1 || seq_len < 1) {
        throw data_error("calibration sampling needs positive sample count and length");
    }
    if (c.tokens.size() < static_cast<size_t>(seq_len)) {
        throw data_error("corpus of " + std::to_string(c.tokens.size()) +
                         " tokens is shorter than the window of " + std::to_string(seq_len));
    }
    const size_t span = c.tokens.size() - static_cast<size_t>(seq_len);
    std::mt19937_64 rng(seed);
    std::vector<token_sequence> out;
    out.reserve(static_cast<size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        const size_t start =
            span == 0 ? 0 : static_cast<size_t>(unit_uniform(rng) * static_cast<double>(span + 1));
        out.emplace_back(c.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                         c.tokens.begin() + static_cast<std::ptrdiff_t>(start) +
                             static_cast<std::ptrdiff_t>(seq_len));
    }
    return out;
}

layer_stats make_layer_stats(Eigen::Index dim, bool want_gram, const stats_config& cfg) {
    if (dim < 1) throw shape_error("layer stats need a positive feature count");
    if (want_gram && dim > cfg.gram_dim_cap) {
        throw resource_error("gram matrix of dimension " + std::to_string(dim) +
                             " exceeds the cap of " + std::to_string(cfg.gram_dim_cap));
    }
    layer_stats s;
    s.dim = dim;
    s.want_gram = want_gram;
    s.want_mean = cfg.want_mean;
    s.feature_sq = vecd::Zero(dim);
    if (cfg.want_mean) s.feature_sum = vecd::Zero(dim);
    if (want_gram) s.gram = matd::Zero(dim, dim);
    return s;
}

void accumulate_stats(layer_stats& s, const matd& x) {
    if (x.rows() != s.dim) {
        throw shape_error("stats for " + std::to_string(s.dim) + " features fed a chunk with " +
                          std::to_string(x.rows()));
    }
    if (!x.allFinite()) {
        throw data_error("non-finite activation reached the statistics accumulator");
    }
    s.feature_sq += x.array().square().matrix().rowwise().sum();
    if (s.want_mean) s.feature_sum += x.rowwise().sum();
    if (s.want_gram) s.gram = gram_accumulate(s.gram, x);
    s.token_count += x.cols();
}

vecd feature_norms(const layer_stats& s) {
    if (s.token_count == 0) {
        throw data_error("feature norms requested before any calibration tokens were seen");
    }
    return s.feature_sq.cwiseSqrt();
}

vecd feature_means(const layer_stats& s) {
    if (!s.want_mean) {
        throw data_error("first moments were not accumulated for this layer");
    }
    if (s.token_count == 0) {
        throw data_error("feature means requested before any calibration tokens were seen");
    }
    return s.feature_sum / static_cast<double>(s.token_count);
}

std::map<std::string, layer_stats> collect_stats(const decoder_model& model,
                                                 const std::vector<token_sequence>& samples,
                                                 const std::vector<std::string>& qualified_taps,
                                                 const std::set<std::string>& gram_taps,
                                                 const stats_config& cfg) {
    if (samples.empty()) throw data_error("calibration needs at least one sample");
    std::map<std::string, layer_stats> stats;
    for (const auto& sample : samples) {
        capture_map caps;
        forward_model_traced(model, sample, qualified_taps, &caps, nullptr);
        for (const auto& tap : qualified_taps) {
            const matd& x = caps.at(tap);
            auto it = stats.find(tap);
            if (it == stats.end()) {
                it = stats.emplace(tap, make_layer_stats(x.rows(), gram_taps.count(tap) > 0, cfg))
                         .first;
            }
            accumulate_stats(it->second, x);
        }
    }
    return stats;
}

}  // namespace fasp
