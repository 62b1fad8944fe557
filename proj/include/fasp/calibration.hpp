#pragma once

#include "fasp/model.hpp"

#include <filesystem>
#include <set>

namespace fasp {

struct corpus {
    token_sequence tokens;
    int vocab = 0;
};

// .tokens files hold raw little-endian int32 ids; .txt files hold
// whitespace-separated decimal ids. Every id must lie in [0, vocab).
corpus load_corpus(const std::filesystem::path& file, int vocab);
void save_corpus(const corpus& c, const std::filesystem::path& file);

// Rank-frequency corpora for toy experiments. The zipf corpus draws tokens
// iid with p(rank) proportional to 1/(rank+1)^exponent. The bigram corpus
// chains per-state zipf conditionals whose rank-to-token maps are seeded
// permutations, so the previous token genuinely predicts the next one and
// attention has signal worth keeping.
corpus synth_zipf_corpus(int vocab, size_t n_tokens, double exponent, uint64_t seed);
corpus synth_bigram_corpus(int vocab, size_t n_tokens, double exponent, uint64_t seed);

// n_samples contiguous windows of seq_len tokens, start offsets drawn with
// a seeded generator; deterministic for a fixed corpus/seed pair.
std::vector<token_sequence> sample_corpus(const corpus& c, int n_samples, int seq_len,
                                          uint64_t seed);

// Streaming per-layer activation statistics in f64. feature_sq always
// accumulates; the gram matrix only when requested at construction (it is
// what least-squares restoration consumes), the first moment only when the
// config asks for it (bias compensation needs nothing else).
struct layer_stats {
    Eigen::Index dim = 0;
    int64_t token_count = 0;
    vecd feature_sq;
    vecd feature_sum;  // size 0 unless first moments were requested
    matd gram;         // 0x0 unless a gram was requested
    bool want_gram = false;
    bool want_mean = false;
};

struct stats_config {
    bool want_mean = false;
    Eigen::Index gram_dim_cap = 8192;  // refuse quadratic storage above this
};

layer_stats make_layer_stats(Eigen::Index dim, bool want_gram, const stats_config& cfg);
void accumulate_stats(layer_stats& s, const matd& x);

// sqrt of the accumulated per-feature sum of squares: the l2 norm of each
// feature's calibration row.
vecd feature_norms(const layer_stats& s);
vecd feature_means(const layer_stats& s);

// Dense-model convenience: forward every sample, accumulate stats for each
// qualified tap ("blocks.<i>.<layer>"), grams only for taps in gram_taps.
std::map<std::string, layer_stats> collect_stats(const decoder_model& model,
                                                 const std::vector<token_sequence>& samples,
                                                 const std::vector<std::string>& qualified_taps,
                                                 const std::set<std::string>& gram_taps,
                                                 const stats_config& cfg);

}  // namespace fasp
