#pragma once

#include "fasp/calibration.hpp"
#include "fasp/model.hpp"

namespace fasp {

struct eval_result {
    double perplexity = 0.0;
    int64_t token_count = 0;  // scored next-token positions
};

// exp of the mean next-token negative log-likelihood over non-overlapping
// windows of seq_len tokens (a shorter tail window still counts when it has
// at least one transition). Log-probs in f64 via max-subtracted log-softmax.
eval_result perplexity(const decoder_model& model, const token_sequence& tokens, int seq_len);

struct fidelity_result {
    double logit_gap = 0.0;            // mean Frobenius gap of final logits
    std::vector<double> block_cosine;  // per-block mean output cosine
};

fidelity_result output_fidelity(const decoder_model& ref, const decoder_model& other,
                                const std::vector<token_sequence>& inputs);

// Brute-force least-squares reference: explicit normal equations
// (X_kept X_kept^T) inverted by Gauss-Jordan with partial pivoting. Shares no
// solver code with restore_columns, so agreement between the two is evidence.
matd oracle_least_squares(const matd& w, const matd& x_capture, const index_list& kept);

// Ground truth for coupling exactness: forward pass of the UNPRUNED block
// with the group's column-target columns zeroed, weights otherwise untouched.
matd oracle_zeroed_forward(const decoder_block& block, const prunable_group& grp,
                           const index_list& removed, const matd& x);

struct train_config {
    int steps = 500;
    double lr = 0.05;
    int batch = 4;
    int seq_len = 64;
    uint64_t seed = 0;
    double grad_clip = 1.0;  // global l2 clip applied before every update
};

// Plain seeded SGD on next-token cross-entropy: deterministic per seed, f32
// weights updated from f64 gradients. Throws training_error on divergence.
decoder_model train_toy(const decoder_model& model, const corpus& data, const train_config& cfg);

// The exact window batch train_toy draws at a given step, exposed so tests
// can probe the loss surface the optimizer actually sees.
std::vector<token_sequence> train_batch(const corpus& data, const train_config& cfg, int step);

// Mean next-token negative log-likelihood over the given sequences; the
// quantity train_toy minimizes, exposed so callers can verify progress.
double mean_nll(const decoder_model& model, const std::vector<token_sequence>& batch);

}  // namespace fasp
