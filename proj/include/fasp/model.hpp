#pragma once

#include "fasp/types.hpp"

#include <map>
#include <string>
#include <vector>

namespace fasp {

// Variance floor shared by layer norm and rms norm (and their gradients).
inline constexpr double k_norm_eps = 1e-5;

enum class arch_family { opt_style, llama_style };

std::string family_name(arch_family f);
arch_family family_from_name(const std::string& s);

struct arch_spec {
    arch_family family = arch_family::opt_style;
    int d_model = 0;
    int d_hidden = 0;
    int n_heads = 0;
    int n_blocks = 0;
    int vocab = 0;
    int max_seq = 0;
};

// Throws data_error when a field violates the architecture invariants.
void validate_spec(const arch_spec& spec);

struct linear_layer {
    matf w;  // out x in
    vecf b;  // size 0 when the layer carries no bias
    bool has_bias() const { return b.size() > 0; }
};

struct norm_params {
    vecf gamma;
    vecf beta;  // size 0 for rms norm
    bool rms = false;
};

// One decoder block. Projections are keyed by short name:
//   opt_style:   q k v o fc1 fc2
//   llama_style: q k v o up gate down
// v_head_splits records how many V rows each head owns; equal by default,
// ragged only after pooled value/output pruning.
struct decoder_block {
    arch_family family = arch_family::opt_style;
    int n_heads = 1;
    std::map<std::string, linear_layer> proj;
    norm_params attn_norm;
    norm_params mlp_norm;
    std::vector<Eigen::Index> v_head_splits;

    const linear_layer& at(const std::string& name) const;
    linear_layer& at(const std::string& name);
};

struct decoder_model {
    arch_spec spec;
    matf tok_embedding;  // d x vocab
    matf pos_embedding;  // d x max_seq
    std::vector<decoder_block> blocks;
    norm_params final_norm;
    matf unembed;  // vocab x d
};

// Structural consistency of one block against the model width. Throws
// internal_error naming the offending tensor.
void validate_block(const decoder_block& block, int d_model, const std::string& context);
void validate_model(const decoder_model& model);

// Seeded Gaussian init, every weight scaled 1/sqrt(fan_in); biases zero,
// norm gains one. Identical seed gives a bit-identical model.
decoder_model build_model(const arch_spec& spec, uint64_t seed);

// Normalization applied per token column.
matd apply_norm(const norm_params& norm, const matd& x);

using capture_map = std::map<std::string, matd>;

// Pre-norm causal attention + MLP with residual adds, f64 activations.
// `taps` names projections whose exact input matrix is copied into
// `captures` under the same short name.
matd forward_block(const decoder_block& block, const matd& x,
                   const std::vector<std::string>& taps = {}, capture_map* captures = nullptr);

// Embedding lookup plus learned absolute positions, f64.
matd embed_tokens(const decoder_model& model, const token_sequence& tokens);

// vocab x seq logits. Deterministic for fixed model and tokens.
matd forward_model(const decoder_model& model, const token_sequence& tokens);

// Same, with per-block outputs (post residual) appended to block_outputs
// and qualified captures ("blocks.<i>.<layer>") when taps are given.
matd forward_model_traced(const decoder_model& model, const token_sequence& tokens,
                          const std::vector<std::string>& qualified_taps, capture_map* captures,
                          std::vector<matd>* block_outputs);

enum class group_kind { mlp_channel, attn_vo_channel, attn_qk_channel };

std::string group_kind_name(group_kind k);

// One coupled removal unit: dropping channel i deletes column i of
// column_target together with row i (and bias element i) of every row
// target. The q/k pair has no column target; its rows pair with each other.
struct prunable_group {
    group_kind kind = group_kind::mlp_channel;
    std::string column_target;
    std::vector<std::string> row_targets;
    Eigen::Index channels = 0;
    Eigen::Index params_per_channel = 0;         // includes bias elements
    Eigen::Index weight_params_per_channel = 0;  // matrix entries only
    int n_heads = 0;                             // >0: selection confined per head slice
    std::vector<Eigen::Index> head_splits;
};

struct coupling_graph {
    std::vector<prunable_group> groups;
    std::vector<std::string> skipped;
};

coupling_graph build_coupling_graph(const decoder_block& block, bool skip_qk);

}  // namespace fasp
