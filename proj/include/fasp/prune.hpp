#pragma once

#include "fasp/calibration.hpp"
#include "fasp/model.hpp"

#include <utility>

namespace fasp {

// What happens to channels the metric marks for removal:
//   restore       coupled structural removal + least-squares refit of the
//                 down/fc2 and attention-out projections (the default)
//   no_restore    coupled structural removal only
//   bias_only     structural removal; surviving weights untouched, the
//                 downstream bias absorbs the mean removed contribution
//   zero_columns  no structural removal: every projection independently has
//                 its lowest-scoring input columns zeroed at uniform
//                 sparsity (restoration optional), shapes preserved
//   prune_qk      like restore, but q/k rows are pruned too (jointly, per
//                 head, never refit) instead of being skipped
enum class prune_mode { restore, no_restore, bias_only, zero_columns, prune_qk };

std::string mode_name(prune_mode m);
prune_mode mode_from_name(const std::string& s);

struct prune_mask {
    index_list kept;
    index_list removed;
};

// Partition check + complement; removed must be strictly increasing.
prune_mask make_mask(const index_list& removed, Eigen::Index channels);

struct group_plan {
    int block = 0;
    group_kind kind = group_kind::mlp_channel;
    std::string column_target;
    Eigen::Index channels = 0;
    Eigen::Index remove_count = 0;
    Eigen::Index weight_params_per_channel = 0;
};

struct sparsity_plan {
    double target_sparsity = 0.0;
    double scale_factor = 1.0;
    int64_t params_total = 0;
    int64_t params_prunable = 0;
    int64_t params_removed_planned = 0;
    std::vector<group_plan> groups;
};

// Budgeting: params_total counts every decoder-block projection weight,
// params_prunable only the weights inside non-skipped groups. Each group
// removes round(s * scale_factor * channels) channels, head-partitioned
// counts floored to a multiple of n_heads, then single-channel (or
// single-head-row) greedy adjustments, largest group first, close the gap to
// round(s * params_total). Planned removal must land within 0.5% of target.
sparsity_plan plan_sparsity(const decoder_model& model, double s, bool skip_qk,
                            bool pooled_vo = false);

// score[j] = (sum_i |w_ij|) * featnorm[j]: the column sum of the elementwise
// importance |W_ij| * featnorm_j. One O(m*n) pass.
vecd score_columns(const matf& w, const vecd& featnorm);

// Joint row importance for the q/k pair sharing one input: row r scores
// sum_j |q_rj| fn_j + sum_j |k_rj| fn_j.
vecd score_qk_rows(const matf& qw, const matf& kw, const vecd& featnorm);

// The remove_count smallest scores, ties broken toward the lower index.
prune_mask select_channels(const vecd& scores, Eigen::Index remove_count);

// Equal removal per head slice: remove_count/n_heads smallest within each.
prune_mask select_channels_per_head(const vecd& scores,
                                    const std::vector<Eigen::Index>& head_splits,
                                    Eigen::Index remove_count);

// Structural surgery: the group's column_target loses the removed columns,
// every row_target loses the removed rows and bias elements; value-head
// splits shrink accordingly; the block is re-validated afterwards.
void apply_coupled_prune(decoder_block& block, const prunable_group& grp, const prune_mask& mask);

// Closed-form refit of the surviving columns: returns the m x |kept| matrix
// minimizing ||W' X_kept - W X||_F over calibration data, from the full gram
// G = X X^T as W G_(:,kept) (G_(kept,kept) + delta I)^{-1}, with
// delta = delta_rel * mean(diag G). Computed in f64, returned in f32.
matf restore_columns(const matf& w, const matd& gram, const index_list& kept, double delta_rel);

// Calibration-set objective ||W_new X_kept - W_old X||_F relative to
// ||W_old X||_F, evaluated through the gram matrix.
double restoration_residual(const matf& w_old, const matf& w_new, const matd& gram,
                            const index_list& kept);

struct prune_config {
    prune_mode mode = prune_mode::restore;
    double sparsity = 0.0;
    double delta_rel = 1e-2;
    int calib_samples = 32;
    int calib_seq = 128;
    uint64_t calib_seed = 0;
    bool pooled_vo = false;      // value/output channels chosen across heads (ragged splits)
    bool ablate_restore = true;  // zero_columns only: refit kept columns
    Eigen::Index gram_dim_cap = 8192;
};

struct group_report {
    int block = 0;
    std::string kind;
    std::string column_target;
    Eigen::Index channels = 0;
    Eigen::Index removed_count = 0;
    index_list removed;
    double score_min = 0.0;
    double score_max = 0.0;
    double restore_residual = -1.0;  // negative when no refit ran
};

struct prune_report {
    std::string mode;
    sparsity_plan plan;
    std::vector<group_report> groups;
    int64_t params_removed = 0;
    double achieved_sparsity = 0.0;
    double wall_seconds = 0.0;  // serialized separately from the stable payload
};

// Deterministic JSON payload (no timings); callers add volatile metadata.
std::string report_to_json(const prune_report& r);

// The full pipeline: blocks processed in order; per block the calibration
// windows (re-)propagated through the already-pruned prefix feed scoring,
// selection, surgery, and refit. Structural modes assert, on live
// activations, that pruned-block outputs match the zeroed-column oracle.
std::pair<decoder_model, prune_report> prune_model(const decoder_model& model,
                                                   const corpus& calib,
                                                   const prune_config& cfg);

}  // namespace fasp
