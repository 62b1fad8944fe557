#include "fasp/prune.hpp"

#include "fasp/evaluate.hpp"
#include "fasp/linalg.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <set>

namespace fasp {

namespace {

using json = nlohmann::ordered_json;

constexpr double k_coupling_tol = 1e-12;
constexpr double k_accounting_tol = 0.005;

int64_t block_weight_count(const decoder_block& block) {
    int64_t n = 0;
    for (const auto& [name, layer] : block.proj) n += layer.w.size();
    return n;
}

int64_t model_weight_count(const decoder_model& model) {
    int64_t n = 0;
    for (const auto& block : model.blocks) n += block_weight_count(block);
    return n;
}

bool head_partitioned(const prunable_group& grp, bool pooled_vo) {
    if (grp.kind == group_kind::attn_qk_channel) return true;
    if (grp.kind == group_kind::attn_vo_channel) return !pooled_vo;
    return false;
}

std::string group_label(int block, const std::string& column_target) {
    return "blocks." + std::to_string(block) + "." +
           (column_target.empty() ? std::string("q/k") : column_target);
}

}  // namespace

std::string mode_name(prune_mode m) {
    switch (m) {
        case prune_mode::restore: return "restore";
        case prune_mode::no_restore: return "no-restore";
        case prune_mode::bias_only: return "bias-only";
        case prune_mode::zero_columns: return "zero-columns";
        case prune_mode::prune_qk: return "prune-qk";
    }
    return "?";
}

prune_mode mode_from_name(const std::string& s) {
    if (s == "restore") return prune_mode::restore;
    if (s == "no-restore") return prune_mode::no_restore;
    if (s == "bias-only") return prune_mode::bias_only;
    if (s == "zero-columns") return prune_mode::zero_columns;
    if (s == "prune-qk") return prune_mode::prune_qk;
    throw data_error("unknown prune mode '" + s +
                     "' (restore, no-restore, bias-only, zero-columns, prune-qk)");
}

prune_mask make_mask(const index_list& removed, Eigen::Index channels) {
    check_gather_indices(removed, channels, "channel");
    prune_mask mask;
    mask.removed = removed;
    mask.kept = complement_indices(removed, channels);
    return mask;
}

sparsity_plan plan_sparsity(const decoder_model& model, double s, bool skip_qk, bool pooled_vo) {
    if (!(s >= 0.0) || s >= 1.0) {
        throw plan_error("target sparsity must lie in [0, 1), got " + std::to_string(s));
    }

    sparsity_plan plan;
    plan.target_sparsity = s;
    plan.params_total = model_weight_count(model);

    struct working_group {
        group_plan gp;
        Eigen::Index unit = 1;  // removal granularity (n_heads for partitioned groups)
        Eigen::Index cap = 0;   // largest legal remove_count
    };
    std::vector<working_group> work;

    for (size_t b = 0; b < model.blocks.size(); ++b) {
        const coupling_graph graph = build_coupling_graph(model.blocks[b], skip_qk);
        for (const auto& grp : graph.groups) {
            working_group wg;
            wg.gp.block = static_cast<int>(b);
            wg.gp.kind = grp.kind;
            wg.gp.column_target = grp.column_target;
            wg.gp.channels = grp.channels;
            wg.gp.weight_params_per_channel = grp.weight_params_per_channel;
            wg.unit = head_partitioned(grp, pooled_vo) ? grp.n_heads : 1;
            wg.cap = grp.channels - wg.unit;  // one channel per head always survives
            work.push_back(std::move(wg));
            plan.params_prunable += grp.channels * grp.weight_params_per_channel;
        }
    }

    if (plan.params_prunable == 0) {
        if (s > 0.0) throw plan_error("model has no prunable groups");
        plan.scale_factor = 1.0;
        return plan;
    }

    plan.scale_factor =
        static_cast<double>(plan.params_total) / static_cast<double>(plan.params_prunable);
    const double f = s * plan.scale_factor;

    int64_t planned = 0;
    for (auto& wg : work) {
        Eigen::Index remove =
            static_cast<Eigen::Index>(std::llround(f * static_cast<double>(wg.gp.channels)));
        remove = (remove / wg.unit) * wg.unit;  // partitioned groups move in whole-head steps
        if (remove > wg.cap) {
            throw plan_error("sparsity " + std::to_string(s) + " would empty group " +
                             group_label(wg.gp.block, wg.gp.column_target));
        }
        wg.gp.remove_count = remove;
        planned += remove * wg.gp.weight_params_per_channel;
    }

    // Close the rounding gap to the global parameter target with single-unit
    // moves, trying the heaviest groups first so one step makes the most of
    // the remaining distance.
    const int64_t target = std::llround(s * static_cast<double>(plan.params_total));
    std::vector<size_t> order(work.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return work[a].gp.channels * work[a].gp.weight_params_per_channel >
               work[b].gp.channels * work[b].gp.weight_params_per_channel;
    });
    for (bool improved = true; improved;) {
        improved = false;
        for (size_t i : order) {
            auto& wg = work[i];
            const int64_t step = wg.unit * wg.gp.weight_params_per_channel;
            for (int64_t delta : {step, -step}) {
                const Eigen::Index next =
                    wg.gp.remove_count + (delta > 0 ? wg.unit : -wg.unit);
                if (next < 0 || next > wg.cap) continue;
                if (std::llabs(planned + delta - target) < std::llabs(planned - target)) {
                    wg.gp.remove_count = next;
                    planned += delta;
                    improved = true;
                    break;
                }
            }
            if (improved) break;
        }
    }

    plan.params_removed_planned = planned;
    for (auto& wg : work) plan.groups.push_back(wg.gp);

    const double achieved = static_cast<double>(planned) / static_cast<double>(plan.params_total);
    if (std::abs(achieved - s) > k_accounting_tol) {
        throw plan_error("planned sparsity " + std::to_string(achieved) +
                         " misses the target " + std::to_string(s) + " by more than 0.5%");
    }
    return plan;
}

vecd score_columns(const matf& w, const vecd& featnorm) {
    if (featnorm.size() != w.cols()) {
        throw shape_error("score_columns: " + std::to_string(featnorm.size()) +
                          " feature norms for " + std::to_string(w.cols()) + " columns");
    }
    if ((featnorm.array() < 0.0).any()) {
        throw data_error("score_columns: feature norms must be nonnegative");
    }
    vecd acc = vecd::Zero(w.cols());
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        acc += w.row(i).cwiseAbs().cast<double>().transpose();
    }
    return acc.cwiseProduct(featnorm);
}

vecd score_qk_rows(const matf& qw, const matf& kw, const vecd& featnorm) {
    if (qw.rows() != kw.rows() || qw.cols() != kw.cols()) {
        throw shape_error("score_qk_rows: q and k shapes differ");
    }
    if (featnorm.size() != qw.cols()) {
        throw shape_error("score_qk_rows: " + std::to_string(featnorm.size()) +
                          " feature norms for " + std::to_string(qw.cols()) + " inputs");
    }
    if ((featnorm.array() < 0.0).any()) {
        throw data_error("score_qk_rows: feature norms must be nonnegative");
    }
    vecd out(qw.rows());
    for (Eigen::Index r = 0; r < qw.rows(); ++r) {
        out[r] = qw.row(r).cwiseAbs().cast<double>().dot(featnorm) +
                 kw.row(r).cwiseAbs().cast<double>().dot(featnorm);
    }
    return out;
}

prune_mask select_channels(const vecd& scores, Eigen::Index remove_count) {
    const Eigen::Index n = scores.size();
    if (remove_count < 0 || remove_count >= n) {
        throw plan_error("cannot remove " + std::to_string(remove_count) + " of " +
                         std::to_string(n) + " channels");
    }
    if (!scores.allFinite()) {
        throw data_error("channel scores contain non-finite values");
    }
    index_list order(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return scores[a] < scores[b]; });
    index_list removed(order.begin(), order.begin() + remove_count);
    std::sort(removed.begin(), removed.end());
    return make_mask(removed, n);
}

prune_mask select_channels_per_head(const vecd& scores,
                                    const std::vector<Eigen::Index>& head_splits,
                                    Eigen::Index remove_count) {
    Eigen::Index total = 0;
    for (Eigen::Index s : head_splits) total += s;
    if (total != scores.size()) {
        throw shape_error("head splits cover " + std::to_string(total) + " channels, scores " +
                          std::to_string(scores.size()));
    }
    const auto n_heads = static_cast<Eigen::Index>(head_splits.size());
    if (n_heads < 1) throw shape_error("head partition is empty");
    if (remove_count % n_heads != 0) {
        throw plan_error("removal of " + std::to_string(remove_count) +
                         " channels not divisible across " + std::to_string(n_heads) + " heads");
    }
    if (!scores.allFinite()) {
        throw data_error("channel scores contain non-finite values");
    }
    const Eigen::Index per_head = remove_count / n_heads;

    index_list removed;
    Eigen::Index off = 0;
    for (size_t h = 0; h < head_splits.size(); ++h) {
        const Eigen::Index split = head_splits[h];
        if (per_head >= split) {
            throw plan_error("removing " + std::to_string(per_head) +
                             " channels would empty head " + std::to_string(h));
        }
        index_list local(static_cast<size_t>(split));
        for (Eigen::Index i = 0; i < split; ++i) local[static_cast<size_t>(i)] = off + i;
        std::stable_sort(local.begin(), local.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return scores[a] < scores[b]; });
        removed.insert(removed.end(), local.begin(), local.begin() + per_head);
        off += split;
    }
    std::sort(removed.begin(), removed.end());
    return make_mask(removed, scores.size());
}

void apply_coupled_prune(decoder_block& block, const prunable_group& grp, const prune_mask& mask) {
    if (static_cast<Eigen::Index>(mask.kept.size() + mask.removed.size()) != grp.channels) {
        throw shape_error("prune mask covers " +
                          std::to_string(mask.kept.size() + mask.removed.size()) +
                          " channels, group has " + std::to_string(grp.channels));
    }
    if (mask.removed.empty()) return;

    if (!grp.column_target.empty()) {
        linear_layer& layer = block.at(grp.column_target);
        if (layer.w.cols() != grp.channels) {
            throw shape_error("group channel count does not match " + grp.column_target);
        }
        layer.w = gather_cols(layer.w, mask.kept);
    }
    for (const auto& name : grp.row_targets) {
        linear_layer& layer = block.at(name);
        if (layer.w.rows() != grp.channels) {
            throw shape_error("group channel count does not match rows of " + name);
        }
        layer.w = gather_rows(layer.w, mask.kept);
        if (layer.has_bias()) {
            layer.b = gather_elems(layer.b, mask.kept);
        }
    }

    if (grp.kind == group_kind::attn_vo_channel) {
        std::vector<Eigen::Index> new_splits(block.v_head_splits.size(), 0);
        Eigen::Index off = 0;
        size_t h = 0;
        size_t r = 0;
        for (; h < block.v_head_splits.size(); ++h) {
            const Eigen::Index end = off + block.v_head_splits[h];
            Eigen::Index removed_here = 0;
            while (r < mask.removed.size() && mask.removed[r] < end) {
                ++removed_here;
                ++r;
            }
            new_splits[h] = block.v_head_splits[h] - removed_here;
            off = end;
        }
        block.v_head_splits = new_splits;
    }

    validate_block(block, static_cast<int>(block.at("o").w.rows()), "pruned block");
}

matf restore_columns(const matf& w, const matd& gram, const index_list& kept, double delta_rel) {
    const Eigen::Index n = w.cols();
    if (gram.rows() != n || gram.cols() != n) {
        throw shape_error("gram is " + std::to_string(gram.rows()) + "x" +
                          std::to_string(gram.cols()) + " for a layer with " + std::to_string(n) +
                          " inputs");
    }
    if (kept.empty()) {
        throw plan_error("restoration needs at least one surviving column");
    }
    if (!(delta_rel >= 0.0)) {
        throw data_error("damping factor must be nonnegative");
    }
    check_gather_indices(kept, n, "column");

    const matd wd = w.cast<double>();
    const matd rhs = gather_cols(matmul(wd, gram), kept);
    matd sys = gather_cols(gather_rows(gram, kept), kept);
    const double delta = delta_rel * gram.diagonal().mean();
    sys.diagonal().array() += delta;
    const matd y = spd_solve(sys, rhs);
    return y.cast<float>();
}

double restoration_residual(const matf& w_old, const matf& w_new, const matd& gram,
                            const index_list& kept) {
    const matd a = w_new.cast<double>();
    const matd b = w_old.cast<double>();
    const matd g_rows = gather_rows(gram, kept);
    const matd g_kk = gather_cols(g_rows, kept);

    const double t1 = matmul(a, g_kk).cwiseProduct(a).sum();
    const matd cross = matmul(g_rows, matd(b.transpose()));  // |kept| x m
    const double t2 = a.cwiseProduct(matd(cross.transpose())).sum();
    const double t3 = matmul(b, gram).cwiseProduct(b).sum();
    const double obj = std::max(0.0, t1 - 2.0 * t2 + t3);
    return std::sqrt(obj) / (std::sqrt(std::max(t3, 0.0)) + 1e-300);
}

namespace {

struct block_stats {
    std::map<std::string, layer_stats> per_tap;
};

block_stats collect_block_stats(const decoder_block& block, const std::vector<matd>& acts,
                                const std::vector<std::string>& taps,
                                const std::set<std::string>& gram_taps,
                                const stats_config& cfg) {
    block_stats st;
    for (const auto& x : acts) {
        capture_map caps;
        forward_block(block, x, taps, &caps);
        for (const auto& tap : taps) {
            const matd& v = caps.at(tap);
            auto it = st.per_tap.find(tap);
            if (it == st.per_tap.end()) {
                it = st.per_tap
                         .emplace(tap, make_layer_stats(v.rows(), gram_taps.count(tap) > 0, cfg))
                         .first;
            }
            accumulate_stats(it->second, v);
        }
    }
    return st;
}

void assert_coupling(const decoder_block& before, const decoder_block& after,
                     const prunable_group& grp, const index_list& removed,
                     const std::vector<matd>& acts, const std::string& label) {
    std::vector<size_t> picks{0};
    if (acts.size() > 1) picks.push_back(acts.size() - 1);
    for (size_t i : picks) {
        const matd want = oracle_zeroed_forward(before, grp, removed, acts[i]);
        const matd got = forward_block(after, acts[i]);
        const double rel = (got - want).norm() / (want.norm() + 1e-300);
        if (!(rel <= k_coupling_tol)) {
            throw internal_error("coupled pruning of " + label +
                                 " diverged from the zeroed-column oracle (rel " +
                                 std::to_string(rel) + ")");
        }
    }
}

void structural_pipeline(decoder_model& out, const std::vector<token_sequence>& samples,
                         const prune_config& cfg, prune_report& report) {
    const bool skip_qk = cfg.mode != prune_mode::prune_qk;
    const bool refit = cfg.mode == prune_mode::restore || cfg.mode == prune_mode::prune_qk;

    report.plan = plan_sparsity(out, cfg.sparsity, skip_qk, cfg.pooled_vo);

    std::vector<matd> acts;
    acts.reserve(samples.size());
    for (const auto& s : samples) acts.push_back(embed_tokens(out, s));

    stats_config scfg;
    scfg.want_mean = cfg.mode == prune_mode::bias_only;
    scfg.gram_dim_cap = cfg.gram_dim_cap;

    for (size_t b = 0; b < out.blocks.size(); ++b) {
        decoder_block& block = out.blocks[b];
        const coupling_graph graph = build_coupling_graph(block, skip_qk);

        // Plan rows for this block, keyed by group kind (unique per block).
        std::map<group_kind, const group_plan*> plan_of;
        for (const auto& gp : report.plan.groups) {
            if (gp.block == static_cast<int>(b)) plan_of[gp.kind] = &gp;
        }

        std::vector<std::string> taps;
        std::set<std::string> gram_taps;
        for (const auto& grp : graph.groups) {
            const std::string tap = grp.column_target.empty() ? "q" : grp.column_target;
            taps.push_back(tap);
            const auto* gp = plan_of.at(grp.kind);
            if (refit && !grp.column_target.empty() && gp->remove_count > 0) {
                gram_taps.insert(tap);
            }
        }

        const block_stats st = collect_block_stats(block, acts, taps, gram_taps, scfg);

        for (const auto& grp : graph.groups) {
            const auto* gp = plan_of.at(grp.kind);
            if (gp->channels != grp.channels) {
                throw internal_error("plan and model disagree on channel count for " +
                                     group_label(static_cast<int>(b), grp.column_target));
            }
            const std::string label = group_label(static_cast<int>(b), grp.column_target);
            const std::string tap = grp.column_target.empty() ? "q" : grp.column_target;

            group_report gr;
            gr.block = static_cast<int>(b);
            gr.kind = group_kind_name(grp.kind);
            gr.column_target = grp.column_target;
            gr.channels = grp.channels;
            gr.removed_count = gp->remove_count;

            const vecd featnorm = feature_norms(st.per_tap.at(tap));
            const vecd scores =
                grp.kind == group_kind::attn_qk_channel
                    ? score_qk_rows(block.at("q").w, block.at("k").w, featnorm)
                    : score_columns(block.at(grp.column_target).w, featnorm);
            gr.score_min = scores.minCoeff();
            gr.score_max = scores.maxCoeff();

            if (gp->remove_count == 0) {
                report.groups.push_back(std::move(gr));
                continue;
            }

            const prune_mask mask =
                head_partitioned(grp, cfg.pooled_vo)
                    ? select_channels_per_head(scores, grp.head_splits, gp->remove_count)
                    : select_channels(scores, gp->remove_count);
            gr.removed = mask.removed;

            // Refit and bias compensation read the dense weights, so both are
            // computed before surgery and installed after the coupling check.
            std::optional<matf> restored;
            if (refit && !grp.column_target.empty()) {
                try {
                    restored = restore_columns(block.at(grp.column_target).w,
                                               st.per_tap.at(tap).gram, mask.kept, cfg.delta_rel);
                } catch (const not_positive_definite& e) {
                    throw not_positive_definite(e.pivot, label + ": ");
                }
            }
            std::optional<vecd> bias_delta;
            if (cfg.mode == prune_mode::bias_only && !grp.column_target.empty()) {
                const vecd means = feature_means(st.per_tap.at(tap));
                const matd w_removed =
                    gather_cols(block.at(grp.column_target).w, mask.removed).cast<double>();
                bias_delta = matmul(w_removed, matd(gather_elems(means, mask.removed)));
            }

            const bool check_coupling = grp.kind != group_kind::attn_qk_channel;
            std::optional<decoder_block> before;
            if (check_coupling || restored) before = block;

            apply_coupled_prune(block, grp, mask);
            if (check_coupling) {
                assert_coupling(*before, block, grp, mask.removed, acts, label);
            }

            if (restored) {
                linear_layer& layer = block.at(grp.column_target);
                gr.restore_residual = restoration_residual(before->at(grp.column_target).w,
                                                           *restored, st.per_tap.at(tap).gram,
                                                           mask.kept);
                layer.w = *restored;
            }
            if (bias_delta) {
                linear_layer& layer = block.at(grp.column_target);
                if (!layer.has_bias()) layer.b = vecf::Zero(layer.w.rows());
                layer.b += bias_delta->cast<float>();
            }

            report.params_removed += gp->remove_count * grp.weight_params_per_channel;
            report.groups.push_back(std::move(gr));
        }

        for (auto& x : acts) x = forward_block(block, x);
    }

    if (report.params_removed != report.plan.params_removed_planned) {
        throw internal_error("achieved removal " + std::to_string(report.params_removed) +
                             " differs from the plan " +
                             std::to_string(report.plan.params_removed_planned));
    }
}

void zero_columns_pipeline(decoder_model& out, const std::vector<token_sequence>& samples,
                           const prune_config& cfg, prune_report& report) {
    report.plan.target_sparsity = cfg.sparsity;
    report.plan.scale_factor = 1.0;
    report.plan.params_total = model_weight_count(out);
    report.plan.params_prunable = report.plan.params_total;

    std::vector<matd> acts;
    acts.reserve(samples.size());
    for (const auto& s : samples) acts.push_back(embed_tokens(out, s));

    stats_config scfg;
    scfg.gram_dim_cap = cfg.gram_dim_cap;

    const std::vector<std::string> names =
        out.spec.family == arch_family::opt_style
            ? std::vector<std::string>{"q", "k", "v", "o", "fc1", "fc2"}
            : std::vector<std::string>{"q", "k", "v", "o", "up", "gate", "down"};

    for (size_t b = 0; b < out.blocks.size(); ++b) {
        decoder_block& block = out.blocks[b];

        std::set<std::string> gram_taps;
        for (const auto& name : names) {
            const Eigen::Index cols = block.at(name).w.cols();
            if (cfg.ablate_restore && std::llround(cfg.sparsity * static_cast<double>(cols)) > 0) {
                gram_taps.insert(name);
            }
        }
        const block_stats st = collect_block_stats(block, acts, names, gram_taps, scfg);

        for (const auto& name : names) {
            linear_layer& layer = block.at(name);
            const Eigen::Index cols = layer.w.cols();
            const auto remove = static_cast<Eigen::Index>(
                std::llround(cfg.sparsity * static_cast<double>(cols)));
            if (remove >= cols) {
                throw plan_error("sparsity " + std::to_string(cfg.sparsity) +
                                 " would zero every column of blocks." + std::to_string(b) + "." +
                                 name);
            }

            group_report gr;
            gr.block = static_cast<int>(b);
            gr.kind = "column-zero";
            gr.column_target = name;
            gr.channels = cols;
            gr.removed_count = remove;

            const vecd featnorm = feature_norms(st.per_tap.at(name));
            const vecd scores = score_columns(layer.w, featnorm);
            gr.score_min = scores.minCoeff();
            gr.score_max = scores.maxCoeff();

            if (remove > 0) {
                const prune_mask mask = select_channels(scores, remove);
                gr.removed = mask.removed;

                if (cfg.ablate_restore) {
                    const std::string label = "blocks." + std::to_string(b) + "." + name;
                    matf refit;
                    try {
                        refit = restore_columns(layer.w, st.per_tap.at(name).gram, mask.kept,
                                                cfg.delta_rel);
                    } catch (const not_positive_definite& e) {
                        throw not_positive_definite(e.pivot, label + ": ");
                    }
                    gr.restore_residual = restoration_residual(layer.w, refit,
                                                               st.per_tap.at(name).gram,
                                                               mask.kept);
                    for (size_t j = 0; j < mask.kept.size(); ++j) {
                        layer.w.col(mask.kept[j]) = refit.col(static_cast<Eigen::Index>(j));
                    }
                }
                for (Eigen::Index j : mask.removed) layer.w.col(j).setZero();
                report.params_removed += remove * layer.w.rows();
            }
            report.groups.push_back(std::move(gr));
        }

        for (auto& x : acts) x = forward_block(block, x);
    }
    report.plan.params_removed_planned = report.params_removed;
}

}  // namespace

std::pair<decoder_model, prune_report> prune_model(const decoder_model& model,
                                                   const corpus& calib,
                                                   const prune_config& cfg) {
    validate_model(model);
    if (!(cfg.sparsity >= 0.0) || cfg.sparsity >= 1.0) {
        throw plan_error("target sparsity must lie in [0, 1), got " +
                         std::to_string(cfg.sparsity));
    }
    if (!(cfg.delta_rel >= 0.0)) throw data_error("damping factor must be nonnegative");
    if (cfg.calib_samples < 1 || cfg.calib_seq < 1) {
        throw data_error("calibration needs positive sample count and window length");
    }
    if (cfg.calib_seq > model.spec.max_seq) {
        throw data_error("calibration window of " + std::to_string(cfg.calib_seq) +
                         " exceeds the model's max_seq " + std::to_string(model.spec.max_seq));
    }
    if (calib.vocab != model.spec.vocab) {
        throw data_error("calibration corpus vocabulary " + std::to_string(calib.vocab) +
                         " differs from the model's " + std::to_string(model.spec.vocab));
    }

    const auto t0 = std::chrono::steady_clock::now();
    const auto samples = sample_corpus(calib, cfg.calib_samples, cfg.calib_seq, cfg.calib_seed);

    decoder_model out = model;
    prune_report report;
    report.mode = mode_name(cfg.mode);

    if (cfg.mode == prune_mode::zero_columns) {
        zero_columns_pipeline(out, samples, cfg, report);
    } else {
        structural_pipeline(out, samples, cfg, report);
    }

    report.achieved_sparsity = report.plan.params_total == 0
                                   ? 0.0
                                   : static_cast<double>(report.params_removed) /
                                         static_cast<double>(report.plan.params_total);
    validate_model(out);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(out), std::move(report)};
}

std::string report_to_json(const prune_report& r) {
    json groups = json::array();
    for (const auto& g : r.groups) {
        json removed = json::array();
        for (Eigen::Index i : g.removed) removed.push_back(static_cast<int64_t>(i));
        json entry = {{"block", g.block},
                      {"kind", g.kind},
                      {"column_target", g.column_target},
                      {"channels", static_cast<int64_t>(g.channels)},
                      {"removed_count", static_cast<int64_t>(g.removed_count)},
                      {"removed", removed},
                      {"score_min", g.score_min},
                      {"score_max", g.score_max}};
        if (g.restore_residual >= 0.0) entry["restore_residual"] = g.restore_residual;
        groups.push_back(std::move(entry));
    }

    json plan_groups = json::array();
    for (const auto& gp : r.plan.groups) {
        plan_groups.push_back({{"block", gp.block},
                               {"kind", group_kind_name(gp.kind)},
                               {"column_target", gp.column_target},
                               {"channels", static_cast<int64_t>(gp.channels)},
                               {"remove_count", static_cast<int64_t>(gp.remove_count)},
                               {"weight_params_per_channel",
                                static_cast<int64_t>(gp.weight_params_per_channel)}});
    }

    const json doc = {{"mode", r.mode},
                      {"plan",
                       {{"target_sparsity", r.plan.target_sparsity},
                        {"scale_factor", r.plan.scale_factor},
                        {"params_total", r.plan.params_total},
                        {"params_prunable", r.plan.params_prunable},
                        {"params_removed_planned", r.plan.params_removed_planned},
                        {"groups", plan_groups}}},
                      {"achieved",
                       {{"params_removed", r.params_removed},
                        {"sparsity", r.achieved_sparsity}}},
                      {"groups", groups}};
    return doc.dump(2) + "\n";
}

}  // namespace fasp
