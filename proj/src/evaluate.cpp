#include "fasp/evaluate.hpp"

#include "fasp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace fasp {

namespace {

double log_sum_exp(const vecd& v) {
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
}

matd linear_f64(const linear_layer& layer, const matd& x) {
    matd y = layer.w.cast<double>() * x;
    if (layer.has_bias()) {
        y.colwise() += vecd(layer.b.cast<double>());
    }
    return y;
}

}  // namespace

eval_result perplexity(const decoder_model& model, const token_sequence& tokens, int seq_len) {
    if (seq_len < 2) {
        throw data_error("evaluation windows need at least 2 tokens");
    }
    if (seq_len > model.spec.max_seq) {
        throw data_error("evaluation window of " + std::to_string(seq_len) +
                         " exceeds max_seq " + std::to_string(model.spec.max_seq));
    }
    if (tokens.size() < 2) {
        throw data_error("perplexity needs at least one next-token transition");
    }

    double total_nll = 0.0;
    int64_t positions = 0;
    const size_t window = static_cast<size_t>(seq_len);
    for (size_t start = 0; start + 1 < tokens.size(); start += window) {
        const size_t len = std::min(window, tokens.size() - start);
        if (len < 2) {
            break;  // tail holds no transition
        }
        const token_sequence chunk(tokens.begin() + static_cast<ptrdiff_t>(start),
                                   tokens.begin() + static_cast<ptrdiff_t>(start + len));
        const matd logits = forward_model(model, chunk);
        for (size_t t = 0; t + 1 < len; ++t) {
            const Eigen::Index col = static_cast<Eigen::Index>(t);
            total_nll += log_sum_exp(logits.col(col)) - logits(chunk[t + 1], col);
            ++positions;
        }
    }
    if (!std::isfinite(total_nll)) {
        throw data_error("non-finite log-likelihood during evaluation");
    }
    eval_result r;
    r.token_count = positions;
    r.perplexity = std::exp(total_nll / static_cast<double>(positions));
    return r;
}

fidelity_result output_fidelity(const decoder_model& ref, const decoder_model& other,
                                const std::vector<token_sequence>& inputs) {
    if (ref.spec.vocab != other.spec.vocab) {
        throw shape_error("fidelity comparison needs matching vocabularies");
    }
    if (ref.blocks.size() != other.blocks.size()) {
        throw shape_error("fidelity comparison needs matching block counts");
    }
    if (inputs.empty()) {
        throw data_error("fidelity comparison needs at least one input sequence");
    }

    fidelity_result out;
    out.block_cosine.assign(ref.blocks.size(), 0.0);
    std::vector<int64_t> cosine_count(ref.blocks.size(), 0);
    double gap = 0.0;
    for (const auto& seq : inputs) {
        std::vector<matd> ref_blocks;
        std::vector<matd> other_blocks;
        const matd la = forward_model_traced(ref, seq, {}, nullptr, &ref_blocks);
        const matd lb = forward_model_traced(other, seq, {}, nullptr, &other_blocks);
        gap += (la - lb).norm() / std::max(la.norm(), 1e-30);
        for (size_t b = 0; b < ref_blocks.size(); ++b) {
            for (Eigen::Index t = 0; t < ref_blocks[b].cols(); ++t) {
                const double na = ref_blocks[b].col(t).norm();
                const double nb = other_blocks[b].col(t).norm();
                double c = 0.0;
                if (na < 1e-30 && nb < 1e-30) {
                    c = 1.0;
                } else if (na >= 1e-30 && nb >= 1e-30) {
                    c = ref_blocks[b].col(t).dot(other_blocks[b].col(t)) / (na * nb);
                }
                out.block_cosine[b] += c;
                ++cosine_count[b];
            }
        }
    }
    out.logit_gap = gap / static_cast<double>(inputs.size());
    for (size_t b = 0; b < out.block_cosine.size(); ++b) {
        out.block_cosine[b] /= static_cast<double>(cosine_count[b]);
    }
    return out;
}

matd oracle_least_squares(const matd& w, const matd& x_capture, const index_list& kept) {
    if (w.cols() != x_capture.rows()) {
        throw shape_error("weight expects " + std::to_string(w.cols()) + " features, capture has " +
                          std::to_string(x_capture.rows()));
    }
    if (kept.empty()) {
        throw index_error("least-squares reference needs at least one kept feature");
    }
    check_gather_indices(kept, x_capture.rows(), "kept feature");

    const Eigen::Index k = static_cast<Eigen::Index>(kept.size());
    matd xk(k, x_capture.cols());
    for (Eigen::Index i = 0; i < k; ++i) {
        xk.row(i) = x_capture.row(kept[static_cast<size_t>(i)]);
    }
    matd a = xk * xk.transpose();
    const matd rhs = (w * x_capture) * xk.transpose();

    // Gauss-Jordan inverse with partial pivoting; deliberately shares no
    // code with the production Cholesky path.
    matd inv = matd::Identity(k, k);
    const double tol = 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff());
    for (Eigen::Index c = 0; c < k; ++c) {
        Eigen::Index piv = c;
        for (Eigen::Index r = c + 1; r < k; ++r) {
            if (std::abs(a(r, c)) > std::abs(a(piv, c))) {
                piv = r;
            }
        }
        if (std::abs(a(piv, c)) < tol) {
            throw data_error("dependent calibration features make the reference system singular");
        }
        if (piv != c) {
            a.row(c).swap(a.row(piv));
            inv.row(c).swap(inv.row(piv));
        }
        const double d = a(c, c);
        a.row(c) /= d;
        inv.row(c) /= d;
        for (Eigen::Index r = 0; r < k; ++r) {
            if (r == c || a(r, c) == 0.0) {
                continue;
            }
            const double f = a(r, c);
            a.row(r) -= f * a.row(c);
            inv.row(r) -= f * inv.row(c);
        }
    }
    return rhs * inv;
}

matd oracle_zeroed_forward(const decoder_block& block, const prunable_group& grp,
                           const index_list& removed, const matd& x) {
    decoder_block zeroed = block;
    if (grp.column_target.empty()) {
        // q/k pair: the coupled unit is a row of each projection.
        for (const char* name : {"q", "k"}) {
            linear_layer& lay = zeroed.at(name);
            check_gather_indices(removed, lay.w.rows(), "row");
            for (Eigen::Index i : removed) {
                lay.w.row(i).setZero();
                if (lay.has_bias()) {
                    lay.b(i) = 0.0f;
                }
            }
        }
    } else {
        linear_layer& lay = zeroed.at(grp.column_target);
        check_gather_indices(removed, lay.w.cols(), "column");
        for (Eigen::Index i : removed) {
            lay.w.col(i).setZero();
        }
    }
    return forward_block(zeroed, x);
}

// ---------------------------------------------------------------------------
// toy training: f64 tape forward + manual backprop, f32 weights
// ---------------------------------------------------------------------------

namespace {

struct block_tape {
    matd x_in;
    matd xa;  // attn-norm output
    matd qm, km, vm;
    std::vector<matd> attn;  // per-head softmax weights
    matd attn_cat;
    matd x1;  // residual after attention
    matd xm;  // mlp-norm output
    matd h1;  // opt: pre-relu
    matd u, g;  // llama: up / gate outputs
    matd hidden;
};

struct model_tape {
    matd x0;
    std::vector<block_tape> blocks;
    matd x_last;
    matd xf;  // final-norm output
    matd logits;
};

// Summed next-token nll over the window; fills the tape when given one.
double forward_tape(const decoder_model& m, const token_sequence& seq, model_tape* tape) {
    matd x = embed_tokens(m, seq);
    if (tape != nullptr) {
        tape->x0 = x;
        tape->blocks.resize(m.blocks.size());
    }

    for (size_t b = 0; b < m.blocks.size(); ++b) {
        const decoder_block& blk = m.blocks[b];
        block_tape scratch;
        block_tape& bt = tape != nullptr ? tape->blocks[b] : scratch;
        bt.x_in = x;
        bt.xa = apply_norm(blk.attn_norm, x);
        bt.qm = linear_f64(blk.at("q"), bt.xa);
        bt.km = linear_f64(blk.at("k"), bt.xa);
        bt.vm = linear_f64(blk.at("v"), bt.xa);

        const Eigen::Index p = x.cols();
        const Eigen::Index qk_head = bt.qm.rows() / blk.n_heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(qk_head));
        bt.attn_cat.resize(blk.at("v").w.rows(), p);
        bt.attn.assign(static_cast<size_t>(blk.n_heads), matd());
        Eigen::Index v_off = 0;
        for (int h = 0; h < blk.n_heads; ++h) {
            const auto qh = bt.qm.middleRows(static_cast<Eigen::Index>(h) * qk_head, qk_head);
            const auto kh = bt.km.middleRows(static_cast<Eigen::Index>(h) * qk_head, qk_head);
            const Eigen::Index vh_rows = blk.v_head_splits[static_cast<size_t>(h)];
            const auto vh = bt.vm.middleRows(v_off, vh_rows);
            const matd scores = (qh.transpose() * kh) * scale;
            matd a = matd::Zero(p, p);
            for (Eigen::Index i = 0; i < p; ++i) {
                const auto row = scores.row(i).head(i + 1);
                const double mx = row.maxCoeff();
                Eigen::RowVectorXd e = (row.array() - mx).exp();
                a.row(i).head(i + 1) = e / e.sum();
            }
            bt.attn[static_cast<size_t>(h)] = a;
            bt.attn_cat.middleRows(v_off, vh_rows) = vh * a.transpose();
            v_off += vh_rows;
        }

        bt.x1 = bt.x_in + linear_f64(blk.at("o"), bt.attn_cat);
        bt.xm = apply_norm(blk.mlp_norm, bt.x1);
        matd mlp;
        if (blk.family == arch_family::opt_style) {
            bt.h1 = linear_f64(blk.at("fc1"), bt.xm);
            bt.hidden = bt.h1.cwiseMax(0.0);
            mlp = linear_f64(blk.at("fc2"), bt.hidden);
        } else {
            bt.u = linear_f64(blk.at("up"), bt.xm);
            bt.g = linear_f64(blk.at("gate"), bt.xm);
            bt.hidden = (bt.u.array() * (bt.g.array() / (1.0 + (-bt.g.array()).exp()))).matrix();
            mlp = linear_f64(blk.at("down"), bt.hidden);
        }
        x = bt.x1 + mlp;
    }

    const matd xf = apply_norm(m.final_norm, x);
    const matd logits = m.unembed.cast<double>() * xf;
    if (tape != nullptr) {
        tape->x_last = x;
        tape->xf = xf;
        tape->logits = logits;
    }

    double nll = 0.0;
    for (size_t t = 0; t + 1 < seq.size(); ++t) {
        const Eigen::Index col = static_cast<Eigen::Index>(t);
        nll += log_sum_exp(logits.col(col)) - logits(seq[t + 1], col);
    }
    return nll;
}

struct block_grads {
    std::map<std::string, matd> w;
    std::map<std::string, vecd> b;
    vecd attn_gamma, attn_beta, mlp_gamma, mlp_beta;
};

struct model_grads {
    matd tok, pos, unembed;
    vecd final_gamma, final_beta;
    std::vector<block_grads> blocks;
};

vecd zeros_like(const vecf& v) { return vecd::Zero(v.size()); }

model_grads zero_grads(const decoder_model& m) {
    model_grads g;
    g.tok = matd::Zero(m.tok_embedding.rows(), m.tok_embedding.cols());
    g.pos = matd::Zero(m.pos_embedding.rows(), m.pos_embedding.cols());
    g.unembed = matd::Zero(m.unembed.rows(), m.unembed.cols());
    g.final_gamma = zeros_like(m.final_norm.gamma);
    g.final_beta = zeros_like(m.final_norm.beta);
    g.blocks.resize(m.blocks.size());
    for (size_t b = 0; b < m.blocks.size(); ++b) {
        for (const auto& [name, lay] : m.blocks[b].proj) {
            g.blocks[b].w[name] = matd::Zero(lay.w.rows(), lay.w.cols());
            if (lay.has_bias()) {
                g.blocks[b].b[name] = zeros_like(lay.b);
            }
        }
        g.blocks[b].attn_gamma = zeros_like(m.blocks[b].attn_norm.gamma);
        g.blocks[b].attn_beta = zeros_like(m.blocks[b].attn_norm.beta);
        g.blocks[b].mlp_gamma = zeros_like(m.blocks[b].mlp_norm.gamma);
        g.blocks[b].mlp_beta = zeros_like(m.blocks[b].mlp_norm.beta);
    }
    return g;
}

template <typename Fn>
void for_each_grad(model_grads& g, Fn&& fn) {
    fn(g.tok);
    fn(g.pos);
    fn(g.unembed);
    fn(g.final_gamma);
    fn(g.final_beta);
    for (auto& bg : g.blocks) {
        for (auto& [name, gw] : bg.w) {
            fn(gw);
        }
        for (auto& [name, gb] : bg.b) {
            fn(gb);
        }
        fn(bg.attn_gamma);
        fn(bg.attn_beta);
        fn(bg.mlp_gamma);
        fn(bg.mlp_beta);
    }
}

// dx for y = norm(x), accumulating the gain/shift gradients.
matd norm_backward(const norm_params& np, const matd& x, const matd& dy, vecd& dgamma,
                   vecd& dbeta) {
    const vecd gamma = np.gamma.cast<double>();
    const double n = static_cast<double>(x.rows());
    matd dx(x.rows(), x.cols());
    for (Eigen::Index t = 0; t < x.cols(); ++t) {
        const vecd xc = x.col(t);
        const vecd dyc = dy.col(t);
        if (np.rms) {
            const double r = std::sqrt(xc.squaredNorm() / n + k_norm_eps);
            dgamma += dyc.cwiseProduct(xc / r);
            const vecd gvec = dyc.cwiseProduct(gamma);
            dx.col(t) = (gvec - xc * (gvec.dot(xc) / (n * r * r))) / r;
        } else {
            const double mean = xc.mean();
            const vecd cent = xc.array() - mean;
            const double sigma = std::sqrt(cent.squaredNorm() / n + k_norm_eps);
            const vecd xn = cent / sigma;
            dgamma += dyc.cwiseProduct(xn);
            dbeta += dyc;
            const vecd dxn = dyc.cwiseProduct(gamma);
            const double m1 = dxn.mean();
            const double m2 = dxn.cwiseProduct(xn).mean();
            dx.col(t) = ((dxn.array() - m1 - xn.array() * m2) / sigma).matrix();
        }
    }
    return dx;
}

// dx for y = w x + b, accumulating dw (and db when the layer has a bias).
matd linear_backward(const linear_layer& lay, const matd& x_in, const matd& dy, matd& dw,
                     vecd* db) {
    dw += dy * x_in.transpose();
    if (db != nullptr && lay.has_bias()) {
        *db += dy.rowwise().sum();
    }
    return lay.w.cast<double>().transpose() * dy;
}

void backward_tape(const decoder_model& m, const token_sequence& seq, const model_tape& tape,
                   double inv_positions, model_grads& g) {
    const Eigen::Index p = static_cast<Eigen::Index>(seq.size());
    const Eigen::Index vocab = m.unembed.rows();

    // d(mean nll)/d(logits): softmax minus one-hot on scored columns.
    matd dlogits = matd::Zero(vocab, p);
    for (Eigen::Index t = 0; t + 1 < p; ++t) {
        const vecd col = tape.logits.col(t);
        const double m_max = col.maxCoeff();
        vecd e = (col.array() - m_max).exp();
        e /= e.sum();
        e(seq[static_cast<size_t>(t) + 1]) -= 1.0;
        dlogits.col(t) = e * inv_positions;
    }

    g.unembed += dlogits * tape.xf.transpose();
    const matd dxf = m.unembed.cast<double>().transpose() * dlogits;
    matd dx = norm_backward(m.final_norm, tape.x_last, dxf, g.final_gamma, g.final_beta);

    for (size_t b = m.blocks.size(); b-- > 0;) {
        const decoder_block& blk = m.blocks[b];
        const block_tape& bt = tape.blocks[b];
        block_grads& bg = g.blocks[b];

        // mlp branch: x_out = x1 + mlp(hidden)
        matd dx1 = dx;
        matd dxm;
        if (blk.family == arch_family::opt_style) {
            const matd dhidden =
                linear_backward(blk.at("fc2"), bt.hidden, dx, bg.w.at("fc2"),
                                blk.at("fc2").has_bias() ? &bg.b.at("fc2") : nullptr);
            const matd dh1 = dhidden.cwiseProduct((bt.h1.array() > 0.0).cast<double>().matrix());
            dxm = linear_backward(blk.at("fc1"), bt.xm, dh1, bg.w.at("fc1"),
                                  blk.at("fc1").has_bias() ? &bg.b.at("fc1") : nullptr);
        } else {
            const matd dhidden =
                linear_backward(blk.at("down"), bt.hidden, dx, bg.w.at("down"), nullptr);
            const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-bt.g.array()).exp());
            const matd du = (dhidden.array() * bt.g.array() * sig).matrix();
            const matd dg = (dhidden.array() * bt.u.array() * sig *
                             (1.0 + bt.g.array() * (1.0 - sig)))
                                .matrix();
            dxm = linear_backward(blk.at("up"), bt.xm, du, bg.w.at("up"), nullptr) +
                  linear_backward(blk.at("gate"), bt.xm, dg, bg.w.at("gate"), nullptr);
        }
        dx1 += norm_backward(blk.mlp_norm, bt.x1, dxm, bg.mlp_gamma, bg.mlp_beta);

        // attention branch: x1 = x_in + o(attn_cat)
        matd dx_in = dx1;
        const matd dattn_cat =
            linear_backward(blk.at("o"), bt.attn_cat, dx1, bg.w.at("o"),
                            blk.at("o").has_bias() ? &bg.b.at("o") : nullptr);

        const Eigen::Index qk_head = bt.qm.rows() / blk.n_heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(qk_head));
        matd dqm = matd::Zero(bt.qm.rows(), p);
        matd dkm = matd::Zero(bt.km.rows(), p);
        matd dvm = matd::Zero(bt.vm.rows(), p);
        Eigen::Index v_off = 0;
        for (int h = 0; h < blk.n_heads; ++h) {
            const Eigen::Index q_off = static_cast<Eigen::Index>(h) * qk_head;
            const auto qh = bt.qm.middleRows(q_off, qk_head);
            const auto kh = bt.km.middleRows(q_off, qk_head);
            const Eigen::Index vh_rows = blk.v_head_splits[static_cast<size_t>(h)];
            const auto vh = bt.vm.middleRows(v_off, vh_rows);
            const matd& a = bt.attn[static_cast<size_t>(h)];
            const auto dout = dattn_cat.middleRows(v_off, vh_rows);

            dvm.middleRows(v_off, vh_rows) += dout * a;
            const matd da = dout.transpose() * vh;
            matd ds = matd::Zero(p, p);
            for (Eigen::Index i = 0; i < p; ++i) {
                const Eigen::RowVectorXd arow = a.row(i).head(i + 1);
                Eigen::RowVectorXd darow = da.row(i).head(i + 1);
                darow.array() -= darow.dot(arow);
                ds.row(i).head(i + 1) = arow.cwiseProduct(darow);
            }
            dqm.middleRows(q_off, qk_head) += scale * (kh * ds.transpose());
            dkm.middleRows(q_off, qk_head) += scale * (qh * ds);
            v_off += vh_rows;
        }

        matd dxa =
            linear_backward(blk.at("q"), bt.xa, dqm, bg.w.at("q"),
                            blk.at("q").has_bias() ? &bg.b.at("q") : nullptr);
        dxa += linear_backward(blk.at("k"), bt.xa, dkm, bg.w.at("k"),
                               blk.at("k").has_bias() ? &bg.b.at("k") : nullptr);
        dxa += linear_backward(blk.at("v"), bt.xa, dvm, bg.w.at("v"),
                               blk.at("v").has_bias() ? &bg.b.at("v") : nullptr);
        dx_in += norm_backward(blk.attn_norm, bt.x_in, dxa, bg.attn_gamma, bg.attn_beta);
        dx = dx_in;
    }

    for (Eigen::Index t = 0; t < p; ++t) {
        g.tok.col(seq[static_cast<size_t>(t)]) += dx.col(t);
        g.pos.col(t) += dx.col(t);
    }
}

void apply_update(decoder_model& m, const model_grads& g, double lr) {
    m.tok_embedding -= (lr * g.tok).cast<float>();
    m.pos_embedding -= (lr * g.pos).cast<float>();
    m.unembed -= (lr * g.unembed).cast<float>();
    m.final_norm.gamma -= (lr * g.final_gamma).cast<float>();
    if (m.final_norm.beta.size() > 0) {
        m.final_norm.beta -= (lr * g.final_beta).cast<float>();
    }
    for (size_t b = 0; b < m.blocks.size(); ++b) {
        for (auto& [name, lay] : m.blocks[b].proj) {
            lay.w -= (lr * g.blocks[b].w.at(name)).cast<float>();
            if (lay.has_bias()) {
                lay.b -= (lr * g.blocks[b].b.at(name)).cast<float>();
            }
        }
        m.blocks[b].attn_norm.gamma -= (lr * g.blocks[b].attn_gamma).cast<float>();
        if (m.blocks[b].attn_norm.beta.size() > 0) {
            m.blocks[b].attn_norm.beta -= (lr * g.blocks[b].attn_beta).cast<float>();
        }
        m.blocks[b].mlp_norm.gamma -= (lr * g.blocks[b].mlp_gamma).cast<float>();
        if (m.blocks[b].mlp_norm.beta.size() > 0) {
            m.blocks[b].mlp_norm.beta -= (lr * g.blocks[b].mlp_beta).cast<float>();
        }
    }
}

}  // namespace

std::vector<token_sequence> train_batch(const corpus& data, const train_config& cfg, int step) {
    const uint64_t seed =
        cfg.seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(step) * 2654435761ULL + 1;
    return sample_corpus(data, cfg.batch, cfg.seq_len, seed);
}

decoder_model train_toy(const decoder_model& model, const corpus& data, const train_config& cfg) {
    if (cfg.steps < 0) {
        throw data_error("step count must be non-negative");
    }
    if (cfg.lr <= 0.0 || !std::isfinite(cfg.lr)) {
        throw data_error("learning rate must be positive");
    }
    if (cfg.batch < 1) {
        throw data_error("batch size must be at least 1");
    }
    if (cfg.seq_len < 2 || cfg.seq_len > model.spec.max_seq) {
        throw data_error("training window must hold 2..max_seq tokens");
    }
    if (cfg.grad_clip <= 0.0) {
        throw data_error("gradient clip must be positive");
    }
    if (data.vocab != model.spec.vocab) {
        throw data_error("corpus vocabulary " + std::to_string(data.vocab) +
                         " does not match model vocabulary " + std::to_string(model.spec.vocab));
    }

    decoder_model out = model;
    for (int step = 0; step < cfg.steps; ++step) {
        const auto batch = train_batch(data, cfg, step);
        int64_t positions = 0;
        for (const auto& seq : batch) {
            positions += static_cast<int64_t>(seq.size()) - 1;
        }

        model_grads grads = zero_grads(out);
        double total_nll = 0.0;
        for (const auto& seq : batch) {
            model_tape tape;
            total_nll += forward_tape(out, seq, &tape);
            backward_tape(out, seq, tape, 1.0 / static_cast<double>(positions), grads);
        }
        const double loss = total_nll / static_cast<double>(positions);
        if (!std::isfinite(loss)) {
            throw training_error("loss diverged at step " + std::to_string(step) +
                                 "; lower the learning rate");
        }

        double sq_norm = 0.0;
        for_each_grad(grads, [&](auto& t) { sq_norm += t.squaredNorm(); });
        const double norm = std::sqrt(sq_norm);
        if (norm > cfg.grad_clip) {
            const double f = cfg.grad_clip / norm;
            for_each_grad(grads, [&](auto& t) { t *= f; });
        }
        apply_update(out, grads, cfg.lr);
    }
    return out;
}

double mean_nll(const decoder_model& model, const std::vector<token_sequence>& batch) {
    if (batch.empty()) {
        throw data_error("mean nll needs at least one sequence");
    }
    double total = 0.0;
    int64_t positions = 0;
    for (const auto& seq : batch) {
        if (seq.size() < 2) {
            throw data_error("nll sequences need at least 2 tokens");
        }
        total += forward_tape(model, seq, nullptr);
        positions += static_cast<int64_t>(seq.size()) - 1;
    }
    return total / static_cast<double>(positions);
}

}  // namespace fasp
