#include "fasp/model.hpp"

#include "fasp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace fasp {

namespace {

bool tapped(const std::vector<std::string>& taps, const std::string& name) {
    return std::find(taps.begin(), taps.end(), name) != taps.end();
}

void capture_if(const std::vector<std::string>& taps, capture_map* captures,
                const std::string& name, const matd& value) {
    if (captures != nullptr && tapped(taps, name)) {
        (*captures)[name] = value;
    }
}

std::vector<std::string> projection_names(arch_family family) {
    if (family == arch_family::opt_style) {
        return {"q", "k", "v", "o", "fc1", "fc2"};
    }
    return {"q", "k", "v", "o", "up", "gate", "down"};
}

}  // namespace

std::string family_name(arch_family f) {
    return f == arch_family::opt_style ? "opt" : "llama";
}

arch_family family_from_name(const std::string& s) {
    if (s == "opt") return arch_family::opt_style;
    if (s == "llama") return arch_family::llama_style;
    throw data_error("unknown architecture family '" + s + "' (expected opt or llama)");
}

void validate_spec(const arch_spec& spec) {
    if (spec.d_model <= 0 || spec.n_heads <= 0) {
        throw data_error("arch spec: d_model and n_heads must be positive");
    }
    if (spec.d_model % spec.n_heads != 0) {
        throw data_error("arch spec: d_model " + std::to_string(spec.d_model) +
                         " not divisible by n_heads " + std::to_string(spec.n_heads));
    }
    if (spec.d_hidden < 1) {
        throw data_error("arch spec: d_hidden must be >= 1");
    }
    if (spec.vocab < 2) {
        throw data_error("arch spec: vocab must be >= 2");
    }
    if (spec.n_blocks < 0) {
        throw data_error("arch spec: n_blocks must be >= 0");
    }
    if (spec.max_seq < 1) {
        throw data_error("arch spec: max_seq must be >= 1");
    }
}

const linear_layer& decoder_block::at(const std::string& name) const {
    auto it = proj.find(name);
    if (it == proj.end()) {
        throw data_error("decoder block has no projection named '" + name + "'");
    }
    return it->second;
}

linear_layer& decoder_block::at(const std::string& name) {
    auto it = proj.find(name);
    if (it == proj.end()) {
        throw data_error("decoder block has no projection named '" + name + "'");
    }
    return it->second;
}

void validate_block(const decoder_block& block, int d_model, const std::string& context) {
    auto fail = [&](const std::string& msg) { throw internal_error(context + ": " + msg); };
    const Eigen::Index d = d_model;

    for (const auto& name : projection_names(block.family)) {
        if (block.proj.find(name) == block.proj.end()) {
            fail("missing projection '" + name + "'");
        }
    }
    const auto& q = block.at("q");
    const auto& k = block.at("k");
    const auto& v = block.at("v");
    const auto& o = block.at("o");

    if (q.w.cols() != d || k.w.cols() != d || v.w.cols() != d) {
        fail("attention input width differs from model width");
    }
    if (q.w.rows() != k.w.rows()) {
        fail("q and k row counts differ");
    }
    if (block.n_heads < 1 || q.w.rows() % block.n_heads != 0) {
        fail("q/k rows not divisible by head count");
    }
    if (o.w.rows() != d) {
        fail("output projection height differs from model width");
    }
    if (o.w.cols() != v.w.rows()) {
        fail("output projection columns differ from value rows");
    }
    if (static_cast<int>(block.v_head_splits.size()) != block.n_heads) {
        fail("v_head_splits size differs from head count");
    }
    Eigen::Index split_sum = 0;
    for (Eigen::Index s : block.v_head_splits) {
        if (s < 1) fail("head with no value channels");
        split_sum += s;
    }
    if (split_sum != v.w.rows()) {
        fail("v_head_splits do not cover the value rows");
    }
    for (const auto& [name, layer] : block.proj) {
        if (layer.has_bias() && layer.b.size() != layer.w.rows()) {
            fail("bias length of '" + name + "' differs from its row count");
        }
    }

    if (block.family == arch_family::opt_style) {
        const auto& fc1 = block.at("fc1");
        const auto& fc2 = block.at("fc2");
        if (fc1.w.cols() != d || fc2.w.rows() != d) {
            fail("mlp width differs from model width");
        }
        if (fc2.w.cols() != fc1.w.rows()) {
            fail("fc2 columns differ from fc1 rows");
        }
        if (fc1.has_bias() && fc1.b.size() != fc1.w.rows()) {
            fail("fc1 bias length mismatch");
        }
        if (block.attn_norm.rms || block.mlp_norm.rms) {
            fail("opt blocks use layer norm");
        }
    } else {
        const auto& up = block.at("up");
        const auto& gate = block.at("gate");
        const auto& down = block.at("down");
        if (up.w.cols() != d || gate.w.cols() != d || down.w.rows() != d) {
            fail("mlp width differs from model width");
        }
        if (down.w.cols() != up.w.rows() || up.w.rows() != gate.w.rows()) {
            fail("down columns differ from up/gate rows");
        }
        if (!block.attn_norm.rms || !block.mlp_norm.rms) {
            fail("llama blocks use rms norm");
        }
    }
    if (block.attn_norm.gamma.size() != d || block.mlp_norm.gamma.size() != d) {
        fail("norm gain length differs from model width");
    }
}

void validate_model(const decoder_model& model) {
    validate_spec(model.spec);
    const Eigen::Index d = model.spec.d_model;
    if (model.tok_embedding.rows() != d || model.tok_embedding.cols() != model.spec.vocab) {
        throw internal_error("token embedding shape mismatch");
    }
    if (model.pos_embedding.rows() != d || model.pos_embedding.cols() != model.spec.max_seq) {
        throw internal_error("position embedding shape mismatch");
    }
    if (model.unembed.rows() != model.spec.vocab || model.unembed.cols() != d) {
        throw internal_error("unembedding shape mismatch");
    }
    if (model.final_norm.gamma.size() != d) {
        throw internal_error("final norm gain length mismatch");
    }
    if (static_cast<int>(model.blocks.size()) != model.spec.n_blocks) {
        throw internal_error("block count differs from spec");
    }
    for (size_t i = 0; i < model.blocks.size(); ++i) {
        validate_block(model.blocks[i], model.spec.d_model, "blocks." + std::to_string(i));
    }
}

namespace {

struct gaussian_init {
    std::mt19937_64 rng;
    std::normal_distribution<double> dist{0.0, 1.0};

    explicit gaussian_init(uint64_t seed) : rng(seed) {}

    matf weight(Eigen::Index rows, Eigen::Index cols) {
        matf w(rows, cols);
        const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                w(r, c) = static_cast<float>(dist(rng) * scale);
            }
        }
        return w;
    }
};

norm_params make_norm(Eigen::Index d, bool rms) {
    norm_params n;
    n.rms = rms;
    n.gamma = vecf::Ones(d);
    if (!rms) {
        n.beta = vecf::Zero(d);
    }
    return n;
}

}  // namespace

decoder_model build_model(const arch_spec& spec, uint64_t seed) {
    validate_spec(spec);
    gaussian_init init(seed);
    const Eigen::Index d = spec.d_model;
    const Eigen::Index h = spec.d_hidden;
    const bool opt = spec.family == arch_family::opt_style;

    decoder_model model;
    model.spec = spec;
    model.tok_embedding = init.weight(d, spec.vocab);
    model.pos_embedding = init.weight(d, spec.max_seq);

    for (int b = 0; b < spec.n_blocks; ++b) {
        decoder_block block;
        block.family = spec.family;
        block.n_heads = spec.n_heads;
        block.v_head_splits.assign(spec.n_heads, d / spec.n_heads);

        auto add = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols, bool bias) {
            linear_layer layer;
            layer.w = init.weight(rows, cols);
            if (bias) layer.b = vecf::Zero(rows);
            block.proj.emplace(name, std::move(layer));
        };

        add("q", d, d, opt);
        add("k", d, d, opt);
        add("v", d, d, opt);
        add("o", d, d, opt);
        if (opt) {
            add("fc1", h, d, true);
            add("fc2", d, h, true);
        } else {
            add("up", h, d, false);
            add("gate", h, d, false);
            add("down", d, h, false);
        }
        block.attn_norm = make_norm(d, !opt);
        block.mlp_norm = make_norm(d, !opt);
        model.blocks.push_back(std::move(block));
    }

    model.final_norm = make_norm(d, !opt);
    model.unembed = init.weight(spec.vocab, d);
    validate_model(model);
    return model;
}

matd apply_norm(const norm_params& norm, const matd& x) {
    if (norm.gamma.size() != x.rows()) {
        throw shape_error("norm parameters sized " + std::to_string(norm.gamma.size()) +
                          " applied to " + std::to_string(x.rows()) + " features");
    }
    const vecd gamma = norm.gamma.cast<double>();
    matd y(x.rows(), x.cols());
    for (Eigen::Index t = 0; t < x.cols(); ++t) {
        vecd col = x.col(t);
        if (norm.rms) {
            const double rms = std::sqrt(col.squaredNorm() / static_cast<double>(col.size()) +
                                         k_norm_eps);
            y.col(t) = gamma.cwiseProduct(col / rms);
        } else {
            const double mean = col.mean();
            col.array() -= mean;
            const double var = col.squaredNorm() / static_cast<double>(col.size());
            y.col(t) = gamma.cwiseProduct(col / std::sqrt(var + k_norm_eps)) +
                       norm.beta.cast<double>();
        }
    }
    return y;
}

namespace {

matd linear_apply(const linear_layer& layer, const matd& x) {
    if (layer.w.cols() != x.rows()) {
        throw shape_error("projection expects " + std::to_string(layer.w.cols()) +
                          " features, got " + std::to_string(x.rows()));
    }
    matd y = layer.w.cast<double>() * x;
    if (layer.has_bias()) {
        y.colwise() += vecd(layer.b.cast<double>());
    }
    return y;
}

// Causal attention weights: row i is a softmax over scores(i, 0..i).
matd causal_softmax(const matd& scores) {
    const Eigen::Index p = scores.rows();
    matd a = matd::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
        const auto row = scores.row(i).head(i + 1);
        const double m = row.maxCoeff();
        Eigen::RowVectorXd e = (row.array() - m).exp();
        a.row(i).head(i + 1) = e / e.sum();
    }
    return a;
}

}  // namespace

matd forward_block(const decoder_block& block, const matd& x,
                   const std::vector<std::string>& taps, capture_map* captures) {
    const Eigen::Index p = x.cols();

    const matd xa = apply_norm(block.attn_norm, x);
    capture_if(taps, captures, "q", xa);
    capture_if(taps, captures, "k", xa);
    capture_if(taps, captures, "v", xa);

    const matd qm = linear_apply(block.at("q"), xa);
    const matd km = linear_apply(block.at("k"), xa);
    const matd vm = linear_apply(block.at("v"), xa);

    const Eigen::Index qk_head = qm.rows() / block.n_heads;
    if (qk_head < 1) {
        throw shape_error("attention head with no q/k channels");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(qk_head));

    matd attn_cat(block.at("v").w.rows(), p);
    Eigen::Index v_off = 0;
    for (int h = 0; h < block.n_heads; ++h) {
        const auto qh = qm.middleRows(static_cast<Eigen::Index>(h) * qk_head, qk_head);
        const auto kh = km.middleRows(static_cast<Eigen::Index>(h) * qk_head, qk_head);
        const Eigen::Index vh_rows = block.v_head_splits[static_cast<size_t>(h)];
        const auto vh = vm.middleRows(v_off, vh_rows);

        const matd scores = (qh.transpose() * kh) * scale;  // scores(i,j) = q_i . k_j
        const matd a = causal_softmax(scores);
        attn_cat.middleRows(v_off, vh_rows) = vh * a.transpose();
        v_off += vh_rows;
    }

    capture_if(taps, captures, "o", attn_cat);
    const matd h = x + linear_apply(block.at("o"), attn_cat);

    const matd xm = apply_norm(block.mlp_norm, h);
    matd mlp;
    if (block.family == arch_family::opt_style) {
        capture_if(taps, captures, "fc1", xm);
        const matd hidden = linear_apply(block.at("fc1"), xm).cwiseMax(0.0);
        capture_if(taps, captures, "fc2", hidden);
        mlp = linear_apply(block.at("fc2"), hidden);
    } else {
        capture_if(taps, captures, "up", xm);
        capture_if(taps, captures, "gate", xm);
        const matd u = linear_apply(block.at("up"), xm);
        const matd g = linear_apply(block.at("gate"), xm);
        const matd hidden = u.array() * (g.array() / (1.0 + (-g.array()).exp()));
        capture_if(taps, captures, "down", hidden);
        mlp = linear_apply(block.at("down"), hidden);
    }
    return h + mlp;
}

matd embed_tokens(const decoder_model& model, const token_sequence& tokens) {
    const Eigen::Index seq = static_cast<Eigen::Index>(tokens.size());
    if (seq > model.pos_embedding.cols()) {
        throw data_error("sequence of " + std::to_string(seq) + " tokens exceeds max_seq " +
                         std::to_string(model.pos_embedding.cols()));
    }
    matd x(model.tok_embedding.rows(), seq);
    for (Eigen::Index t = 0; t < seq; ++t) {
        const token_id id = tokens[static_cast<size_t>(t)];
        if (id < 0 || id >= model.tok_embedding.cols()) {
            throw data_error("token " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(model.tok_embedding.cols()));
        }
        x.col(t) = model.tok_embedding.col(id).cast<double>() +
                   model.pos_embedding.col(t).cast<double>();
    }
    return x;
}

matd forward_model(const decoder_model& model, const token_sequence& tokens) {
    return forward_model_traced(model, tokens, {}, nullptr, nullptr);
}

matd forward_model_traced(const decoder_model& model, const token_sequence& tokens,
                          const std::vector<std::string>& qualified_taps, capture_map* captures,
                          std::vector<matd>* block_outputs) {
    matd x = embed_tokens(model, tokens);
    for (size_t b = 0; b < model.blocks.size(); ++b) {
        const std::string prefix = "blocks." + std::to_string(b) + ".";
        std::vector<std::string> local;
        for (const auto& tap : qualified_taps) {
            if (tap.rfind(prefix, 0) == 0) {
                local.push_back(tap.substr(prefix.size()));
            }
        }
        capture_map local_caps;
        x = forward_block(model.blocks[b], x, local, local.empty() ? nullptr : &local_caps);
        if (captures != nullptr) {
            for (auto& [name, value] : local_caps) {
                (*captures)[prefix + name] = std::move(value);
            }
        }
        if (block_outputs != nullptr) {
            block_outputs->push_back(x);
        }
    }
    const matd hn = apply_norm(model.final_norm, x);
    return model.unembed.cast<double>() * hn;
}

std::string group_kind_name(group_kind k) {
    switch (k) {
        case group_kind::mlp_channel: return "mlp";
        case group_kind::attn_vo_channel: return "vo";
        case group_kind::attn_qk_channel: return "qk";
    }
    return "?";
}

coupling_graph build_coupling_graph(const decoder_block& block, bool skip_qk) {
    coupling_graph graph;
    const bool opt = block.family == arch_family::opt_style;

    auto bias_count = [&](const std::string& name) {
        return block.at(name).has_bias() ? Eigen::Index(1) : Eigen::Index(0);
    };

    prunable_group mlp;
    mlp.kind = group_kind::mlp_channel;
    if (opt) {
        mlp.column_target = "fc2";
        mlp.row_targets = {"fc1"};
        mlp.channels = block.at("fc2").w.cols();
        mlp.weight_params_per_channel = block.at("fc2").w.rows() + block.at("fc1").w.cols();
        mlp.params_per_channel = mlp.weight_params_per_channel + bias_count("fc1");
    } else {
        mlp.column_target = "down";
        mlp.row_targets = {"up", "gate"};
        mlp.channels = block.at("down").w.cols();
        mlp.weight_params_per_channel =
            block.at("down").w.rows() + block.at("up").w.cols() + block.at("gate").w.cols();
        mlp.params_per_channel = mlp.weight_params_per_channel;
    }
    graph.groups.push_back(std::move(mlp));

    prunable_group vo;
    vo.kind = group_kind::attn_vo_channel;
    vo.column_target = "o";
    vo.row_targets = {"v"};
    vo.channels = block.at("o").w.cols();
    vo.weight_params_per_channel = block.at("o").w.rows() + block.at("v").w.cols();
    vo.params_per_channel = vo.weight_params_per_channel + bias_count("v");
    vo.n_heads = block.n_heads;
    vo.head_splits = block.v_head_splits;
    graph.groups.push_back(std::move(vo));

    if (skip_qk) {
        graph.skipped = {"q", "k"};
    } else {
        prunable_group qk;
        qk.kind = group_kind::attn_qk_channel;
        qk.row_targets = {"q", "k"};
        qk.channels = block.at("q").w.rows();
        qk.weight_params_per_channel = block.at("q").w.cols() + block.at("k").w.cols();
        qk.params_per_channel = qk.weight_params_per_channel + bias_count("q") + bias_count("k");
        qk.n_heads = block.n_heads;
        qk.head_splits.assign(static_cast<size_t>(block.n_heads),
                              block.at("q").w.rows() / block.n_heads);
        graph.groups.push_back(std::move(qk));
    }
    return graph;
}

}  // namespace fasp
