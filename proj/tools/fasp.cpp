// command-line driver: build / train-toy / prune / eval / ablate / report
//
// Exit codes: 0 success, 2 usage, 3 data problem, 4 numerical failure,
// 5 infeasible plan. Every run writes its fully-resolved config next to the
// outputs; wall-clock timings go to a separate metadata file so everything
// else is byte-reproducible.

#include "fasp/checkpoint.hpp"
#include "fasp/evaluate.hpp"
#include "fasp/prune.hpp"
#include "fasp/report.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace fasp;

namespace {

// ---------------------------------------------------------------------------
// config plumbing: CLI flag > config file > default, resolved config persisted

struct bound_config {
    struct item {
        std::string key;
        CLI::Option* opt;
        std::function<void(const json&)> from_json;
        std::function<ordered_json()> to_json;
    };
    std::vector<item> items;
    std::string config_path;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path,
                        "JSON config file; explicit flags take precedence");
    }

    template <typename T>
    void bind(CLI::Option* opt, const std::string& key, T& ref) {
        items.push_back({key, opt, [&ref](const json& v) { ref = v.get<T>(); },
                         [&ref]() { return ordered_json(ref); }});
    }

    // fill in every option the command line left untouched
    void merge_file() const {
        if (config_path.empty()) return;
        std::ifstream in(config_path);
        if (!in) throw data_error("cannot open config file " + config_path);
        json doc;
        try {
            in >> doc;
        } catch (const json::exception& e) {
            throw data_error("config file " + config_path + " is not valid JSON: " + e.what());
        }
        if (!doc.is_object()) throw data_error("config file must hold a JSON object");
        for (const auto& it : items) {
            if (it.opt != nullptr && it.opt->count() > 0) continue;
            if (!doc.contains(it.key)) continue;
            try {
                it.from_json(doc.at(it.key));
            } catch (const json::exception& e) {
                throw data_error("config key '" + it.key + "': " + e.what());
            }
        }
        for (const auto& [key, value] : doc.items()) {
            if (std::none_of(items.begin(), items.end(),
                             [&](const item& it) { return it.key == key; })) {
                throw data_error("config file has unknown key '" + key + "'");
            }
        }
    }

    ordered_json resolved() const {
        ordered_json out;
        for (const auto& it : items) out[it.key] = it.to_json();
        return out;
    }
};

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw data_error("cannot write " + file.string());
    out << text;
}

void write_json(const fs::path& file, const ordered_json& doc) {
    write_text(file, doc.dump(2) + "\n");
}

fs::path prepare_out_dir(const std::string& dir) {
    if (dir.empty()) throw data_error("an output directory is required");
    fs::create_directories(dir);
    return fs::path(dir);
}

struct timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

void write_metadata(const fs::path& dir, double seconds) {
    ordered_json meta;
    meta["wall_seconds"] = seconds;
    write_json(dir / "metadata.json", meta);
}

// ---------------------------------------------------------------------------
// shared sub-structures

struct io_opts {
    std::string model_dir;
    std::string corpus_file;
    std::string out_dir;
};

void add_io(CLI::App* cmd, bound_config& bc, io_opts& io, bool needs_model = true) {
    if (needs_model) {
        bc.bind(cmd->add_option("--model", io.model_dir, "checkpoint directory")->required(false),
                "model", io.model_dir);
    }
    bc.bind(cmd->add_option("--corpus", io.corpus_file, "token corpus (.tokens or .txt)"),
            "corpus", io.corpus_file);
    bc.bind(cmd->add_option("--out", io.out_dir, "output directory"), "out", io.out_dir);
}

decoder_model load_model_arg(const io_opts& io) {
    if (io.model_dir.empty()) throw data_error("--model is required");
    return load_checkpoint(io.model_dir);
}

corpus load_corpus_arg(const io_opts& io, int vocab) {
    if (io.corpus_file.empty()) throw data_error("--corpus is required");
    return load_corpus(io.corpus_file, vocab);
}

struct prune_opts {
    std::string mode = "restore";
    double sparsity = 0.0;
    double delta_rel = 1e-2;
    int calib_samples = 32;
    int calib_seq = 128;
    uint64_t calib_seed = 0;
    bool pooled_vo = false;
    bool refit_zeroed = true;
    int64_t gram_dim_cap = 8192;

    prune_config to_config() const {
        prune_config cfg;
        cfg.mode = mode_from_name(mode);
        cfg.sparsity = sparsity;
        cfg.delta_rel = delta_rel;
        cfg.calib_samples = calib_samples;
        cfg.calib_seq = calib_seq;
        cfg.calib_seed = calib_seed;
        cfg.pooled_vo = pooled_vo;
        cfg.ablate_restore = refit_zeroed;
        cfg.gram_dim_cap = static_cast<Eigen::Index>(gram_dim_cap);
        return cfg;
    }
};

void add_prune_opts(CLI::App* cmd, bound_config& bc, prune_opts& po, bool with_mode = true) {
    if (with_mode) {
        bc.bind(cmd->add_option("--mode", po.mode,
                                "restore|no-restore|bias-only|zero-columns|prune-qk"),
                "mode", po.mode);
    }
    bc.bind(cmd->add_option("--delta-rel", po.delta_rel, "relative gram damping for the refit"),
            "delta_rel", po.delta_rel);
    bc.bind(cmd->add_option("--calib-samples", po.calib_samples, "calibration windows"),
            "calib_samples", po.calib_samples);
    bc.bind(cmd->add_option("--calib-seq", po.calib_seq, "calibration window length"),
            "calib_seq", po.calib_seq);
    bc.bind(cmd->add_option("--calib-seed", po.calib_seed, "calibration sampling seed"),
            "calib_seed", po.calib_seed);
    bc.bind(cmd->add_flag("--pooled-vo", po.pooled_vo,
                          "select value/output channels across heads"),
            "pooled_vo", po.pooled_vo);
    bc.bind(cmd->add_flag("--refit-zeroed,!--no-refit-zeroed", po.refit_zeroed,
                          "zero-columns mode: refit surviving columns"),
            "refit_zeroed", po.refit_zeroed);
    bc.bind(cmd->add_option("--gram-dim-cap", po.gram_dim_cap,
                            "refuse gram matrices wider than this"),
            "gram_dim_cap", po.gram_dim_cap);
}

// evaluation stream: leading slice of the corpus, 0 = everything
token_sequence eval_stream(const corpus& c, int64_t eval_tokens) {
    if (eval_tokens <= 0 || eval_tokens >= static_cast<int64_t>(c.tokens.size())) {
        return c.tokens;
    }
    return token_sequence(c.tokens.begin(), c.tokens.begin() + eval_tokens);
}

// ---------------------------------------------------------------------------
// subcommands

struct build_args {
    std::string family = "opt";
    int d_model = 64;
    int d_hidden = 256;
    int n_heads = 4;
    int n_blocks = 2;
    int vocab = 512;
    int max_seq = 128;
    uint64_t seed = 1;
    io_opts io;
    std::string synth_corpus;
    std::string corpus_kind = "bigram";
    int64_t corpus_tokens = 200000;
    double corpus_exponent = 1.1;
    uint64_t corpus_seed = 7;
};

int cmd_build(const build_args& a, const bound_config& bc) {
    timer t;
    arch_spec spec;
    spec.family = family_from_name(a.family);
    spec.d_model = a.d_model;
    spec.d_hidden = a.d_hidden;
    spec.n_heads = a.n_heads;
    spec.n_blocks = a.n_blocks;
    spec.vocab = a.vocab;
    spec.max_seq = a.max_seq;
    const auto model = build_model(spec, a.seed);

    const fs::path out = prepare_out_dir(a.io.out_dir);
    save_checkpoint(model, out);
    if (!a.synth_corpus.empty()) {
        corpus c;
        if (a.corpus_kind == "zipf") {
            c = synth_zipf_corpus(a.vocab, static_cast<size_t>(a.corpus_tokens),
                                  a.corpus_exponent, a.corpus_seed);
        } else if (a.corpus_kind == "bigram") {
            c = synth_bigram_corpus(a.vocab, static_cast<size_t>(a.corpus_tokens),
                                    a.corpus_exponent, a.corpus_seed);
        } else {
            throw data_error("unknown corpus kind '" + a.corpus_kind +
                             "' (expected zipf or bigram)");
        }
        save_corpus(c, a.synth_corpus);
    }
    write_json(out / "config.json", bc.resolved());
    write_metadata(out, t.seconds());
    std::cout << "built " << a.family << " model: " << a.n_blocks << " blocks, d_model "
              << a.d_model << ", vocab " << a.vocab << "\n";
    return 0;
}

struct train_args {
    io_opts io;
    int steps = 500;
    double lr = 0.05;
    int batch = 4;
    int seq_len = 64;
    uint64_t seed = 0;
    double grad_clip = 1.0;
};

int cmd_train_toy(const train_args& a, const bound_config& bc) {
    timer t;
    const auto model = load_model_arg(a.io);
    const auto data = load_corpus_arg(a.io, model.spec.vocab);

    train_config cfg;
    cfg.steps = a.steps;
    cfg.lr = a.lr;
    cfg.batch = a.batch;
    cfg.seq_len = a.seq_len;
    cfg.seed = a.seed;
    cfg.grad_clip = a.grad_clip;
    const auto trained = train_toy(model, data, cfg);

    const fs::path out = prepare_out_dir(a.io.out_dir);
    save_checkpoint(trained, out);
    write_json(out / "config.json", bc.resolved());
    write_metadata(out, t.seconds());

    const auto probe = sample_corpus(data, cfg.batch, cfg.seq_len, cfg.seed);
    std::cout << "trained " << a.steps << " steps; probe loss " << mean_nll(model, probe)
              << " -> " << mean_nll(trained, probe) << "\n";
    return 0;
}

struct prune_args {
    io_opts io;
    prune_opts po;
    double sparsity = 0.0;
};

int cmd_prune(const prune_args& a, const bound_config& bc) {
    timer t;
    const auto model = load_model_arg(a.io);
    const auto calib = load_corpus_arg(a.io, model.spec.vocab);

    prune_opts po = a.po;
    po.sparsity = a.sparsity;
    auto [pruned, report] = prune_model(model, calib, po.to_config());

    const fs::path out = prepare_out_dir(a.io.out_dir);
    save_checkpoint(pruned, out);
    write_text(out / "report.json", report_to_json(report));
    write_json(out / "config.json", bc.resolved());
    write_metadata(out, t.seconds());
    std::cout << "pruned mode=" << report.mode << " removed " << report.params_removed
              << " params, achieved sparsity " << report.achieved_sparsity << "\n";
    return 0;
}

struct eval_args {
    io_opts io;
    int seq_len = 64;
    int64_t eval_tokens = 0;  // 0 = whole corpus
    std::string reference_dir;
    int fidelity_samples = 4;
    int fidelity_seq = 32;
    uint64_t fidelity_seed = 0;
};

int cmd_eval(const eval_args& a, const bound_config& bc) {
    timer t;
    const auto model = load_model_arg(a.io);
    const auto data = load_corpus_arg(a.io, model.spec.vocab);

    const auto r = perplexity(model, eval_stream(data, a.eval_tokens), a.seq_len);
    ordered_json doc;
    doc["perplexity"] = r.perplexity;
    doc["token_count"] = r.token_count;
    doc["seq_len"] = a.seq_len;

    if (!a.reference_dir.empty()) {
        const auto reference = load_checkpoint(a.reference_dir);
        const auto inputs =
            sample_corpus(data, a.fidelity_samples, a.fidelity_seq, a.fidelity_seed);
        const auto f = output_fidelity(reference, model, inputs);
        ordered_json fid;
        fid["logit_gap"] = f.logit_gap;
        fid["block_cosine"] = f.block_cosine;
        doc["fidelity"] = fid;
    }

    const fs::path out = prepare_out_dir(a.io.out_dir);
    write_json(out / "eval.json", doc);
    write_json(out / "config.json", bc.resolved());
    write_metadata(out, t.seconds());
    std::cout << "perplexity " << r.perplexity << " over " << r.token_count << " positions\n";
    return 0;
}

struct sweep_args {
    io_opts io;
    prune_opts po;
    std::vector<double> sparsities;
    std::vector<std::string> modes;
    int seq_len = 64;
    int64_t eval_tokens = 4096;
};

std::vector<sweep_point> run_sweep(const decoder_model& model, const corpus& data,
                                   const sweep_args& a) {
    const token_sequence stream = eval_stream(data, a.eval_tokens);
    std::vector<sweep_point> points;
    for (const auto& mode : a.modes) {
        for (double s : a.sparsities) {
            prune_opts po = a.po;
            po.mode = mode;
            po.sparsity = s;
            auto [pruned, report] = prune_model(model, data, po.to_config());
            sweep_point p;
            p.mode = mode;
            p.target_sparsity = s;
            p.achieved_sparsity = report.achieved_sparsity;
            p.perplexity = perplexity(pruned, stream, a.seq_len).perplexity;
            p.params_removed = report.params_removed;
            points.push_back(std::move(p));
            std::cout << "  " << mode << " s=" << s << " -> perplexity " << p.perplexity
                      << "\n";
        }
    }
    return points;
}

int cmd_ablate(sweep_args a, const bound_config& bc) {
    timer t;
    if (a.modes.empty()) {
        a.modes = {"restore", "zero-columns", "prune-qk", "no-restore", "bias-only"};
    }
    if (a.sparsities.empty()) a.sparsities = {0.1, 0.2, 0.3};
    const auto model = load_model_arg(a.io);
    const auto data = load_corpus_arg(a.io, model.spec.vocab);

    const auto points = run_sweep(model, data, a);
    const fs::path out = prepare_out_dir(a.io.out_dir);
    write_text(out / "ablate.csv", sweep_csv(points));
    write_text(out / "ablate.md", sweep_markdown(points));
    write_json(out / "config.json", bc.resolved());
    write_metadata(out, t.seconds());
    for (const auto& w : sweep_warnings(points)) std::cerr << "warning: " << w << "\n";
    return 0;
}

int cmd_report(sweep_args a, const bound_config& bc) {
    timer t;
    if (a.modes.empty()) a.modes = {"restore"};
    if (a.sparsities.empty()) a.sparsities = {0.0, 0.1, 0.2, 0.3};
    const auto model = load_model_arg(a.io);
    const auto data = load_corpus_arg(a.io, model.spec.vocab);

    const auto points = run_sweep(model, data, a);
    const fs::path out = prepare_out_dir(a.io.out_dir);
    write_text(out / "sweep.csv", sweep_csv(points));
    write_text(out / "sweep.svg", sweep_svg(points));
    write_json(out / "config.json", bc.resolved());
    write_metadata(out, t.seconds());
    for (const auto& w : sweep_warnings(points)) std::cerr << "warning: " << w << "\n";
    return 0;
}

void add_sweep_opts(CLI::App* cmd, bound_config& bc, sweep_args& a) {
    add_io(cmd, bc, a.io);
    add_prune_opts(cmd, bc, a.po, /*with_mode=*/false);
    bc.bind(cmd->add_option("--modes", a.modes, "pruning modes to compare"), "modes", a.modes);
    bc.bind(cmd->add_option("--sparsities", a.sparsities, "target sparsities"), "sparsities",
            a.sparsities);
    bc.bind(cmd->add_option("--seq-len", a.seq_len, "evaluation window length"), "seq_len",
            a.seq_len);
    bc.bind(cmd->add_option("--eval-tokens", a.eval_tokens,
                            "evaluate on this many leading corpus tokens (0 = all)"),
            "eval_tokens", a.eval_tokens);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structured pruning and evaluation for toy decoder checkpoints"};
    app.require_subcommand(1);

    build_args ba;
    bound_config b_bc;
    auto* build_cmd = app.add_subcommand("build", "create a seeded toy checkpoint");
    b_bc.attach(build_cmd);
    b_bc.bind(build_cmd->add_option("--family", ba.family, "opt|llama"), "family", ba.family);
    b_bc.bind(build_cmd->add_option("--d-model", ba.d_model, "model width"), "d_model",
              ba.d_model);
    b_bc.bind(build_cmd->add_option("--d-hidden", ba.d_hidden, "mlp width"), "d_hidden",
              ba.d_hidden);
    b_bc.bind(build_cmd->add_option("--heads", ba.n_heads, "attention heads"), "heads",
              ba.n_heads);
    b_bc.bind(build_cmd->add_option("--blocks", ba.n_blocks, "decoder blocks"), "blocks",
              ba.n_blocks);
    b_bc.bind(build_cmd->add_option("--vocab", ba.vocab, "vocabulary size"), "vocab", ba.vocab);
    b_bc.bind(build_cmd->add_option("--max-seq", ba.max_seq, "maximum sequence length"),
              "max_seq", ba.max_seq);
    b_bc.bind(build_cmd->add_option("--seed", ba.seed, "init seed"), "seed", ba.seed);
    add_io(build_cmd, b_bc, ba.io, /*needs_model=*/false);
    b_bc.bind(build_cmd->add_option("--synth-corpus", ba.synth_corpus,
                                    "also write a synthetic corpus here"),
              "synth_corpus", ba.synth_corpus);
    b_bc.bind(build_cmd->add_option("--corpus-kind", ba.corpus_kind, "zipf|bigram"),
              "corpus_kind", ba.corpus_kind);
    b_bc.bind(build_cmd->add_option("--corpus-tokens", ba.corpus_tokens, "corpus length"),
              "corpus_tokens", ba.corpus_tokens);
    b_bc.bind(build_cmd->add_option("--corpus-exponent", ba.corpus_exponent,
                                    "rank-frequency exponent"),
              "corpus_exponent", ba.corpus_exponent);
    b_bc.bind(build_cmd->add_option("--corpus-seed", ba.corpus_seed, "corpus seed"),
              "corpus_seed", ba.corpus_seed);

    train_args ta;
    bound_config t_bc;
    auto* train_cmd = app.add_subcommand("train-toy", "sgd on next-token cross entropy");
    t_bc.attach(train_cmd);
    add_io(train_cmd, t_bc, ta.io);
    t_bc.bind(train_cmd->add_option("--steps", ta.steps, "sgd steps"), "steps", ta.steps);
    t_bc.bind(train_cmd->add_option("--lr", ta.lr, "learning rate"), "lr", ta.lr);
    t_bc.bind(train_cmd->add_option("--batch", ta.batch, "sequences per step"), "batch",
              ta.batch);
    t_bc.bind(train_cmd->add_option("--seq-len", ta.seq_len, "training window"), "seq_len",
              ta.seq_len);
    t_bc.bind(train_cmd->add_option("--seed", ta.seed, "batch sampling seed"), "seed", ta.seed);
    t_bc.bind(train_cmd->add_option("--grad-clip", ta.grad_clip, "global gradient norm clip"),
              "grad_clip", ta.grad_clip);

    prune_args pa;
    bound_config p_bc;
    auto* prune_cmd = app.add_subcommand("prune", "structured pruning with optional refit");
    p_bc.attach(prune_cmd);
    add_io(prune_cmd, p_bc, pa.io);
    p_bc.bind(prune_cmd->add_option("--sparsity", pa.sparsity, "target parameter sparsity"),
              "sparsity", pa.sparsity);
    add_prune_opts(prune_cmd, p_bc, pa.po);

    eval_args ea;
    bound_config e_bc;
    auto* eval_cmd = app.add_subcommand("eval", "windowed perplexity, optional fidelity");
    e_bc.attach(eval_cmd);
    add_io(eval_cmd, e_bc, ea.io);
    e_bc.bind(eval_cmd->add_option("--seq-len", ea.seq_len, "evaluation window length"),
              "seq_len", ea.seq_len);
    e_bc.bind(eval_cmd->add_option("--eval-tokens", ea.eval_tokens,
                                   "evaluate on this many leading corpus tokens (0 = all)"),
              "eval_tokens", ea.eval_tokens);
    e_bc.bind(eval_cmd->add_option("--reference", ea.reference_dir,
                                   "dense checkpoint for fidelity comparison"),
              "reference", ea.reference_dir);
    e_bc.bind(eval_cmd->add_option("--fidelity-samples", ea.fidelity_samples,
                                   "fidelity input windows"),
              "fidelity_samples", ea.fidelity_samples);
    e_bc.bind(eval_cmd->add_option("--fidelity-seq", ea.fidelity_seq,
                                   "fidelity window length"),
              "fidelity_seq", ea.fidelity_seq);
    e_bc.bind(eval_cmd->add_option("--fidelity-seed", ea.fidelity_seed,
                                   "fidelity sampling seed"),
              "fidelity_seed", ea.fidelity_seed);

    sweep_args aa;
    bound_config a_bc;
    auto* ablate_cmd = app.add_subcommand("ablate", "compare pruning modes at set sparsities");
    a_bc.attach(ablate_cmd);
    add_sweep_opts(ablate_cmd, a_bc, aa);

    sweep_args ra;
    bound_config r_bc;
    auto* report_cmd = app.add_subcommand("report", "sparsity sweep: csv + svg");
    r_bc.attach(report_cmd);
    add_sweep_opts(report_cmd, r_bc, ra);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (build_cmd->parsed()) {
            b_bc.merge_file();
            return cmd_build(ba, b_bc);
        }
        if (train_cmd->parsed()) {
            t_bc.merge_file();
            return cmd_train_toy(ta, t_bc);
        }
        if (prune_cmd->parsed()) {
            p_bc.merge_file();
            return cmd_prune(pa, p_bc);
        }
        if (eval_cmd->parsed()) {
            e_bc.merge_file();
            return cmd_eval(ea, e_bc);
        }
        if (ablate_cmd->parsed()) {
            a_bc.merge_file();
            return cmd_ablate(aa, a_bc);
        }
        if (report_cmd->parsed()) {
            r_bc.merge_file();
            return cmd_report(ra, r_bc);
        }
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const plan_error& e) {
        std::cerr << "infeasible plan: " << e.what() << "\n";
        return 5;
    } catch (const not_positive_definite& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const training_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const resource_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const shape_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const index_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "unexpected failure: " << e.what() << "\n";
        return 1;
    }
}
