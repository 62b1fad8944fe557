#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fasp/evaluate.hpp"
#include "fasp/linalg.hpp"
#include "fasp/prune.hpp"

#include <cmath>
#include <cstring>

using namespace fasp;

namespace {

arch_spec toy_spec(arch_family family) {
    arch_spec spec;
    spec.family = family;
    spec.d_model = 16;
    spec.d_hidden = 64;
    spec.n_heads = 2;
    spec.n_blocks = 2;
    spec.vocab = 48;
    spec.max_seq = 32;
    return spec;
}

const corpus& shared_corpus() {
    static const corpus c = synth_bigram_corpus(48, 6000, 1.1, 11);
    return c;
}

// Two-token model that predicts the alternating stream with probability one:
// blocks contribute nothing, the unembedding fires +-margin on the normalized
// embedding direction.
decoder_model alternating_toy(float margin) {
    arch_spec spec;
    spec.family = arch_family::opt_style;
    spec.d_model = 4;
    spec.d_hidden = 8;
    spec.n_heads = 1;
    spec.n_blocks = 1;
    spec.vocab = 2;
    spec.max_seq = 64;
    auto model = build_model(spec, 1);

    vecf u(4);
    u << 1.0f, -1.0f, 1.0f, -1.0f;
    model.tok_embedding.col(0) = u;
    model.tok_embedding.col(1) = -u;
    model.pos_embedding.setZero();
    model.unembed.row(0) = (-margin * u).transpose();  // token 0 follows token 1
    model.unembed.row(1) = (margin * u).transpose();
    for (auto& [name, lay] : model.blocks[0].proj) {
        lay.w.setZero();
        if (lay.has_bias()) lay.b.setZero();
    }
    return model;
}

token_sequence alternating_stream(size_t n) {
    token_sequence t(n);
    for (size_t i = 0; i < n; ++i) t[i] = static_cast<int32_t>(i % 2);
    return t;
}

double stream_nll_via_logits(const decoder_model& model,
                             const std::vector<token_sequence>& batch) {
    double total = 0.0;
    int64_t positions = 0;
    for (const auto& seq : batch) {
        const matd logits = forward_model(model, seq);
        for (size_t t = 0; t + 1 < seq.size(); ++t) {
            const vecd col = logits.col(static_cast<Eigen::Index>(t));
            const double m = col.maxCoeff();
            const double lse = m + std::log((col.array() - m).exp().sum());
            total += lse - col[seq[t + 1]];
            ++positions;
        }
    }
    return total / static_cast<double>(positions);
}

struct probe {
    std::string label;
    float* before = nullptr;  // coordinate inside the pre-training model copy
};

// central difference of the training loss wrt one f32 coordinate
double fd_gradient(decoder_model& model, float* coord_in_model,
                   const std::vector<token_sequence>& batch, float h) {
    const float saved = *coord_in_model;
    *coord_in_model = saved + h;
    const double up = mean_nll(model, batch);
    *coord_in_model = saved - h;
    const double down = mean_nll(model, batch);
    *coord_in_model = saved;
    return (up - down) / (2.0 * static_cast<double>(h));
}

}  // namespace

TEST_CASE("uniform logits score at chance level") {
    auto model = build_model(toy_spec(arch_family::opt_style), 3);
    model.unembed.setZero();
    const auto samples = sample_corpus(shared_corpus(), 1, 2000, 0);
    const auto r = perplexity(model, samples[0], 25);
    CHECK(r.perplexity == doctest::Approx(48.0).epsilon(1e-9));
    CHECK(r.token_count == 80 * 24);
}

TEST_CASE("a deterministic stream drives perplexity to one") {
    const auto r = perplexity(alternating_toy(30.0f), alternating_stream(64), 16);
    CHECK(r.perplexity == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.token_count == 4 * 15);
}

TEST_CASE("log-softmax survives ten-thousand-scale logits") {
    // margin 2500 puts the logits at +-1e4; unshifted exponentials overflow
    const auto r = perplexity(alternating_toy(2500.0f), alternating_stream(64), 16);
    CHECK(std::isfinite(r.perplexity));
    CHECK(r.perplexity == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("an argmax continuation never scores worse than chance") {
    const auto model = build_model(toy_spec(arch_family::llama_style), 9);
    const int window = 12;
    token_sequence stream;
    token_sequence prefix{3};
    while (static_cast<int>(prefix.size()) < window) {
        const matd logits = forward_model(model, prefix);
        Eigen::Index next = 0;
        logits.col(logits.cols() - 1).maxCoeff(&next);
        prefix.push_back(static_cast<int32_t>(next));
    }
    for (int rep = 0; rep < 3; ++rep) stream.insert(stream.end(), prefix.begin(), prefix.end());

    const auto r = perplexity(model, stream, window);
    CHECK(r.perplexity <= 48.0 * (1.0 + 1e-9));
}

TEST_CASE("windows partition the stream and short tails still count") {
    const auto model = build_model(toy_spec(arch_family::opt_style), 3);
    const auto samples = sample_corpus(shared_corpus(), 1, 1000, 1);
    const token_sequence& s = samples[0];

    const token_sequence two_and_one(s.begin(), s.begin() + 33);  // 16+16+1
    CHECK(perplexity(model, two_and_one, 16).token_count == 2 * 15);

    const token_sequence with_tail(s.begin(), s.begin() + 19);  // 16+3
    CHECK(perplexity(model, with_tail, 16).token_count == 15 + 2);

    // one window, evaluated standalone, reproduces the stream mean exactly
    const token_sequence lone(s.begin(), s.begin() + 16);
    const auto full = perplexity(model, lone, 16);
    CHECK(full.token_count == 15);
    CHECK(full.perplexity ==
          doctest::Approx(std::exp(stream_nll_via_logits(model, {lone}))).epsilon(1e-12));
}

TEST_CASE("perplexity rejects unusable windows") {
    const auto model = build_model(toy_spec(arch_family::opt_style), 3);
    const auto samples = sample_corpus(shared_corpus(), 1, 64, 2);
    CHECK_THROWS_AS(perplexity(model, samples[0], 1), data_error);
    CHECK_THROWS_AS(perplexity(model, samples[0], 33), data_error);  // beyond max_seq
    CHECK_THROWS_AS(perplexity(model, token_sequence{5}, 16), data_error);
}

TEST_CASE("perplexity is unchanged by a no-op prune") {
    for (arch_family family : {arch_family::opt_style, arch_family::llama_style}) {
        const auto model = build_model(toy_spec(family), 21);
        prune_config cfg;
        cfg.sparsity = 0.0;
        cfg.calib_samples = 4;
        cfg.calib_seq = 16;
        auto [pruned, report] = prune_model(model, shared_corpus(), cfg);
        const auto samples = sample_corpus(shared_corpus(), 1, 512, 3);
        const double a = perplexity(model, samples[0], 32).perplexity;
        const double b = perplexity(pruned, samples[0], 32).perplexity;
        CHECK(a == b);  // byte-identical weights, identical arithmetic
    }
}

TEST_CASE("a model is perfectly faithful to itself") {
    const auto model = build_model(toy_spec(arch_family::llama_style), 33);
    const auto inputs = sample_corpus(shared_corpus(), 3, 16, 4);
    const auto f = output_fidelity(model, model, inputs);
    CHECK(f.logit_gap == 0.0);
    REQUIRE(f.block_cosine.size() == 2);
    for (double c : f.block_cosine) CHECK(c == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fidelity degrades but stays positive after moderate pruning") {
    const auto model = build_model(toy_spec(arch_family::opt_style), 35);
    prune_config cfg;
    cfg.mode = prune_mode::restore;
    cfg.sparsity = 0.2;
    cfg.calib_samples = 6;
    cfg.calib_seq = 24;
    auto [pruned, report] = prune_model(model, shared_corpus(), cfg);
    const auto inputs = sample_corpus(shared_corpus(), 3, 16, 5);
    const auto f = output_fidelity(model, pruned, inputs);
    CHECK(f.logit_gap > 0.0);
    for (double c : f.block_cosine) {
        CHECK(c > 0.5);
        CHECK(c <= 1.0 + 1e-12);
    }
}

TEST_CASE("fidelity comparisons require matching interfaces") {
    const auto a = build_model(toy_spec(arch_family::opt_style), 37);
    const auto inputs = sample_corpus(shared_corpus(), 2, 16, 6);

    auto spec_v = toy_spec(arch_family::opt_style);
    spec_v.vocab = 32;
    const auto wrong_vocab = build_model(spec_v, 38);
    CHECK_THROWS_AS(output_fidelity(a, wrong_vocab, inputs), shape_error);

    auto spec_b = toy_spec(arch_family::opt_style);
    spec_b.n_blocks = 3;
    const auto wrong_depth = build_model(spec_b, 39);
    CHECK_THROWS_AS(output_fidelity(a, wrong_depth, inputs), shape_error);

    CHECK_THROWS_AS(output_fidelity(a, a, {}), data_error);
}

TEST_CASE("the zeroing oracle is the identity on empty removals") {
    const auto model = build_model(toy_spec(arch_family::llama_style), 41);
    const auto& block = model.blocks[0];
    matd x = matd::Random(16, 7);
    for (const auto& grp : build_coupling_graph(block, false).groups) {
        const matd got = oracle_zeroed_forward(block, grp, {}, x);
        const matd want = forward_block(block, x);
        CHECK((got - want).norm() == 0.0);
    }
}

TEST_CASE("removing every mlp channel leaves the downstream bias broadcast") {
    auto model = build_model(toy_spec(arch_family::opt_style), 43);
    decoder_block& block = model.blocks[0];
    // give the bias something to say
    for (Eigen::Index i = 0; i < block.at("fc2").b.size(); ++i) {
        block.at("fc2").b[i] = 0.01f * static_cast<float>(i + 1);
    }
    const auto graph = build_coupling_graph(block, true);
    REQUIRE(graph.groups[0].kind == group_kind::mlp_channel);
    index_list all(64);
    for (Eigen::Index i = 0; i < 64; ++i) all[static_cast<size_t>(i)] = i;

    const matd x = matd::Random(16, 9);
    const matd got = oracle_zeroed_forward(block, graph.groups[0], all, x);

    decoder_block gutted = block;
    gutted.at("fc2").w.setZero();
    gutted.at("fc2").b.setZero();
    matd want = forward_block(gutted, x);
    want.colwise() += vecd(block.at("fc2").b.cast<double>());
    CHECK((got - want).norm() / want.norm() <= 1e-12);
}

TEST_CASE("the reference least-squares solver guards its inputs") {
    const matd w = matd::Random(3, 6);
    const matd x = matd::Random(6, 30);
    CHECK_THROWS_AS(oracle_least_squares(w, matd::Random(5, 30), {0, 1}), shape_error);
    CHECK_THROWS_AS(oracle_least_squares(w, x, {}), index_error);
    CHECK_THROWS_AS(oracle_least_squares(w, x, {0, 6}), index_error);
}

TEST_CASE("zero training steps return the model bit for bit") {
    const auto model = build_model(toy_spec(arch_family::llama_style), 51);
    train_config cfg;
    cfg.steps = 0;
    cfg.seq_len = 16;
    const auto out = train_toy(model, shared_corpus(), cfg);
    CHECK(std::memcmp(model.tok_embedding.data(), out.tok_embedding.data(),
                      sizeof(float) * static_cast<size_t>(model.tok_embedding.size())) == 0);
    CHECK(std::memcmp(model.blocks[0].at("down").w.data(), out.blocks[0].at("down").w.data(),
                      sizeof(float) * static_cast<size_t>(model.blocks[0].at("down").w.size())) ==
          0);
}

TEST_CASE("training is deterministic per seed") {
    const auto model = build_model(toy_spec(arch_family::opt_style), 53);
    train_config cfg;
    cfg.steps = 10;
    cfg.seq_len = 16;
    cfg.batch = 3;
    cfg.seed = 4;
    const auto a = train_toy(model, shared_corpus(), cfg);
    const auto b = train_toy(model, shared_corpus(), cfg);
    CHECK(std::memcmp(a.unembed.data(), b.unembed.data(),
                      sizeof(float) * static_cast<size_t>(a.unembed.size())) == 0);
    CHECK(std::memcmp(a.blocks[1].at("fc1").w.data(), b.blocks[1].at("fc1").w.data(),
                      sizeof(float) * static_cast<size_t>(a.blocks[1].at("fc1").w.size())) == 0);

    cfg.seed = 5;
    const auto c = train_toy(model, shared_corpus(), cfg);
    CHECK(std::memcmp(a.unembed.data(), c.unembed.data(),
                      sizeof(float) * static_cast<size_t>(a.unembed.size())) != 0);
}

TEST_CASE("training lowers both the loss and the perplexity") {
    for (arch_family family : {arch_family::opt_style, arch_family::llama_style}) {
        const auto model = build_model(toy_spec(family), 55);
        train_config cfg;
        cfg.steps = 200;
        cfg.lr = 0.05;
        cfg.batch = 4;
        cfg.seq_len = 16;
        const auto trained = train_toy(model, shared_corpus(), cfg);

        const auto probe_batch = sample_corpus(shared_corpus(), 8, 16, 999);
        CHECK(mean_nll(trained, probe_batch) < mean_nll(model, probe_batch));

        const auto eval_tokens = sample_corpus(shared_corpus(), 1, 2000, 1000)[0];
        const double before = perplexity(model, eval_tokens, 16).perplexity;
        const double after = perplexity(trained, eval_tokens, 16).perplexity;
        CHECK(after < before);
        CHECK(after < 48.0);  // beats the uniform baseline
    }
}

TEST_CASE("a runaway learning rate raises a diagnosable error") {
    // pre-norm blocks re-normalize any weight scale, so a merely large rate
    // degrades slowly; only an update that overflows f32 storage produces a
    // non-finite loss, and that is exactly what the detector must catch
    const auto model = build_model(toy_spec(arch_family::opt_style), 57);
    train_config cfg;
    cfg.steps = 5;
    cfg.lr = 1e300;
    cfg.grad_clip = 1e18;  // disarm the safety net so the blow-up is visible
    cfg.seq_len = 16;
    CHECK_THROWS_WITH_AS(train_toy(model, shared_corpus(), cfg), doctest::Contains("diverged"),
                         training_error);
}

TEST_CASE("train_toy rejects unusable configuration") {
    const auto model = build_model(toy_spec(arch_family::opt_style), 59);
    train_config cfg;
    cfg.seq_len = 16;
    train_config bad = cfg;
    bad.steps = -1;
    CHECK_THROWS_AS(train_toy(model, shared_corpus(), bad), data_error);
    bad = cfg;
    bad.lr = 0.0;
    CHECK_THROWS_AS(train_toy(model, shared_corpus(), bad), data_error);
    bad = cfg;
    bad.batch = 0;
    CHECK_THROWS_AS(train_toy(model, shared_corpus(), bad), data_error);
    bad = cfg;
    bad.seq_len = 100;  // beyond max_seq
    CHECK_THROWS_AS(train_toy(model, shared_corpus(), bad), data_error);
    bad = cfg;
    bad.grad_clip = 0.0;
    CHECK_THROWS_AS(train_toy(model, shared_corpus(), bad), data_error);

    corpus wrong = shared_corpus();
    wrong.vocab = 12;
    CHECK_THROWS_AS(train_toy(model, wrong, cfg), data_error);
}

TEST_CASE("the training loss equals the logit-path cross entropy") {
    const auto model = build_model(toy_spec(arch_family::llama_style), 61);
    const auto batch = sample_corpus(shared_corpus(), 3, 16, 7);
    const double tape = mean_nll(model, batch);
    const double direct = stream_nll_via_logits(model, batch);
    CHECK(tape == doctest::Approx(direct).epsilon(1e-12));

    CHECK_THROWS_AS(mean_nll(model, {}), data_error);
    CHECK_THROWS_AS(mean_nll(model, {token_sequence{1}}), data_error);
}

TEST_CASE("one sgd step moves along the finite-difference gradient") {
    for (arch_family family : {arch_family::opt_style, arch_family::llama_style}) {
        const auto model = build_model(toy_spec(family), 63);
        train_config cfg;
        cfg.steps = 1;
        cfg.lr = 1e-3;
        cfg.batch = 3;
        cfg.seq_len = 12;
        cfg.seed = 17;
        cfg.grad_clip = 1e18;  // far above the global norm: no rescaling
        const auto trained = train_toy(model, shared_corpus(), cfg);
        const auto batch = train_batch(shared_corpus(), cfg, 0);

        const bool opt = family == arch_family::opt_style;
        auto coord = [&](decoder_model& m, int which) -> float* {
            switch (which) {
                case 0: return &m.blocks[0].at(opt ? "fc1" : "gate").w(0, 0);
                case 1: return &m.blocks[0].at(opt ? "fc2" : "down").w(1, 2);
                case 2: return &m.blocks[0].at("q").w(1, 3);
                case 3: return &m.blocks[0].at("v").w(2, 0);
                case 4: return &m.blocks[1].at("o").w(0, 5);
                case 5: return &m.tok_embedding(1, 4);
                case 6: return &m.unembed(2, 3);
                case 7: return &m.blocks[0].mlp_norm.gamma(1);
                case 8: return &m.pos_embedding(0, 1);
                default: return opt ? &m.blocks[0].at("fc1").b(2) : &m.final_norm.gamma(0);
            }
        };

        decoder_model before = model;
        decoder_model after = trained;
        decoder_model scratch = model;
        for (int which = 0; which < 10; ++which) {
            const double recovered =
                (static_cast<double>(*coord(before, which)) -
                 static_cast<double>(*coord(after, which))) /
                cfg.lr;
            const double fd = fd_gradient(scratch, coord(scratch, which), batch, 1e-3f);
            const double tol = 5e-2 * std::max(0.01, std::abs(fd));
            CHECK(std::abs(recovered - fd) <= tol);
        }
    }
}
