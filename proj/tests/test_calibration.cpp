#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fasp/calibration.hpp"
#include "fasp/linalg.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <random>

using namespace fasp;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "fasp_calib_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<int64_t> histogram(const token_sequence& toks, int vocab) {
    std::vector<int64_t> h(static_cast<size_t>(vocab), 0);
    for (token_id t : toks) h[static_cast<size_t>(t)]++;
    return h;
}

matd random_activations(Eigen::Index d, Eigen::Index p, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    matd x(d, p);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) x(i, j) = dist(rng);
    }
    return x;
}

}  // namespace

TEST_CASE("corpus files round trip in both encodings") {
    const fs::path dir = fresh_dir("roundtrip");
    corpus c;
    c.vocab = 50;
    c.tokens = {0, 7, 49, 3, 3, 12};

    save_corpus(c, dir / "a.tokens");
    const corpus bin = load_corpus(dir / "a.tokens", 50);
    CHECK(bin.tokens == c.tokens);

    save_corpus(c, dir / "a.txt");
    const corpus txt = load_corpus(dir / "a.txt", 50);
    CHECK(txt.tokens == c.tokens);
}

TEST_CASE("corpus loading rejects bad inputs") {
    const fs::path dir = fresh_dir("bad_inputs");
    CHECK_THROWS_AS(load_corpus(dir / "missing.tokens", 10), data_error);
    CHECK_THROWS_AS(load_corpus(dir / "a.bin", 10), data_error);

    corpus c;
    c.vocab = 50;
    c.tokens = {1, 2, 49};
    save_corpus(c, dir / "a.tokens");
    CHECK_THROWS_AS(load_corpus(dir / "a.tokens", 20), data_error);  // 49 out of range

    std::ofstream(dir / "odd.tokens", std::ios::binary) << "abc";  // 3 bytes
    CHECK_THROWS_AS(load_corpus(dir / "odd.tokens", 10), data_error);

    std::ofstream(dir / "junk.txt") << "1 2 three";
    CHECK_THROWS_AS(load_corpus(dir / "junk.txt", 10), data_error);

    std::ofstream(dir / "empty.txt") << "";
    CHECK_THROWS_AS(load_corpus(dir / "empty.txt", 10), data_error);
}

TEST_CASE("zipf corpus is deterministic and rank ordered") {
    const corpus a = synth_zipf_corpus(64, 20000, 1.1, 9);
    const corpus b = synth_zipf_corpus(64, 20000, 1.1, 9);
    const corpus c = synth_zipf_corpus(64, 20000, 1.1, 10);
    CHECK(a.tokens == b.tokens);
    CHECK(a.tokens != c.tokens);
    CHECK(a.vocab == 64);

    const auto h = histogram(a.tokens, 64);
    CHECK(h[0] > h[4]);
    CHECK(h[1] > h[8]);
    CHECK(h[0] > 20000 / 64);  // far above uniform share
    for (token_id t : a.tokens) {
        CHECK(t >= 0);
        CHECK(t < 64);
    }

    CHECK_THROWS_AS(synth_zipf_corpus(1, 100, 1.0, 0), data_error);
    CHECK_THROWS_AS(synth_zipf_corpus(8, 0, 1.0, 0), data_error);
    CHECK_THROWS_AS(synth_zipf_corpus(8, 100, 0.0, 0), data_error);
}

TEST_CASE("bigram corpus carries predictive context the iid corpus lacks") {
    const int v = 32;
    const corpus a = synth_bigram_corpus(v, 60000, 1.2, 3);
    const corpus b = synth_bigram_corpus(v, 60000, 1.2, 3);
    CHECK(a.tokens == b.tokens);

    // Empirical conditional p(next | state): for a zipf-permutation chain the
    // top successor of a frequent state should dominate its row, far beyond
    // the iid marginal share of any single token.
    std::map<std::pair<token_id, token_id>, int64_t> pair_counts;
    std::vector<int64_t> state_counts(v, 0);
    for (size_t i = 0; i + 1 < a.tokens.size(); ++i) {
        pair_counts[{a.tokens[i], a.tokens[i + 1]}]++;
        state_counts[static_cast<size_t>(a.tokens[i])]++;
    }
    int checked = 0;
    std::vector<token_id> top_successors;
    for (token_id s = 0; s < 4; ++s) {  // frequent states have dense rows
        if (state_counts[static_cast<size_t>(s)] < 1000) continue;
        int64_t best = 0;
        token_id best_next = -1;
        for (token_id n = 0; n < v; ++n) {
            const auto it = pair_counts.find({s, n});
            const int64_t cnt = it == pair_counts.end() ? 0 : it->second;
            if (cnt > best) {
                best = cnt;
                best_next = n;
            }
        }
        const double cond = static_cast<double>(best) /
                            static_cast<double>(state_counts[static_cast<size_t>(s)]);
        CHECK(cond > 0.2);  // zipf(1.2) head mass, reachable only via context
        top_successors.push_back(best_next);
        ++checked;
    }
    REQUIRE(checked >= 2);
    // Different states map their head rank to different successors.
    bool all_same = true;
    for (size_t i = 1; i < top_successors.size(); ++i) {
        if (top_successors[i] != top_successors[0]) all_same = false;
    }
    CHECK_FALSE(all_same);

    CHECK_THROWS_AS(synth_bigram_corpus(10000, 100, 1.0, 0), resource_error);
}

TEST_CASE("sample_corpus draws reproducible windows from the corpus") {
    const corpus c = synth_zipf_corpus(32, 5000, 1.0, 21);
    const auto s1 = sample_corpus(c, 8, 64, 5);
    const auto s2 = sample_corpus(c, 8, 64, 5);
    const auto s3 = sample_corpus(c, 8, 64, 6);
    REQUIRE(s1.size() == 8);
    CHECK(s1[3].size() == 64);
    CHECK(s1[3] == s2[3]);
    CHECK(s1 != s3);

    // every window is a contiguous slice of the corpus
    for (const auto& w : s1) {
        bool found = false;
        for (size_t off = 0; off + w.size() <= c.tokens.size() && !found; ++off) {
            if (std::equal(w.begin(), w.end(), c.tokens.begin() + static_cast<long>(off))) {
                found = true;
            }
        }
        CHECK(found);
    }

    CHECK_THROWS_AS(sample_corpus(c, 0, 64, 1), data_error);
    CHECK_THROWS_AS(sample_corpus(c, 1, 5001, 1), data_error);
    const corpus tiny = synth_zipf_corpus(8, 16, 1.0, 1);
    CHECK(sample_corpus(tiny, 3, 16, 1)[2].size() == 16);  // window == corpus
}

TEST_CASE("layer stats accumulate exactly like a one-shot computation") {
    stats_config cfg;
    cfg.want_mean = true;
    const matd x1 = random_activations(6, 11, 1);
    const matd x2 = random_activations(6, 7, 2);
    matd all(6, 18);
    all << x1, x2;

    layer_stats s = make_layer_stats(6, true, cfg);
    accumulate_stats(s, x1);
    accumulate_stats(s, x2);
    CHECK(s.token_count == 18);

    // oracles straight from the concatenated matrix
    for (Eigen::Index i = 0; i < 6; ++i) {
        double sq = 0.0, sum = 0.0;
        for (Eigen::Index t = 0; t < 18; ++t) {
            sq += all(i, t) * all(i, t);
            sum += all(i, t);
        }
        CHECK(feature_norms(s)[i] == doctest::Approx(std::sqrt(sq)).epsilon(1e-13));
        CHECK(feature_means(s)[i] == doctest::Approx(sum / 18.0).epsilon(1e-13));
    }
    const matd gram_ref = all * all.transpose();
    CHECK((s.gram - gram_ref).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((s.gram - matd(s.gram.transpose())).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("layer stats guard their preconditions") {
    stats_config cfg;
    layer_stats s = make_layer_stats(4, false, cfg);
    CHECK_THROWS_AS(accumulate_stats(s, matd::Zero(5, 3)), shape_error);
    CHECK_THROWS_AS(feature_norms(s), data_error);  // no tokens yet
    CHECK_THROWS_AS(feature_means(s), data_error);  // want_mean off

    matd bad = matd::Zero(4, 2);
    bad(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(accumulate_stats(s, bad), data_error);

    cfg.gram_dim_cap = 16;
    CHECK_THROWS_AS(make_layer_stats(17, true, cfg), resource_error);
    CHECK_NOTHROW(make_layer_stats(16, true, cfg));
    CHECK_NOTHROW(make_layer_stats(17, false, cfg));  // cap only guards grams
}

TEST_CASE("collect_stats walks the model and fills every tap") {
    arch_spec spec;
    spec.family = arch_family::opt_style;
    spec.d_model = 16;
    spec.d_hidden = 24;
    spec.n_heads = 2;
    spec.n_blocks = 2;
    spec.vocab = 40;
    spec.max_seq = 16;
    const auto model = build_model(spec, 31);
    const corpus c = synth_zipf_corpus(40, 2000, 1.1, 7);
    const auto samples = sample_corpus(c, 4, 12, 3);

    stats_config cfg;
    const std::vector<std::string> taps{"blocks.0.fc2", "blocks.1.fc2", "blocks.1.o"};
    const auto stats = collect_stats(model, samples, taps, {"blocks.1.fc2"}, cfg);

    REQUIRE(stats.size() == 3);
    CHECK(stats.at("blocks.0.fc2").dim == 24);
    CHECK(stats.at("blocks.1.o").dim == 16);
    CHECK(stats.at("blocks.0.fc2").token_count == 4 * 12);
    CHECK(stats.at("blocks.1.fc2").want_gram);
    CHECK_FALSE(stats.at("blocks.0.fc2").want_gram);
    CHECK(stats.at("blocks.0.fc2").gram.size() == 0);

    // independent accumulation over the same captures
    layer_stats ref = make_layer_stats(24, true, cfg);
    for (const auto& sample : samples) {
        capture_map caps;
        forward_model_traced(model, sample, {"blocks.1.fc2"}, &caps, nullptr);
        accumulate_stats(ref, caps.at("blocks.1.fc2"));
    }
    CHECK((feature_norms(stats.at("blocks.1.fc2")) - feature_norms(ref)).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK((stats.at("blocks.1.fc2").gram - ref.gram).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(collect_stats(model, {}, taps, {}, cfg), data_error);
}

TEST_CASE("gram diagonal mirrors the per-feature square sums") {
    stats_config cfg;
    layer_stats s = make_layer_stats(8, true, cfg);
    for (uint64_t seed = 0; seed < 4; ++seed) {
        accumulate_stats(s, random_activations(8, 13, 100 + seed));
    }
    for (Eigen::Index i = 0; i < 8; ++i) {
        CHECK(s.gram(i, i) == doctest::Approx(s.feature_sq[i]).epsilon(1e-9));
    }

    // quadratic form stays nonnegative up to accumulation noise
    std::mt19937_64 rng(5);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        vecd v(8);
        for (Eigen::Index i = 0; i < 8; ++i) v[i] = dist(rng);
        const double quad = v.dot(s.gram * v);
        CHECK(quad >= -1e-9 * s.gram.norm() * v.squaredNorm());
    }
}

TEST_CASE("block-by-block propagation without pruning matches the single pass") {
    arch_spec spec;
    spec.family = arch_family::llama_style;
    spec.d_model = 16;
    spec.d_hidden = 20;
    spec.n_heads = 2;
    spec.n_blocks = 3;
    spec.vocab = 50;
    spec.max_seq = 16;
    const auto model = build_model(spec, 77);
    const corpus c = synth_bigram_corpus(50, 3000, 1.1, 9);
    const auto samples = sample_corpus(c, 5, 14, 2);

    stats_config cfg;
    std::vector<std::string> taps;
    for (int b = 0; b < spec.n_blocks; ++b) {
        taps.push_back("blocks." + std::to_string(b) + ".down");
        taps.push_back("blocks." + std::to_string(b) + ".o");
    }
    const auto single = collect_stats(model, samples, taps, {taps.begin(), taps.end()}, cfg);

    // same statistics gathered by advancing activations one block at a time
    std::vector<matd> acts;
    for (const auto& s : samples) acts.push_back(embed_tokens(model, s));
    for (size_t b = 0; b < model.blocks.size(); ++b) {
        const std::string prefix = "blocks." + std::to_string(b) + ".";
        layer_stats down_stats = make_layer_stats(spec.d_hidden, true, cfg);
        layer_stats o_stats = make_layer_stats(spec.d_model, true, cfg);
        for (auto& x : acts) {
            capture_map caps;
            const matd next = forward_block(model.blocks[b], x, {"down", "o"}, &caps);
            accumulate_stats(down_stats, caps.at("down"));
            accumulate_stats(o_stats, caps.at("o"));
            x = next;
        }
        CHECK((single.at(prefix + "down").gram - down_stats.gram).cwiseAbs().maxCoeff() == 0.0);
        CHECK((single.at(prefix + "down").feature_sq - down_stats.feature_sq)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
        CHECK((single.at(prefix + "o").gram - o_stats.gram).cwiseAbs().maxCoeff() == 0.0);
        CHECK((single.at(prefix + "o").feature_sq - o_stats.feature_sq).cwiseAbs().maxCoeff() ==
              0.0);
    }
}
