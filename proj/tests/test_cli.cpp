#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "fasp/checkpoint.hpp"

#include "json.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

std::string g_binary;
fs::path g_scratch;

int run(const std::string& args) {
    const std::string cmd = "\"" + g_binary + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1 || !WIFEXITED(status)) return -1;
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json slurp_json(const fs::path& file) { return nlohmann::json::parse(slurp(file)); }

std::string p(const fs::path& rel) { return (g_scratch / rel).string(); }

// one shared toy model + corpus, built once through the binary itself
bool build_fixture() {
    if (run("build --family opt --d-model 16 --d-hidden 64 --heads 2 --blocks 2"
            " --vocab 48 --max-seq 32 --seed 3 --out " +
            p("m0") + " --synth-corpus " + p("c.tokens") + " --corpus-tokens 6000") != 0) {
        std::fprintf(stderr, "fixture: build subcommand failed\n");
        return false;
    }
    return fs::exists(g_scratch / "m0" / "manifest.json") &&
           fs::exists(g_scratch / "m0" / "tensors.bin") && fs::exists(g_scratch / "c.tokens");
}

const std::string k_calib = " --calib-samples 6 --calib-seq 24";

}  // namespace

TEST_CASE("help and usage errors use the documented exit codes") {
    CHECK(run("--help") == 0);
    CHECK(run("prune --help") == 0);
    CHECK(run("") == 2);                      // missing subcommand
    CHECK(run("frobnicate") == 2);            // unknown subcommand
    CHECK(run("prune --no-such-flag") == 2);  // unknown flag
}

TEST_CASE("prune writes an accounted checkpoint and stable report") {
    REQUIRE(run("prune --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " +
                p("p20") + " --sparsity 0.2" + k_calib) == 0);

    const auto report = slurp_json(p("p20/report.json"));
    CHECK(report.at("mode") == "restore");
    const double achieved = report.at("achieved").at("sparsity").get<double>();
    CHECK(std::abs(achieved - 0.2) <= 0.005);
    CHECK(report.at("achieved").at("params_removed").get<int64_t>() ==
          report.at("plan").at("params_removed_planned").get<int64_t>());

    // the pruned checkpoint loads and its shapes shrank coherently
    const auto pruned = fasp::load_checkpoint(p("p20"));
    CHECK(pruned.blocks[0].at("fc2").w.cols() < 64);
    CHECK(pruned.blocks[0].at("fc1").w.rows() == pruned.blocks[0].at("fc2").w.cols());
    CHECK(pruned.blocks[0].at("q").w.rows() == 16);

    // resolved config next to the outputs names what actually ran
    const auto cfg = slurp_json(p("p20/config.json"));
    CHECK(cfg.at("sparsity").get<double>() == 0.2);
    CHECK(cfg.at("mode") == "restore");
    CHECK(cfg.at("calib_samples").get<int>() == 6);

    // timings live in the separate metadata file, not the report
    CHECK(slurp(p("p20/report.json")).find("wall") == std::string::npos);
    CHECK(slurp_json(p("p20/metadata.json")).contains("wall_seconds"));
}

TEST_CASE("zero sparsity reproduces the input tensors byte for byte") {
    REQUIRE(run("prune --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " + p("p0") +
                " --sparsity 0" + k_calib) == 0);
    CHECK(slurp(p("p0/tensors.bin")) == slurp(p("m0/tensors.bin")));
}

TEST_CASE("identical configs give identical outputs, timings aside") {
    const std::string args = "prune --model " + p("m0") + " --corpus " + p("c.tokens") +
                             " --sparsity 0.3 --mode no-restore" + k_calib;
    REQUIRE(run(args + " --out " + p("da")) == 0);
    REQUIRE(run(args + " --out " + p("db")) == 0);
    CHECK(slurp(p("da/tensors.bin")) == slurp(p("db/tensors.bin")));
    CHECK(slurp(p("da/manifest.json")) == slurp(p("db/manifest.json")));
    CHECK(slurp(p("da/report.json")) == slurp(p("db/report.json")));
    auto ca = slurp_json(p("da/config.json"));
    auto cb = slurp_json(p("db/config.json"));
    ca.erase("out");  // the destination is the one legitimate difference
    cb.erase("out");
    CHECK(ca == cb);
}

TEST_CASE("infeasible sparsity exits with the plan code") {
    CHECK(run("prune --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " +
              p("pbad") + " --sparsity 0.95" + k_calib) == 5);
}

TEST_CASE("bad data exits with the data code") {
    {
        std::ofstream bad(g_scratch / "bad.txt");
        bad << "1 2 9999 4\n";  // token beyond the model vocabulary
    }
    CHECK(run("prune --model " + p("m0") + " --corpus " + p("bad.txt") + " --out " +
              p("pdata") + " --sparsity 0.1" + k_calib) == 3);
    CHECK(run("eval --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " +
              p("ebad") + " --seq-len 2000") == 3);  // window beyond max_seq
    CHECK(run("prune --model " + p("does-not-exist") + " --corpus " + p("c.tokens") +
              " --out " + p("pmiss") + " --sparsity 0.1" + k_calib) == 3);
}

TEST_CASE("training divergence exits with the numerical code") {
    CHECK(run("train-toy --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " +
              p("tdiv") + " --steps 5 --lr 1e300 --grad-clip 1e18 --seq-len 16") == 4);
}

TEST_CASE("zero training steps round-trip the checkpoint bits") {
    REQUIRE(run("train-toy --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " +
                p("t0") + " --steps 0 --seq-len 16") == 0);
    CHECK(slurp(p("t0/tensors.bin")) == slurp(p("m0/tensors.bin")));
}

TEST_CASE("eval emits deterministic json and flags the no-op prune as equal") {
    REQUIRE(run("eval --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " +
                p("ed") + " --seq-len 16 --eval-tokens 2000") == 0);
    REQUIRE(run("eval --model " + p("p0") + " --corpus " + p("c.tokens") + " --out " +
                p("ep") + " --seq-len 16 --eval-tokens 2000") == 0);
    const auto dense = slurp_json(p("ed/eval.json"));
    const auto noop = slurp_json(p("ep/eval.json"));
    CHECK(dense.at("perplexity").get<double>() == noop.at("perplexity").get<double>());
    CHECK(dense.at("token_count").get<int64_t>() == 125 * 15);

    REQUIRE(run("eval --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " +
                p("ed2") + " --seq-len 16 --eval-tokens 2000") == 0);
    CHECK(slurp(p("ed/eval.json")) == slurp(p("ed2/eval.json")));
}

TEST_CASE("fidelity against a reference lands in the eval json") {
    REQUIRE(run("eval --model " + p("p20") + " --corpus " + p("c.tokens") + " --out " +
                p("ef") + " --seq-len 16 --eval-tokens 1000 --reference " + p("m0")) == 0);
    const auto doc = slurp_json(p("ef/eval.json"));
    REQUIRE(doc.contains("fidelity"));
    CHECK(doc.at("fidelity").at("logit_gap").get<double>() > 0.0);
    CHECK(doc.at("fidelity").at("block_cosine").size() == 2);
}

TEST_CASE("config file fills gaps and explicit flags beat it") {
    {
        std::ofstream cfg(g_scratch / "cfg.json");
        cfg << R"({"sparsity": 0.2, "calib_samples": 6, "calib_seq": 24})";
    }
    REQUIRE(run("prune --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " +
                p("pc") + " --config " + p("cfg.json")) == 0);
    CHECK(slurp_json(p("pc/report.json")).at("plan").at("target_sparsity").get<double>() == 0.2);

    REQUIRE(run("prune --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " +
                p("pc1") + " --config " + p("cfg.json") + " --sparsity 0.1") == 0);
    CHECK(slurp_json(p("pc1/report.json")).at("plan").at("target_sparsity").get<double>() ==
          0.1);

    {
        std::ofstream cfg(g_scratch / "bad_cfg.json");
        cfg << R"({"sparsify": 0.2})";  // unknown key
    }
    CHECK(run("prune --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " +
              p("pc2") + " --config " + p("bad_cfg.json")) == 3);
    {
        std::ofstream cfg(g_scratch / "broken.json");
        cfg << "{nope";
    }
    CHECK(run("prune --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " +
              p("pc3") + " --config " + p("broken.json")) == 3);
}

TEST_CASE("ablate writes one table row per mode and sparsity") {
    REQUIRE(run("ablate --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " +
                p("ab") + " --modes restore no-restore --sparsities 0.1 0.2" + k_calib +
                " --seq-len 16 --eval-tokens 1000") == 0);
    const std::string csv = slurp(p("ab/ablate.csv"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 rows
    CHECK(csv.find("restore,0.1") != std::string::npos);
    CHECK(csv.find("no-restore,0.2") != std::string::npos);
    const std::string md = slurp(p("ab/ablate.md"));
    CHECK(std::count(md.begin(), md.end(), '\n') == 6);  // header + rule + 4 rows
}

TEST_CASE("report writes the sweep csv and svg") {
    REQUIRE(run("report --model " + p("m0") + " --corpus " + p("c.tokens") + " --out " +
                p("rp") + " --sparsities 0 0.1 0.2" + k_calib +
                " --seq-len 16 --eval-tokens 1000") == 0);
    const std::string csv = slurp(p("rp/sweep.csv"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    const std::string svg = slurp(p("rp/sweep.svg"));
    CHECK(svg.rfind("<svg ", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("<polyline") != std::string::npos);
}

int cli_main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-fasp-binary> [doctest args]\n");
        return 2;
    }
    g_binary = argv[1];
    g_scratch = fs::absolute("cli_scratch");
    fs::remove_all(g_scratch);
    fs::create_directories(g_scratch);

    if (!build_fixture()) return 1;
    doctest::Context ctx;
    ctx.applyCommandLine(argc - 1, argv + 1);
    return ctx.run();
}

int main(int argc, char** argv) { return cli_main(argc, argv); }
