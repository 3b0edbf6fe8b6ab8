#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "concernsim/cli.hpp"
#include "concernsim/policy.hpp"
#include "reference_sim.hpp"

using namespace concernsim;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args, const std::string& input = "") {
    args.insert(args.begin(), "concernsim");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::istringstream in(input);
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), in, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("concernsim_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string bank_path(const std::string& name) { return testkit::source_path("data/banks/" + name + ".json"); }

fs::path tiny_config(const fs::path& dir, std::size_t iterations) {
    const fs::path p = dir / "tiny.json";
    spit(p, R"({"G": 4, "groups_per_iteration": 2, "E": 1, "eval_personas": 6, "eval_every": 1, "iterations": )" +
                std::to_string(iterations) + "}");
    return p;
}

}  // namespace

TEST_CASE("bank validate exit codes") {
    CHECK(cli({"bank", "validate", bank_path("merchant_toy")}).code == kExitOk);
    const auto cyc = cli({"bank", "validate", testkit::source_path("tests/data/cyclic_bank.json")});
    CHECK(cyc.code == kExitDomain);
    CHECK(cyc.out.find("prerequisite-cycle") != std::string::npos);
    CHECK(cli({"bank", "validate", testkit::source_path("tests/data/malformed_bank.json")}).code == kExitUsage);
    CHECK(cli({"bank", "validate"}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("persona sample is seeded") {
    const auto a = cli({"--seed", "5", "persona", "sample", "--bank", bank_path("merchant_toy"), "--count", "3"});
    const auto b = cli({"--seed", "5", "persona", "sample", "--bank", bank_path("merchant_toy"), "--count", "3"});
    REQUIRE(a.code == kExitOk);
    CHECK(a.out == b.out);
    CHECK(load_personas(a.out).size() == 3);
}

TEST_CASE("train writes a manifest, one record per iteration and checkpoints") {
    const auto dir = scratch("train");
    const auto cfg = tiny_config(dir, 1);
    const auto run_dir = dir / "run";
    const auto r = cli({"--seed", "3", "--config", cfg.string(), "--out", run_dir.string(), "--no-timestamps",
                        "train", "--bank", bank_path("merchant_toy"), "--eval-seeds", "2", "--episode-logs", "2"});
    REQUIRE(r.code == kExitOk);
    const auto manifest = Json::parse(slurp(run_dir / "manifest.json"));
    CHECK(manifest.at("seed") == 3);
    CHECK_FALSE(manifest.contains("created_unix"));
    CHECK(manifest.at("artifacts").at("checkpoints").size() == 1);
    CHECK(fs::exists(run_dir / "checkpoints" / "iter_000001.ckpt"));

    std::istringstream lines(slurp(run_dir / "run_log.jsonl"));
    std::string line;
    int iteration_records = 0;
    std::vector<std::string> kinds;
    while (std::getline(lines, line)) {
        const auto j = Json::parse(line);
        kinds.push_back(j.at("record"));
        iteration_records += j.at("record") == "iteration";
    }
    CHECK(iteration_records == 1);
    CHECK(kinds.front() == "header");
    CHECK(kinds.back() == "final");

    const auto rep = Json::parse(slurp(run_dir / "eval_report.json"));
    CHECK(rep.at("per_seed").size() == 2);
    for (const char* ep : {"episode_0.jsonl", "episode_1.jsonl"}) {
        const auto rr = cli({"replay", (run_dir / "episodes" / ep).string()});
        CHECK(rr.code == kExitOk);
        CHECK(rr.out == "ok\n");
    }

    const auto again = dir / "again";
    REQUIRE(cli({"--seed", "3", "--config", cfg.string(), "--out", again.string(), "--no-timestamps", "train",
                 "--bank", bank_path("merchant_toy"), "--eval-seeds", "2", "--episode-logs", "2"})
                .code == kExitOk);
    CHECK(slurp(run_dir / "run_log.jsonl") == slurp(again / "run_log.jsonl"));
    CHECK(slurp(run_dir / "checkpoints" / "iter_000001.ckpt") == slurp(again / "checkpoints" / "iter_000001.ckpt"));
    CHECK(slurp(run_dir / "manifest.json").find(run_dir.string()) == std::string::npos);
}

TEST_CASE("config errors name the key") {
    const auto dir = scratch("badcfg");
    spit(dir / "bad.json", R"({"learnin_rate": 0.1})");
    const auto r = cli({"--config", (dir / "bad.json").string(), "--out", (dir / "o").string(), "train", "--bank",
                        bank_path("merchant_toy")});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("learnin_rate") != std::string::npos);
    spit(dir / "bad2.json", R"({"G": 1})");
    CHECK(cli({"--config", (dir / "bad2.json").string(), "--out", (dir / "o").string(), "train", "--bank",
               bank_path("merchant_toy")})
              .code == kExitUsage);
}

TEST_CASE("eval of an all-zero checkpoint") {
    const auto dir = scratch("eval");
    const ConcernBank bank = testkit::load_fixture_bank("merchant_toy");
    spit(dir / "zero.ckpt", save_checkpoint(PolicyParams(bank, 20)));
    const auto r = cli({"--seed", "1", "--out", (dir / "rep").string(), "eval", "--checkpoint",
                        (dir / "zero.ckpt").string(), "--bank", bank_path("merchant_toy"), "--sample", "100",
                        "--seeds", "1,2"});
    REQUIRE(r.code == kExitOk);
    const auto rep = Json::parse(slurp(dir / "rep" / "eval_report.json"));
    CHECK(rep.at("episodes") == 200);
    CHECK(rep.at("ar").get<double>() < 10.0);

    const auto both = cli({"eval", "--checkpoint", (dir / "zero.ckpt").string(), "--bank",
                           bank_path("merchant_toy"), "--sample", "20", "--view", "both"});
    CHECK(both.code == kExitOk);
    CHECK(both.out.find("# view deployable") != std::string::npos);
    CHECK(both.out.find("# view privileged") != std::string::npos);
    CHECK(both.out.find("# privileged - deployable AR:") != std::string::npos);

    spit(dir / "empty.json", "[]");
    CHECK(cli({"eval", "--checkpoint", (dir / "zero.ckpt").string(), "--bank", bank_path("merchant_toy"),
               "--personas", (dir / "empty.json").string()})
              .code == kExitUsage);
    CHECK(cli({"eval", "--checkpoint", (dir / "zero.ckpt").string(), "--bank", bank_path("courier_toy"),
               "--sample", "3"})
              .code == kExitDomain);
}

TEST_CASE("replay flags a tampered log") {
    const auto dir = scratch("replay");
    const ConcernBank bank = testkit::load_fixture_bank("merchant_toy");
    const auto log = testkit::random_episode(sample_persona(bank, 2), bank, {}, 2);
    REQUIRE(log.turns.size() >= 3);
    std::string text = serialize_episode(log, bank);
    spit(dir / "ok.jsonl", text);
    CHECK(cli({"replay", (dir / "ok.jsonl").string()}).code == kExitOk);
    // third line is turn 1
    std::size_t pos = 0;
    for (int i = 0; i < 2; ++i) pos = text.find('\n', pos) + 1;
    const auto at = text.find("\"utterance\":\"", pos);
    REQUIRE(at != std::string::npos);
    text.insert(at + 13, "Well, ");
    spit(dir / "bad.jsonl", text);
    const auto r = cli({"replay", (dir / "bad.jsonl").string()});
    CHECK(r.code == kExitDomain);
    CHECK(r.out.rfind("divergence", 0) == 0);
}

TEST_CASE("play") {
    const auto dir = scratch("play");
    const ConcernBank micro = testkit::load_fixture_bank("micro");
    spit(dir / "one.json", serialize_personas({testkit::make_persona({"c1"}, 60.0)}));
    const std::vector<std::string> base{"play", "--bank", bank_path("micro"), "--personas", (dir / "one.json").string()};

    SUBCASE("scripted optimal sequence is accepted") {
        const auto r = cli(base, "help\nprobe a\naddress c1 t1\nnonsense\naddress c1 t1\nclose\n");
        CHECK(r.code == kExitOk);
        CHECK(r.out.find("unrecognized act") != std::string::npos);
        CHECK(r.out.find("decision: accept") != std::string::npos);
        CHECK(r.out.find("csr: 1/1") != std::string::npos);
    }
    SUBCASE("quit abandons") {
        const auto r = cli(base, "acknowledge\nquit\n");
        CHECK(r.code == kExitOk);
        CHECK(r.out.find("decision: reject (abandoned)") != std::string::npos);
    }
    SUBCASE("hidden concerns stay hidden unless revealed") {
        const ConcernBank bank = testkit::load_fixture_bank("merchant_toy");
        const auto persona = sample_persona(bank, 0);
        const std::vector<std::string> args{"--seed", "0", "play", "--bank", bank_path("merchant_toy")};
        const auto r = cli(args, "ack\nack\npitch\n");
        CHECK(r.out.find("hidden concerns") == std::string::npos);
        for (const auto& id : persona.internal) CHECK(r.out.find(id) == std::string::npos);
        auto rev = args;
        rev.push_back("--reveal");
        const auto shown = cli(rev, "ack\n");
        CHECK(shown.out.find("hidden concerns:") != std::string::npos);
        for (const auto& id : persona.internal) CHECK(shown.out.find(id) != std::string::npos);
    }
    SUBCASE("the play log replays") {
        const auto r = cli({"--out", (dir / "play.jsonl").string(), "play", "--bank", bank_path("micro"),
                            "--personas", (dir / "one.json").string()},
                           "probe b\naddress c2 t2\nquit\n");
        CHECK(r.code == kExitOk);
        CHECK(cli({"replay", (dir / "play.jsonl").string()}).code == kExitOk);
    }
}
