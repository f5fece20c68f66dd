#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "dglm/config.hpp"

using namespace dglm;

namespace {

std::string write_cfg(const std::string& body) {
    std::string path = "/tmp/dglm_test_cfg";
    std::ofstream out(path);
    out << body;
    return path;
}

}  // namespace

TEST_CASE("config parses key=value lines with comments") {
    auto path = write_cfg(
        "# top comment\n"
        "seed = 42\n"
        "sampler.steps=50   # inline comment\n"
        "\n"
        "schedule.kind = scaled_cosine\n");
    RunConfig cfg = RunConfig::from_file(path);
    CHECK(cfg.get_u64("seed", 0) == 42);
    CHECK(cfg.get_int("sampler.steps", 0) == 50);
    CHECK(cfg.get_str("schedule.kind", "") == "scaled_cosine");
    CHECK(cfg.get_double("sampler.cfg_w", 1.5) == 1.5);  // fallback
}

TEST_CASE("unknown keys are rejected") {
    auto path = write_cfg("nonsense.key = 1\n");
    CHECK_THROWS(RunConfig::from_file(path));
    RunConfig cfg;
    CHECK_THROWS(cfg.set("another.unknown", "x"));
}

TEST_CASE("malformed lines are rejected") {
    auto path = write_cfg("seed 42\n");
    CHECK_THROWS(RunConfig::from_file(path));
}

TEST_CASE("SEED environment override only applies when seed is unset") {
    setenv("SEED", "777", 1);
    RunConfig a;
    a.apply_env();
    CHECK(a.get_u64("seed", 0) == 777);

    RunConfig b;
    b.set("seed", "5");
    b.apply_env();
    CHECK(b.get_u64("seed", 0) == 5);
    unsetenv("SEED");
}

TEST_CASE("resolved config is sorted and reproducible") {
    RunConfig cfg;
    cfg.set("seed", "1");
    cfg.set("corpus.size", "10");
    cfg.set("embed.dim", "64");
    CHECK(cfg.resolved() == "corpus.size=10\nembed.dim=64\nseed=1\n");
    CHECK(cfg.resolved() == cfg.resolved());
}

TEST_CASE("boolean parsing") {
    RunConfig cfg;
    cfg.set("decoder.tie_embeddings", "true");
    CHECK(cfg.get_bool("decoder.tie_embeddings", false));
    cfg.set("decoder.tie_embeddings", "0");
    CHECK_FALSE(cfg.get_bool("decoder.tie_embeddings", true));
    cfg.set("decoder.tie_embeddings", "maybe");
    CHECK_THROWS(cfg.get_bool("decoder.tie_embeddings", true));
}
