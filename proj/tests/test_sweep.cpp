#include <doctest.h>

#include <filesystem>

#include "daggerlab/sweep.hpp"

using namespace daggerlab;
namespace fs = std::filesystem;

namespace {

const char* kSweep =
    "extends = \"maze_rnd\"\n"
    "iterations = 1\n"
    "samples_per_iteration = 30\n"
    "seed_episodes = 3\n"
    "eval_episodes = 5\n"
    "bc_epochs = 5\n"
    "axis.rnd_lambda_factor = [2.0, 1e12]\n"  // the second setting never calls the expert
    "max_steps_guard = 100\n"
    "seeds = [0, 1]\n";

}  // namespace

TEST_CASE("run ids") {
    RunConfig c;
    c.method = Method::lazy;
    c.env = EnvId::gridmaze;
    c.seed = 12;
    CHECK(run_id(c) == "lazy_gridmaze_s12");
    const std::string labelled = run_id(c, "met_window=30,rnd_lambda_factor=2.0");
    CHECK(labelled.ends_with("lazy_gridmaze_s12"));
    CHECK(labelled.find('/') == std::string::npos);
    CHECK(labelled.find(',') == std::string::npos);
    CHECK(labelled != run_id(c, "met_window=0"));
}

TEST_CASE("sweeps record failures and do not depend on the worker count") {
    const SweepSpec spec = parse_sweep(kSweep);
    const fs::path dir = fs::temp_directory_path() / "daggerlab_test_sweep";
    fs::remove_all(dir);

    SweepOptions one;
    one.workers = 1;
    one.out_dir = dir / "w1";
    SweepOptions three;
    three.workers = 3;
    three.out_dir = dir / "w3";
    const auto a = run_sweep(spec, one);
    const auto b = run_sweep(spec, three);

    REQUIRE(a.size() == 4);
    REQUIRE(b.size() == 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CAPTURE(i);
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].metrics == b[i].metrics);
        CHECK(a[i].error == b[i].error);
        const bool fails = i >= 2;
        CHECK(a[i].metrics.has_value() != fails);
        if (fails) CHECK(a[i].error.find("expert samples") != std::string::npos);
    }
    for (const char* f : {"index.csv", "metrics.csv", "summary.csv"}) {
        CAPTURE(f);
        REQUIRE(fs::exists(dir / "w1" / f));
        CHECK(read_text_file(dir / "w1" / f) == read_text_file(dir / "w3" / f));
    }
    CHECK(read_text_file(dir / "w1" / "index.csv").find("error") != std::string::npos);
    for (std::size_t i = 0; i < 2; ++i) {
        for (const char* ext : {".metrics.csv", ".trace.csv", ".checkpoint.json", ".config.toml"}) {
            const fs::path f = dir / "w1" / "runs" / (a[i].id + ext);
            CAPTURE(f.string());
            CHECK(fs::exists(f));
            CHECK(read_text_file(f) == read_text_file(dir / "w3" / "runs" / (a[i].id + ext)));
        }
    }
    // the written config reproduces the run
    const RunConfig again = load_run_config(dir / "w1" / "runs" / (a[0].id + ".config.toml"));
    CHECK(again == a[0].point.config);

    const auto merged = read_metrics_csv(dir / "w1" / "metrics.csv");
    CHECK(merged.size() == 2);
    fs::remove_all(dir);
}
