#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <sys/wait.h>
#include <unistd.h>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "tcformer/io.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = TCFORMER_CLI_PATH;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("tcf_cli_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args) {
    const int status = std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cluster command") {
    TempDir tmp;
    SUBCASE("two blobs produce two clusters") {
        {
            std::ofstream csv(tmp.file("points.csv"));
            csv << "x,y\n";
            for (int i = 0; i < 6; ++i) csv << 0.1 * i << "," << 0.05 * i << "\n";
            for (int i = 0; i < 6; ++i) csv << 30 + 0.1 * i << "," << 40 + 0.05 * i << "\n";
        }
        REQUIRE(run("cluster " + tmp.file("points.csv") + " -M 2 --k 3 --out " +
                    tmp.file("clusters.csv")) == 0);
        const auto table = tcformer::io::read_csv(tmp.file("clusters.csv"));
        REQUIRE(table.rows.size() == 12);
        REQUIRE(table.header.size() == 6);
        const double first = table.rows[0][1];
        for (int i = 0; i < 6; ++i) CHECK(table.rows[static_cast<size_t>(i)][1] == first);
        for (int i = 6; i < 12; ++i) CHECK(table.rows[static_cast<size_t>(i)][1] != first);
    }
    SUBCASE("every point is a center when M equals N") {
        {
            std::ofstream csv(tmp.file("points.csv"));
            csv << "x\n1\n5\n9\n";
        }
        REQUIRE(run("cluster " + tmp.file("points.csv") + " -M 3 --out " +
                    tmp.file("clusters.csv")) == 0);
        const auto table = tcformer::io::read_csv(tmp.file("clusters.csv"));
        for (const auto& row : table.rows) CHECK(row[5] == 1.0);
    }
    SUBCASE("malformed csv exits with the input error code") {
        {
            std::ofstream csv(tmp.file("bad.csv"));
            csv << "x,y\n1,2\n3,oops\n";
        }
        CHECK(run("cluster " + tmp.file("bad.csv") + " -M 1 --out " + tmp.file("out.csv")) == 2);
    }
    SUBCASE("missing file exits with the artifact error code") {
        CHECK(run("cluster " + tmp.file("nope.csv") + " -M 1") == 3);
    }
}

TEST_CASE("training and evaluation commands") {
    TempDir tmp;
    const std::string common =
        "--preset mini --head mta --seed 5 --steps 12 --samples 6 --batch-size 2";
    REQUIRE(run("train " + common + " --out " + tmp.file("a")) == 0);
    REQUIRE(run("train " + common + " --out " + tmp.file("b")) == 0);

    SUBCASE("same seed gives identical loss curves and checkpoints") {
        CHECK(slurp(tmp.file("a/loss_curve.csv")) == slurp(tmp.file("b/loss_curve.csv")));
        CHECK(slurp(tmp.file("a/checkpoint.tcf")) == slurp(tmp.file("b/checkpoint.tcf")));
    }
    SUBCASE("eval runs on the checkpoint") {
        CHECK(run("eval " + tmp.file("a/checkpoint.tcf") +
                  " --seed 5 --out " + tmp.file("eval")) == 0);
        CHECK(fs::exists(tmp.file("eval/eval_report.csv")));
    }
    SUBCASE("missing checkpoint exits with the artifact error code") {
        CHECK(run("eval " + tmp.file("nope.tcf")) == 3);
    }
    SUBCASE("visualize emits identical overlays for identical inputs") {
        REQUIRE(run("visualize " + tmp.file("a/checkpoint.tcf") + " --seed 9 --out " +
                    tmp.file("viz1")) == 0);
        REQUIRE(run("visualize " + tmp.file("a/checkpoint.tcf") + " --seed 9 --out " +
                    tmp.file("viz2")) == 0);
        CHECK(fs::exists(tmp.file("viz1/stage1.png")));
        CHECK(fs::exists(tmp.file("viz1/stage2.png")));
        CHECK(fs::exists(tmp.file("viz1/stages.png")));
        CHECK(slurp(tmp.file("viz1/stages.png")) == slurp(tmp.file("viz2/stages.png")));
        CHECK(!slurp(tmp.file("viz1/stage1.png")).empty());
    }
}

TEST_CASE("config file handling") {
    TempDir tmp;
    SUBCASE("unknown keys rejected") {
        {
            std::ofstream cfg(tmp.file("bad.json"));
            cfg << R"({"train": {"steps": 5, "typo_key": 1}})";
        }
        CHECK(run("train --config " + tmp.file("bad.json")) == 2);
    }
    SUBCASE("flags override the config file") {
        {
            std::ofstream cfg(tmp.file("run.json"));
            cfg << R"({"model": {"preset": "mini"}, "data": {"seed": 3, "count": 4, "eval_count": 2},)"
                << R"( "train": {"steps": 4, "batch_size": 2}})";
        }
        CHECK(run("train --config " + tmp.file("run.json") + " --out " + tmp.file("out") +
                  " --steps 3") == 0);
        const auto table = tcformer::io::read_csv(tmp.file("out/loss_curve.csv"));
        CHECK(table.rows.size() == 3);
    }
}

TEST_CASE("params and gradcheck commands") {
    SUBCASE("params prints the accounting table") {
        CHECK(run("params --preset mini") == 0);
        CHECK(run("params --preset base --head cls") == 0);
    }
    SUBCASE("unknown preset rejected") { CHECK(run("params --preset giant") == 2); }
    SUBCASE("unknown gradcheck module exits with the input error code") {
        CHECK(run("gradcheck --module bogus") == 2);
    }
    SUBCASE("single module gradcheck passes") {
        CHECK(run("gradcheck --module linear") == 0);
    }
}
