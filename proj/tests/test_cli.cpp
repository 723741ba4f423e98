#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "cass/dataset.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

RunResult run(const std::string& args, const fs::path& dir) {
    const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd =
        std::string(CASS_BIN) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int rc = std::system(cmd.c_str());
    RunResult res;
    res.exit_code = WEXITSTATUS(rc);
    res.out = slurp(out);
    res.err = slurp(err);
    return res;
}

fs::path work_dir() {
    const auto dir = fs::temp_directory_path() / "cass_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("cli: generate -> train -> predict -> evaluate emits three-level metrics") {
    const auto dir = work_dir();
    const std::string ds = (dir / "ds").string();

    auto gen = run("generate --out " + ds + " --patients 4 --seed 7 --views 6 --no-masks", dir);
    REQUIRE(gen.exit_code == 0);
    CHECK(json::parse(gen.out).at("patients") == 4);
    CHECK(fs::exists(dir / "ds" / "config_echo.json"));
    CHECK(fs::exists(dir / "ds" / "manifest.json"));

    auto train = run("train --data " + ds + " --out " + (dir / "run").string() +
                         " --epochs 1 --micro-batch 8 --seed 7",
                     dir);
    REQUIRE(train.exit_code == 0);
    CHECK(fs::exists(dir / "run" / "model.cassw1"));
    CHECK(fs::exists(dir / "run" / "trainlog.jsonl"));
    CHECK(fs::exists(dir / "run" / "config_echo.json"));

    auto predict = run("predict --weights " + (dir / "run" / "model.cassw1").string() + " --data " +
                           ds + " --out " + (dir / "pred").string(),
                       dir);
    REQUIRE(predict.exit_code == 0);
    CHECK(fs::exists(dir / "pred" / "predictions.json"));

    auto eval = run("evaluate --predictions " + (dir / "pred" / "predictions.json").string() +
                        " --labels " + ds + "/manifest.json --out " + (dir / "eval").string() +
                        " --csv",
                    dir);
    REQUIRE(eval.exit_code == 0);
    auto metrics = json::parse(slurp(dir / "eval" / "metrics.json"));
    for (const char* level : {"segment", "artery", "patient"}) {
        REQUIRE(metrics.contains(level));
        CHECK(metrics[level].contains("accuracy"));
        CHECK(metrics[level].contains("weighted_f1"));
        CHECK(metrics[level]["confusion"].size() == 3);
    }
    CHECK(fs::exists(dir / "eval" / "confusion_segment.csv"));
    fs::remove_all(dir);
}

TEST_CASE("cli: mismatched prediction/label hierarchies exit nonzero with an error JSON") {
    const auto dir = work_dir();
    const std::string ds = (dir / "ds").string();
    REQUIRE(run("generate --out " + ds + " --patients 2 --seed 3 --views 4 --no-masks", dir).exit_code == 0);
    REQUIRE(run("train --data " + ds + " --out " + (dir / "run").string() +
                    " --epochs 1 --micro-batch 8 --seed 3",
                dir)
                .exit_code == 0);
    REQUIRE(run("predict --weights " + (dir / "run" / "model.cassw1").string() + " --data " + ds +
                    " --out " + (dir / "pred").string(),
                dir)
                .exit_code == 0);

    // labels for different patients than the predictions
    const std::string other = (dir / "other").string();
    REQUIRE(run("generate --out " + other + " --patients 1 --seed 99 --views 4 --no-masks", dir).exit_code == 0);
    auto bad = json::parse(slurp(dir / "other" / "manifest.json"));
    bad["patients"][0]["id"] = "patient_999";
    std::ofstream(dir / "bad_labels.json") << bad.dump();

    auto eval = run("evaluate --predictions " + (dir / "pred" / "predictions.json").string() +
                        " --labels " + (dir / "bad_labels.json").string() + " --out " +
                        (dir / "eval").string(),
                    dir);
    CHECK(eval.exit_code != 0);
    auto err = json::parse(eval.err);
    CHECK(err.at("error") == "consistency");
    fs::remove_all(dir);
}

TEST_CASE("cli: parse-report recovers the generator truth") {
    const auto dir = work_dir();
    const std::string ds = (dir / "ds").string();
    REQUIRE(run("generate --out " + ds + " --patients 3 --seed 21 --views 4 --no-masks", dir).exit_code == 0);

    auto parsed = run("parse-report --input " + ds + "/reports --out " + (dir / "labels").string(), dir);
    REQUIRE(parsed.exit_code == 0);
    auto labels = json::parse(slurp(dir / "labels" / "labels.json"));
    REQUIRE(labels.is_array());
    REQUIRE(labels.size() == 3);

    auto manifest = cass::load_manifest(ds);
    for (const auto& patient : manifest.patients) {
        const json* entry = nullptr;
        for (const auto& l : labels) {
            if (l.at("patient_id") == patient.id) entry = &l;
        }
        REQUIRE(entry != nullptr);
        for (const auto& branch : patient.branches) {
            INFO(patient.id, " ", branch.section);
            CHECK((*entry)["classes"].contains(branch.section));
            // report findings carry the rendered lo/hi from the manifest
            bool found = false;
            for (const auto& f : (*entry)["findings"]) {
                if (f.at("branch") == branch.section) {
                    CHECK(f.at("lo").get<double>() == branch.report_lo);
                    CHECK(f.at("hi").get<double>() == branch.report_hi);
                    found = true;
                }
            }
            CHECK(found);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("cli: attribute writes a heatmap, a raw map and a gap record") {
    const auto dir = work_dir();
    const std::string ds = (dir / "ds").string();
    REQUIRE(run("generate --out " + ds + " --patients 1 --seed 5 --views 4 --no-masks", dir).exit_code == 0);
    REQUIRE(run("train --data " + ds + " --out " + (dir / "run").string() +
                    " --epochs 1 --micro-batch 8 --seed 5",
                dir)
                .exit_code == 0);

    // find one view image
    std::string image;
    for (const auto& e : fs::recursive_directory_iterator(ds)) {
        if (e.path().filename() == "view_00.pgm") {
            image = e.path().string();
            break;
        }
    }
    REQUIRE(!image.empty());

    auto attr = run("attribute --weights " + (dir / "run" / "model.cassw1").string() + " --image " +
                        image + " --target 2 --steps 16 --out " + (dir / "attr").string(),
                    dir);
    REQUIRE(attr.exit_code == 0);
    CHECK(fs::exists(dir / "attr" / "heatmap.png"));
    CHECK(fs::exists(dir / "attr" / "attribution.bin"));
    auto info = json::parse(slurp(dir / "attr" / "attribution.json"));
    CHECK(info.at("steps") == 16);
    CHECK(info.at("completeness_gap").get<double>() >= 0.0);
    fs::remove_all(dir);
}

TEST_CASE("cli: full pipeline is bitwise deterministic under a fixed seed") {
    const auto dir = work_dir();
    for (const char* tag : {"a", "b"}) {
        const std::string ds = (dir / (std::string("ds_") + tag)).string();
        const std::string runp = (dir / (std::string("run_") + tag)).string();
        const std::string predp = (dir / (std::string("pred_") + tag)).string();
        const std::string evalp = (dir / (std::string("eval_") + tag)).string();
        REQUIRE(run("generate --out " + ds + " --patients 3 --seed 17 --views 5 --no-masks", dir).exit_code == 0);
        REQUIRE(run("train --data " + ds + " --out " + runp +
                        " --epochs 1 --micro-batch 8 --seed 17 --threads 1",
                    dir)
                    .exit_code == 0);
        REQUIRE(run("predict --weights " + runp + "/model.cassw1 --data " + ds + " --out " + predp +
                        " --threads 1",
                    dir)
                    .exit_code == 0);
        REQUIRE(run("evaluate --predictions " + predp + "/predictions.json --labels " + ds +
                        "/manifest.json --out " + evalp,
                    dir)
                    .exit_code == 0);
    }
    CHECK(slurp(dir / "run_a" / "model.cassw1") == slurp(dir / "run_b" / "model.cassw1"));
    CHECK(slurp(dir / "pred_a" / "predictions.json") == slurp(dir / "pred_b" / "predictions.json"));
    CHECK(slurp(dir / "eval_a" / "metrics.json") == slurp(dir / "eval_b" / "metrics.json"));
    fs::remove_all(dir);
}
