// End-to-end exercises of the silico binary: synth -> train -> routing ->
// predict -> evaluate, plus exit-code contracts.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <torch/torch.h>

#include "silico/dataset.hpp"
#include "silico/inference.hpp"
#include <catch2/catch_amalgamated.hpp>

using namespace silico;
namespace fs = std::filesystem;

#ifndef SILICO_CLI_BIN
#error "SILICO_CLI_BIN must point at the built binary"
#endif

namespace {

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("silico_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run(const std::string& args, const fs::path& log) {
    const std::string cmd =
        std::string(SILICO_CLI_BIN) + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("cli: help exits 0 and documents every subcommand") {
    const auto dir = temp_dir("help");
    CHECK(run("--help", dir / "h.txt") == 0);
    const auto text = slurp(dir / "h.txt");
    for (const char* sub : {"synth", "train", "routing", "predict", "evaluate"}) {
        CHECK(text.find(sub) != std::string::npos);
    }

    CHECK(run("train --help", dir / "t.txt") == 0);
    const auto ttext = slurp(dir / "t.txt");
    for (const char* flag : {"--strategy", "--backbone", "--tier", "--seed", "--resume"}) {
        CHECK(ttext.find(flag) != std::string::npos);
    }
}

TEST_CASE("cli: usage errors exit 1") {
    const auto dir = temp_dir("usage");
    CHECK(run("train", dir / "a.txt") == 1);                       // missing required flags
    CHECK(run("frobnicate", dir / "b.txt") == 1);                  // unknown subcommand
    CHECK(run("synth --out " + (dir / "x").string() + " --n 0", dir / "c.txt") == 1);
}

TEST_CASE("cli: unwritable output and bad data roots exit nonzero") {
    const auto dir = temp_dir("badout");
    CHECK(run("synth --out /proc/nowhere/sub", dir / "a.txt") != 0);
    CHECK(run("train --data /nonexistent --out " + (dir / "o").string(), dir / "b.txt") == 2);
}

TEST_CASE("cli: unknown config keys are rejected") {
    const auto dir = temp_dir("badcfg");
    {
        std::ofstream cfg(dir / "cfg.json");
        cfg << R"({"train": {"tier": "test", "warp_speed": 9}})";
    }
    const int code = run("train --data " + dir.string() + " --out " + (dir / "o").string() +
                             " --config " + (dir / "cfg.json").string(),
                         dir / "log.txt");
    CHECK(code == 1);
    CHECK(slurp(dir / "log.txt").find("warp_speed") != std::string::npos);
}

TEST_CASE("cli pipeline: synth, train, routing, predict, evaluate") {
    const auto dir = temp_dir("pipeline");
    const auto data = dir / "data";
    const auto ckpt = dir / "ckpt";
    const auto pred = dir / "pred";

    // synth
    REQUIRE(run("synth --out " + data.string() + " --n 9 --size 64 --seed 3",
                dir / "synth.txt") == 0);
    const auto manifest = build_manifest(data);
    REQUIRE(manifest.entries.size() == 9);

    // train: tiny unified pix2pix
    REQUIRE(run("train --data " + data.string() + " --out " + ckpt.string() +
                    " --tier test --strategy unified --epochs-constant 1 --epochs-decay 1 "
                    "--steps-per-epoch 2 --seed 11",
                dir / "train.txt") == 0);
    REQUIRE(fs::exists(ckpt / "pix2pix_unified_final.ckpt"));
    const auto train_out = slurp(dir / "train.txt");
    CHECK(train_out.find("pix2pix_unified") != std::string::npos);

    // routing: all twelve pairs to the unified model
    const std::string id = "pix2pix_unified_final";
    REQUIRE(run("routing --bf " + id + " --pc " + id + " --dic " + id + " --unified " + id +
                    " --out " + (dir / "routing.json").string(),
                dir / "routing.txt") == 0);

    // predict over the whole tree
    REQUIRE(run("predict --checkpoints " + ckpt.string() + " --routing " +
                    (dir / "routing.json").string() + " --out " + pred.string() + " --data " +
                    data.string() + " --tta --patch 64",
                dir / "predict.txt") == 0);
    for (const auto& e : manifest.entries) {
        for (Organelle o : kOrganelles) {
            CHECK(fs::exists(pred / (e.id + "_" + to_string(o) + "_pred.tif")));
        }
        REQUIRE(fs::exists(pred / (e.id + "_provenance.json")));
    }
    // outputs are readable 16-bit planes matching the input dims
    const auto some = read_image(pred / (manifest.entries[0].id + "_Nucleus_pred.tif"));
    const auto input = read_image(data / manifest.entries[0].input_path);
    CHECK(some.height == input.height);
    CHECK(some.width == input.width);

    // evaluate
    REQUIRE(run("evaluate --pred " + pred.string() + " --data " + data.string() + " --out " +
                    (dir / "report.txt").string(),
                dir / "eval.txt") == 0);
    const auto report = slurp(dir / "report.txt");
    CHECK(report.find("organelle") != std::string::npos);
    CHECK(report.find("Nucleus") != std::string::npos);
    REQUIRE(fs::exists(dir / "report.json"));

    // evaluate is deterministic across two runs
    REQUIRE(run("evaluate --pred " + pred.string() + " --data " + data.string() + " --out " +
                    (dir / "report2.txt").string(),
                dir / "eval2.txt") == 0);
    CHECK(slurp(dir / "report.txt") == slurp(dir / "report2.txt"));

    // unmatched prediction file -> listed, exit 2
    write_image(ImagePlane(64, 64, 9), pred / "ghost_Nucleus_pred.tif");
    const int code = run("evaluate --pred " + pred.string() + " --data " + data.string(),
                         dir / "eval3.txt");
    CHECK(code == 2);
    CHECK(slurp(dir / "eval3.txt").find("ghost") != std::string::npos);
}

TEST_CASE("cli: unetpp training logs contain no discriminator losses") {
    const auto dir = temp_dir("unetpp");
    const auto data = dir / "data";
    REQUIRE(run("synth --out " + data.string() + " --n 6 --size 64 --seed 2",
                dir / "synth.txt") == 0);
    REQUIRE(run("train --data " + data.string() + " --out " + (dir / "ckpt").string() +
                    " --tier test --strategy unified --backbone unetpp --epochs-constant 1 "
                    "--epochs-decay 1 --steps-per-epoch 2",
                dir / "train.txt") == 0);
    const auto log = slurp(dir / "ckpt" / "log_unetpp_unified.jsonl");
    REQUIRE_FALSE(log.empty());
    CHECK(log.find("d_loss") == std::string::npos);
    CHECK(log.find("\"adv_term\":0.0") != std::string::npos);
}

TEST_CASE("cli: separate strategy writes three modality-scoped checkpoint families") {
    const auto dir = temp_dir("separate");
    const auto data = dir / "data";
    REQUIRE(run("synth --out " + data.string() + " --n 6 --size 64 --seed 5",
                dir / "synth.txt") == 0);
    REQUIRE(run("train --data " + data.string() + " --out " + (dir / "ckpt").string() +
                    " --tier test --strategy separate --epochs-constant 1 --epochs-decay 1 "
                    "--steps-per-epoch 2 --batch-size 12",
                dir / "train.txt") == 0);
    for (const char* mod : {"BF", "PC", "DIC"}) {
        CHECK(fs::exists(dir / "ckpt" /
                         ("pix2pix_separate_" + std::string(mod) + "_final.ckpt")));
    }
}

TEST_CASE("cli: predict with paper routing names the unified model for DIC actin") {
    const auto dir = temp_dir("routing_dic");
    const auto data = dir / "data";
    REQUIRE(run("synth --out " + data.string() + " --n 6 --size 64 --seed 8",
                dir / "synth.txt") == 0);
    // two models: per-modality pix2pix stand-ins + a unified unetpp
    REQUIRE(run("train --data " + data.string() + " --out " + (dir / "ckpt").string() +
                    " --tier test --strategy separate --epochs-constant 1 --epochs-decay 1 "
                    "--steps-per-epoch 2 --batch-size 12",
                dir / "t1.txt") == 0);
    REQUIRE(run("train --data " + data.string() + " --out " + (dir / "ckpt").string() +
                    " --tier test --strategy unified --backbone unetpp --epochs-constant 1 "
                    "--epochs-decay 1 --steps-per-epoch 2",
                dir / "t2.txt") == 0);
    REQUIRE(run("routing --bf pix2pix_separate_BF_final --pc pix2pix_separate_PC_final "
                "--dic pix2pix_separate_DIC_final --unified unetpp_unified_final --out " +
                    (dir / "routing.json").string(),
                dir / "r.txt") == 0);

    // one DIC input
    const auto manifest = build_manifest(data);
    std::string dic_input;
    for (const auto& e : manifest.entries) {
        if (e.modality == Modality::DIC) {
            dic_input = (data / e.input_path).string();
            break;
        }
    }
    REQUIRE_FALSE(dic_input.empty());
    REQUIRE(run("predict --checkpoints " + (dir / "ckpt").string() + " --routing " +
                    (dir / "routing.json").string() + " --out " + (dir / "pred").string() +
                    " " + dic_input + " --patch 64 --no-tta",
                dir / "p.txt") == 0);

    const auto stem = fs::path(dic_input).stem().string();
    const auto sample_id = stem.substr(0, stem.rfind('_'));
    const auto prov = nlohmann::json::parse(slurp(dir / "pred" / (sample_id + "_provenance.json")));
    CHECK(prov["models"]["Actin"] == "unetpp_unified_final");
    CHECK(prov["models"]["Nucleus"] == "pix2pix_separate_DIC_final");
    CHECK(prov["tta"] == false);

    // missing model for a routed pair -> nonzero before any output
    REQUIRE(run("routing --bf ghost_model --pc pix2pix_separate_PC_final "
                "--dic pix2pix_separate_DIC_final --unified unetpp_unified_final --out " +
                    (dir / "bad_routing.json").string(),
                dir / "r2.txt") == 0);
    const int code = run("predict --checkpoints " + (dir / "ckpt").string() + " --routing " +
                             (dir / "bad_routing.json").string() + " --out " +
                             (dir / "pred2").string() + " " + dic_input + " --patch 64",
                         dir / "p2.txt");
    CHECK(code == 1);
    CHECK_FALSE(fs::exists(dir / "pred2" / (sample_id + "_Nucleus_pred.tif")));
}
