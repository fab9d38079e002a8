#include <filesystem>

#include <torch/torch.h>

#include "silico/inference.hpp"
#include "silico/synthgen.hpp"
#include <catch2/catch_amalgamated.hpp>

using namespace silico;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("silico_infer_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Stub that replicates its input into all four channels.
PredictFn identity_stub() {
    return [](const torch::Tensor& tile) { return tile.repeat({1, 4, 1, 1}); };
}

}  // namespace

TEST_CASE("plan_tiles: exact-fit image yields the single (0,0) window") {
    auto grid = plan_tiles(512, 512, 512, 0.8);
    CHECK(grid.stride == 102);
    REQUIRE(grid.offsets.size() == 1);
    CHECK(grid.offsets[0] == std::make_pair<int64_t, int64_t>(0, 0));
}

TEST_CASE("plan_tiles: patch 512 overlap 0.8 gives stride 102 exactly") {
    CHECK(plan_tiles(2048, 2048, 512, 0.8).stride == 102);
}

TEST_CASE("plan_tiles: 715-wide axis gets offsets {0, 102, 203} with a flush edge") {
    auto grid = plan_tiles(715, 715, 512, 0.8);
    std::set<int64_t> rows, cols;
    for (const auto& [r, c] : grid.offsets) {
        rows.insert(r);
        cols.insert(c);
    }
    CHECK(rows == std::set<int64_t>({0, 102, 203}));
    CHECK(cols == std::set<int64_t>({0, 102, 203}));
    CHECK(grid.offsets.size() == 9);
}

TEST_CASE("plan_tiles windows cover every pixel and stay inside the image") {
    for (auto [H, W] : std::vector<std::pair<int64_t, int64_t>>{
             {512, 512}, {715, 715}, {1024, 640}, {530, 997}}) {
        auto grid = plan_tiles(H, W, 512, 0.8);
        auto cover = torch::zeros({H, W});
        for (const auto& [r, c] : grid.offsets) {
            REQUIRE(r >= 0);
            REQUIRE(c >= 0);
            REQUIRE(r + 512 <= H);
            REQUIRE(c + 512 <= W);
            cover.slice(0, r, r + 512).slice(1, c, c + 512) += 1;
        }
        CHECK(cover.min().item<float>() >= 1.0f);
        // edge windows flush with the image border
        int64_t max_r = 0, max_c = 0;
        for (const auto& [r, c] : grid.offsets) {
            max_r = std::max(max_r, r);
            max_c = std::max(max_c, c);
        }
        CHECK(max_r == H - 512);
        CHECK(max_c == W - 512);
    }
}

TEST_CASE("merge_tiles: single tile is the identity") {
    auto grid = plan_tiles(64, 64, 64, 0.8);
    auto tile = torch::rand({4, 64, 64});
    auto merged = merge_tiles({tile}, grid, 64, 64);
    CHECK(torch::equal(merged, tile));
}

TEST_CASE("merge_tiles: constant tiles merge to the same constant at any overlap") {
    auto grid = plan_tiles(120, 120, 64, 0.8);
    std::vector<torch::Tensor> tiles(grid.offsets.size(), torch::full({1, 64, 64}, 0.37f));
    auto merged = merge_tiles(tiles, grid, 120, 120);
    CHECK((merged - 0.37f).abs().max().item<float>() < 1e-6f);
}

TEST_CASE("merge_tiles is linear in its inputs") {
    auto grid = plan_tiles(96, 96, 64, 0.7);
    std::vector<torch::Tensor> tiles, scaled;
    torch::manual_seed(5);
    for (size_t i = 0; i < grid.offsets.size(); ++i) {
        auto t = torch::rand({2, 64, 64});
        tiles.push_back(t);
        scaled.push_back(t * 3.5f);
    }
    auto m1 = merge_tiles(tiles, grid, 96, 96);
    auto m2 = merge_tiles(scaled, grid, 96, 96);
    CHECK((m2 - m1 * 3.5f).abs().max().item<float>() < 1e-5f);
}

TEST_CASE("merge_tiles rejects a missing tile output") {
    auto grid = plan_tiles(120, 120, 64, 0.8);
    std::vector<torch::Tensor> tiles(grid.offsets.size() - 1, torch::zeros({1, 64, 64}));
    CHECK_THROWS_AS(merge_tiles(tiles, grid, 120, 120), ValidationError);
}

TEST_CASE("identity-stub reconstruction across the acceptance size matrix") {
    torch::manual_seed(6);
    for (auto [H, W] : std::vector<std::pair<int64_t, int64_t>>{
             {512, 512}, {715, 715}, {300, 300}, {1024, 640}}) {
        auto image = torch::rand({H, W}) * 2 - 1;
        auto out = tiled_predict(identity_stub(), image, 512, 0.8);
        REQUIRE(out.sizes() == torch::IntArrayRef({4, H, W}));
        const double err = (out - image.unsqueeze(0)).abs().max().item<double>();
        INFO(H << "x" << W);
        CHECK(err < 1e-6);
    }
}

TEST_CASE("tta: rotation-equivariant stub gives bit-equal output with TTA on or off") {
    torch::manual_seed(7);
    auto stub = PredictFn([](const torch::Tensor& tile) {
        return (tile * 0.5f - 0.25f).repeat({1, 4, 1, 1});  // pixelwise, rotation-equivariant
    });
    // exact-fit tiling: members are bit-identical, the double-precision mean
    // of four equal floats is that float, bit for bit
    auto image = torch::rand({64, 64}) * 2 - 1;
    auto off = tta_predict(stub, image, 64, 0.8, false);
    auto on = tta_predict(stub, image, 64, 0.8, true);
    CHECK(torch::equal(on, off));

    // overlapping grid: merge rounding varies per rotation at float epsilon
    auto big = torch::rand({96, 96}) * 2 - 1;
    auto off2 = tta_predict(stub, big, 64, 0.8, false);
    auto on2 = tta_predict(stub, big, 64, 0.8, true);
    CHECK((on2 - off2).abs().max().item<double>() < 1e-6);
}

TEST_CASE("tta: constant-output stub yields the constant") {
    auto stub = PredictFn([](const torch::Tensor& tile) {
        return torch::full({1, 4, tile.size(2), tile.size(3)}, 0.125f);
    });
    auto image = torch::rand({64, 64});
    auto out = tta_predict(stub, image, 64, 0.8, true);
    CHECK((out - 0.125f).abs().max().item<float>() == 0.0f);
}

TEST_CASE("tta equals the brute-force 4-rotation ensemble on a non-equivariant stub") {
    torch::manual_seed(8);
    // 2x2 block pooling then nearest upsampling: orientation-sensitive
    auto stub = PredictFn([](const torch::Tensor& tile) {
        namespace F = torch::nn::functional;
        auto pooled = F::avg_pool2d(tile, F::AvgPool2dFuncOptions(2));
        auto up = F::interpolate(
            pooled, F::InterpolateFuncOptions()
                        .size(std::vector<int64_t>{tile.size(2), tile.size(3)})
                        .mode(torch::kNearest));
        auto shifted = torch::roll(up, {1, 0}, {2, 3});
        return torch::cat({up, shifted, up * 0.5, shifted * -1.0}, 1);
    });
    auto image = (torch::rand({64, 64}) * 2 - 1).to(torch::kFloat32);

    auto got = tta_predict(stub, image, 64, 0.8, true);

    // brute force in a deliberately different summation order
    torch::Tensor want;
    for (int64_t k = 3; k >= 0; --k) {
        auto rot = k == 0 ? image : torch::rot90(image, k, {0, 1});
        auto pred = tiled_predict(stub, rot.contiguous(), 64, 0.8).to(torch::kFloat64);
        auto back = k == 0 ? pred : torch::rot90(pred, -k, {1, 2});
        want = want.defined() ? want + back : back;
    }
    want = want / 4.0;
    CHECK((got - want).abs().max().item<double>() < 1e-12);
}

TEST_CASE("routing: final composition sends (DIC, Actin) to the unified model") {
    auto t = make_final_routing("bf_m", "pc_m", "dic_m", "uni_m");
    t.validate_total();
    CHECK(t.model_for(Modality::DIC, Organelle::Actin) == "uni_m");
    CHECK(t.model_for(Modality::DIC, Organelle::Nucleus) == "dic_m");
    CHECK(t.model_for(Modality::BF, Organelle::Actin) == "bf_m");
    CHECK(t.model_ids() == std::set<std::string>({"bf_m", "pc_m", "dic_m", "uni_m"}));
}

TEST_CASE("routing table round-trips through its file format and rejects holes") {
    const auto dir = temp_dir("routing");
    auto t = make_final_routing("a", "b", "c", "d");
    save_routing(t, dir / "routing.json");
    auto t2 = load_routing(dir / "routing.json");
    CHECK(t2.model_for(Modality::DIC, Organelle::Actin) == "d");

    auto j = routing_to_json(t);
    j["routes"].erase(0);  // drop one of the 12 entries
    CHECK_THROWS_AS(routing_from_json(j), ConfigError);
}

TEST_CASE("registry fail-fast: unresolvable model id names the routed pair") {
    const auto dir = temp_dir("registry");
    ModelRegistry reg(dir);  // empty
    auto routing = make_final_routing("a", "b", "c", "d");
    try {
        reg.check_routing(routing);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("BF") != std::string::npos);
    }
}

TEST_CASE("predict_image end-to-end over trained tiny checkpoints") {
    const auto root = temp_dir("predict");
    SynthConfig scfg;
    scfg.n_samples = 6;
    scfg.size = 64;
    scfg.seed = 5;
    auto manifest = generate_dataset(scfg, root / "data");

    auto cfg = TrainConfig::test_tier();
    cfg.strategy = Strategy::Unified;
    cfg.epochs_constant = 1;
    cfg.epochs_decay = 1;
    cfg.steps_per_epoch = 2;
    cfg.batch_size = 4;
    cfg.seed = 7;
    auto trained = train(manifest, cfg, root / "ckpt");
    const std::string id = trained.runs[0].model_id + "_final";

    ModelRegistry registry(root / "ckpt");
    RoutingTable routing = make_final_routing(id, id, id, id);

    PredictOptions opts;
    opts.patch = 64;
    opts.overlap = 0.8;
    opts.tta = true;

    const auto& entry = manifest.entries.front();
    auto sample = load_sample(manifest, entry);
    auto preds = predict_image(sample.input, sample.modality, registry, routing, opts,
                               sample.id);

    for (Organelle o : kOrganelles) {
        const auto& plane = preds.channels[static_cast<size_t>(channel_index(o))];
        CHECK(plane.height == sample.input.height);
        CHECK(plane.width == sample.input.width);
        // uint16 by construction; nothing outside [0, 65535] representable
        CHECK(preds.model_ids[static_cast<size_t>(channel_index(o))] == id);
    }

    auto prov = provenance_json(preds, sample.modality);
    CHECK(prov["models"]["Actin"] == id);
    CHECK(prov["tta"] == true);
}
