#pragma once

// Full-image prediction: sliding-window tiling at 0.8 overlap with
// mean-blended merging, the deterministic four-rotation TTA ensemble,
// (modality, organelle) -> model routing, and output rescaling.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include "silico/core.hpp"
#include "silico/trainer.hpp"
#include "silico/transforms.hpp"

namespace silico {

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

struct TileGrid {
    int64_t patch = 512;
    int64_t stride = 102;
    std::vector<std::pair<int64_t, int64_t>> offsets;  // (top, left)
};

namespace detail {

// Offsets at {0, stride, 2*stride, ...}; the final window is clipped flush
// with the edge; duplicates removed.
inline std::vector<int64_t> axis_offsets(int64_t dim, int64_t patch, int64_t stride) {
    std::vector<int64_t> out;
    for (int64_t off = 0;; off += stride) {
        if (off + patch >= dim) {
            const int64_t last = dim - patch;
            if (out.empty() || out.back() != last) out.push_back(last);
            break;
        }
        out.push_back(off);
    }
    return out;
}

}  // namespace detail

inline TileGrid plan_tiles(int64_t H, int64_t W, int64_t patch = 512, double overlap = 0.8) {
    if (H < patch || W < patch) {
        throw ShapeError("plan_tiles: image " + std::to_string(H) + "x" + std::to_string(W) +
                         " smaller than patch " + std::to_string(patch) +
                         " (pad before tiling)");
    }
    if (overlap < 0.0 || overlap >= 1.0) throw ConfigError("plan_tiles: overlap must be in [0, 1)");
    TileGrid grid;
    grid.patch = patch;
    grid.stride = std::max<int64_t>(
        1, static_cast<int64_t>(std::floor(static_cast<double>(patch) * (1.0 - overlap))));
    const auto rows = detail::axis_offsets(H, patch, grid.stride);
    const auto cols = detail::axis_offsets(W, patch, grid.stride);
    for (int64_t r : rows) {
        for (int64_t c : cols) grid.offsets.emplace_back(r, c);
    }
    return grid;
}

// Per-pixel unweighted mean of all tile outputs covering it. tiles[i] is the
// (C, patch, patch) output for grid.offsets[i].
inline torch::Tensor merge_tiles(const std::vector<torch::Tensor>& tiles, const TileGrid& grid,
                                 int64_t H, int64_t W) {
    if (tiles.size() != grid.offsets.size()) {
        throw ValidationError("merge_tiles: got " + std::to_string(tiles.size()) +
                              " tile outputs for " + std::to_string(grid.offsets.size()) +
                              " windows");
    }
    if (tiles.empty()) throw ValidationError("merge_tiles: empty grid");
    const int64_t C = tiles[0].size(0);
    auto acc = torch::zeros({C, H, W}, torch::kFloat32);
    auto cover = torch::zeros({1, H, W}, torch::kFloat32);
    for (size_t i = 0; i < tiles.size(); ++i) {
        const auto [r, c] = grid.offsets[i];
        TORCH_CHECK(tiles[i].sizes() == torch::IntArrayRef({C, grid.patch, grid.patch}),
                    "merge_tiles: tile ", i, " has unexpected shape ", tiles[i].sizes());
        acc.slice(1, r, r + grid.patch).slice(2, c, c + grid.patch) += tiles[i];
        cover.slice(1, r, r + grid.patch).slice(2, c, c + grid.patch) += 1.0f;
    }
    TORCH_CHECK(cover.min().item<float>() >= 1.0f, "merge_tiles: coverage hole");
    return acc / cover;
}

// ---------------------------------------------------------------------------
// Tiled prediction and TTA
// ---------------------------------------------------------------------------

// (1, 1, patch, patch) normalized tile -> (1, 4, patch, patch) prediction.
using PredictFn = std::function<torch::Tensor(const torch::Tensor&)>;

// Runs the model over the sliding-window grid and merges. Images smaller
// than the patch are reflect-padded and cropped back after the merge.
inline torch::Tensor tiled_predict(const PredictFn& model, const torch::Tensor& image,
                                   int64_t patch, double overlap) {
    TORCH_CHECK(image.dim() == 2, "tiled_predict expects a (H, W) normalized image");
    const int64_t H = image.size(0), W = image.size(1);
    auto padded = detail::reflect_pad_to(image, patch, patch, /*anchor_top_left=*/true);
    const auto grid = plan_tiles(padded.size(0), padded.size(1), patch, overlap);

    std::vector<torch::Tensor> tiles;
    tiles.reserve(grid.offsets.size());
    for (const auto& [r, c] : grid.offsets) {
        auto window =
            padded.slice(0, r, r + patch).slice(1, c, c + patch).unsqueeze(0).unsqueeze(0);
        auto out = model(window.contiguous());
        TORCH_CHECK(out.dim() == 4 && out.size(0) == 1,
                    "tiled_predict: model output must be (1, C, patch, patch)");
        tiles.push_back(out.squeeze(0));
    }
    auto merged = merge_tiles(tiles, grid, padded.size(0), padded.size(1));
    return merged.slice(1, 0, H).slice(2, 0, W);  // crop any padding back off
}

// Deterministic rotation ensemble: mean over k in {0,1,2,3} of
// rot(-k) . tiled_predict . rot(k). Disabled: plain tiled prediction.
// Output is double precision: four float members sum exactly in double, so
// the ensemble mean is independent of summation order and an equivariant
// model reproduces the plain prediction bit-for-bit.
inline torch::Tensor tta_predict(const PredictFn& model, const torch::Tensor& image,
                                 int64_t patch, double overlap, bool enabled) {
    if (!enabled) return tiled_predict(model, image, patch, overlap).to(torch::kFloat64);
    std::array<torch::Tensor, 4> members;
    for (int64_t k = 0; k < 4; ++k) {
        auto rotated = k == 0 ? image : torch::rot90(image, k, {0, 1});
        auto pred = tiled_predict(model, rotated.contiguous(), patch, overlap);
        auto back = k == 0 ? pred : torch::rot90(pred, -k, {1, 2});
        members[static_cast<size_t>(k)] = back.to(torch::kFloat64);
    }
    return (members[0] + members[1] + members[2] + members[3]) / 4.0;
}

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

// Total map (modality, organelle) -> model id; 12 entries.
struct RoutingTable {
    std::map<std::pair<Modality, Organelle>, std::string> routes;

    const std::string& model_for(Modality m, Organelle o) const {
        auto it = routes.find({m, o});
        if (it == routes.end()) {
            throw ConfigError("routing table has no entry for (" + to_string(m) + ", " +
                              to_string(o) + ")");
        }
        return it->second;
    }

    void validate_total() const {
        for (Modality m : kModalities) {
            for (Organelle o : kOrganelles) model_for(m, o);
        }
    }

    std::set<std::string> model_ids() const {
        std::set<std::string> ids;
        for (const auto& [key, id] : routes) ids.insert(id);
        return ids;
    }
};

// The deployed composition: each modality served by its own model except
// (DIC, Actin), which falls back to the unified model because DIC studies
// carry no actin labels at all.
inline RoutingTable make_final_routing(const std::string& bf_model,
                                       const std::string& pc_model,
                                       const std::string& dic_model,
                                       const std::string& unified_model) {
    RoutingTable t;
    for (Organelle o : kOrganelles) {
        t.routes[{Modality::BF, o}] = bf_model;
        t.routes[{Modality::PC, o}] = pc_model;
        t.routes[{Modality::DIC, o}] = dic_model;
    }
    t.routes[{Modality::DIC, Organelle::Actin}] = unified_model;
    return t;
}

inline nlohmann::ordered_json routing_to_json(const RoutingTable& t) {
    nlohmann::ordered_json j;
    j["routes"] = nlohmann::ordered_json::array();
    for (Modality m : kModalities) {
        for (Organelle o : kOrganelles) {
            j["routes"].push_back({{"modality", to_string(m)},
                                   {"organelle", to_string(o)},
                                   {"model", t.model_for(m, o)}});
        }
    }
    return j;
}

inline RoutingTable routing_from_json(const nlohmann::json& j) {
    RoutingTable t;
    for (const auto& r : j.at("routes")) {
        const auto m = modality_from_string(r.at("modality").get<std::string>());
        const auto o = organelle_from_string(r.at("organelle").get<std::string>());
        const auto key = std::make_pair(m, o);
        if (t.routes.count(key)) {
            throw FormatError("duplicate routing entry for (" + to_string(m) + ", " +
                              to_string(o) + ")");
        }
        t.routes[key] = r.at("model").get<std::string>();
    }
    t.validate_total();
    return t;
}

inline void save_routing(const RoutingTable& t, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write routing table: " + path.string());
    out << routing_to_json(t).dump(2) << "\n";
}

inline RoutingTable load_routing(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read routing table: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("routing table parse error: " + std::string(e.what()));
    }
    return routing_from_json(j);
}

// ---------------------------------------------------------------------------
// Model registry
// ---------------------------------------------------------------------------

// Maps model ids to checkpoint files (by stem) and lazily loads generators.
class ModelRegistry {
public:
    ModelRegistry() = default;

    // Scans a directory for *.ckpt; the file stem is the registry key, so
    // `pix2pix_separate_BF_final.ckpt` serves id "pix2pix_separate_BF_final".
    explicit ModelRegistry(const fs::path& checkpoint_dir) {
        if (!fs::is_directory(checkpoint_dir)) {
            throw IoError("checkpoint directory not found: " + checkpoint_dir.string());
        }
        for (const auto& f : fs::directory_iterator(checkpoint_dir)) {
            if (f.is_regular_file() && f.path().extension() == ".ckpt") {
                paths_[f.path().stem().string()] = f.path();
            }
        }
    }

    void add(const std::string& id, const fs::path& checkpoint) { paths_[id] = checkpoint; }

    bool has(const std::string& id) const { return paths_.count(id) > 0; }

    std::shared_ptr<GeneratorBaseImpl> generator(const std::string& id) {
        auto it = loaded_.find(id);
        if (it != loaded_.end()) return it->second;
        auto pit = paths_.find(id);
        if (pit == paths_.end()) {
            throw ConfigError("model id not in registry: \"" + id + "\"");
        }
        auto ck = load_checkpoint(pit->second);
        ck.generator->eval();
        loaded_[id] = ck.generator;
        return ck.generator;
    }

    // Fail-fast: every routed id must resolve before any compute starts.
    void check_routing(const RoutingTable& routing) const {
        routing.validate_total();
        for (Modality m : kModalities) {
            for (Organelle o : kOrganelles) {
                const auto& id = routing.model_for(m, o);
                if (!has(id)) {
                    throw ConfigError("routing sends (" + to_string(m) + ", " + to_string(o) +
                                      ") to unknown model \"" + id + "\"");
                }
            }
        }
    }

private:
    std::map<std::string, fs::path> paths_;
    std::map<std::string, std::shared_ptr<GeneratorBaseImpl>> loaded_;
};

// ---------------------------------------------------------------------------
// Full-image prediction
// ---------------------------------------------------------------------------

struct PredictOptions {
    int64_t patch = 512;
    double overlap = 0.8;
    bool tta = true;
};

inline PredictFn model_predict_fn(const std::shared_ptr<GeneratorBaseImpl>& gen,
                                  Modality modality) {
    const bool dynamic = gen->is_dynamic();
    auto code = modality_code(modality);
    return [gen, dynamic, code](const torch::Tensor& tile) {
        torch::NoGradGuard no_grad;
        return dynamic ? gen->forward(tile, code) : gen->forward(tile);
    };
}

// Predicts all four organelle planes for one input. Distinct routed models
// run once each; every organelle keeps its own channel of its routed model.
inline PredictionSet predict_image(const ImagePlane& input, Modality modality,
                                   ModelRegistry& registry, const RoutingTable& routing,
                                   const PredictOptions& opts, const std::string& sample_id = "") {
    registry.check_routing(routing);

    PredictionSet out;
    out.sample_id = sample_id;
    out.tta = opts.tta;

    auto normalized = rescale_to_model(input);

    std::map<std::string, torch::Tensor> per_model;  // id -> (4, H, W)
    for (Organelle o : kOrganelles) {
        const auto& id = routing.model_for(modality, o);
        if (per_model.count(id)) continue;
        auto gen = registry.generator(id);
        per_model[id] =
            tta_predict(model_predict_fn(gen, modality), normalized, opts.patch, opts.overlap,
                        opts.tta);
    }

    std::set<std::string> strategies;
    for (Organelle o : kOrganelles) {
        const auto k = static_cast<size_t>(channel_index(o));
        const auto& id = routing.model_for(modality, o);
        out.model_ids[k] = id;
        out.channels[k] = rescale_to_uint16(per_model.at(id)[channel_index(o)]);
    }
    out.strategy = "routed";
    return out;
}

// JSON sidecar recording which model produced each organelle plane.
inline nlohmann::ordered_json provenance_json(const PredictionSet& p, Modality modality) {
    nlohmann::ordered_json j;
    j["sample_id"] = p.sample_id;
    j["modality"] = to_string(modality);
    j["tta"] = p.tta;
    nlohmann::ordered_json models;
    for (Organelle o : kOrganelles) {
        models[to_string(o)] = p.model_ids[static_cast<size_t>(channel_index(o))];
    }
    j["models"] = models;
    return j;
}

}  // namespace silico
