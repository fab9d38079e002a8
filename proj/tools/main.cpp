// silico — in-silico fluorescence labeling toolkit.
// Subcommands: synth, train, routing, predict, evaluate.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

#include <CLI11.hpp>

#include "silico/dataset.hpp"
#include "silico/inference.hpp"
#include "silico/metrics.hpp"
#include "silico/synthgen.hpp"
#include "silico/trainer.hpp"

namespace fs = std::filesystem;
using silico::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) {
            throw silico::ConfigError("unknown config key \"" + key + "\" in " + where);
        }
    }
}

json load_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw silico::IoError("cannot read config file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw silico::ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
    check_keys(j, {"seed", "synth", "train", "predict"}, path.string());
    return j;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    std::string config;
    std::optional<int> n;
    std::optional<int64_t> size;
    std::optional<uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
    silico::SynthConfig cfg;
    if (!a.config.empty()) {
        const auto j = load_config_file(a.config);
        if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
        if (j.contains("synth")) {
            const auto& js = j["synth"];
            check_keys(js, {"n_samples", "size", "seed"}, "synth section");
            if (js.contains("n_samples")) cfg.n_samples = js["n_samples"].get<int>();
            if (js.contains("size")) cfg.size = js["size"].get<int64_t>();
            if (js.contains("seed")) cfg.seed = js["seed"].get<uint64_t>();
        }
    }
    if (a.n) cfg.n_samples = *a.n;
    if (a.size) cfg.size = *a.size;
    if (a.seed) cfg.seed = *a.seed;

    const auto manifest = silico::generate_dataset(cfg, a.out);
    std::cout << "wrote " << manifest.entries.size() << " samples under " << a.out << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string out;
    std::string config;
    std::optional<std::string> strategy;
    std::optional<std::string> backbone;
    std::optional<std::string> tier;
    std::optional<uint64_t> seed;
    std::optional<int> epochs_constant;
    std::optional<int> epochs_decay;
    std::optional<int> steps_per_epoch;
    std::optional<int> batch_size;
    std::optional<int64_t> patch;
    std::optional<std::string> resume;
};

silico::TrainConfig assemble_train_config(const TrainArgs& a) {
    json train_section;
    std::optional<uint64_t> file_seed;
    if (!a.config.empty()) {
        const auto j = load_config_file(a.config);
        if (j.contains("seed")) file_seed = j["seed"].get<uint64_t>();
        if (j.contains("train")) train_section = j["train"];
    }

    std::string tier = "paper";
    if (train_section.contains("tier")) tier = train_section["tier"].get<std::string>();
    if (a.tier) tier = *a.tier;
    silico::TrainConfig cfg;
    if (tier == "test") {
        cfg = silico::TrainConfig::test_tier();
    } else if (tier != "paper") {
        throw silico::ConfigError("unknown tier \"" + tier + "\" (expected paper|test)");
    }
    if (file_seed) cfg.seed = *file_seed;

    if (!train_section.is_null()) {
        check_keys(train_section,
                   {"tier", "strategy", "backbone", "epochs_constant", "epochs_decay", "lr0",
                    "beta1", "beta2", "batch_size", "patch_size", "steps_per_epoch",
                    "checkpoint_every_epochs", "seed", "gen", "disc", "unetpp", "loss"},
                   "train section");
        auto get = [&](const char* key, auto& field) {
            using T = std::decay_t<decltype(field)>;
            if (train_section.contains(key)) field = train_section[key].template get<T>();
        };
        if (train_section.contains("strategy")) {
            cfg.strategy =
                silico::strategy_from_string(train_section["strategy"].get<std::string>());
        }
        if (train_section.contains("backbone")) {
            cfg.backbone =
                silico::backbone_from_string(train_section["backbone"].get<std::string>());
        }
        get("epochs_constant", cfg.epochs_constant);
        get("epochs_decay", cfg.epochs_decay);
        get("lr0", cfg.lr0);
        get("beta1", cfg.beta1);
        get("beta2", cfg.beta2);
        get("batch_size", cfg.batch_size);
        get("patch_size", cfg.patch_size);
        get("steps_per_epoch", cfg.steps_per_epoch);
        get("checkpoint_every_epochs", cfg.checkpoint_every_epochs);
        get("seed", cfg.seed);
        if (train_section.contains("gen")) {
            check_keys(train_section["gen"], {"base_width", "n_resblocks"}, "train.gen");
            if (train_section["gen"].contains("base_width"))
                cfg.gen.base_width = train_section["gen"]["base_width"].get<int64_t>();
            if (train_section["gen"].contains("n_resblocks"))
                cfg.gen.n_resblocks = train_section["gen"]["n_resblocks"].get<int64_t>();
        }
        if (train_section.contains("disc")) {
            check_keys(train_section["disc"], {"base_width", "n_layers"}, "train.disc");
            if (train_section["disc"].contains("base_width"))
                cfg.disc.base_width = train_section["disc"]["base_width"].get<int64_t>();
            if (train_section["disc"].contains("n_layers"))
                cfg.disc.n_layers = train_section["disc"]["n_layers"].get<int64_t>();
        }
        if (train_section.contains("unetpp")) {
            check_keys(train_section["unetpp"], {"base_width", "depth"}, "train.unetpp");
            if (train_section["unetpp"].contains("base_width"))
                cfg.unetpp.base_width = train_section["unetpp"]["base_width"].get<int64_t>();
            if (train_section["unetpp"].contains("depth"))
                cfg.unetpp.depth = train_section["unetpp"]["depth"].get<int64_t>();
        }
        if (train_section.contains("loss")) {
            check_keys(train_section["loss"],
                       {"lambda1", "lambda2", "lo_pct", "hi_pct", "low_weight"}, "train.loss");
            const auto& jl = train_section["loss"];
            if (jl.contains("lambda1")) cfg.loss.lambda1 = jl["lambda1"].get<double>();
            if (jl.contains("lambda2")) cfg.loss.lambda2 = jl["lambda2"].get<double>();
            if (jl.contains("lo_pct")) cfg.loss.mask.lo_pct = jl["lo_pct"].get<double>();
            if (jl.contains("hi_pct")) cfg.loss.mask.hi_pct = jl["hi_pct"].get<double>();
            if (jl.contains("low_weight"))
                cfg.loss.mask.low_weight = jl["low_weight"].get<double>();
        }
    }

    if (a.strategy) cfg.strategy = silico::strategy_from_string(*a.strategy);
    if (a.backbone) cfg.backbone = silico::backbone_from_string(*a.backbone);
    if (a.seed) cfg.seed = *a.seed;
    if (a.epochs_constant) cfg.epochs_constant = *a.epochs_constant;
    if (a.epochs_decay) cfg.epochs_decay = *a.epochs_decay;
    if (a.steps_per_epoch) cfg.steps_per_epoch = *a.steps_per_epoch;
    if (a.batch_size) cfg.batch_size = *a.batch_size;
    if (a.patch) cfg.patch_size = *a.patch;
    cfg.validate();
    return cfg;
}

int cmd_train(const TrainArgs& a) {
    const auto cfg = assemble_train_config(a);
    const auto manifest = silico::build_manifest(a.data);
    if (manifest.entries.empty()) {
        throw silico::ValidationError("no trainable samples under " + a.data);
    }
    if (a.resume) {
        auto run = silico::train_run(manifest, cfg, a.out, std::nullopt, fs::path(*a.resume));
        std::cout << run.model_id << " -> " << run.final_checkpoint.string() << "\n";
        return kExitOk;
    }
    const auto result = silico::train(manifest, cfg, a.out);
    for (const auto& run : result.runs) {
        std::cout << run.model_id << " -> " << run.final_checkpoint.string() << "\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// routing
// ---------------------------------------------------------------------------

struct RoutingArgs {
    std::string bf, pc, dic, unified;
    std::string out;
};

int cmd_routing(const RoutingArgs& a) {
    const auto table = silico::make_final_routing(a.bf, a.pc, a.dic, a.unified);
    silico::save_routing(table, a.out);
    std::cout << "wrote routing table: " << a.out << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictArgs {
    std::string checkpoints;
    std::string routing;
    std::string out;
    std::vector<std::string> images;
    std::string data;
    std::string config;
    std::optional<bool> tta;
    std::optional<int64_t> patch;
    std::optional<double> overlap;
};

int cmd_predict(const PredictArgs& a) {
    silico::PredictOptions opts;
    if (!a.config.empty()) {
        const auto j = load_config_file(a.config);
        if (j.contains("predict")) {
            const auto& jp = j["predict"];
            check_keys(jp, {"patch", "overlap", "tta"}, "predict section");
            if (jp.contains("patch")) opts.patch = jp["patch"].get<int64_t>();
            if (jp.contains("overlap")) opts.overlap = jp["overlap"].get<double>();
            if (jp.contains("tta")) opts.tta = jp["tta"].get<bool>();
        }
    }
    if (a.patch) opts.patch = *a.patch;
    if (a.overlap) opts.overlap = *a.overlap;
    if (a.tta) opts.tta = *a.tta;

    std::vector<fs::path> images(a.images.begin(), a.images.end());
    if (!a.data.empty()) {
        const auto manifest = silico::build_manifest(a.data);
        for (const auto& e : manifest.entries) images.push_back(manifest.root / e.input_path);
    }
    if (images.empty()) {
        throw silico::ConfigError("nothing to predict: pass image files or --data");
    }

    silico::ModelRegistry registry(a.checkpoints);
    const auto routing = silico::load_routing(a.routing);
    registry.check_routing(routing);  // fail fast, before any compute or output

    fs::create_directories(a.out);
    for (const auto& path : images) {
        const auto stem = path.stem().string();
        const auto uscore = stem.rfind('_');
        if (uscore == std::string::npos) {
            throw silico::FormatError("cannot extract modality from filename: " + path.string());
        }
        const auto sample_id = stem.substr(0, uscore);
        const auto modality = silico::modality_from_string(stem.substr(uscore + 1));

        const auto input = silico::read_image(path);
        auto preds =
            silico::predict_image(input, modality, registry, routing, opts, sample_id);

        for (silico::Organelle o : silico::kOrganelles) {
            const auto k = static_cast<size_t>(silico::channel_index(o));
            silico::write_image(preds.channels[k],
                                fs::path(a.out) /
                                    (sample_id + "_" + silico::to_string(o) + "_pred.tif"));
        }
        std::ofstream prov(fs::path(a.out) / (sample_id + "_provenance.json"));
        prov << silico::provenance_json(preds, modality).dump(2) << "\n";
        std::cout << sample_id << ": 4 planes written\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string pred;
    std::string data;
    std::string out;
};

int cmd_evaluate(const EvaluateArgs& a) {
    const auto manifest = silico::build_manifest(a.data);
    std::set<std::string> known_ids;
    for (const auto& e : manifest.entries) known_ids.insert(e.id);

    // collect predictions per sample id
    std::map<std::string, std::map<silico::Organelle, fs::path>> preds;
    std::vector<std::string> unmatched;
    for (const auto& f : fs::directory_iterator(a.pred)) {
        if (!f.is_regular_file() || f.path().extension() != ".tif") continue;
        const auto stem = f.path().stem().string();
        const std::string suffix = "_pred";
        if (stem.size() <= suffix.size() ||
            stem.substr(stem.size() - suffix.size()) != suffix) {
            continue;
        }
        const auto base = stem.substr(0, stem.size() - suffix.size());
        const auto uscore = base.rfind('_');
        if (uscore == std::string::npos) continue;
        const auto sample_id = base.substr(0, uscore);
        silico::Organelle organelle;
        try {
            organelle = silico::organelle_from_string(base.substr(uscore + 1));
        } catch (const silico::FormatError&) {
            continue;
        }
        if (!known_ids.count(sample_id)) {
            unmatched.push_back(f.path().filename().string());
            continue;
        }
        preds[sample_id][organelle] = f.path();
    }
    if (!unmatched.empty()) {
        std::sort(unmatched.begin(), unmatched.end());
        for (const auto& u : unmatched) {
            std::cerr << "unmatched prediction: " << u << "\n";
        }
        throw silico::ValidationError(std::to_string(unmatched.size()) +
                                      " prediction file(s) match no manifest sample");
    }
    if (preds.empty()) {
        throw silico::ValidationError("no predictions found under " + a.pred);
    }

    std::vector<silico::MetricReport> reports;
    for (const auto& e : manifest.entries) {
        auto it = preds.find(e.id);
        if (it == preds.end()) continue;
        const auto gt = silico::load_sample(manifest, e);
        silico::PredictionSet p;
        p.sample_id = e.id;
        for (silico::Organelle o : silico::kOrganelles) {
            if (!gt.availability[o]) continue;  // only labeled organelles are scored
            auto fit = it->second.find(o);
            if (fit == it->second.end()) {
                throw silico::ValidationError("missing prediction plane for " + e.id + " " +
                                              silico::to_string(o));
            }
            p.channels[static_cast<size_t>(silico::channel_index(o))] =
                silico::read_image(fit->second);
        }
        reports.push_back(silico::evaluate(p, gt));
    }

    const auto agg = silico::aggregate(reports);
    const auto table = silico::format_report(agg);
    if (!a.out.empty()) {
        std::ofstream out(a.out);
        if (!out) throw silico::IoError("cannot write report: " + a.out);
        out << table;
        std::ofstream jout(fs::path(a.out).replace_extension(".json"));
        jout << silico::report_to_json(agg).dump(2) << "\n";
    }
    std::cout << table;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"silico: in-silico fluorescence labeling toolkit.\n"
                 "Predicts four fluorescent organelle channels (mitochondria, nucleus,\n"
                 "tubulin, actin) from single-channel transmitted-light microscopy.\n"
                 "Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error."};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a deterministic synthetic dataset");
    s->add_option("--out", synth.out, "Output dataset directory")->required();
    s->add_option("--config", synth.config, "JSON config file");
    s->add_option("--n", synth.n, "Number of samples");
    s->add_option("--size", synth.size, "Image height/width (min 64)");
    s->add_option("--seed", synth.seed, "Generator seed");

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train models over a dataset tree");
    t->add_option("--data", train.data, "Dataset root directory")->required();
    t->add_option("--out", train.out, "Checkpoint/log output directory")->required();
    t->add_option("--config", train.config, "JSON config file");
    t->add_option("--strategy", train.strategy, "separate | unified | dynamic");
    t->add_option("--backbone", train.backbone, "pix2pix | unetpp");
    t->add_option("--tier", train.tier, "paper | test (model size and schedule preset)");
    t->add_option("--seed", train.seed, "Training seed");
    t->add_option("--epochs-constant", train.epochs_constant, "Epochs at constant lr");
    t->add_option("--epochs-decay", train.epochs_decay, "Epochs of linear lr decay");
    t->add_option("--steps-per-epoch", train.steps_per_epoch, "Sampler batches per epoch");
    t->add_option("--batch-size", train.batch_size, "Batch size");
    t->add_option("--patch", train.patch, "Training patch size");
    t->add_option("--resume", train.resume, "Resume a unified/dynamic run from a checkpoint");

    RoutingArgs routing;
    auto* r = app.add_subcommand(
        "routing", "Write the deployed routing table (per-modality models with the\n"
                   "unified fallback for DIC actin)");
    r->add_option("--bf", routing.bf, "Model id for BF inputs")->required();
    r->add_option("--pc", routing.pc, "Model id for PC inputs")->required();
    r->add_option("--dic", routing.dic, "Model id for DIC inputs")->required();
    r->add_option("--unified", routing.unified, "Model id for the (DIC, Actin) fallback")
        ->required();
    r->add_option("--out", routing.out, "Routing table file to write")->required();

    PredictArgs predict;
    auto* p = app.add_subcommand("predict", "Predict organelle planes for input images");
    p->add_option("--checkpoints", predict.checkpoints, "Directory of .ckpt files")->required();
    p->add_option("--routing", predict.routing, "Routing table file")->required();
    p->add_option("--out", predict.out, "Output directory")->required();
    p->add_option("images", predict.images, "Input TIFFs named <sample>_<MODALITY>.tif");
    p->add_option("--data", predict.data, "Predict every input under this dataset root");
    p->add_option("--config", predict.config, "JSON config file");
    p->add_flag("--tta,!--no-tta", predict.tta, "Four-rotation test-time augmentation");
    p->add_option("--patch", predict.patch, "Sliding-window patch size");
    p->add_option("--overlap", predict.overlap, "Sliding-window overlap ratio");

    EvaluateArgs evaluate;
    auto* e = app.add_subcommand("evaluate", "Score predictions against ground truth");
    e->add_option("--pred", evaluate.pred, "Directory of *_pred.tif files")->required();
    e->add_option("--data", evaluate.data, "Ground-truth dataset root")->required();
    e->add_option("--out", evaluate.out, "Report file to write (plus .json twin)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (s->parsed()) return cmd_synth(synth);
        if (t->parsed()) return cmd_train(train);
        if (r->parsed()) return cmd_routing(routing);
        if (p->parsed()) return cmd_predict(predict);
        if (e->parsed()) return cmd_evaluate(evaluate);
        std::cerr << "no subcommand\n";
        return kExitUsage;
    } catch (const silico::ConfigError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitUsage;
    } catch (const silico::Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitData;
    } catch (const std::exception& err) {
        std::cerr << "internal error: " << err.what() << "\n";
        return kExitInternal;
    }
}
