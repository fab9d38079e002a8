#pragma once

// Optimization loop: Adam with the constant-then-linear-decay schedule, the
// three modality-handling strategies (separate / unified / dynamic), balanced
// batch composition, JSONL step logging and resumable checkpoints.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include "silico/core.hpp"
#include "silico/dataset.hpp"
#include "silico/losses.hpp"
#include "silico/models.hpp"
#include "silico/sampler.hpp"
#include "silico/transforms.hpp"

namespace silico {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

enum class Strategy { Separate, Unified, Dynamic };
enum class Backbone { Pix2pixResnet9, UnetPP };

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::Separate: return "separate";
        case Strategy::Unified: return "unified";
        case Strategy::Dynamic: return "dynamic";
    }
    throw ValidationError("invalid Strategy");
}

inline std::string to_string(Backbone b) {
    switch (b) {
        case Backbone::Pix2pixResnet9: return "pix2pix_resnet9";
        case Backbone::UnetPP: return "unetpp";
    }
    throw ValidationError("invalid Backbone");
}

inline Strategy strategy_from_string(std::string_view s) {
    const auto l = lowercase(s);
    if (l == "separate") return Strategy::Separate;
    if (l == "unified") return Strategy::Unified;
    if (l == "dynamic") return Strategy::Dynamic;
    throw ConfigError("unknown strategy: \"" + std::string(s) + "\"");
}

inline Backbone backbone_from_string(std::string_view s) {
    const auto l = lowercase(s);
    if (l == "pix2pix" || l == "pix2pix_resnet9" || l == "resnet9") {
        return Backbone::Pix2pixResnet9;
    }
    if (l == "unetpp" || l == "unet++") return Backbone::UnetPP;
    throw ConfigError("unknown backbone: \"" + std::string(s) + "\"");
}

struct TrainConfig {
    Strategy strategy = Strategy::Unified;
    Backbone backbone = Backbone::Pix2pixResnet9;
    int epochs_constant = 150;
    int epochs_decay = 150;
    double lr0 = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int batch_size = 4;
    int64_t patch_size = 512;
    int steps_per_epoch = 1000;
    int checkpoint_every_epochs = 50;
    uint64_t seed = 1;
    GeneratorSpec gen;
    DiscriminatorSpec disc;
    UnetPPSpec unetpp;
    LossConfig loss;

    int total_epochs() const { return epochs_constant + epochs_decay; }

    void validate() const {
        if (epochs_constant < 0 || epochs_decay < 0 || total_epochs() < 1) {
            throw ConfigError("train: epoch counts must be non-negative, total >= 1");
        }
        if (lr0 <= 0 || batch_size < 1 || steps_per_epoch < 1 || patch_size < 1) {
            throw ConfigError("train: lr0, batch_size, steps_per_epoch, patch_size must be positive");
        }
        const int64_t divisor = backbone == Backbone::UnetPP
                                    ? (int64_t{1} << unetpp.depth)
                                    : 4;
        if (patch_size % divisor != 0) {
            throw ConfigError("train: patch_size must be divisible by " +
                              std::to_string(divisor) + " for this backbone");
        }
        gen.validate();
        disc.validate();
        unetpp.validate();
        loss.validate();
    }

    // Paper-scale defaults are the struct defaults; the test tier shrinks
    // width/depth/patch so a full run finishes in minutes on a CPU.
    static TrainConfig test_tier() {
        TrainConfig c;
        c.epochs_constant = 2;
        c.epochs_decay = 2;
        c.batch_size = 4;
        c.patch_size = 64;
        c.steps_per_epoch = 10;
        c.checkpoint_every_epochs = 2;
        c.gen.base_width = 8;
        c.gen.n_resblocks = 2;
        c.disc.base_width = 8;
        c.unetpp.base_width = 8;
        c.unetpp.depth = 2;
        return c;
    }
};

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
    return {{"strategy", to_string(c.strategy)},
            {"backbone", to_string(c.backbone)},
            {"epochs_constant", c.epochs_constant},
            {"epochs_decay", c.epochs_decay},
            {"lr0", c.lr0},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"batch_size", c.batch_size},
            {"patch_size", c.patch_size},
            {"steps_per_epoch", c.steps_per_epoch},
            {"checkpoint_every_epochs", c.checkpoint_every_epochs},
            {"seed", c.seed},
            {"gen", {{"base_width", c.gen.base_width}, {"n_resblocks", c.gen.n_resblocks}}},
            {"disc", {{"base_width", c.disc.base_width}, {"n_layers", c.disc.n_layers}}},
            {"unetpp", {{"base_width", c.unetpp.base_width}, {"depth", c.unetpp.depth}}},
            {"loss",
             {{"lambda1", c.loss.lambda1},
              {"lambda2", c.loss.lambda2},
              {"lo_pct", c.loss.mask.lo_pct},
              {"hi_pct", c.loss.mask.hi_pct},
              {"low_weight", c.loss.mask.low_weight}}}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    c.backbone = backbone_from_string(j.at("backbone").get<std::string>());
    c.epochs_constant = j.at("epochs_constant").get<int>();
    c.epochs_decay = j.at("epochs_decay").get<int>();
    c.lr0 = j.at("lr0").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.patch_size = j.at("patch_size").get<int64_t>();
    c.steps_per_epoch = j.at("steps_per_epoch").get<int>();
    c.checkpoint_every_epochs = j.at("checkpoint_every_epochs").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    c.gen.base_width = j.at("gen").at("base_width").get<int64_t>();
    c.gen.n_resblocks = j.at("gen").at("n_resblocks").get<int64_t>();
    c.disc.base_width = j.at("disc").at("base_width").get<int64_t>();
    c.disc.n_layers = j.at("disc").at("n_layers").get<int64_t>();
    c.unetpp.base_width = j.at("unetpp").at("base_width").get<int64_t>();
    c.unetpp.depth = j.at("unetpp").at("depth").get<int64_t>();
    c.loss.lambda1 = j.at("loss").at("lambda1").get<double>();
    c.loss.lambda2 = j.at("loss").at("lambda2").get<double>();
    c.loss.mask.lo_pct = j.at("loss").at("lo_pct").get<double>();
    c.loss.mask.hi_pct = j.at("loss").at("hi_pct").get<double>();
    c.loss.mask.low_weight = j.at("loss").at("low_weight").get<double>();
    return c;
}

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

// Constant lr0 for the first epochs_constant epochs, then linear decay to 0
// over epochs_decay more.
inline double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch > cfg.total_epochs()) {
        throw ValidationError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                              std::to_string(cfg.total_epochs()) + "]");
    }
    if (epoch < cfg.epochs_constant) return cfg.lr0;
    return cfg.lr0 *
           (1.0 - static_cast<double>(epoch - cfg.epochs_constant) / cfg.epochs_decay);
}

// ---------------------------------------------------------------------------
// Train state
// ---------------------------------------------------------------------------

struct TrainState {
    TrainConfig cfg;
    std::optional<Modality> modality_scope;  // set for separate-strategy runs
    std::string model_id;
    std::shared_ptr<GeneratorBaseImpl> generator;
    std::optional<DiscriminatorBank> discs;  // absent for the UNet++ backbone
    std::unique_ptr<torch::optim::Adam> opt_g;
    std::array<std::unique_ptr<torch::optim::Adam>, kNumOrganelles> opt_d;
    std::unique_ptr<BalancedSampler> sampler;
    Rng aug_rng{0};  // drives crops and augmentation
    int64_t step = 0;
    int epoch = 0;
};

namespace detail {

inline std::string model_id_for(const TrainConfig& cfg, std::optional<Modality> scope) {
    std::string id = (cfg.backbone == Backbone::Pix2pixResnet9 ? "pix2pix" : "unetpp");
    id += "_" + to_string(cfg.strategy);
    if (scope) id += "_" + to_string(*scope);
    return id;
}

inline void set_lr(torch::optim::Optimizer& opt, double lr) {
    for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

inline void set_requires_grad(torch::nn::Module& m, bool value) {
    for (auto& p : m.parameters()) p.set_requires_grad(value);
}

}  // namespace detail

// Builds models, optimizers and sampler for one training run. Derives the
// torch seed from (cfg.seed, scope) so separate runs differ.
inline TrainState init_train_state(const Manifest& manifest, const TrainConfig& cfg,
                                   std::optional<Modality> scope) {
    cfg.validate();
    if (cfg.strategy == Strategy::Separate && !scope) {
        throw ConfigError("separate strategy requires a modality scope per run");
    }

    TrainState st;
    st.cfg = cfg;
    st.modality_scope = scope;
    st.model_id = detail::model_id_for(cfg, scope);

    const uint64_t run_seed =
        cfg.seed * 16777619ULL + (scope ? 1 + static_cast<uint64_t>(modality_index(*scope)) : 0);
    torch::manual_seed(run_seed);

    if (cfg.backbone == Backbone::Pix2pixResnet9) {
        st.generator = build_generator(cfg.gen).ptr();
        st.discs = build_discriminator_bank(cfg.disc);
    } else {
        st.generator = build_unetpp(cfg.unetpp).ptr();
    }
    if (cfg.strategy == Strategy::Dynamic) {
        make_dynamic(st.generator, make_controller(st.generator), modality_code(Modality::BF));
    }

    auto adam_opts = [&](double lr) {
        return torch::optim::AdamOptions(lr).betas(std::make_tuple(cfg.beta1, cfg.beta2));
    };
    st.opt_g = std::make_unique<torch::optim::Adam>(st.generator->parameters(),
                                                    adam_opts(cfg.lr0));
    if (st.discs) {
        for (int k = 0; k < kNumOrganelles; ++k) {
            st.opt_d[static_cast<size_t>(k)] = std::make_unique<torch::optim::Adam>(
                (*st.discs)[static_cast<size_t>(k)]->parameters(), adam_opts(cfg.lr0));
        }
    }

    st.sampler = std::make_unique<BalancedSampler>(build_organelle_lists(manifest, scope),
                                                   run_seed ^ 0x9e3779b97f4a7c15ULL);
    st.aug_rng = Rng(run_seed ^ 0x2545f4914f6cdd1dULL);
    return st;
}

// ---------------------------------------------------------------------------
// One optimization step
// ---------------------------------------------------------------------------

// Alternating update per pix2pix: every included organelle's discriminator
// first (on real vs detached fake), then one generator update under the
// adaptive loss. UNet++ backbone: generator update only.
inline LossReport train_step(TrainState& st, const std::vector<PatchPair>& batch) {
    if (batch.empty()) throw ValidationError("train_step: empty batch");
    const int64_t P = st.cfg.patch_size;
    for (const auto& p : batch) {
        if (!p.availability.any()) {
            throw ValidationError("train_step: sample " + p.sample_id + " has no labels");
        }
        if (p.input.size(0) != P || p.input.size(1) != P) {
            throw ValidationError("train_step: patch size mismatch for " + p.sample_id);
        }
        for (Organelle o : kOrganelles) {
            const bool flagged = p.availability[o];
            if (flagged != (p.targets.count(o) > 0) || flagged != (p.masks.count(o) > 0)) {
                throw ValidationError("train_step: availability/target/mask mismatch for " +
                                      p.sample_id + " " + to_string(o));
            }
        }
    }

    const auto B = static_cast<int64_t>(batch.size());
    std::vector<torch::Tensor> input_list;
    std::vector<Modality> modalities;
    input_list.reserve(batch.size());
    for (const auto& p : batch) {
        input_list.push_back(p.input.unsqueeze(0));  // (1, H, W)
        modalities.push_back(p.modality);
    }
    auto inputs = torch::stack(input_list);  // (B, 1, H, W)
    std::optional<torch::Tensor> codes;
    if (st.generator->is_dynamic()) codes = modality_codes(modalities);

    auto head_outs = st.generator->forward_heads(inputs, codes);

    LossReport report;

    // Discriminator phase (availability-gated). Clearing every bank member
    // first leaves excluded discriminators with undefined gradients at the
    // end of the step instead of stale buffers from their last update.
    if (st.discs) {
        for (auto& od : st.opt_d) od->zero_grad(true);
        for (Organelle o : kOrganelles) {
            const auto k = static_cast<size_t>(channel_index(o));
            std::vector<int64_t> idx;
            for (int64_t i = 0; i < B; ++i) {
                if (batch[static_cast<size_t>(i)].availability[o]) idx.push_back(i);
            }
            if (idx.empty()) continue;
            auto sel = torch::tensor(idx, torch::kLong);
            auto src = inputs.index_select(0, sel);
            std::vector<torch::Tensor> reals;
            for (int64_t i : idx) {
                reals.push_back(batch[static_cast<size_t>(i)].targets.at(o).unsqueeze(0));
            }
            auto real = torch::stack(reals);
            auto fake = head_outs[k].index_select(0, sel).detach();

            auto& disc = (*st.discs)[k];
            auto d_real = detail::bce_logits(disc->forward(torch::cat({src, real}, 1)), 1.0);
            auto d_fake = detail::bce_logits(disc->forward(torch::cat({src, fake}, 1)), 0.0);
            auto d_loss = 0.5 * (d_real + d_fake);

            d_loss.backward();
            st.opt_d[k]->step();
            report.d_loss[k] = d_loss.item<double>();
            report.d_updated[k] = true;
        }
    }

    // Generator phase; discriminators frozen so their parameters collect no
    // gradients while the adversarial signal still reaches the generator.
    if (st.discs) {
        for (auto& d : *st.discs) detail::set_requires_grad(*d, false);
    }
    std::vector<SampleLossInputs> loss_batch;
    loss_batch.reserve(batch.size());
    for (int64_t i = 0; i < B; ++i) {
        SampleLossInputs in;
        in.source = inputs[i];
        for (size_t k = 0; k < static_cast<size_t>(kNumOrganelles); ++k) {
            in.pred_heads[k] = head_outs[k][i][0];
        }
        in.targets = &batch[static_cast<size_t>(i)].targets;
        in.masks = &batch[static_cast<size_t>(i)].masks;
        in.avail = batch[static_cast<size_t>(i)].availability;
        loss_batch.push_back(std::move(in));
    }
    auto adaptive = adaptive_loss(loss_batch, st.discs ? &*st.discs : nullptr, st.cfg.loss);
    st.opt_g->zero_grad(true);
    adaptive.total.backward();
    st.opt_g->step();
    if (st.discs) {
        for (auto& d : *st.discs) detail::set_requires_grad(*d, true);
    }

    adaptive.report.d_loss = report.d_loss;
    adaptive.report.d_updated = report.d_updated;
    st.step += 1;
    return adaptive.report;
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

// Loads samples behind a manifest lazily, keeps them cached, and turns
// sampler picks into cropped/augmented patches.
class PatchStream {
public:
    explicit PatchStream(const Manifest& manifest) : manifest_(&manifest) {}

    std::vector<PatchPair> assemble(const BatchPlan& plan, int64_t patch, Rng& rng,
                                    const MaskConfig& mask_cfg) {
        std::vector<PatchPair> out;
        out.reserve(plan.picks.size());
        for (const auto& [id, focus] : plan.picks) {
            const Sample& s = sample(id);
            out.push_back(augment(random_crop(s, patch, rng, mask_cfg), rng));
        }
        return out;
    }

    const Sample& sample(const std::string& id) {
        auto it = cache_.find(id);
        if (it == cache_.end()) {
            it = cache_.emplace(id, load_sample(*manifest_, manifest_->find(id))).first;
        }
        return it->second;
    }

private:
    const Manifest* manifest_;
    std::map<std::string, Sample> cache_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_checkpoint(const fs::path& path, const TrainState& st) {
    nlohmann::ordered_json header;
    header["format"] = 1;
    header["model_id"] = st.model_id;
    header["backbone"] = to_string(st.cfg.backbone);
    header["strategy"] = to_string(st.cfg.strategy);
    header["modality_scope"] =
        st.modality_scope ? nlohmann::json(to_string(*st.modality_scope)) : nlohmann::json();
    header["dynamic"] = st.generator->is_dynamic();
    header["arch"] = st.generator->arch_json();
    std::vector<std::string> order;
    for (Organelle o : kOrganelles) order.push_back(to_string(o));
    header["organelle_order"] = order;
    header["epoch"] = st.epoch;
    header["step"] = st.step;
    header["train_config"] = train_config_to_json(st.cfg);

    torch::serialize::OutputArchive ar;
    ar.write("header", c10::IValue(header.dump()));

    torch::serialize::OutputArchive gen_ar;
    st.generator->save(gen_ar);
    ar.write("generator", gen_ar);
    torch::serialize::OutputArchive optg_ar;
    st.opt_g->save(optg_ar);
    ar.write("opt_g", optg_ar);

    if (st.discs) {
        for (int k = 0; k < kNumOrganelles; ++k) {
            torch::serialize::OutputArchive d_ar, od_ar;
            (*st.discs)[static_cast<size_t>(k)]->save(d_ar);
            st.opt_d[static_cast<size_t>(k)]->save(od_ar);
            ar.write("disc_" + std::to_string(k), d_ar);
            ar.write("opt_d_" + std::to_string(k), od_ar);
        }
    }
    if (st.sampler) ar.write("sampler_state", c10::IValue(st.sampler->save_state()));
    ar.write("aug_rng", c10::IValue(rng_state_string(st.aug_rng)));
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    ar.save_to(path.string());
}

// Everything needed to resume or serve a checkpoint; the sampler is rebuilt
// by the caller (it needs the manifest) and restored from sampler_state.
struct LoadedCheckpoint {
    nlohmann::json header;
    TrainConfig cfg;
    std::optional<Modality> modality_scope;
    std::string model_id;
    std::shared_ptr<GeneratorBaseImpl> generator;
    std::optional<DiscriminatorBank> discs;
    std::unique_ptr<torch::optim::Adam> opt_g;
    std::array<std::unique_ptr<torch::optim::Adam>, kNumOrganelles> opt_d;
    std::string sampler_state;
    std::string aug_rng_state;
    int epoch = 0;
    int64_t step = 0;
};

inline LoadedCheckpoint load_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("no such checkpoint: " + path.string());
    torch::serialize::InputArchive ar;
    ar.load_from(path.string());

    LoadedCheckpoint out;
    c10::IValue header_iv;
    ar.read("header", header_iv);
    out.header = nlohmann::json::parse(header_iv.toStringRef());
    out.cfg = train_config_from_json(out.header.at("train_config"));
    out.model_id = out.header.at("model_id").get<std::string>();
    if (!out.header.at("modality_scope").is_null()) {
        out.modality_scope =
            modality_from_string(out.header.at("modality_scope").get<std::string>());
    }
    out.epoch = out.header.at("epoch").get<int>();
    out.step = out.header.at("step").get<int64_t>();

    if (out.cfg.backbone == Backbone::Pix2pixResnet9) {
        out.generator = build_generator(out.cfg.gen).ptr();
    } else {
        out.generator = build_unetpp(out.cfg.unetpp).ptr();
    }
    if (out.header.at("dynamic").get<bool>()) {
        make_dynamic(out.generator, make_controller(out.generator),
                     modality_code(Modality::BF));  // placeholder; buffer reloads below
    }
    torch::serialize::InputArchive gen_ar;
    ar.read("generator", gen_ar);
    out.generator->load(gen_ar);

    auto adam_opts = [&](double lr) {
        return torch::optim::AdamOptions(lr).betas(
            std::make_tuple(out.cfg.beta1, out.cfg.beta2));
    };
    out.opt_g =
        std::make_unique<torch::optim::Adam>(out.generator->parameters(), adam_opts(out.cfg.lr0));
    torch::serialize::InputArchive optg_ar;
    ar.read("opt_g", optg_ar);
    out.opt_g->load(optg_ar);

    if (out.cfg.backbone == Backbone::Pix2pixResnet9) {
        out.discs = build_discriminator_bank(out.cfg.disc);
        for (int k = 0; k < kNumOrganelles; ++k) {
            torch::serialize::InputArchive d_ar, od_ar;
            ar.read("disc_" + std::to_string(k), d_ar);
            (*out.discs)[static_cast<size_t>(k)]->load(d_ar);
            out.opt_d[static_cast<size_t>(k)] = std::make_unique<torch::optim::Adam>(
                (*out.discs)[static_cast<size_t>(k)]->parameters(), adam_opts(out.cfg.lr0));
            ar.read("opt_d_" + std::to_string(k), od_ar);
            out.opt_d[static_cast<size_t>(k)]->load(od_ar);
        }
    }
    c10::IValue sampler_iv, rng_iv;
    if (ar.try_read("sampler_state", sampler_iv)) {
        out.sampler_state = sampler_iv.toStringRef();
    }
    ar.read("aug_rng", rng_iv);
    out.aug_rng_state = rng_iv.toStringRef();
    return out;
}

// ---------------------------------------------------------------------------
// Training runs
// ---------------------------------------------------------------------------

struct TrainRunResult {
    std::string model_id;
    fs::path final_checkpoint;
    fs::path log_path;
    LossReport last_report;
};

// One run over one (possibly modality-filtered) manifest view. Writes
// checkpoints `<model_id>_e<epoch>.ckpt` at the configured cadence plus
// `<model_id>_final.ckpt`, and a JSONL log with one record per step.
inline TrainRunResult train_run(const Manifest& manifest, const TrainConfig& cfg,
                                const fs::path& out_dir,
                                std::optional<Modality> scope = std::nullopt,
                                std::optional<fs::path> resume = std::nullopt) {
    cfg.validate();
    fs::create_directories(out_dir);

    TrainState st;
    if (resume) {
        auto loaded = load_checkpoint(*resume);
        st.cfg = cfg;
        st.modality_scope = loaded.modality_scope;
        st.model_id = loaded.model_id;
        st.generator = loaded.generator;
        st.discs = std::move(loaded.discs);
        st.opt_g = std::move(loaded.opt_g);
        st.opt_d = std::move(loaded.opt_d);
        st.sampler = std::make_unique<BalancedSampler>(
            build_organelle_lists(manifest, st.modality_scope), 0);
        st.sampler->load_state(loaded.sampler_state);
        rng_set_state(st.aug_rng, loaded.aug_rng_state);
        st.epoch = loaded.epoch + 1;  // checkpoints are taken at epoch end
        st.step = loaded.step;
    } else {
        st = init_train_state(manifest, cfg, scope);
    }

    const fs::path log_path = out_dir / ("log_" + st.model_id + ".jsonl");
    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write training log: " + log_path.string());

    PatchStream stream(manifest);
    LossReport last;

    for (; st.epoch < cfg.total_epochs(); ++st.epoch) {
        const double lr = lr_at(st.epoch, cfg);
        detail::set_lr(*st.opt_g, lr);
        if (st.discs) {
            for (auto& od : st.opt_d) detail::set_lr(*od, lr);
        }

        for (int s = 0; s < cfg.steps_per_epoch; ++s) {
            auto plan = st.sampler->next_batch(cfg.batch_size);
            auto batch = stream.assemble(plan, cfg.patch_size, st.aug_rng, cfg.loss.mask);
            last = train_step(st, batch);

            nlohmann::ordered_json rec;
            rec["step"] = st.step;
            rec["epoch"] = st.epoch;
            rec["lr"] = lr;
            rec["model_id"] = st.model_id;
            nlohmann::json ids = nlohmann::json::array();
            nlohmann::json mods = nlohmann::json::array();
            for (const auto& p : batch) {
                ids.push_back(p.sample_id);
                mods.push_back(to_string(p.modality));
            }
            rec["samples"] = ids;
            rec["modalities"] = mods;
            if (st.generator->is_dynamic()) {
                nlohmann::json codes = nlohmann::json::array();
                for (const auto& p : batch) {
                    auto code = modality_code(p.modality);
                    codes.push_back({code[0].item<float>(), code[1].item<float>(),
                                     code[2].item<float>()});
                }
                rec["codes"] = codes;
            }
            rec["loss"] = last.to_json();
            log << rec.dump() << "\n";
        }
        log.flush();

        const bool cadence = cfg.checkpoint_every_epochs > 0 &&
                             (st.epoch + 1) % cfg.checkpoint_every_epochs == 0;
        if (cadence && st.epoch + 1 < cfg.total_epochs()) {
            save_checkpoint(
                out_dir / (st.model_id + "_e" + std::to_string(st.epoch) + ".ckpt"), st);
        }
    }

    st.epoch = cfg.total_epochs() - 1;
    const fs::path final_path = out_dir / (st.model_id + "_final.ckpt");
    save_checkpoint(final_path, st);
    return {st.model_id, final_path, log_path, last};
}

struct TrainResult {
    std::vector<TrainRunResult> runs;
};

// Strategy dispatch: separate = three modality-scoped runs; unified/dynamic =
// one run over everything.
inline TrainResult train(const Manifest& manifest, const TrainConfig& cfg,
                         const fs::path& out_dir) {
    cfg.validate();
    if (manifest.entries.empty()) throw ConfigError("train: empty manifest");

    TrainResult result;
    if (cfg.strategy == Strategy::Separate) {
        for (Modality m : kModalities) {
            const auto subset = filter_by_modality(manifest, m);
            if (subset.entries.empty()) {
                throw ConfigError("separate strategy: no samples for modality " + to_string(m));
            }
            result.runs.push_back(train_run(manifest, cfg, out_dir, m));
        }
    } else {
        result.runs.push_back(train_run(manifest, cfg, out_dir));
    }
    return result;
}

}  // namespace silico
