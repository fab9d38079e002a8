#pragma once

// The adaptive partial-label loss built on the weighted pix2pix composite,
// plus the adversarial objectives. The transform T removes unlabeled
// organelle channels so they contribute nothing — neither loss nor gradient.
//
// All loss arithmetic accumulates in double precision on top of the float32
// activations; totals stay comparable against independent oracles.

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include "silico/core.hpp"
#include "silico/models.hpp"
#include "silico/transforms.hpp"

namespace silico {

struct LossConfig {
    double lambda1 = 100.0;  // weighted L1 term
    double lambda2 = 1.0;    // cGAN term
    MaskConfig mask;

    void validate() const {
        if (lambda1 <= 0 || lambda2 <= 0 || mask.low_weight <= 0)
            throw ConfigError("loss weights must be positive");
    }
};

struct LossReport {
    double total = 0.0;        // l1_term + adv_term
    double l1_weighted = 0.0;  // joint mean over selected channels (the lambda1 multiplicand)
    double l1_term = 0.0;      // lambda1 * l1_weighted
    double adv_term = 0.0;     // lambda2 * mean of included g_adv (0 without adversary)
    std::array<double, kNumOrganelles> l1{};
    std::array<double, kNumOrganelles> g_adv{};
    std::array<double, kNumOrganelles> d_loss{};
    std::array<bool, kNumOrganelles> included{};
    std::array<bool, kNumOrganelles> d_updated{};
    int n_included = 0;

    nlohmann::json to_json() const {
        nlohmann::ordered_json j;
        j["total"] = total;
        j["l1_weighted"] = l1_weighted;
        j["l1_term"] = l1_term;
        j["adv_term"] = adv_term;
        for (Organelle o : kOrganelles) {
            const int k = channel_index(o);
            nlohmann::ordered_json jo;
            jo["included"] = included[k];
            if (included[k]) {
                jo["l1"] = l1[k];
                jo["g_adv"] = g_adv[k];
            }
            if (d_updated[k]) jo["d_loss"] = d_loss[k];
            j[to_string(o)] = jo;
        }
        j["n_included"] = n_included;
        return j;
    }
};

// ---------------------------------------------------------------------------
// Transform T: drop unlabeled channels
// ---------------------------------------------------------------------------

// pred: (..., 4, H, W) with organelles in canonical order. Returns the
// channels whose availability flag is true, order preserved, values untouched.
inline torch::Tensor transform_T(const torch::Tensor& pred, const LabelAvailability& avail) {
    const int64_t cdim = pred.dim() >= 4 ? pred.dim() - 3 : 0;
    TORCH_CHECK(pred.dim() >= 3 && pred.size(cdim) == kNumOrganelles,
                "transform_T expects a 4-channel tensor in canonical order");
    if (!avail.any()) {
        throw ValidationError("transform_T: no labeled organelle to train on");
    }
    std::vector<int64_t> keep;
    for (Organelle o : kOrganelles) {
        if (avail[o]) keep.push_back(channel_index(o));
    }
    return pred.index_select(cdim, torch::tensor(keep, torch::kLong));
}

// ---------------------------------------------------------------------------
// Weighted L1
// ---------------------------------------------------------------------------

// Mean over all selected channels and pixels of |pred - gt| * M.
inline torch::Tensor weighted_l1(const torch::Tensor& pred_sel, const torch::Tensor& gt_sel,
                                 const torch::Tensor& masks_sel) {
    TORCH_CHECK(pred_sel.sizes() == gt_sel.sizes() && pred_sel.sizes() == masks_sel.sizes(),
                "weighted_l1: shape mismatch: pred ", pred_sel.sizes(), ", gt ",
                gt_sel.sizes(), ", mask ", masks_sel.sizes());
    auto diff = (pred_sel.to(torch::kFloat64) - gt_sel.to(torch::kFloat64)).abs();
    return (diff * masks_sel.to(torch::kFloat64)).mean();
}

// ---------------------------------------------------------------------------
// Adversarial objectives (logit-form BCE; no log(0) possible)
// ---------------------------------------------------------------------------

namespace detail {

inline torch::Tensor bce_logits(const torch::Tensor& logits, double target) {
    namespace F = torch::nn::functional;
    auto l = logits.to(torch::kFloat64);
    return F::binary_cross_entropy_with_logits(l, torch::full_like(l, target));
}

}  // namespace detail

// Patch-level cGAN losses for one organelle:
//   d_loss = 0.5 * [BCE(D(src, real), 1) + BCE(D(src, fake.detach()), 0)]
//   g_adv  = BCE(D(src, fake), 1)
// src/real/fake: (B, 1, H, W). The callable overload exists so tests can
// substitute analytic discriminator stubs.
using DiscFn = std::function<torch::Tensor(const torch::Tensor&)>;

inline std::pair<torch::Tensor, torch::Tensor> cgan_losses(const DiscFn& disc,
                                                           const torch::Tensor& source,
                                                           const torch::Tensor& real_target,
                                                           const torch::Tensor& fake_target) {
    auto d_real = detail::bce_logits(disc(torch::cat({source, real_target}, 1)), 1.0);
    auto d_fake =
        detail::bce_logits(disc(torch::cat({source, fake_target.detach()}, 1)), 0.0);
    auto d_loss = 0.5 * (d_real + d_fake);
    auto g_adv = detail::bce_logits(disc(torch::cat({source, fake_target}, 1)), 1.0);
    return {d_loss, g_adv};
}

inline std::pair<torch::Tensor, torch::Tensor> cgan_losses(PatchDiscriminator& disc,
                                                           const torch::Tensor& source,
                                                           const torch::Tensor& real_target,
                                                           const torch::Tensor& fake_target) {
    return cgan_losses(DiscFn([&disc](const torch::Tensor& t) { return disc->forward(t); }),
                       source, real_target, fake_target);
}

// ---------------------------------------------------------------------------
// Adaptive loss
// ---------------------------------------------------------------------------

// One sample's worth of context for the composite loss. Head outputs stay
// separate tensors: only the selected heads' graphs are ever touched, so
// excluded heads end a step with undefined gradients (see GeneratorBase).
struct SampleLossInputs {
    torch::Tensor source;                                        // (1, H, W)
    std::array<torch::Tensor, kNumOrganelles> pred_heads;        // (H, W) each
    const std::map<Organelle, torch::Tensor>* targets = nullptr;  // (H, W) each
    const std::map<Organelle, torch::Tensor>* masks = nullptr;    // (H, W) each
    LabelAvailability avail;
};

struct AdaptiveLoss {
    torch::Tensor total;  // scalar, double, graph attached
    LossReport report;
};

// L_ada for one sample: lambda1 * weighted_l1 over the T-selected channels
// plus lambda2 * mean over included organelles of the generator adversarial
// term. Pass discs = nullptr for the no-adversary backbone.
inline AdaptiveLoss adaptive_loss_single(const SampleLossInputs& in, DiscriminatorBank* discs,
                                         const LossConfig& cfg) {
    cfg.validate();
    if (!in.avail.any()) {
        throw ValidationError("adaptive_loss: sample has no labeled organelle");
    }
    AdaptiveLoss out;
    auto& r = out.report;

    std::vector<torch::Tensor> preds, gts, masks;
    for (Organelle o : kOrganelles) {
        if (!in.avail[o]) continue;
        const int k = channel_index(o);
        auto tit = in.targets->find(o);
        auto mit = in.masks->find(o);
        if (tit == in.targets->end() || mit == in.masks->end()) {
            throw ValidationError("adaptive_loss: missing target or mask for available " +
                                  to_string(o));
        }
        preds.push_back(in.pred_heads[static_cast<size_t>(k)]);
        gts.push_back(tit->second);
        masks.push_back(mit->second);
        r.included[k] = true;
        r.n_included += 1;
    }

    auto l1_joint = weighted_l1(torch::stack(preds), torch::stack(gts), torch::stack(masks));
    r.l1_weighted = l1_joint.item<double>();
    for (size_t i = 0, k = 0; i < static_cast<size_t>(kNumOrganelles); ++i) {
        if (!r.included[i]) continue;
        r.l1[i] = weighted_l1(preds[k], gts[k], masks[k]).item<double>();
        ++k;
    }

    out.total = cfg.lambda1 * l1_joint;
    r.l1_term = out.total.item<double>();
    if (discs != nullptr) {
        torch::Tensor adv_sum = torch::zeros({}, torch::kFloat64);
        for (size_t i = 0, k = 0; i < static_cast<size_t>(kNumOrganelles); ++i) {
            if (!r.included[i]) continue;
            auto fake = preds[k].unsqueeze(0).unsqueeze(0);
            auto src = in.source.unsqueeze(0);
            auto g_adv =
                detail::bce_logits((*discs)[i]->forward(torch::cat({src, fake}, 1)), 1.0);
            r.g_adv[i] = g_adv.item<double>();
            adv_sum = adv_sum + g_adv;
            ++k;
        }
        auto adv_term = cfg.lambda2 * (adv_sum / static_cast<double>(r.n_included));
        r.adv_term = adv_term.item<double>();
        out.total = out.total + adv_term;
    }
    r.total = out.total.item<double>();
    return out;
}

// Batch form: mean of the per-sample losses. Report aggregates per-organelle
// terms over the samples that include them.
inline AdaptiveLoss adaptive_loss(const std::vector<SampleLossInputs>& batch,
                                  DiscriminatorBank* discs, const LossConfig& cfg) {
    if (batch.empty()) throw ValidationError("adaptive_loss: empty batch");
    AdaptiveLoss out;
    auto& r = out.report;
    torch::Tensor total = torch::zeros({}, torch::kFloat64);
    std::array<int, kNumOrganelles> l1_n{}, adv_n{};
    double l1w_sum = 0.0, l1t_sum = 0.0, advt_sum = 0.0;

    for (const auto& s : batch) {
        auto one = adaptive_loss_single(s, discs, cfg);
        total = total + one.total;
        l1w_sum += one.report.l1_weighted;
        l1t_sum += one.report.l1_term;
        advt_sum += one.report.adv_term;
        for (int k = 0; k < kNumOrganelles; ++k) {
            if (!one.report.included[k]) continue;
            r.included[k] = true;
            r.l1[k] += one.report.l1[k];
            l1_n[k] += 1;
            if (discs != nullptr) {
                r.g_adv[k] += one.report.g_adv[k];
                adv_n[k] += 1;
            }
        }
    }
    out.total = total / static_cast<double>(batch.size());
    r.total = out.total.item<double>();
    r.l1_weighted = l1w_sum / static_cast<double>(batch.size());
    r.l1_term = l1t_sum / static_cast<double>(batch.size());
    r.adv_term = advt_sum / static_cast<double>(batch.size());
    for (int k = 0; k < kNumOrganelles; ++k) {
        if (l1_n[k] > 0) r.l1[k] /= l1_n[k];
        if (adv_n[k] > 0) r.g_adv[k] /= adv_n[k];
        if (r.included[k]) r.n_included += 1;
    }
    return out;
}

}  // namespace silico
