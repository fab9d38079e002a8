#pragma once

// Intensity rescaling between uint16 and the model's [-1, 1] range,
// percentile weight-mask construction, random cropping and the rot90/flip
// training augmentation.

#include <map>
#include <utility>

#include <torch/torch.h>

#include "silico/core.hpp"

namespace silico {

// ---------------------------------------------------------------------------
// Rescaling
// ---------------------------------------------------------------------------

// uint16 [0, 65535] -> float32 [-1, 1]:  v' = 2*v/65535 - 1.
inline torch::Tensor rescale_to_model(const ImagePlane& p) {
    auto t = torch::empty({p.height, p.width}, torch::kFloat32);
    float* dst = t.data_ptr<float>();
    constexpr float scale = 2.0f / 65535.0f;
    for (int64_t i = 0; i < p.pixels(); ++i) {
        dst[i] = static_cast<float>(p.values[i]) * scale - 1.0f;
    }
    return t;
}

// Inverse: clamp to [-1, 1], then v = round((v'+1)/2 * 65535). Exact inverse
// of rescale_to_model on all representable values; out-of-range model output
// saturates at the ends.
inline ImagePlane rescale_to_uint16(const torch::Tensor& n) {
    TORCH_CHECK(n.dim() == 2, "rescale_to_uint16 expects a (H, W) tensor");
    auto d = n.to(torch::kFloat64).clamp(-1.0, 1.0).contiguous();
    ImagePlane p(d.size(0), d.size(1));
    const double* src = d.data_ptr<double>();
    for (int64_t i = 0; i < p.pixels(); ++i) {
        p.values[i] = static_cast<uint16_t>(std::lround((src[i] + 1.0) * 0.5 * 65535.0));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Percentile weight mask
// ---------------------------------------------------------------------------

struct MaskConfig {
    double lo_pct = 2.0;
    double hi_pct = 99.8;
    double low_weight = 0.1;
};

// Per-pixel loss weights from the percentile band of the ground truth:
// 1.0 inside the closed [lo, hi] percentile band, low_weight outside.
// Percentile = linear interpolation between order statistics. Mask is double
// so the low weight is exact against independent oracles.
inline torch::Tensor percentile_weight_mask(const torch::Tensor& gt,
                                            const MaskConfig& cfg = {}) {
    TORCH_CHECK(gt.numel() > 0, "percentile_weight_mask: empty ground truth");
    auto g = gt.detach().to(torch::kFloat64);
    const auto flat = g.flatten();
    const double a = torch::quantile(flat, cfg.lo_pct / 100.0).item<double>();
    const double b = torch::quantile(flat, cfg.hi_pct / 100.0).item<double>();
    auto inside = (g >= a) & (g <= b);
    return torch::where(inside, torch::ones_like(g),
                        torch::full_like(g, cfg.low_weight));
}

// ---------------------------------------------------------------------------
// Patch extraction and augmentation
// ---------------------------------------------------------------------------

// One training patch: everything cropped at the same offset and carrying the
// masks of its available organelles.
struct PatchPair {
    torch::Tensor input;                          // (H, W) float32 in [-1, 1]
    std::map<Organelle, torch::Tensor> targets;   // (H, W) float32
    std::map<Organelle, torch::Tensor> masks;     // (H, W) float64 in {low, 1}
    LabelAvailability availability;
    Modality modality = Modality::BF;
    std::string sample_id;
};

namespace detail {

// Reflect-pads to at least (min_h, min_w), iterating when a single reflect
// cannot bridge the gap (reflect pad must stay < dim). anchor_top_left pads
// bottom/right only, keeping original content at (0, 0) so callers can crop
// it back off.
inline torch::Tensor reflect_pad_to(torch::Tensor t, int64_t min_h, int64_t min_w,
                                    bool anchor_top_left = false) {
    namespace F = torch::nn::functional;
    while (t.size(0) < min_h || t.size(1) < min_w) {
        const int64_t h = t.size(0), w = t.size(1);
        TORCH_CHECK(h > 1 && w > 1, "reflect_pad_to: plane too small to reflect");
        const int64_t need_h = std::max<int64_t>(0, min_h - h);
        const int64_t need_w = std::max<int64_t>(0, min_w - w);
        const int64_t top = anchor_top_left ? 0 : std::min((need_h + 1) / 2, h - 1);
        const int64_t bottom = std::min(need_h - top, h - 1);
        const int64_t left = anchor_top_left ? 0 : std::min((need_w + 1) / 2, w - 1);
        const int64_t right = std::min(need_w - left, w - 1);
        t = F::pad(t.unsqueeze(0).unsqueeze(0),
                   F::PadFuncOptions({left, right, top, bottom}).mode(torch::kReflect))
                .squeeze(0)
                .squeeze(0);
    }
    return t;
}

}  // namespace detail

// Normalizes a sample, reflect-pads anything smaller than the patch, then
// crops input, targets and masks at one uniformly drawn offset. Masks are
// computed from the cropped ground-truth patch.
inline PatchPair random_crop(const Sample& s, int64_t size, Rng& rng,
                             const MaskConfig& mask_cfg = {}) {
    TORCH_CHECK(size > 0, "random_crop: patch size must be positive");
    PatchPair p;
    p.availability = s.availability;
    p.modality = s.modality;
    p.sample_id = s.id;

    auto input = detail::reflect_pad_to(rescale_to_model(s.input), size, size);
    const int64_t max_r = input.size(0) - size;
    const int64_t max_c = input.size(1) - size;
    const int64_t r0 = static_cast<int64_t>(uniform_below(rng, static_cast<uint64_t>(max_r + 1)));
    const int64_t c0 = static_cast<int64_t>(uniform_below(rng, static_cast<uint64_t>(max_c + 1)));

    p.input = input.slice(0, r0, r0 + size).slice(1, c0, c0 + size).contiguous();
    for (const auto& [o, plane] : s.targets) {
        auto t = detail::reflect_pad_to(rescale_to_model(plane), size, size);
        auto patch = t.slice(0, r0, r0 + size).slice(1, c0, c0 + size).contiguous();
        p.masks[o] = percentile_weight_mask(patch, mask_cfg);
        p.targets[o] = std::move(patch);
    }
    return p;
}

// One quarter-rotation k in {0..3} chosen uniformly, then a horizontal flip
// with probability 1/2; the identical spatial transform is applied to input,
// targets and masks.
inline PatchPair augment(PatchPair p, Rng& rng) {
    TORCH_CHECK(p.input.size(0) == p.input.size(1), "augment requires square patches");
    const int64_t k = static_cast<int64_t>(uniform_below(rng, 4));
    const bool flip = uniform_below(rng, 2) == 1;

    auto apply = [&](const torch::Tensor& t) {
        auto out = k == 0 ? t : torch::rot90(t, k, {0, 1});
        if (flip) out = torch::flip(out, {1});
        return out.contiguous();
    };

    p.input = apply(p.input);
    for (auto& [o, t] : p.targets) t = apply(t);
    for (auto& [o, m] : p.masks) m = apply(m);
    return p;
}

}  // namespace silico
