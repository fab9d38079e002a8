#pragma once

// Challenge evaluation metrics with their per-organelle applicability rules:
// MAE, SSIM, PCC, Euclidean and cosine distances. All comparisons run on
// [0, 1]-scaled intensities (v / 65535) in double precision. MAE and the
// distances apply to mitochondria and nucleus only; SSIM and PCC to all four.

#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include "silico/core.hpp"

namespace silico {

namespace detail {

inline torch::Tensor to_unit_double(const ImagePlane& p) {
    auto t = torch::empty({p.height, p.width}, torch::kFloat64);
    double* dst = t.data_ptr<double>();
    for (int64_t i = 0; i < p.pixels(); ++i) {
        dst[i] = static_cast<double>(p.values[static_cast<size_t>(i)]) / 65535.0;
    }
    return t;
}

inline void check_same_dims(const ImagePlane& a, const ImagePlane& b, const char* who) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(who) + ": dimension mismatch " + std::to_string(a.height) +
                         "x" + std::to_string(a.width) + " vs " + std::to_string(b.height) +
                         "x" + std::to_string(b.width));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scalar metrics
// ---------------------------------------------------------------------------

inline double mae(const ImagePlane& pred, const ImagePlane& gt) {
    detail::check_same_dims(pred, gt, "mae");
    auto a = detail::to_unit_double(pred);
    auto b = detail::to_unit_double(gt);
    return (a - b).abs().mean().item<double>();
}

struct SsimConfig {
    int64_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

// Mean local SSIM over all valid window positions with a normalized Gaussian
// window; the standard stabilizer constants.
inline double ssim(const ImagePlane& pred, const ImagePlane& gt, const SsimConfig& cfg = {}) {
    detail::check_same_dims(pred, gt, "ssim");
    if (pred.height < cfg.window || pred.width < cfg.window) {
        throw ShapeError("ssim: image " + std::to_string(pred.height) + "x" +
                         std::to_string(pred.width) + " smaller than the " +
                         std::to_string(cfg.window) + "-pixel window");
    }
    namespace F = torch::nn::functional;
    auto a = detail::to_unit_double(pred).unsqueeze(0).unsqueeze(0);
    auto b = detail::to_unit_double(gt).unsqueeze(0).unsqueeze(0);

    auto coords = torch::arange(cfg.window, torch::kFloat64) -
                  static_cast<double>(cfg.window / 2);
    auto g1d = torch::exp(-coords.pow(2) / (2 * cfg.sigma * cfg.sigma));
    auto kernel = torch::outer(g1d, g1d);
    kernel = (kernel / kernel.sum()).reshape({1, 1, cfg.window, cfg.window});

    auto filter = [&](const torch::Tensor& t) {
        return F::conv2d(t, kernel, F::Conv2dFuncOptions());  // valid windows only
    };
    auto mu_a = filter(a);
    auto mu_b = filter(b);
    auto sigma_a = filter(a * a) - mu_a * mu_a;
    auto sigma_b = filter(b * b) - mu_b * mu_b;
    auto sigma_ab = filter(a * b) - mu_a * mu_b;

    const double c1 = (cfg.k1 * cfg.data_range) * (cfg.k1 * cfg.data_range);
    const double c2 = (cfg.k2 * cfg.data_range) * (cfg.k2 * cfg.data_range);
    auto ssim_map = ((2 * mu_a * mu_b + c1) * (2 * sigma_ab + c2)) /
                    ((mu_a * mu_a + mu_b * mu_b + c1) * (sigma_a + sigma_b + c2));
    return ssim_map.mean().item<double>();
}

inline double pcc(const ImagePlane& pred, const ImagePlane& gt) {
    detail::check_same_dims(pred, gt, "pcc");
    auto a = detail::to_unit_double(pred).flatten();
    auto b = detail::to_unit_double(gt).flatten();
    auto da = a - a.mean();
    auto db = b - b.mean();
    const double va = da.pow(2).sum().item<double>();
    const double vb = db.pow(2).sum().item<double>();
    if (va == 0.0 || vb == 0.0) {
        throw ValidationError("pcc undefined: zero variance input");
    }
    return (da * db).sum().item<double>() / std::sqrt(va * vb);
}

// (euclidean distance, cosine distance) over the flattened [0,1] vectors.
inline std::pair<double, double> distances(const ImagePlane& pred, const ImagePlane& gt) {
    detail::check_same_dims(pred, gt, "distances");
    auto a = detail::to_unit_double(pred).flatten();
    auto b = detail::to_unit_double(gt).flatten();
    const double e_dist = (a - b).norm().item<double>();
    const double na = a.norm().item<double>();
    const double nb = b.norm().item<double>();
    if (na == 0.0 || nb == 0.0) {
        throw ValidationError("cosine distance undefined: zero-norm input");
    }
    const double c_dist = 1.0 - (a * b).sum().item<double>() / (na * nb);
    return {e_dist, c_dist};
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline bool full_metrics_apply(Organelle o) {
    return o == Organelle::Mitochondria || o == Organelle::Nucleus;
}

struct MetricValues {
    std::optional<double> mae;
    std::optional<double> ssim;
    std::optional<double> pcc;
    std::optional<double> e_dist;
    std::optional<double> c_dist;
};

struct MetricReport {
    std::map<Organelle, MetricValues> per_organelle;
};

// Metrics for the labeled organelles only; MAE and distances suppressed for
// tubulin and actin per the challenge rules.
inline MetricReport evaluate(const PredictionSet& preds, const Sample& gt) {
    if (!gt.availability.any()) {
        throw ValidationError("evaluate: sample " + gt.id + " has no labeled organelle");
    }
    MetricReport report;
    for (Organelle o : kOrganelles) {
        if (!gt.availability[o]) continue;
        const auto& pred = preds.channels[static_cast<size_t>(channel_index(o))];
        const auto& target = gt.targets.at(o);
        MetricValues v;
        v.ssim = ssim(pred, target);
        v.pcc = pcc(pred, target);
        if (full_metrics_apply(o)) {
            v.mae = mae(pred, target);
            auto [e, c] = distances(pred, target);
            v.e_dist = e;
            v.c_dist = c;
        }
        report.per_organelle[o] = v;
    }
    return report;
}

// Dataset-level aggregation: the arithmetic mean of per-image values, cell by
// cell, over the images where the cell applies.
inline MetricReport aggregate(const std::vector<MetricReport>& reports) {
    MetricReport out;
    std::map<Organelle, std::array<std::pair<double, int>, 5>> acc;
    for (const auto& r : reports) {
        for (const auto& [o, v] : r.per_organelle) {
            auto& slots = acc[o];
            auto add = [](std::pair<double, int>& slot, const std::optional<double>& x) {
                if (x) {
                    slot.first += *x;
                    slot.second += 1;
                }
            };
            add(slots[0], v.mae);
            add(slots[1], v.ssim);
            add(slots[2], v.pcc);
            add(slots[3], v.e_dist);
            add(slots[4], v.c_dist);
        }
    }
    for (const auto& [o, slots] : acc) {
        MetricValues v;
        auto mean = [](const std::pair<double, int>& s) -> std::optional<double> {
            if (s.second == 0) return std::nullopt;
            return s.first / s.second;
        };
        v.mae = mean(slots[0]);
        v.ssim = mean(slots[1]);
        v.pcc = mean(slots[2]);
        v.e_dist = mean(slots[3]);
        v.c_dist = mean(slots[4]);
        out.per_organelle[o] = v;
    }
    return out;
}

// Fixed-width text table, one row per organelle, "-" for suppressed cells.
// Deterministic formatting (fixed precision) so identical inputs produce
// byte-identical reports.
inline std::string format_report(const MetricReport& report) {
    std::ostringstream os;
    auto cell = [](const std::optional<double>& v) {
        char buf[32];
        if (v) {
            std::snprintf(buf, sizeof(buf), "%10.6f", *v);
        } else {
            std::snprintf(buf, sizeof(buf), "%10s", "-");
        }
        return std::string(buf);
    };
    os << "organelle     " << "       MAE" << "      SSIM" << "       PCC" << "    E_dist"
       << "    C_dist" << "\n";
    for (Organelle o : kOrganelles) {
        auto it = report.per_organelle.find(o);
        char name[32];
        std::snprintf(name, sizeof(name), "%-14s", to_string(o).c_str());
        os << name;
        if (it == report.per_organelle.end()) {
            os << cell(std::nullopt) << cell(std::nullopt) << cell(std::nullopt)
               << cell(std::nullopt) << cell(std::nullopt) << "\n";
            continue;
        }
        os << cell(it->second.mae) << cell(it->second.ssim) << cell(it->second.pcc)
           << cell(it->second.e_dist) << cell(it->second.c_dist) << "\n";
    }
    return os.str();
}

inline nlohmann::ordered_json report_to_json(const MetricReport& report) {
    nlohmann::ordered_json j;
    for (Organelle o : kOrganelles) {
        auto it = report.per_organelle.find(o);
        if (it == report.per_organelle.end()) continue;
        nlohmann::ordered_json row;
        auto put = [&](const char* key, const std::optional<double>& v) {
            if (v) row[key] = *v;
        };
        put("MAE", it->second.mae);
        put("SSIM", it->second.ssim);
        put("PCC", it->second.pcc);
        put("E_dist", it->second.e_dist);
        put("C_dist", it->second.c_dist);
        j[to_string(o)] = row;
    }
    return j;
}

}  // namespace silico
