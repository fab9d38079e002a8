#pragma once

// Deterministic synthetic microscopy dataset generator. Reproduces the
// structural pathologies of the real corpus — three modalities, partial
// labels, class imbalance, and the DIC/actin hole — with procedural organelle
// maps and analytic per-modality input renderings, so the whole pipeline is
// testable at desk scale. Not a physics simulation.

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "silico/core.hpp"
#include "silico/dataset.hpp"

namespace silico {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct LabelPattern {
    LabelAvailability availability;
    double weight = 1.0;
};

struct SynthConfig {
    int n_samples = 24;
    int64_t size = 96;
    uint64_t seed = 7;
    std::map<Modality, std::vector<LabelPattern>> patterns = default_patterns();

    // Imbalance shape scaled from the real corpus' study counts: nucleus in
    // nearly every pattern, mitochondria in most, tubulin in few, actin in
    // fewer — and never under DIC.
    static std::map<Modality, std::vector<LabelPattern>> default_patterns() {
        using O = Organelle;
        const auto MN = LabelAvailability::of({O::Mitochondria, O::Nucleus});
        const auto MNTA = LabelAvailability::all();
        const auto NT = LabelAvailability::of({O::Nucleus, O::Tubulin});
        const auto NTA = LabelAvailability::of({O::Nucleus, O::Tubulin, O::Actin});
        const auto MNT = LabelAvailability::of({O::Mitochondria, O::Nucleus, O::Tubulin});
        const auto M = LabelAvailability::of({O::Mitochondria});
        const auto N = LabelAvailability::of({O::Nucleus});
        return {
            {Modality::BF, {{MN, 0.40}, {MNTA, 0.15}, {NT, 0.15}, {M, 0.10}, {N, 0.20}}},
            {Modality::PC, {{MN, 0.35}, {NTA, 0.15}, {MNT, 0.15}, {N, 0.35}}},
            {Modality::DIC, {{MN, 0.45}, {NT, 0.20}, {M, 0.20}, {N, 0.15}}},
        };
    }

    void validate() const {
        if (n_samples < 1) throw ConfigError("synth: n_samples must be positive");
        if (size < kMinPlaneDim) {
            throw ConfigError("synth: size must be at least " + std::to_string(kMinPlaneDim));
        }
        for (Modality m : kModalities) {
            auto it = patterns.find(m);
            if (it == patterns.end() || it->second.empty()) {
                throw ConfigError("synth: modality " + to_string(m) + " has no label pattern");
            }
            for (const auto& p : it->second) {
                if (!p.availability.any()) throw ConfigError("synth: empty label pattern");
                if (p.weight <= 0) throw ConfigError("synth: pattern weight must be positive");
                if (m == Modality::DIC && p.availability[Organelle::Actin]) {
                    throw ConfigError("synth: DIC patterns must not include Actin");
                }
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Procedural drawing
// ---------------------------------------------------------------------------

namespace synth_detail {

struct FloatMap {
    int64_t h, w;
    std::vector<double> v;
    FloatMap(int64_t h_, int64_t w_) : h(h_), w(w_), v(static_cast<size_t>(h_ * w_), 0.0) {}
    double& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * w + c)]; }
    double at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * w + c)]; }
};

inline void stamp(FloatMap& m, double cy, double cx, double sigma, double amp) {
    const int64_t rad = static_cast<int64_t>(std::ceil(3.0 * sigma));
    const int64_t r0 = std::max<int64_t>(0, static_cast<int64_t>(cy) - rad);
    const int64_t r1 = std::min(m.h - 1, static_cast<int64_t>(cy) + rad);
    const int64_t c0 = std::max<int64_t>(0, static_cast<int64_t>(cx) - rad);
    const int64_t c1 = std::min(m.w - 1, static_cast<int64_t>(cx) + rad);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int64_t r = r0; r <= r1; ++r) {
        for (int64_t c = c0; c <= c1; ++c) {
            const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
            double& px = m.at(r, c);
            px = std::max(px, amp * std::exp(-d2 * inv));
        }
    }
}

// Gaussian-profile polyline, stamped densely enough to look continuous.
inline void draw_path(FloatMap& m, const std::vector<std::pair<double, double>>& pts,
                      double width, double amp) {
    for (size_t i = 1; i < pts.size(); ++i) {
        const auto [y0, x0] = pts[i - 1];
        const auto [y1, x1] = pts[i];
        const double len = std::hypot(y1 - y0, x1 - x0);
        const int steps = std::max(1, static_cast<int>(std::ceil(len / (width * 0.5))));
        for (int sidx = 0; sidx <= steps; ++sidx) {
            const double t = static_cast<double>(sidx) / steps;
            stamp(m, y0 + t * (y1 - y0), x0 + t * (x1 - x0), width, amp);
        }
    }
}

inline void draw_ellipse(FloatMap& m, double cy, double cx, double ry, double rx,
                         double angle, double amp) {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const int64_t rad = static_cast<int64_t>(std::ceil(std::max(ry, rx))) + 2;
    const int64_t r0 = std::max<int64_t>(0, static_cast<int64_t>(cy) - rad);
    const int64_t r1 = std::min(m.h - 1, static_cast<int64_t>(cy) + rad);
    const int64_t c0 = std::max<int64_t>(0, static_cast<int64_t>(cx) - rad);
    const int64_t c1 = std::min(m.w - 1, static_cast<int64_t>(cx) + rad);
    for (int64_t r = r0; r <= r1; ++r) {
        for (int64_t c = c0; c <= c1; ++c) {
            const double dy = r - cy, dx = c - cx;
            const double u = (dy * ca + dx * sa) / ry;
            const double v2 = (-dy * sa + dx * ca) / rx;
            const double d = u * u + v2 * v2;
            if (d <= 1.0) {
                // soft rim, brighter core
                const double val = amp * (0.65 + 0.35 * (1.0 - d));
                double& px = m.at(r, c);
                px = std::max(px, val);
            }
        }
    }
}

inline std::vector<std::pair<double, double>> random_walk(Rng& rng, double y, double x,
                                                          double step, int n, double dir,
                                                          double curl) {
    std::vector<std::pair<double, double>> pts{{y, x}};
    double theta = dir;
    for (int i = 0; i < n; ++i) {
        theta += uniform_range(rng, -curl, curl);
        y += step * std::sin(theta);
        x += step * std::cos(theta);
        pts.emplace_back(y, x);
    }
    return pts;
}

struct Scene {
    double cy, cx, cell_r, nuc_y, nuc_x;
};

inline Scene make_scene(Rng& rng, int64_t size) {
    Scene s;
    s.cy = size * uniform_range(rng, 0.42, 0.58);
    s.cx = size * uniform_range(rng, 0.42, 0.58);
    s.cell_r = size * uniform_range(rng, 0.30, 0.40);
    s.nuc_y = s.cy + s.cell_r * uniform_range(rng, -0.2, 0.2);
    s.nuc_x = s.cx + s.cell_r * uniform_range(rng, -0.2, 0.2);
    return s;
}

inline FloatMap render_nucleus(Rng& rng, int64_t size, const Scene& s) {
    FloatMap m(size, size);
    const double r = s.cell_r * uniform_range(rng, 0.30, 0.45);
    draw_ellipse(m, s.nuc_y, s.nuc_x, r, r * uniform_range(rng, 0.7, 1.0),
                 uniform_range(rng, 0.0, 3.14159), uniform_range(rng, 0.75, 0.95));
    return m;
}

inline FloatMap render_mitochondria(Rng& rng, int64_t size, const Scene& s) {
    FloatMap m(size, size);
    const int n = 8 + static_cast<int>(uniform_below(rng, 7));
    for (int i = 0; i < n; ++i) {
        const double ang = uniform_range(rng, 0.0, 6.28318);
        const double rad = s.cell_r * uniform_range(rng, 0.35, 0.9);
        const double y = s.cy + rad * std::sin(ang);
        const double x = s.cx + rad * std::cos(ang);
        const auto pts = random_walk(rng, y, x, size * 0.012,
                                     6 + static_cast<int>(uniform_below(rng, 8)),
                                     uniform_range(rng, 0.0, 6.28318), 0.45);
        draw_path(m, pts, uniform_range(rng, 1.1, 1.7), uniform_range(rng, 0.6, 0.9));
    }
    return m;
}

inline FloatMap render_tubulin(Rng& rng, int64_t size, const Scene& s) {
    FloatMap m(size, size);
    const double oy = s.nuc_y + size * uniform_range(rng, -0.03, 0.03);
    const double ox = s.nuc_x + size * uniform_range(rng, -0.03, 0.03);
    const int n = 10 + static_cast<int>(uniform_below(rng, 9));
    for (int i = 0; i < n; ++i) {
        const double ang = uniform_range(rng, 0.0, 6.28318);
        const double len = s.cell_r * uniform_range(rng, 0.5, 1.05);
        const auto pts = random_walk(rng, oy, ox, len / 10.0, 10, ang, 0.12);
        draw_path(m, pts, uniform_range(rng, 0.8, 1.2), uniform_range(rng, 0.5, 0.8));
    }
    return m;
}

inline FloatMap render_actin(Rng& rng, int64_t size, const Scene& s) {
    FloatMap m(size, size);
    const int n = 7 + static_cast<int>(uniform_below(rng, 6));
    for (int i = 0; i < n; ++i) {
        // fibers hugging the cell periphery
        const double a0 = uniform_range(rng, 0.0, 6.28318);
        const double arc = uniform_range(rng, 0.5, 1.4);
        const double rad = s.cell_r * uniform_range(rng, 0.8, 1.02);
        std::vector<std::pair<double, double>> pts;
        const int steps = 14;
        for (int t = 0; t <= steps; ++t) {
            const double a = a0 + arc * t / steps;
            pts.emplace_back(s.cy + rad * std::sin(a), s.cx + rad * std::cos(a));
        }
        draw_path(m, pts, uniform_range(rng, 0.9, 1.4), uniform_range(rng, 0.55, 0.85));
    }
    return m;
}

inline FloatMap cell_body(int64_t size, const Scene& s) {
    FloatMap m(size, size);
    for (int64_t r = 0; r < size; ++r) {
        for (int64_t c = 0; c < size; ++c) {
            const double d = std::hypot(r - s.cy, c - s.cx) / s.cell_r;
            if (d < 1.0) m.at(r, c) = 0.5 * (1.0 + std::cos(3.14159 * std::min(1.0, d)));
        }
    }
    return m;
}

inline ImagePlane to_plane(const FloatMap& m) {
    ImagePlane p(m.h, m.w);
    for (int64_t i = 0; i < p.pixels(); ++i) {
        const double v = std::min(1.0, std::max(0.0, m.v[static_cast<size_t>(i)]));
        p.values[static_cast<size_t>(i)] = static_cast<uint16_t>(std::lround(v * 65535.0));
    }
    return p;
}

// Deterministic per-modality rendering of the combined organelle density;
// the input-to-target mapping is learnable by construction.
inline ImagePlane render_input(Modality mod, const std::array<FloatMap, 4>& organelles,
                               const FloatMap& cell, Rng& rng) {
    const int64_t size = cell.h;
    FloatMap s(size, size);
    const double wts[4] = {0.50, 0.85, 0.45, 0.50};
    for (int64_t i = 0; i < size * size; ++i) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += wts[k] * organelles[k].v[static_cast<size_t>(i)];
        s.v[static_cast<size_t>(i)] = std::min(1.3, acc) + 0.35 * cell.v[static_cast<size_t>(i)];
    }

    auto grad = [&](int64_t r, int64_t c) {
        const int64_t rm = std::max<int64_t>(0, r - 1), rp = std::min(size - 1, r + 1);
        const int64_t cm = std::max<int64_t>(0, c - 1), cp = std::min(size - 1, c + 1);
        const double gy = 0.5 * (s.at(rp, c) - s.at(rm, c));
        const double gx = 0.5 * (s.at(r, cp) - s.at(r, cm));
        return std::make_pair(gy, gx);
    };

    FloatMap img(size, size);
    switch (mod) {
        case Modality::BF: {
            for (int64_t r = 0; r < size; ++r)
                for (int64_t c = 0; c < size; ++c)
                    img.at(r, c) = 0.62 - 0.28 * s.at(r, c) + uniform_range(rng, -0.012, 0.012);
            break;
        }
        case Modality::PC: {
            for (int64_t r = 0; r < size; ++r)
                for (int64_t c = 0; c < size; ++c) {
                    const auto [gy, gx] = grad(r, c);
                    const double edge = std::hypot(gy, gx);
                    img.at(r, c) = 0.30 + 1.6 * edge - 0.10 * s.at(r, c) +
                                   uniform_range(rng, -0.012, 0.012);
                }
            break;
        }
        case Modality::DIC: {
            const double ca = std::cos(0.785398), sa = std::sin(0.785398);
            for (int64_t r = 0; r < size; ++r)
                for (int64_t c = 0; c < size; ++c) {
                    const auto [gy, gx] = grad(r, c);
                    img.at(r, c) =
                        0.5 + 2.2 * (gy * sa + gx * ca) + uniform_range(rng, -0.008, 0.008);
                }
            break;
        }
    }
    return to_plane(img);
}

}  // namespace synth_detail

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

// Writes input and target TIFFs plus manifest.json under out_dir, one study
// subdirectory per (modality, label-pattern) group. Bit-reproducible from
// (cfg, seed).
inline Manifest generate_dataset(const SynthConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);

    Manifest manifest;
    manifest.root = out_dir;

    for (int i = 0; i < cfg.n_samples; ++i) {
        Rng rng(cfg.seed * 1000003ULL + static_cast<uint64_t>(i));
        const Modality mod = kModalities[static_cast<size_t>(i) % kModalities.size()];

        // weighted pattern choice
        const auto& pats = cfg.patterns.at(mod);
        double wsum = 0.0;
        for (const auto& p : pats) wsum += p.weight;
        double pick = uniform_range(rng, 0.0, wsum);
        size_t pat_idx = 0;
        for (; pat_idx + 1 < pats.size(); ++pat_idx) {
            pick -= pats[pat_idx].weight;
            if (pick < 0.0) break;
        }
        const LabelAvailability avail = pats[pat_idx].availability;

        const auto scene = synth_detail::make_scene(rng, cfg.size);
        std::array<synth_detail::FloatMap, 4> maps = {
            synth_detail::render_mitochondria(rng, cfg.size, scene),
            synth_detail::render_nucleus(rng, cfg.size, scene),
            synth_detail::render_tubulin(rng, cfg.size, scene),
            synth_detail::render_actin(rng, cfg.size, scene)};
        const auto cell = synth_detail::cell_body(cfg.size, scene);

        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "sample_%04d", i);
        const std::string sample_id = idbuf;
        const std::string study_id =
            "study_" + to_string(mod) + "_p" + std::to_string(pat_idx);
        const fs::path study_dir = out_dir / study_id;

        ManifestEntry e;
        e.id = sample_id;
        e.modality = mod;
        e.study_id = study_id;
        e.input_path = (fs::path(study_id) /
                        (sample_id + "_" + to_string(mod) + ".tif")).generic_string();
        write_image(synth_detail::render_input(mod, maps, cell, rng),
                    out_dir / e.input_path);

        for (Organelle o : kOrganelles) {
            if (!avail[o]) continue;
            const std::string rel =
                (fs::path(study_id) / (sample_id + "_" + to_string(o) + ".tif"))
                    .generic_string();
            write_image(synth_detail::to_plane(maps[static_cast<size_t>(channel_index(o))]),
                        out_dir / rel);
            e.target_paths[o] = rel;
        }
        manifest.entries.push_back(std::move(e));
    }

    std::sort(manifest.entries.begin(), manifest.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

// ---------------------------------------------------------------------------
// Unit-test fixtures
// ---------------------------------------------------------------------------

// Deterministic tiny planes for unit tests. Catalogue: constant, gradient,
// checkerboard, single-outlier, rotation-probe.
inline ImagePlane make_unit_fixture(const std::string& kind, int64_t h = 64, int64_t w = 64) {
    ImagePlane p(h, w);
    if (kind == "constant") {
        std::fill(p.values.begin(), p.values.end(), uint16_t{13107});
    } else if (kind == "gradient") {
        for (int64_t i = 0; i < p.pixels(); ++i)
            p.values[static_cast<size_t>(i)] = static_cast<uint16_t>(i % 65536);
    } else if (kind == "checkerboard") {
        for (int64_t r = 0; r < h; ++r)
            for (int64_t c = 0; c < w; ++c) p.at(r, c) = ((r + c) % 2 == 0) ? 0 : 65535;
    } else if (kind == "single-outlier") {
        std::fill(p.values.begin(), p.values.end(), uint16_t{1000});
        p.at(h / 2, w / 2) = 65000;
    } else if (kind == "rotation-probe") {
        for (int64_t r = 0; r < h; ++r)
            for (int64_t c = 0; c < w; ++c) {
                const bool top = r < h / 2, left = c < w / 2;
                p.at(r, c) = top ? (left ? 1000 : 2000) : (left ? 3000 : 4000);
            }
    } else {
        throw ConfigError("unknown fixture kind: \"" + kind + "\"");
    }
    return p;
}

}  // namespace silico
