#pragma once

// Independent brute-force oracles for the test suites. These deliberately
// avoid the library's implementation paths: plain loops, explicit sorts and
// double arithmetic only.

#include <algorithm>
#include <cmath>
#include <vector>

#include <torch/torch.h>

namespace oracles {

// Linear-interpolation percentile over a copy of the data (the common
// "linear" convention: rank = q * (n - 1)).
inline double percentile(std::vector<double> xs, double pct) {
    std::sort(xs.begin(), xs.end());
    const double rank = pct / 100.0 * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(rank));
    const auto hi = static_cast<size_t>(std::ceil(rank));
    const double frac = rank - static_cast<double>(lo);
    return xs[lo] + (xs[hi] - xs[lo]) * frac;
}

inline std::vector<double> to_vector(const torch::Tensor& t) {
    auto d = t.detach().to(torch::kFloat64).contiguous().flatten();
    const double* p = d.data_ptr<double>();
    return std::vector<double>(p, p + d.numel());
}

// Mask per the band rule: 1.0 inside the closed percentile band, low outside.
inline std::vector<double> weight_mask(const std::vector<double>& gt, double lo_pct,
                                       double hi_pct, double low_weight) {
    const double a = percentile(gt, lo_pct);
    const double b = percentile(gt, hi_pct);
    std::vector<double> m(gt.size());
    for (size_t i = 0; i < gt.size(); ++i) {
        m[i] = (gt[i] >= a && gt[i] <= b) ? 1.0 : low_weight;
    }
    return m;
}

inline double weighted_l1(const std::vector<double>& pred, const std::vector<double>& gt,
                          const std::vector<double>& mask) {
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - gt[i]) * mask[i];
    return acc / static_cast<double>(pred.size());
}

// --------------------------------------------------------------------------
// Metric oracles (direct formula evaluation on [0,1]-scaled vectors)
// --------------------------------------------------------------------------

inline double mae(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const auto n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc);
}

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

// Direct windowed SSIM: Gaussian window (size 11, sigma 1.5) slid over every
// valid position, double arithmetic, mean over windows. data_range = 1.
inline double ssim(const std::vector<double>& a, const std::vector<double>& b, int64_t h,
                   int64_t w, int win = 11, double sigma = 1.5, double k1 = 0.01,
                   double k2 = 0.03) {
    std::vector<double> g(static_cast<size_t>(win) * win);
    const int half = win / 2;
    double gsum = 0.0;
    for (int r = 0; r < win; ++r) {
        for (int c = 0; c < win; ++c) {
            const double d2 = (r - half) * (r - half) + (c - half) * (c - half);
            g[static_cast<size_t>(r) * win + c] = std::exp(-d2 / (2.0 * sigma * sigma));
            gsum += g[static_cast<size_t>(r) * win + c];
        }
    }
    for (auto& v : g) v /= gsum;

    const double c1 = k1 * k1, c2 = k2 * k2;
    double acc = 0.0;
    int64_t count = 0;
    for (int64_t r0 = 0; r0 + win <= h; ++r0) {
        for (int64_t c0 = 0; c0 + win <= w; ++c0) {
            double mu_a = 0, mu_b = 0;
            for (int r = 0; r < win; ++r)
                for (int c = 0; c < win; ++c) {
                    const double wgt = g[static_cast<size_t>(r) * win + c];
                    mu_a += wgt * a[static_cast<size_t>((r0 + r) * w + (c0 + c))];
                    mu_b += wgt * b[static_cast<size_t>((r0 + r) * w + (c0 + c))];
                }
            double va = 0, vb = 0, cov = 0;
            for (int r = 0; r < win; ++r)
                for (int c = 0; c < win; ++c) {
                    const double wgt = g[static_cast<size_t>(r) * win + c];
                    const double da = a[static_cast<size_t>((r0 + r) * w + (c0 + c))] - mu_a;
                    const double db = b[static_cast<size_t>((r0 + r) * w + (c0 + c))] - mu_b;
                    va += wgt * da * da;
                    vb += wgt * db * db;
                    cov += wgt * da * db;
                }
            acc += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                   ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

}  // namespace oracles
