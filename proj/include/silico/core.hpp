#pragma once

// Domain vocabulary shared by every module: modalities, organelle channels,
// raw/normalized image planes and the partially labeled Sample record.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace silico {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Modalities and organelle channels
// ---------------------------------------------------------------------------

enum class Modality { BF = 0, PC = 1, DIC = 2 };
enum class Organelle { Mitochondria = 0, Nucleus = 1, Tubulin = 2, Actin = 3 };

inline constexpr int kNumModalities = 3;
inline constexpr int kNumOrganelles = 4;

// Canonical channel order. Every 4-channel tensor, availability vector and
// report in the project indexes organelles in exactly this order.
inline constexpr std::array<Organelle, kNumOrganelles> kOrganelles = {
    Organelle::Mitochondria, Organelle::Nucleus, Organelle::Tubulin,
    Organelle::Actin};

inline constexpr std::array<Modality, kNumModalities> kModalities = {
    Modality::BF, Modality::PC, Modality::DIC};

constexpr int channel_index(Organelle o) { return static_cast<int>(o); }
constexpr int modality_index(Modality m) { return static_cast<int>(m); }

inline std::string to_string(Modality m) {
    switch (m) {
        case Modality::BF: return "BF";
        case Modality::PC: return "PC";
        case Modality::DIC: return "DIC";
    }
    throw ValidationError("invalid Modality value");
}

inline std::string to_string(Organelle o) {
    switch (o) {
        case Organelle::Mitochondria: return "Mitochondria";
        case Organelle::Nucleus: return "Nucleus";
        case Organelle::Tubulin: return "Tubulin";
        case Organelle::Actin: return "Actin";
    }
    throw ValidationError("invalid Organelle value");
}

inline std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

inline Modality modality_from_string(std::string_view s) {
    const std::string l = lowercase(s);
    if (l == "bf") return Modality::BF;
    if (l == "pc") return Modality::PC;
    if (l == "dic") return Modality::DIC;
    throw FormatError("unknown modality: \"" + std::string(s) + "\"");
}

inline Organelle organelle_from_string(std::string_view s) {
    const std::string l = lowercase(s);
    if (l == "mitochondria") return Organelle::Mitochondria;
    if (l == "nucleus") return Organelle::Nucleus;
    if (l == "tubulin") return Organelle::Tubulin;
    if (l == "actin") return Organelle::Actin;
    throw FormatError("unknown organelle: \"" + std::string(s) + "\"");
}

// ---------------------------------------------------------------------------
// Image planes
// ---------------------------------------------------------------------------

// Single-channel unsigned 16-bit raster, row major. The raw I/O currency.
struct ImagePlane {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint16_t> values;

    ImagePlane() = default;
    ImagePlane(int64_t h, int64_t w, uint16_t fill = 0)
        : height(h), width(w), values(static_cast<size_t>(h * w), fill) {}

    uint16_t at(int64_t r, int64_t c) const { return values[static_cast<size_t>(r * width + c)]; }
    uint16_t& at(int64_t r, int64_t c) { return values[static_cast<size_t>(r * width + c)]; }
    int64_t pixels() const { return height * width; }

    bool same_shape(const ImagePlane& o) const {
        return height == o.height && width == o.width;
    }
    bool operator==(const ImagePlane& o) const {
        return same_shape(o) && values == o.values;
    }
};

// Hard floor for any plane entering the pipeline; real acquisitions run
// 512..2048 but synthetic desk-scale data is allowed down to this size.
inline constexpr int64_t kMinPlaneDim = 64;
inline constexpr int64_t kRealPlaneDimLo = 512;
inline constexpr int64_t kRealPlaneDimHi = 2048;

// Advisory only: dims outside the real-data range are worth a warning but
// never an error.
inline std::vector<std::string> size_warnings(const ImagePlane& p, const std::string& what) {
    std::vector<std::string> w;
    if (p.height < kRealPlaneDimLo || p.width < kRealPlaneDimLo ||
        p.height > kRealPlaneDimHi || p.width > kRealPlaneDimHi) {
        std::ostringstream os;
        os << what << " is " << p.height << "x" << p.width
           << ", outside the real-data range [" << kRealPlaneDimLo << ", "
           << kRealPlaneDimHi << "]";
        w.push_back(os.str());
    }
    return w;
}

// ---------------------------------------------------------------------------
// Partial-label records
// ---------------------------------------------------------------------------

struct LabelAvailability {
    std::array<bool, kNumOrganelles> flags{};

    bool operator[](Organelle o) const { return flags[channel_index(o)]; }
    void set(Organelle o, bool v) { flags[channel_index(o)] = v; }
    bool any() const {
        return std::any_of(flags.begin(), flags.end(), [](bool b) { return b; });
    }
    int count() const {
        return static_cast<int>(std::count(flags.begin(), flags.end(), true));
    }
    bool operator==(const LabelAvailability& o) const { return flags == o.flags; }

    static LabelAvailability of(std::initializer_list<Organelle> os) {
        LabelAvailability a;
        for (Organelle o : os) a.set(o, true);
        return a;
    }
    static LabelAvailability all() {
        return of({Organelle::Mitochondria, Organelle::Nucleus, Organelle::Tubulin,
                   Organelle::Actin});
    }
};

// One training/evaluation record: input plane, modality tag and the target
// planes that exist for it.
struct Sample {
    std::string id;
    ImagePlane input;
    Modality modality = Modality::BF;
    std::map<Organelle, ImagePlane> targets;
    LabelAvailability availability;
    std::string study_id;
};

// Violations are data, not exceptions; an empty list means the record is
// consistent.
inline std::vector<std::string> validate_sample(const Sample& s) {
    std::vector<std::string> violations;
    for (Organelle o : kOrganelles) {
        const bool flagged = s.availability[o];
        const bool present = s.targets.count(o) > 0;
        if (flagged != present) {
            violations.push_back("availability/target mismatch: " + to_string(o));
        }
    }
    for (const auto& [o, plane] : s.targets) {
        if (!plane.same_shape(s.input)) {
            violations.push_back("dimension mismatch: " + to_string(o));
        }
    }
    if (s.input.height < kMinPlaneDim || s.input.width < kMinPlaneDim) {
        std::ostringstream os;
        os << "dimension below minimum: input " << s.input.height << "x"
           << s.input.width << " < " << kMinPlaneDim;
        violations.push_back(os.str());
    }
    if (!s.availability.any()) {
        violations.push_back("no labeled organelle");
    }
    return violations;
}

// Per-organelle outputs for one input plus provenance.
struct PredictionSet {
    std::string sample_id;
    std::array<ImagePlane, kNumOrganelles> channels;
    std::array<std::string, kNumOrganelles> model_ids;
    std::string strategy;
    bool tta = false;
};

// ---------------------------------------------------------------------------
// Deterministic RNG helpers
// ---------------------------------------------------------------------------
// std::*_distribution output is implementation defined, so every stochastic
// choice in the project draws through these instead.

using Rng = std::mt19937_64;

// Unbiased integer in [0, n).
inline uint64_t uniform_below(Rng& rng, uint64_t n) {
    if (n == 0) throw ValidationError("uniform_below: n must be positive");
    const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % n;
    uint64_t v = rng();
    while (v >= limit) v = rng();
    return v % n;
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_unit(rng);
}

inline std::string rng_state_string(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline void rng_set_state(Rng& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
    if (is.fail()) throw FormatError("bad rng state string");
}

}  // namespace silico
