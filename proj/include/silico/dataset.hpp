#pragma once

// Dataset ingestion: 16-bit single-channel TIFF I/O, directory-layout
// manifest building and manifest persistence.
//
// Directory layout convention:
//   <root>/<study_id>/<sample_id>_<MODALITY>.tif      inputs (BF | PC | DIC)
//   <root>/<study_id>/<sample_id>_<Organelle>.tif     targets
// Modality is extracted from the input filename; label availability from
// which target files exist next to it.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <tiffio.h>

#include <nlohmann/json.hpp>

#include "silico/core.hpp"

namespace silico {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// TIFF I/O
// ---------------------------------------------------------------------------

namespace detail {
// libtiff reports recoverable oddities through a global handler; keep it quiet.
struct TiffQuiet {
    TiffQuiet() { TIFFSetWarningHandler(nullptr); }
};
inline void tiff_quiet_once() { static TiffQuiet q; (void)q; }

struct TiffCloser {
    void operator()(TIFF* t) const { if (t) TIFFClose(t); }
};
using TiffPtr = std::unique_ptr<TIFF, TiffCloser>;
}  // namespace detail

// Reads a single-channel unsigned 16-bit TIFF, preserving every pixel value
// bit-exactly. Anything else in the container is a format error naming the
// offending property.
inline ImagePlane read_image(const fs::path& path) {
    detail::tiff_quiet_once();
    if (!fs::exists(path)) {
        throw IoError("no such file: " + path.string());
    }
    detail::TiffPtr tif(TIFFOpen(path.string().c_str(), "r"));
    if (!tif) {
        throw IoError("cannot open TIFF: " + path.string());
    }

    uint32_t width = 0, height = 0;
    uint16_t bits = 0, spp = 1, fmt = SAMPLEFORMAT_UINT;
    TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &width);
    TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &height);
    TIFFGetField(tif.get(), TIFFTAG_BITSPERSAMPLE, &bits);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLESPERPIXEL, &spp);
    TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLEFORMAT, &fmt);

    if (spp != 1) {
        throw FormatError("expected single-channel, got samples_per_pixel=" +
                          std::to_string(spp) + ": " + path.string());
    }
    if (bits != 16) {
        throw FormatError("expected 16-bit, got " + std::to_string(bits) +
                          "-bit: " + path.string());
    }
    if (fmt != SAMPLEFORMAT_UINT) {
        throw FormatError("expected unsigned sample format, got format=" +
                          std::to_string(fmt) + ": " + path.string());
    }
    if (width == 0 || height == 0) {
        throw FormatError("empty image: " + path.string());
    }

    ImagePlane plane(static_cast<int64_t>(height), static_cast<int64_t>(width));
    for (uint32_t row = 0; row < height; ++row) {
        if (TIFFReadScanline(tif.get(), plane.values.data() + static_cast<size_t>(row) * width,
                             row) < 0) {
            throw IoError("TIFF scanline read failed at row " + std::to_string(row) +
                          ": " + path.string());
        }
    }
    return plane;
}

// Writes an uncompressed single-strip 16-bit grayscale TIFF. Output is byte
// deterministic (no timestamps or library metadata tags).
inline void write_image(const ImagePlane& plane, const fs::path& path) {
    detail::tiff_quiet_once();
    if (plane.height <= 0 || plane.width <= 0 ||
        plane.values.size() != static_cast<size_t>(plane.pixels())) {
        throw ValidationError("write_image: malformed plane");
    }
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    detail::TiffPtr tif(TIFFOpen(path.string().c_str(), "w"));
    if (!tif) {
        throw IoError("cannot create TIFF: " + path.string());
    }
    TIFFSetField(tif.get(), TIFFTAG_IMAGEWIDTH, static_cast<uint32_t>(plane.width));
    TIFFSetField(tif.get(), TIFFTAG_IMAGELENGTH, static_cast<uint32_t>(plane.height));
    TIFFSetField(tif.get(), TIFFTAG_BITSPERSAMPLE, uint16_t{16});
    TIFFSetField(tif.get(), TIFFTAG_SAMPLESPERPIXEL, uint16_t{1});
    TIFFSetField(tif.get(), TIFFTAG_SAMPLEFORMAT, SAMPLEFORMAT_UINT);
    TIFFSetField(tif.get(), TIFFTAG_COMPRESSION, COMPRESSION_NONE);
    TIFFSetField(tif.get(), TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
    TIFFSetField(tif.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(tif.get(), TIFFTAG_ORIENTATION, ORIENTATION_TOPLEFT);
    TIFFSetField(tif.get(), TIFFTAG_ROWSPERSTRIP, static_cast<uint32_t>(plane.height));
    for (int64_t row = 0; row < plane.height; ++row) {
        if (TIFFWriteScanline(tif.get(),
                              const_cast<uint16_t*>(plane.values.data() + row * plane.width),
                              static_cast<uint32_t>(row)) < 0) {
            throw IoError("TIFF scanline write failed at row " + std::to_string(row) +
                          ": " + path.string());
        }
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string id;
    std::string input_path;  // relative to manifest root
    Modality modality = Modality::BF;
    std::map<Organelle, std::string> target_paths;
    std::string study_id;

    LabelAvailability availability() const {
        LabelAvailability a;
        for (const auto& [o, p] : target_paths) a.set(o, true);
        return a;
    }
};

struct Manifest {
    fs::path root;
    std::vector<ManifestEntry> entries;  // sorted lexicographically by id

    const ManifestEntry& find(const std::string& id) const {
        for (const auto& e : entries)
            if (e.id == id) return e;
        throw ValidationError("manifest has no entry with id \"" + id + "\"");
    }
};

// Filename suffix conventions; overridable but one convention is used
// everywhere in practice.
struct ManifestLayout {
    std::string extension = ".tif";
};

namespace detail {

// Splits "<sample_id>_<TAG>" and returns the tag; empty if no underscore.
inline std::pair<std::string, std::string> split_suffix(const std::string& stem) {
    const auto pos = stem.rfind('_');
    if (pos == std::string::npos || pos + 1 >= stem.size()) return {stem, ""};
    return {stem.substr(0, pos), stem.substr(pos + 1)};
}

inline std::optional<Modality> parse_modality_tag(const std::string& tag) {
    try {
        return modality_from_string(tag);
    } catch (const FormatError&) {
        return std::nullopt;
    }
}

inline std::optional<Organelle> parse_organelle_tag(const std::string& tag) {
    try {
        return organelle_from_string(tag);
    } catch (const FormatError&) {
        return std::nullopt;
    }
}

}  // namespace detail

// Walks <root>/<study>/ and derives one entry per input image. Inputs with no
// target file at all are skipped with a warning on `warn` (training cannot use
// them). Deterministic: entries sorted by id.
inline Manifest build_manifest(const fs::path& root, const ManifestLayout& layout = {},
                               std::ostream* warn = &std::cerr) {
    if (!fs::is_directory(root)) {
        throw IoError("manifest root is not a directory: " + root.string());
    }
    Manifest m;
    m.root = root;

    std::vector<fs::path> studies;
    for (const auto& d : fs::directory_iterator(root)) {
        if (d.is_directory()) studies.push_back(d.path());
    }
    std::sort(studies.begin(), studies.end());

    for (const auto& study : studies) {
        const std::string study_id = study.filename().string();
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(study)) {
            if (f.is_regular_file() && f.path().extension() == layout.extension)
                files.push_back(f.path());
        }
        std::sort(files.begin(), files.end());

        // Gather targets per sample id first, then pair with inputs.
        std::map<std::string, std::map<Organelle, std::string>> targets;
        for (const auto& f : files) {
            const auto [sample, tag] = detail::split_suffix(f.stem().string());
            if (auto o = detail::parse_organelle_tag(tag)) {
                targets[sample][*o] = fs::relative(f, root).generic_string();
            }
        }
        for (const auto& f : files) {
            const auto [sample, tag] = detail::split_suffix(f.stem().string());
            const auto mod = detail::parse_modality_tag(tag);
            if (!mod) continue;
            ManifestEntry e;
            e.id = sample;
            e.input_path = fs::relative(f, root).generic_string();
            e.modality = *mod;
            e.study_id = study_id;
            if (auto it = targets.find(sample); it != targets.end()) {
                e.target_paths = it->second;
            }
            if (e.target_paths.empty()) {
                if (warn)
                    *warn << "warning: skipping input with no targets: " << e.input_path
                          << "\n";
                continue;
            }
            m.entries.push_back(std::move(e));
        }
    }

    std::sort(m.entries.begin(), m.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
    for (size_t i = 1; i < m.entries.size(); ++i) {
        if (m.entries[i].id == m.entries[i - 1].id) {
            throw ValidationError("duplicate sample id in tree: " + m.entries[i].id);
        }
    }
    return m;
}

// Loads the full Sample behind an entry. The result always passes
// validate_sample; inconsistencies are thrown instead.
inline Sample load_sample(const Manifest& m, const ManifestEntry& e,
                          std::ostream* warn = nullptr) {
    Sample s;
    s.id = e.id;
    s.modality = e.modality;
    s.study_id = e.study_id;
    s.input = read_image(m.root / e.input_path);
    for (const auto& [o, rel] : e.target_paths) {
        ImagePlane t = read_image(m.root / rel);
        if (!t.same_shape(s.input)) {
            throw FormatError("dimension mismatch: " + to_string(o) + " target is " +
                              std::to_string(t.height) + "x" + std::to_string(t.width) +
                              " under " + std::to_string(s.input.height) + "x" +
                              std::to_string(s.input.width) + " input (" + e.id + ")");
        }
        s.targets[o] = std::move(t);
        s.availability.set(o, true);
    }
    if (warn) {
        for (const auto& w : size_warnings(s.input, "input " + e.id)) *warn << "warning: " << w << "\n";
    }
    const auto violations = validate_sample(s);
    if (!violations.empty()) {
        std::string msg = "sample " + s.id + " invalid:";
        for (const auto& v : violations) msg += " [" + v + "]";
        throw ValidationError(msg);
    }
    return s;
}

inline Sample load_sample(const Manifest& m, const std::string& id) {
    return load_sample(m, m.find(id));
}

// ---------------------------------------------------------------------------
// Manifest persistence (JSON)
// ---------------------------------------------------------------------------

inline json manifest_to_json(const Manifest& m) {
    json j;
    j["root"] = m.root.generic_string();
    j["entries"] = json::array();
    for (const auto& e : m.entries) {
        json je;
        je["id"] = e.id;
        je["input"] = e.input_path;
        je["modality"] = to_string(e.modality);
        je["study"] = e.study_id;
        json jt;
        for (const auto& [o, p] : e.target_paths) jt[to_string(o)] = p;
        je["targets"] = jt;
        j["entries"].push_back(je);
    }
    return j;
}

inline Manifest manifest_from_json(const json& j) {
    Manifest m;
    m.root = fs::path(j.at("root").get<std::string>());
    for (const auto& je : j.at("entries")) {
        ManifestEntry e;
        e.id = je.at("id").get<std::string>();
        e.input_path = je.at("input").get<std::string>();
        e.modality = modality_from_string(je.at("modality").get<std::string>());
        e.study_id = je.at("study").get<std::string>();
        for (const auto& [k, v] : je.at("targets").items()) {
            e.target_paths[organelle_from_string(k)] = v.get<std::string>();
        }
        if (e.target_paths.empty()) {
            throw ValidationError("manifest entry without targets: " + e.id);
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

inline void save_manifest(const Manifest& m, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << manifest_to_json(m).dump(2) << "\n";
}

// Reload + existence check of every referenced file.
inline Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read manifest: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("manifest parse error in " + path.string() + ": " + e.what());
    }
    Manifest m = manifest_from_json(j);
    for (const auto& e : m.entries) {
        if (!fs::exists(m.root / e.input_path)) {
            throw IoError("manifest references missing file: " + e.input_path);
        }
        for (const auto& [o, rel] : e.target_paths) {
            if (!fs::exists(m.root / rel)) {
                throw IoError("manifest references missing file: " + rel);
            }
        }
    }
    return m;
}

// Restrict to one modality (separate-network strategy).
inline Manifest filter_by_modality(const Manifest& m, Modality mod) {
    Manifest out;
    out.root = m.root;
    for (const auto& e : m.entries)
        if (e.modality == mod) out.entries.push_back(e);
    return out;
}

}  // namespace silico
