#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "maskfuse/errors.hpp"
#include "maskfuse/io.hpp"
#include "maskfuse/labels.hpp"
#include "maskfuse/linalg.hpp"
#include "maskfuse/loss.hpp"
#include "maskfuse/rng.hpp"

namespace maskfuse {

/// One subject: six expression feature maps in canonical emotion order plus
/// the severity label.
struct SubjectSample {
    std::string subject_id;
    std::array<FeatureMap, kNumEmotions> maps;
    ClassLabel label = ClassLabel::NonPD;
};

struct Dataset {
    std::vector<SubjectSample> samples;
    std::size_t d = 0; // channels per expression
    std::size_t S = 0; // spatial positions

    std::size_t size() const { return samples.size(); }
};

inline void validate_dataset(const Dataset& dataset) {
    if (dataset.d < 1 || dataset.S < 1) {
        throw DataError("dataset: d and S must be at least 1");
    }
    std::unordered_set<std::string> seen;
    for (const auto& sample : dataset.samples) {
        if (!seen.insert(sample.subject_id).second) {
            throw DataError("dataset: duplicate subject_id \"" + sample.subject_id + "\"");
        }
        for (const auto& map : sample.maps) {
            if (map.channels != dataset.d || map.spatial != dataset.S) {
                throw DataError("dataset: subject \"" + sample.subject_id +
                                "\" has a feature map of shape " + std::to_string(map.channels) +
                                "x" + std::to_string(map.spatial) + ", expected " +
                                std::to_string(dataset.d) + "x" + std::to_string(dataset.S));
            }
            ensure_finite(map.values, "features of subject \"" + sample.subject_id + "\"");
        }
    }
}

inline ClassCounts class_counts(std::span<const ClassLabel> labels) {
    ClassCounts counts;
    for (ClassLabel label : labels) {
        ++counts.counts[static_cast<std::size_t>(label)];
    }
    return counts;
}

inline ClassCounts class_counts(const Dataset& dataset) {
    ClassCounts counts;
    for (const auto& sample : dataset.samples) {
        ++counts.counts[static_cast<std::size_t>(sample.label)];
    }
    return counts;
}

// ---------------------------------------------------------------------------
// Stratified k-fold
// ---------------------------------------------------------------------------

struct FoldSplit {
    std::size_t k = 0;
    std::vector<std::size_t> assignment; // assignment[i] in [0, k)

    std::vector<std::size_t> fold_indices(std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] == fold) out.push_back(i);
        }
        return out;
    }

    std::vector<std::size_t> complement_indices(std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] != fold) out.push_back(i);
        }
        return out;
    }
};

/// Per class: seeded shuffle of that class's indices, then a round-robin deal
/// into the k folds. Yields per-class fold counts that differ by at most one,
/// and is a disjoint cover of all indices.
inline FoldSplit stratified_kfold(std::span<const ClassLabel> labels, std::size_t k,
                                  std::uint64_t seed) {
    if (k < 2) {
        throw DataError("stratified_kfold: k must be at least 2");
    }
    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (by_class[c].size() < k) {
            throw DataError("stratified_kfold: class " +
                            std::string(label_name(static_cast<ClassLabel>(c))) + " has " +
                            std::to_string(by_class[c].size()) + " samples, fewer than k=" +
                            std::to_string(k));
        }
    }
    FoldSplit split;
    split.k = k;
    split.assignment.assign(labels.size(), 0);
    SplitMix64 rng(seed);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        fisher_yates(by_class[c], rng);
        for (std::size_t j = 0; j < by_class[c].size(); ++j) {
            split.assignment[by_class[c][j]] = j % k;
        }
    }
    return split;
}

inline Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices) {
    Dataset out;
    out.d = dataset.d;
    out.S = dataset.S;
    out.samples.reserve(indices.size());
    for (std::size_t i : indices) {
        out.samples.push_back(dataset.samples[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic imbalanced data
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    std::array<std::int64_t, kNumClasses> counts{100, 100, 100};
    std::size_t d = 8;
    std::size_t S = 1;
    double separation = 5.0;
    double noise = 1.0;
    std::array<bool, kNumEmotions> informative{true, true, true, true, true, true};
    std::uint64_t seed = 0;

    void validate() const {
        for (auto c : counts) {
            if (c < 1) throw DataError("synthetic spec: per-class counts must be at least 1");
        }
        if (d < 1 || S < 1) throw DataError("synthetic spec: d and S must be at least 1");
        if (!(noise > 0.0)) throw DataError("synthetic spec: noise scale must be positive");
        if (std::none_of(informative.begin(), informative.end(), [](bool b) { return b; })) {
            throw DataError("synthetic spec: at least one emotion must be informative");
        }
    }
};

/// Generating means per class and emotion, each of dimension d*S and norm
/// equal to spec.separation (zero vectors for non-informative emotions).
/// Per emotion the three class directions are drawn as Gaussian vectors and
/// Gram-Schmidt orthogonalized, so classes sit separation*sqrt(2) apart
/// whenever d*S >= 3. Deterministic in spec.seed.
inline std::array<std::array<Vector, kNumEmotions>, kNumClasses>
synth_class_means(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t dim = spec.d * spec.S;
    SplitMix64 rng(derive_seed(spec.seed, 0));
    std::array<std::array<Vector, kNumEmotions>, kNumClasses> means;
    for (std::size_t e = 0; e < kNumEmotions; ++e) {
        std::array<Vector, kNumClasses> raw;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            raw[c].resize(dim);
            for (double& v : raw[c]) v = rng.gaussian();
        }
        std::array<Vector, kNumClasses> dirs;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            Vector u = raw[c];
            for (std::size_t prev = 0; prev < c; ++prev) {
                double dot = 0.0;
                for (std::size_t i = 0; i < dim; ++i) dot += u[i] * dirs[prev][i];
                for (std::size_t i = 0; i < dim; ++i) u[i] -= dot * dirs[prev][i];
            }
            double norm = 0.0;
            for (double v : u) norm += v * v;
            norm = std::sqrt(norm);
            if (norm < 1e-9) {
                // dim < 3 leaves nothing orthogonal to project out; fall back
                // to the raw direction.
                u = raw[c];
                norm = 0.0;
                for (double v : u) norm += v * v;
                norm = std::sqrt(norm);
            }
            for (double& v : u) v /= norm;
            dirs[c] = u;
        }
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            means[c][e].assign(dim, 0.0);
            if (spec.informative[e]) {
                for (std::size_t i = 0; i < dim; ++i) {
                    means[c][e][i] = spec.separation * dirs[c][i];
                }
            }
        }
    }
    return means;
}

/// Gaussian clusters around the class means, diagonal covariance noise^2 I.
/// Samples are laid out class-major; the noise stream is consumed in a fixed
/// nested order (class, sample, emotion, channel, spatial) so the dataset is
/// bit-identical for a given spec.
inline Dataset synth_generate(const SyntheticSpec& spec) {
    spec.validate();
    const auto means = synth_class_means(spec);
    SplitMix64 rng(derive_seed(spec.seed, 1));
    Dataset dataset;
    dataset.d = spec.d;
    dataset.S = spec.S;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        for (std::int64_t i = 0; i < spec.counts[c]; ++i) {
            SubjectSample sample;
            {
                std::ostringstream id;
                id << "synth-c" << c << "-" << i;
                sample.subject_id = id.str();
            }
            sample.label = static_cast<ClassLabel>(c);
            for (std::size_t e = 0; e < kNumEmotions; ++e) {
                FeatureMap map(spec.d, spec.S);
                for (std::size_t idx = 0; idx < spec.d * spec.S; ++idx) {
                    map.values[idx] = means[c][e][idx] + spec.noise * rng.gaussian();
                }
                sample.maps[e] = std::move(map);
            }
            dataset.samples.push_back(std::move(sample));
        }
    }
    return dataset;
}

// ---------------------------------------------------------------------------
// Feature files ("PDFE") and the JSON manifest
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[5] = "PDFE";
inline constexpr std::uint16_t kFeatureVersion = 1;
inline constexpr std::uint16_t kManifestVersion = 1;

/// Writes one subject's six maps: magic, u16 version, u32 d, u32 S, then
/// 6*d*S doubles in emotion-major, channel-major, spatial-minor order.
inline void write_feature_file(const SubjectSample& sample, std::size_t d, std::size_t S,
                               const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot open feature file for writing: " + path.string());
    }
    io::write_magic(out, kFeatureMagic);
    io::write_u16(out, kFeatureVersion);
    io::write_u32(out, static_cast<std::uint32_t>(d));
    io::write_u32(out, static_cast<std::uint32_t>(S));
    for (const auto& map : sample.maps) {
        for (double v : map.values) io::write_f64(out, v);
    }
    if (!out) {
        throw DataError("I/O failure while writing " + path.string());
    }
}

inline std::array<FeatureMap, kNumEmotions>
read_feature_file(const std::filesystem::path& path, std::size_t expect_d, std::size_t expect_S) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("missing feature file: " + path.string());
    }
    const std::string what = path.filename().string();
    io::expect_magic(in, kFeatureMagic, what);
    const std::uint16_t version = io::read_u16(in, what + " version");
    if (version != kFeatureVersion) {
        throw DataError("unsupported feature file version " + std::to_string(version) + " in " +
                        what);
    }
    const std::uint32_t d = io::read_u32(in, what + " d");
    const std::uint32_t S = io::read_u32(in, what + " S");
    if (d != expect_d || S != expect_S) {
        throw DataError("feature file " + what + " has shape " + std::to_string(d) + "x" +
                        std::to_string(S) + ", manifest says " + std::to_string(expect_d) + "x" +
                        std::to_string(expect_S));
    }
    std::array<FeatureMap, kNumEmotions> maps;
    for (std::size_t e = 0; e < kNumEmotions; ++e) {
        FeatureMap map(d, S);
        for (std::size_t idx = 0; idx < map.values.size(); ++idx) {
            map.values[idx] = io::read_f64(in, what + " payload");
        }
        maps[e] = std::move(map);
    }
    return maps;
}

/// Writes manifest.json plus one .pdfe file per subject into `dir`.
inline void write_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                          bool force = false) {
    if (dataset.samples.empty()) {
        throw DataError("write_dataset: refusing to write an empty dataset");
    }
    validate_dataset(dataset);
    const auto manifest_path = dir / "manifest.json";
    if (!force && std::filesystem::exists(manifest_path)) {
        throw DataError("write_dataset: " + manifest_path.string() +
                        " already exists (pass force to overwrite)");
    }
    std::filesystem::create_directories(dir);

    nlohmann::json manifest;
    manifest["format_version"] = kManifestVersion;
    manifest["d"] = dataset.d;
    manifest["S"] = dataset.S;
    manifest["emotion_order"] = kEmotionOrder;
    auto& entries = manifest["samples"] = nlohmann::json::array();
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& sample = dataset.samples[i];
        const std::string feature_file = "features-" + std::to_string(i) + ".pdfe";
        write_feature_file(sample, dataset.d, dataset.S, dir / feature_file);
        entries.push_back({{"subject_id", sample.subject_id},
                           {"label", label_to_int(sample.label)},
                           {"feature_file", feature_file}});
    }
    std::ofstream out(manifest_path);
    if (!out) {
        throw DataError("cannot open " + manifest_path.string() + " for writing");
    }
    out << manifest.dump(2) << '\n';
    if (!out) {
        throw DataError("I/O failure while writing " + manifest_path.string());
    }
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) {
        throw DataError("missing manifest: " + manifest_path.string());
    }
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    try {
        const auto version = manifest.at("format_version").get<std::uint16_t>();
        if (version != kManifestVersion) {
            throw DataError("unsupported manifest format_version " + std::to_string(version));
        }
        Dataset dataset;
        dataset.d = manifest.at("d").get<std::size_t>();
        dataset.S = manifest.at("S").get<std::size_t>();
        const auto order = manifest.at("emotion_order").get<std::vector<std::string>>();
        if (order.size() != kNumEmotions ||
            !std::equal(order.begin(), order.end(), kEmotionOrder.begin())) {
            throw DataError("manifest emotion_order differs from the canonical order");
        }
        const auto base = manifest_path.parent_path();
        for (const auto& entry : manifest.at("samples")) {
            SubjectSample sample;
            sample.subject_id = entry.at("subject_id").get<std::string>();
            sample.label = label_from_int(entry.at("label").get<int>());
            sample.maps =
                read_feature_file(base / entry.at("feature_file").get<std::string>(),
                                  dataset.d, dataset.S);
            dataset.samples.push_back(std::move(sample));
        }
        validate_dataset(dataset);
        return dataset;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("invalid manifest " + manifest_path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// CSV import (S = 1 only)
// ---------------------------------------------------------------------------

/// Expects the header  subject_id,label,<emotion>_<j>,...  with emotions in
/// canonical order and j running over 0..d-1. Values pass through decimal
/// text, so unlike the binary format the round trip is only as exact as the
/// producer's formatting (17 significant digits preserve doubles exactly).
inline Dataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("missing CSV file: " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError("CSV file is empty: " + path.string());
    }
    auto split = [](const std::string& text) {
        std::vector<std::string> fields;
        std::string field;
        std::istringstream stream(text);
        while (std::getline(stream, field, ',')) fields.push_back(field);
        if (!text.empty() && text.back() == ',') fields.emplace_back();
        return fields;
    };
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split(line);
    if (header.size() < 2 + kNumEmotions || header[0] != "subject_id" || header[1] != "label") {
        throw DataError("CSV header must start with subject_id,label followed by feature columns");
    }
    const std::size_t feature_cols = header.size() - 2;
    if (feature_cols % kNumEmotions != 0) {
        throw DataError("CSV feature columns are not a multiple of 6");
    }
    const std::size_t d = feature_cols / kNumEmotions;
    for (std::size_t e = 0; e < kNumEmotions; ++e) {
        for (std::size_t j = 0; j < d; ++j) {
            const std::string expected = std::string(kEmotionOrder[e]) + "_" + std::to_string(j);
            if (header[2 + e * d + j] != expected) {
                throw DataError("CSV column " + std::to_string(2 + e * d + j) + " is \"" +
                                header[2 + e * d + j] + "\", expected \"" + expected + "\"");
            }
        }
    }
    Dataset dataset;
    dataset.d = d;
    dataset.S = 1;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split(line);
        if (fields.size() != header.size()) {
            throw DataError("CSV line " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(header.size()));
        }
        SubjectSample sample;
        sample.subject_id = fields[0];
        try {
            sample.label = label_from_int(std::stoi(fields[1]));
        } catch (const std::logic_error&) {
            throw DataError("CSV line " + std::to_string(line_no) + " has a non-integer label");
        }
        for (std::size_t e = 0; e < kNumEmotions; ++e) {
            FeatureMap map(d, 1);
            for (std::size_t j = 0; j < d; ++j) {
                const std::string& text = fields[2 + e * d + j];
                std::size_t used = 0;
                double value = 0.0;
                try {
                    value = std::stod(text, &used);
                } catch (const std::logic_error&) {
                    throw DataError("CSV line " + std::to_string(line_no) +
                                    " has a non-numeric feature value \"" + text + "\"");
                }
                if (used != text.size()) {
                    throw DataError("CSV line " + std::to_string(line_no) +
                                    " has trailing junk in value \"" + text + "\"");
                }
                map.values[j] = value;
            }
            sample.maps[e] = std::move(map);
        }
        dataset.samples.push_back(std::move(sample));
    }
    if (dataset.samples.empty()) {
        throw DataError("CSV file has a header but no rows: " + path.string());
    }
    validate_dataset(dataset);
    return dataset;
}

} // namespace maskfuse
