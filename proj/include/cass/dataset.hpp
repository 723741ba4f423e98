#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "cass/preprocess.hpp"

namespace cass {

struct ManifestBranch {
    std::string section;
    std::string artery;
    std::string dir;  // relative to the dataset root
    int severity = 0;
    int cls = 0;
    int views = 0;
    double report_lo = 0.0;
    double report_hi = 0.0;
};

struct ManifestPatient {
    std::string id;
    std::vector<ManifestBranch> branches;
};

struct Manifest {
    std::uint64_t seed = 0;
    nlohmann::json config;
    std::vector<ManifestPatient> patients;
    int image_size = 0;
    int views_per_branch = 0;
};

Manifest load_manifest(const std::string& dataset_dir);

// One view, cleaned (or raw/255 with clean=false), with its label and place
// in the hierarchy.
struct DatasetImage {
    CleanImage image;
    int label = 0;
    std::string patient;
    std::string artery;
    std::string section;
    int view = 0;
};

// Loads every view in manifest order; deterministic.
std::vector<DatasetImage> load_dataset_images(const std::string& dataset_dir, bool clean = true);

}  // namespace cass
