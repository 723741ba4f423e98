#include "cass/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "cass/common.hpp"

namespace fs = std::filesystem;

namespace cass {

Manifest load_manifest(const std::string& dataset_dir) {
    const fs::path path = fs::path(dataset_dir) / "manifest.json";
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad JSON: " + e.what());
    }
    Manifest m;
    m.seed = j.value("seed", std::uint64_t{0});
    m.config = j.value("config", nlohmann::json::object());
    m.image_size = m.config.value("image_size", 64);
    m.views_per_branch = m.config.value("views_per_branch", 0);
    for (const auto& p : j.at("patients")) {
        ManifestPatient patient;
        patient.id = p.at("id").get<std::string>();
        for (const auto& a : p.at("arteries")) {
            const std::string artery = a.at("name").get<std::string>();
            for (const auto& b : a.at("branches")) {
                ManifestBranch branch;
                branch.section = b.at("section").get<std::string>();
                branch.artery = artery;
                branch.dir = b.at("dir").get<std::string>();
                branch.severity = b.at("severity").get<int>();
                branch.cls = b.at("class").get<int>();
                branch.views = b.at("views").get<int>();
                branch.report_lo = b.value("report_lo", 0.0);
                branch.report_hi = b.value("report_hi", 0.0);
                if (branch.cls < 0 || branch.cls > 2) {
                    throw FormatError(path.string() + ": class out of range for " + branch.section);
                }
                patient.branches.push_back(std::move(branch));
            }
        }
        m.patients.push_back(std::move(patient));
    }
    return m;
}

std::vector<DatasetImage> load_dataset_images(const std::string& dataset_dir, bool clean) {
    const Manifest manifest = load_manifest(dataset_dir);
    std::vector<DatasetImage> out;
    char viewbuf[32];
    for (const auto& patient : manifest.patients) {
        for (const auto& branch : patient.branches) {
            for (int v = 0; v < branch.views; ++v) {
                std::snprintf(viewbuf, sizeof(viewbuf), "view_%02d.pgm", v);
                const fs::path path = fs::path(dataset_dir) / branch.dir / viewbuf;
                RawMprImage raw;
                raw.pixels = read_pgm(path.string());
                raw.view_index = v;
                raw.branch_id = branch.section;
                raw.patient_id = patient.id;

                DatasetImage img;
                if (clean) {
                    img.image = preprocess(raw);
                } else {
                    std::vector<std::uint8_t> empty_mask(raw.pixels.px.size(), 0);
                    img.image = inpaint_neighbors(raw, empty_mask);  // pure /255
                }
                img.label = branch.cls;
                img.patient = patient.id;
                img.artery = branch.artery;
                img.section = branch.section;
                img.view = v;
                out.push_back(std::move(img));
            }
        }
    }
    return out;
}

}  // namespace cass
