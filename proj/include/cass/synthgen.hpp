#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cass/image_io.hpp"
#include "cass/report_parser.hpp"

namespace cass {

// Which fraction of branches falls into each class, and the integer percent
// ranges drawn within the diseased classes. The default ranges keep a clear
// width margin around the 50% class boundary so the task stays learnable.
struct SeverityDistribution {
    double p_none = 0.40;
    double p_nonsig = 0.30;
    double p_sig = 0.30;
    int nonsig_lo = 20;
    int nonsig_hi = 45;
    int sig_lo = 60;
    int sig_hi = 95;
    double p_total_occlusion = 0.10;  // within the significant class
};

struct BranchMenuEntry {
    std::string section;   // token from the parser lexicon
    double presence_prob;  // chance the branch exists for a patient
};

// Presence probabilities shaped after the observed per-section case counts.
std::vector<BranchMenuEntry> default_branch_menu();

struct GenConfig {
    int image_size = 64;
    int views_per_branch = 50;
    int patients = 10;
    std::vector<BranchMenuEntry> branch_menu = default_branch_menu();
    SeverityDistribution severity;
    bool text_overlay = true;
    double distractor_branch_prob = 0.0;
    bool calcified_distractors = false;
    double visible_view_fraction = 0.8;
    bool emit_masks = true;
    bool emit_reports = true;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
};

// Per-view ground truth emitted alongside each image.
struct ViewGroundTruth {
    std::vector<std::uint8_t> vessel_mask;  // h*w, labeled branch only
    std::vector<std::uint8_t> text_mask;
    bool stenosis_visible = false;
};

// Renders `view_count` views of one branch with the given stenosis severity.
// The narrowing sits at a fixed arc position and is rendered only in a
// visible_view_fraction subset of the views; the rest show the healthy width.
std::vector<std::pair<ImageU8, ViewGroundTruth>> generate_branch_views(double severity_percent,
                                                                       int view_count,
                                                                       const GenConfig& cfg,
                                                                       std::mt19937_64& rng);

// Writes patient_xxx/ARTERY/SECTION/view_NN.pgm trees plus manifest.json,
// per-branch truth sidecars, optional mask images and rendered reports.
// Deterministic under cfg.seed.
struct DatasetSummary {
    int patients = 0;
    int branches = 0;
    int images = 0;
};

DatasetSummary generate_dataset(const GenConfig& cfg, const std::string& out_dir);

// Templated prose over the parser's synonym lexicon; parse_report recovers
// the findings exactly.
std::string render_report(const PatientLabelSet& truth, std::mt19937_64& rng);

}  // namespace cass
