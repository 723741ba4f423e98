#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cass/common.hpp"

namespace cass {

enum class Artery { LAD = 0, LCX = 1, RCA = 2 };

std::string artery_name(Artery a);

// A section token from the report vocabulary plus its parent artery.
struct BranchId {
    Artery artery = Artery::LAD;
    std::string section;

    bool operator==(const BranchId& other) const {
        return artery == other.artery && section == other.section;
    }
};

struct SectionInfo {
    std::string token;                  // canonical section name
    Artery artery;                      // parent artery
    std::vector<std::string> synonyms;  // lowercase, includes the token itself
};

// The 14-entry section vocabulary with the synonym table shared by the
// parser and the synthetic report renderer.
const std::vector<SectionInfo>& section_lexicon();

std::optional<BranchId> branch_from_token(const std::string& token);

// ---------------------------------------------------------------------------
// grading
// ---------------------------------------------------------------------------

enum class CadRadsGrade {
    Normal = 0,         // 0%
    Minimal = 1,        // 1-24%
    Mild = 2,           // 25-49%
    Moderate = 3,       // 50-69%
    Severe = 4,         // 70-99%
    TotalOcclusion = 5  // 100%
};

std::string grade_name(CadRadsGrade g);
CadRadsGrade grade_of(double percent);

enum class StenosisClass : int { NoStenosis = 0, NonSignificant = 1, Significant = 2 };

std::string class_name(StenosisClass c);

struct ClassifyOptions {
    bool fifty_is_significant = false;  // flips the exact-50% boundary
    bool interval_midpoint = false;     // classify intervals by midpoint instead of upper bound
};

StenosisClass class_of(double percent, const ClassifyOptions& opts = {});
StenosisClass class_of_interval(double lo, double hi, const ClassifyOptions& opts = {});

// ---------------------------------------------------------------------------
// report parsing
// ---------------------------------------------------------------------------

struct StenosisFinding {
    BranchId branch;
    double lo = 0.0;
    double hi = 0.0;  // lo == hi for point findings
    std::size_t span_begin = 0;
    std::size_t span_end = 0;
};

struct PatientLabelSet {
    std::string patient_id = "unknown";
    std::vector<StenosisFinding> findings;
    std::map<std::string, StenosisClass> classes;  // keyed by section token
    std::vector<std::string> warnings;
};

// Tolerant scanner over free text: recognizes section tokens (case-insensitive
// via the synonym table) paired with a percentage, a percent interval, or a
// normal/occlusion keyword in the same sentence. Unparseable sentences become
// warnings; a percentage above 100 is a hard parse error carrying its span.
PatientLabelSet parse_report(const std::string& text, const ClassifyOptions& opts = {});

nlohmann::json label_set_to_json(const PatientLabelSet& labels);
PatientLabelSet label_set_from_json(const nlohmann::json& j);

}  // namespace cass
