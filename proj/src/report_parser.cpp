#include "cass/report_parser.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>

namespace cass {

std::string artery_name(Artery a) {
    switch (a) {
        case Artery::LAD: return "LAD";
        case Artery::LCX: return "LCX";
        case Artery::RCA: return "RCA";
    }
    return "?";
}

const std::vector<SectionInfo>& section_lexicon() {
    // Section-to-artery grouping follows the dataset statistics table; the
    // synonym lists also accept the alternative obtuse-marginal parent
    // phrasing seen in report prose.
    static const std::vector<SectionInfo> lexicon = {
        {"LAD", Artery::LAD, {"lad", "left anterior descending artery", "left anterior descending"}},
        {"D-1", Artery::LAD, {"d-1", "d1", "first diagonal branch", "first diagonal", "diagonal 1"}},
        {"D-2", Artery::LAD, {"d-2", "d2", "second diagonal branch", "second diagonal", "diagonal 2"}},
        {"D-3", Artery::LAD, {"d-3", "d3", "third diagonal branch", "third diagonal", "diagonal 3"}},
        {"LCX", Artery::LCX, {"lcx", "left circumflex artery", "left circumflex", "circumflex artery", "circumflex"}},
        {"PLV-LCX", Artery::LCX, {"plv-lcx", "lcx-plv", "posterolateral branch of the circumflex"}},
        {"PDA-LCX", Artery::LCX, {"pda-lcx", "lcx-pda"}},
        {"RCA", Artery::RCA, {"rca", "right coronary artery"}},
        {"OM", Artery::RCA, {"om", "obtuse marginal branch", "obtuse marginal"}},
        {"OM-1", Artery::RCA, {"om-1", "om1", "first obtuse marginal"}},
        {"OM-2", Artery::RCA, {"om-2", "om2", "second obtuse marginal"}},
        {"OM-3", Artery::RCA, {"om-3", "om3", "third obtuse marginal"}},
        {"PLV-RCA", Artery::RCA, {"plv-rca", "rca-plv", "posterior left ventricular branch"}},
        {"PDA-RCA", Artery::RCA, {"pda-rca", "rca-pda", "posterior descending artery"}},
    };
    return lexicon;
}

std::optional<BranchId> branch_from_token(const std::string& token) {
    std::string lower;
    lower.reserve(token.size());
    for (char c : token) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    for (const auto& s : section_lexicon()) {
        for (const auto& syn : s.synonyms) {
            if (syn == lower) return BranchId{s.artery, s.token};
        }
    }
    return std::nullopt;
}

std::string grade_name(CadRadsGrade g) {
    switch (g) {
        case CadRadsGrade::Normal: return "Normal";
        case CadRadsGrade::Minimal: return "Minimal";
        case CadRadsGrade::Mild: return "Mild";
        case CadRadsGrade::Moderate: return "Moderate";
        case CadRadsGrade::Severe: return "Severe";
        case CadRadsGrade::TotalOcclusion: return "TotalOcclusion";
    }
    return "?";
}

CadRadsGrade grade_of(double percent) {
    if (!(percent >= 0.0) || !(percent <= 100.0)) {
        throw DomainError("grade_of: percent " + std::to_string(percent) + " outside [0,100]");
    }
    if (percent == 0.0) return CadRadsGrade::Normal;
    if (percent < 25.0) return CadRadsGrade::Minimal;
    if (percent < 50.0) return CadRadsGrade::Mild;
    if (percent < 70.0) return CadRadsGrade::Moderate;
    if (percent < 100.0) return CadRadsGrade::Severe;
    return CadRadsGrade::TotalOcclusion;
}

std::string class_name(StenosisClass c) {
    switch (c) {
        case StenosisClass::NoStenosis: return "NoStenosis";
        case StenosisClass::NonSignificant: return "NonSignificant";
        case StenosisClass::Significant: return "Significant";
    }
    return "?";
}

StenosisClass class_of(double percent, const ClassifyOptions& opts) {
    if (!(percent >= 0.0) || !(percent <= 100.0)) {
        throw DomainError("class_of: percent " + std::to_string(percent) + " outside [0,100]");
    }
    if (percent == 0.0) return StenosisClass::NoStenosis;
    const double boundary = 50.0;
    if (opts.fifty_is_significant ? percent >= boundary : percent > boundary) {
        return StenosisClass::Significant;
    }
    return StenosisClass::NonSignificant;
}

StenosisClass class_of_interval(double lo, double hi, const ClassifyOptions& opts) {
    if (lo > hi) std::swap(lo, hi);
    if (!(lo >= 0.0) || !(hi <= 100.0)) {
        throw DomainError("class_of_interval: [" + std::to_string(lo) + "," + std::to_string(hi) +
                          "] outside [0,100]");
    }
    // upper bound by default: an uncertain finding is graded by its worst case
    return class_of(opts.interval_midpoint ? (lo + hi) / 2.0 : hi, opts);
}

namespace {

struct TokenMatch {
    std::size_t begin = 0;
    std::size_t end = 0;
    BranchId branch;
};

struct ValueMatch {
    std::size_t begin = 0;
    std::size_t end = 0;
    double lo = 0.0;
    double hi = 0.0;
};

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

std::string to_lower(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return out;
}

// Sentence boundaries: '.', ';', '\n' — except a '.' between two digits,
// which belongs to a decimal number.
std::vector<std::pair<std::size_t, std::size_t>> split_sentences(const std::string& text) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        bool boundary = (c == ';' || c == '\n');
        if (c == '.') {
            const bool digit_before = i > 0 && std::isdigit(static_cast<unsigned char>(text[i - 1]));
            const bool digit_after =
                i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1]));
            boundary = !(digit_before && digit_after);
        }
        if (boundary) {
            if (i > start) spans.emplace_back(start, i);
            start = i + 1;
        }
    }
    if (start < text.size()) spans.emplace_back(start, text.size());
    return spans;
}

std::vector<TokenMatch> find_branches(const std::string& lower, std::size_t begin, std::size_t end) {
    // longest-synonym-first so "om-1" wins over "om", "left circumflex artery"
    // over "circumflex"
    struct Entry {
        const std::string* syn;
        BranchId branch;
    };
    static const std::vector<Entry> entries = [] {
        std::vector<Entry> out;
        for (const auto& s : section_lexicon()) {
            for (const auto& syn : s.synonyms) out.push_back({&syn, BranchId{s.artery, s.token}});
        }
        std::sort(out.begin(), out.end(),
                  [](const Entry& a, const Entry& b) { return a.syn->size() > b.syn->size(); });
        return out;
    }();

    std::vector<std::uint8_t> taken(end - begin, 0);
    std::vector<TokenMatch> matches;
    for (const auto& e : entries) {
        std::size_t pos = begin;
        while (pos < end) {
            const std::size_t hit = lower.find(*e.syn, pos);
            if (hit == std::string::npos || hit + e.syn->size() > end) break;
            const std::size_t stop = hit + e.syn->size();
            const bool left_ok = hit == 0 || !is_word_char(lower[hit - 1]);
            const bool right_ok = stop >= lower.size() || !is_word_char(lower[stop]);
            bool free = true;
            for (std::size_t i = hit; i < stop && free; ++i) free = !taken[i - begin];
            if (left_ok && right_ok && free) {
                for (std::size_t i = hit; i < stop; ++i) taken[i - begin] = 1;
                matches.push_back({hit, stop, e.branch});
            }
            pos = stop;
        }
    }
    std::sort(matches.begin(), matches.end(),
              [](const TokenMatch& a, const TokenMatch& b) { return a.begin < b.begin; });
    return matches;
}

std::vector<ValueMatch> find_values(const std::string& lower, std::size_t begin, std::size_t end) {
    std::vector<ValueMatch> out;
    const std::string sentence = lower.substr(begin, end - begin);

    static const std::regex interval_re(R"((\d+(?:\.\d+)?)\s*(?:-|–|to)\s*(\d+(?:\.\d+)?)\s*%)");
    static const std::regex point_re(R"((\d+(?:\.\d+)?)\s*%)");

    std::vector<std::uint8_t> taken(sentence.size(), 0);
    auto claim = [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) taken[i] = 1;
    };
    auto free_range = [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            if (taken[i]) return false;
        }
        return true;
    };

    for (auto it = std::sregex_iterator(sentence.begin(), sentence.end(), interval_re);
         it != std::sregex_iterator(); ++it) {
        const std::size_t b = static_cast<std::size_t>(it->position(0));
        const std::size_t e = b + static_cast<std::size_t>(it->length(0));
        out.push_back({begin + b, begin + e, std::stod((*it)[1].str()), std::stod((*it)[2].str())});
        claim(b, e);
    }
    for (auto it = std::sregex_iterator(sentence.begin(), sentence.end(), point_re);
         it != std::sregex_iterator(); ++it) {
        const std::size_t b = static_cast<std::size_t>(it->position(0));
        const std::size_t e = b + static_cast<std::size_t>(it->length(0));
        if (!free_range(b, e)) continue;  // part of an interval already
        const double v = std::stod((*it)[1].str());
        out.push_back({begin + b, begin + e, v, v});
        claim(b, e);
    }

    // keyword findings, longest phrase first
    static const std::vector<std::pair<std::string, double>> keywords = {
        {"total occlusion", 100.0}, {"totally occluded", 100.0}, {"occluded", 100.0},
        {"without stenosis", 0.0},  {"no stenosis", 0.0},        {"unremarkable", 0.0},
        {"normal", 0.0},
    };
    for (const auto& [phrase, value] : keywords) {
        std::size_t pos = 0;
        while ((pos = sentence.find(phrase, pos)) != std::string::npos) {
            const std::size_t e = pos + phrase.size();
            const bool left_ok = pos == 0 || !is_word_char(sentence[pos - 1]);
            const bool right_ok = e >= sentence.size() || !is_word_char(sentence[e]);
            if (left_ok && right_ok && free_range(pos, e)) {
                out.push_back({begin + pos, begin + e, value, value});
                claim(pos, e);
            }
            pos = e;
        }
    }
    std::sort(out.begin(), out.end(),
              [](const ValueMatch& a, const ValueMatch& b) { return a.begin < b.begin; });
    return out;
}

}  // namespace

PatientLabelSet parse_report(const std::string& text, const ClassifyOptions& opts) {
    PatientLabelSet result;
    const std::string lower = to_lower(text);

    static const std::regex patient_re(R"((patient_[a-z0-9]+))");
    std::smatch pm;
    if (std::regex_search(lower, pm, patient_re)) {
        result.patient_id = pm[1].str();
    }

    for (const auto& [sb, se] : split_sentences(text)) {
        const auto branches = find_branches(lower, sb, se);
        if (branches.empty()) continue;
        const auto values = find_values(lower, sb, se);

        for (const auto& br : branches) {
            const ValueMatch* chosen = nullptr;
            for (const auto& v : values) {  // nearest value after the token
                if (v.begin >= br.end) {
                    chosen = &v;
                    break;
                }
            }
            if (!chosen) {  // otherwise nearest before it
                for (const auto& v : values) {
                    if (v.end <= br.begin) chosen = &v;
                }
            }
            if (!chosen) {
                result.warnings.push_back("no percentage or keyword near '" + br.branch.section +
                                          "' at offset " + std::to_string(br.begin));
                continue;
            }
            double lo = chosen->lo, hi = chosen->hi;
            if (lo > hi) std::swap(lo, hi);
            if (hi > 100.0 || lo < 0.0) {
                throw ParseError("percentage outside [0,100] near '" + br.branch.section + "'",
                                 chosen->begin, chosen->end);
            }
            StenosisFinding finding;
            finding.branch = br.branch;
            finding.lo = lo;
            finding.hi = hi;
            finding.span_begin = std::min(br.begin, chosen->begin);
            finding.span_end = std::max(br.end, chosen->end);
            result.findings.push_back(finding);

            const StenosisClass cls = class_of_interval(lo, hi, opts);
            auto it = result.classes.find(br.branch.section);
            if (it == result.classes.end()) {
                result.classes.emplace(br.branch.section, cls);
            } else if (static_cast<int>(cls) > static_cast<int>(it->second)) {
                // repeated mentions: keep the most severe reading
                result.warnings.push_back("multiple findings for '" + br.branch.section +
                                          "', keeping the most severe");
                it->second = cls;
            }
        }
    }
    if (result.findings.empty()) {
        result.warnings.push_back("no recognizable branch finding in report");
    }
    return result;
}

nlohmann::json label_set_to_json(const PatientLabelSet& labels) {
    nlohmann::json findings = nlohmann::json::array();
    for (const auto& f : labels.findings) {
        findings.push_back({{"branch", f.branch.section},
                            {"artery", artery_name(f.branch.artery)},
                            {"lo", f.lo},
                            {"hi", f.hi},
                            {"span", {f.span_begin, f.span_end}}});
    }
    nlohmann::json classes = nlohmann::json::object();
    for (const auto& [section, cls] : labels.classes) classes[section] = static_cast<int>(cls);
    return nlohmann::json{{"patient_id", labels.patient_id},
                          {"findings", findings},
                          {"classes", classes},
                          {"warnings", labels.warnings}};
}

PatientLabelSet label_set_from_json(const nlohmann::json& j) {
    PatientLabelSet out;
    out.patient_id = j.at("patient_id").get<std::string>();
    for (const auto& f : j.at("findings")) {
        StenosisFinding finding;
        const auto branch = branch_from_token(f.at("branch").get<std::string>());
        if (!branch) throw FormatError("labels: unknown branch " + f.at("branch").dump());
        finding.branch = *branch;
        finding.lo = f.at("lo").get<double>();
        finding.hi = f.at("hi").get<double>();
        finding.span_begin = f.at("span").at(0).get<std::size_t>();
        finding.span_end = f.at("span").at(1).get<std::size_t>();
        out.findings.push_back(finding);
    }
    for (const auto& [key, value] : j.at("classes").items()) {
        const int cls = value.get<int>();
        if (cls < 0 || cls > 2) throw FormatError("labels: class " + value.dump() + " out of range");
        out.classes[key] = static_cast<StenosisClass>(cls);
    }
    if (j.contains("warnings")) {
        for (const auto& warning : j.at("warnings")) out.warnings.push_back(warning.get<std::string>());
    }
    return out;
}

}  // namespace cass
