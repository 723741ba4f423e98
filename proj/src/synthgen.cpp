#include "cass/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "cass/common.hpp"

namespace fs = std::filesystem;

namespace cass {

std::vector<BranchMenuEntry> default_branch_menu() {
    // proportions of 828 cases per section, rounded
    return {
        {"LAD", 0.99},     {"D-1", 0.88},     {"D-2", 0.43},     {"D-3", 0.08},
        {"LCX", 0.77},     {"PLV-LCX", 0.02}, {"PDA-LCX", 0.02}, {"RCA", 0.11},
        {"OM", 0.01},      {"OM-1", 0.10},    {"OM-2", 0.34},    {"OM-3", 0.09},
        {"PLV-RCA", 0.74}, {"PDA-RCA", 0.09},
    };
}

nlohmann::json GenConfig::to_json() const {
    nlohmann::json menu = nlohmann::json::array();
    for (const auto& e : branch_menu) menu.push_back({{"section", e.section}, {"prob", e.presence_prob}});
    return nlohmann::json{
        {"image_size", image_size},
        {"views_per_branch", views_per_branch},
        {"patients", patients},
        {"branch_menu", menu},
        {"severity",
         {{"p_none", severity.p_none},
          {"p_nonsig", severity.p_nonsig},
          {"p_sig", severity.p_sig},
          {"nonsig_range", {severity.nonsig_lo, severity.nonsig_hi}},
          {"sig_range", {severity.sig_lo, severity.sig_hi}},
          {"p_total_occlusion", severity.p_total_occlusion}}},
        {"text_overlay", text_overlay},
        {"distractor_branch_prob", distractor_branch_prob},
        {"calcified_distractors", calcified_distractors},
        {"visible_view_fraction", visible_view_fraction},
        {"emit_masks", emit_masks},
        {"emit_reports", emit_reports},
        {"seed", seed}};
}

namespace {

// 3x5 dot-matrix glyphs (rows packed msb-first, 3 bits per row). Every glyph
// is one 8-connected component of at least 4 pixels.
struct Glyph {
    char ch;
    std::uint8_t rows[5];
};

const Glyph kFont[] = {
    {'0', {0b111, 0b101, 0b101, 0b101, 0b111}}, {'1', {0b010, 0b110, 0b010, 0b010, 0b111}},
    {'2', {0b111, 0b001, 0b111, 0b100, 0b111}}, {'3', {0b111, 0b001, 0b111, 0b001, 0b111}},
    {'4', {0b101, 0b101, 0b111, 0b001, 0b001}}, {'5', {0b111, 0b100, 0b111, 0b001, 0b111}},
    {'6', {0b111, 0b100, 0b111, 0b101, 0b111}}, {'7', {0b111, 0b001, 0b010, 0b010, 0b010}},
    {'8', {0b111, 0b101, 0b111, 0b101, 0b111}}, {'9', {0b111, 0b101, 0b111, 0b001, 0b111}},
    {'I', {0b111, 0b010, 0b010, 0b010, 0b111}}, {'D', {0b110, 0b101, 0b101, 0b101, 0b110}},
    {'V', {0b101, 0b101, 0b101, 0b101, 0b010}},
};

const Glyph* find_glyph(char c) {
    for (const auto& g : kFont) {
        if (g.ch == c) return &g;
    }
    return nullptr;
}

void stamp_text(std::vector<double>& px, std::vector<std::uint8_t>& text_mask, int size,
                const std::string& text, int y0, int x0) {
    int x = x0;
    for (char c : text) {
        if (c == ' ') {
            x += 4;
            continue;
        }
        const Glyph* g = find_glyph(c);
        if (!g || x + 3 > size - 1) continue;
        for (int r = 0; r < 5; ++r) {
            for (int b = 0; b < 3; ++b) {
                if ((g->rows[r] >> (2 - b)) & 1) {
                    const int y = y0 + r, xx = x + b;
                    if (y < 0 || y >= size || xx >= size) continue;
                    const std::size_t i = static_cast<std::size_t>(y) * size + xx;
                    px[i] = 1.0;
                    text_mask[i] = 1;
                }
            }
        }
        x += 4;
    }
}

struct BranchGeometry {
    double amplitude, freq, phase, half_width, brightness, bg_level;
    double arc_col, arc_sigma;
};

BranchGeometry draw_geometry(int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> amp(size * 0.09, size * 0.17);
    std::uniform_real_distribution<double> freq(0.8, 1.5);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    std::uniform_real_distribution<double> width(size * 0.066, size * 0.081);
    std::uniform_real_distribution<double> bright(0.50, 0.60);
    std::uniform_real_distribution<double> bg(0.10, 0.16);
    std::uniform_real_distribution<double> arc(size * 0.25, size * 0.75);
    std::uniform_real_distribution<double> arcs(2.5, 5.0);
    BranchGeometry g;
    g.amplitude = amp(rng);
    g.freq = freq(rng);
    g.phase = phase(rng);
    g.half_width = width(rng);
    g.brightness = bright(rng);
    g.bg_level = bg(rng);
    g.arc_col = arc(rng);
    g.arc_sigma = arcs(rng);
    return g;
}

// Adds one sinusoidal band; returns per-column center rows. Columns whose
// local width collapses below 0.15 px are skipped entirely (total occlusion).
void draw_band(std::vector<double>& px, std::vector<std::uint8_t>* mask, int size,
               const BranchGeometry& g, double center_row, double phase_jitter,
               double amp_scale, double severity, bool narrowed) {
    for (int j = 0; j < size; ++j) {
        const double c =
            center_row + g.amplitude * amp_scale *
                             std::sin(2.0 * M_PI * g.freq * j / size + g.phase + phase_jitter);
        double w = g.half_width;
        if (narrowed && severity > 0.0) {
            const double d = (j - g.arc_col) / g.arc_sigma;
            w *= 1.0 - (severity / 100.0) * std::exp(-0.5 * d * d);
        }
        if (w < 0.15) continue;
        const int lo = std::max(0, static_cast<int>(std::floor(c - 4.0 * g.half_width)));
        const int hi = std::min(size - 1, static_cast<int>(std::ceil(c + 4.0 * g.half_width)));
        for (int i = lo; i <= hi; ++i) {
            const double d = (i - c) / w;
            px[static_cast<std::size_t>(i) * size + j] += g.brightness * std::exp(-0.5 * d * d);
            if (mask && std::abs(i - c) <= 2.0 * w) {
                (*mask)[static_cast<std::size_t>(i) * size + j] = 1;
            }
        }
    }
}

int severity_from_distribution(const SeverityDistribution& sd, std::mt19937_64& rng) {
    const double total = sd.p_none + sd.p_nonsig + sd.p_sig;
    std::uniform_real_distribution<double> u(0.0, total);
    const double x = u(rng);
    if (x < sd.p_none) return 0;
    if (x < sd.p_none + sd.p_nonsig) {
        return std::uniform_int_distribution<int>(sd.nonsig_lo, sd.nonsig_hi)(rng);
    }
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < sd.p_total_occlusion) return 100;
    return std::uniform_int_distribution<int>(sd.sig_lo, sd.sig_hi)(rng);
}

}  // namespace

std::vector<std::pair<ImageU8, ViewGroundTruth>> generate_branch_views(double severity_percent,
                                                                       int view_count,
                                                                       const GenConfig& cfg,
                                                                       std::mt19937_64& rng) {
    if (!(severity_percent >= 0.0) || !(severity_percent <= 100.0)) {
        throw DomainError("generate_branch_views: severity " + std::to_string(severity_percent) +
                          " outside [0,100]");
    }
    if (view_count < 1) throw ArgumentError("generate_branch_views: view_count must be >= 1");
    const int size = cfg.image_size;

    const BranchGeometry geom = draw_geometry(size, rng);

    // which views actually show the narrowing
    std::vector<int> order(static_cast<std::size_t>(view_count));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const int visible_count = std::clamp(
        static_cast<int>(std::lround(cfg.visible_view_fraction * view_count)), 1, view_count);
    std::vector<std::uint8_t> visible(static_cast<std::size_t>(view_count), 0);
    for (int i = 0; i < visible_count; ++i) visible[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

    const bool with_distractor =
        std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.distractor_branch_prob;
    BranchGeometry distractor = draw_geometry(size, rng);
    distractor.half_width *= 0.7;
    const double distractor_severity =
        std::uniform_real_distribution<double>(55.0, 95.0)(rng);
    const bool distractor_on_top = rng() % 2 == 0;

    std::normal_distribution<double> noise(0.0, 0.05);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<std::pair<ImageU8, ViewGroundTruth>> out;
    out.reserve(static_cast<std::size_t>(view_count));
    for (int v = 0; v < view_count; ++v) {
        std::vector<double> px(static_cast<std::size_t>(size) * size, geom.bg_level);
        for (auto& p : px) p += noise(rng);

        // low-frequency tissue blobs
        const int blobs = 2 + static_cast<int>(rng() % 2);
        for (int b = 0; b < blobs; ++b) {
            const double amp = 0.02 + 0.06 * unit(rng);
            const double cy = unit(rng) * size, cx = unit(rng) * size;
            const double sigma = 6.0 + 10.0 * unit(rng);
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                    px[static_cast<std::size_t>(y) * size + x] += amp * std::exp(-d2 / (2 * sigma * sigma));
                }
            }
        }

        ViewGroundTruth truth;
        truth.vessel_mask.assign(px.size(), 0);
        truth.text_mask.assign(px.size(), 0);
        truth.stenosis_visible = severity_percent > 0.0 && visible[static_cast<std::size_t>(v)];

        const double phase_jitter = std::uniform_real_distribution<double>(-0.25, 0.25)(rng);
        const double amp_scale = std::uniform_real_distribution<double>(0.9, 1.1)(rng);
        const double center = size / 2.0 + std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
        draw_band(px, &truth.vessel_mask, size, geom, center, phase_jitter, amp_scale,
                  severity_percent, truth.stenosis_visible);

        if (with_distractor) {
            const double off = distractor_on_top ? size * 0.14 : size * 0.86;
            draw_band(px, nullptr, size, distractor, off,
                      std::uniform_real_distribution<double>(-0.25, 0.25)(rng), 0.5,
                      distractor_severity, true);
        }

        // keep everything below the text intensity so cleaning stays exact
        for (auto& p : px) p = std::clamp(p, 0.0, 0.92);

        if (cfg.calcified_distractors) {
            const int spots = 1 + static_cast<int>(rng() % 2);
            for (int sp = 0; sp < spots; ++sp) {
                // place away from the band's center line
                for (int attempt = 0; attempt < 20; ++attempt) {
                    const int cy = static_cast<int>(rng() % static_cast<std::uint64_t>(size));
                    const int cx = static_cast<int>(rng() % static_cast<std::uint64_t>(size));
                    const double band_c = center + geom.amplitude * amp_scale *
                                                       std::sin(2.0 * M_PI * geom.freq * cx / size +
                                                                geom.phase + phase_jitter);
                    if (std::abs(cy - band_c) < 3.0 * geom.half_width + 4.0) continue;
                    const double r = 1.5 + unit(rng) * 1.5;
                    for (int y = std::max(0, cy - 4); y < std::min(size, cy + 5); ++y) {
                        for (int x = std::max(0, cx - 4); x < std::min(size, cx + 5); ++x) {
                            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                            const double val = 0.97 * std::exp(-d2 / (2 * r * r));
                            auto& p = px[static_cast<std::size_t>(y) * size + x];
                            p = std::min(0.97, std::max(p, val));
                        }
                    }
                    break;
                }
            }
        }

        if (cfg.text_overlay) {
            std::string id = "ID ";
            for (int d = 0; d < 4; ++d) id.push_back(static_cast<char>('0' + rng() % 10));
            stamp_text(px, truth.text_mask, size, id, 2, 2);
            stamp_text(px, truth.text_mask, size, "V" + std::to_string(v), 9, 2);
        }

        ImageU8 img;
        img.h = size;
        img.w = size;
        img.px.resize(px.size());
        for (std::size_t i = 0; i < px.size(); ++i) {
            img.px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(px[i], 0.0, 1.0) * 255.0));
        }
        out.emplace_back(std::move(img), std::move(truth));
    }
    return out;
}

namespace {

struct ReportBand {
    int lo, hi;
};

ReportBand interval_band_of(int severity) {
    const auto grade = grade_of(severity);
    switch (grade) {
        case CadRadsGrade::Minimal: return {1, 24};
        case CadRadsGrade::Mild: return {25, 49};
        case CadRadsGrade::Moderate: return {50, 69};
        case CadRadsGrade::Severe: return {70, 99};
        default: return {severity, severity};
    }
}

std::string pick_synonym(const std::string& section, std::mt19937_64& rng) {
    for (const auto& s : section_lexicon()) {
        if (s.token != section) continue;
        const auto& syn = s.synonyms[rng() % s.synonyms.size()];
        if (syn == "om") return "OM";  // too short to read naturally in lowercase
        return syn;
    }
    throw ArgumentError("render_report: unknown section " + section);
}

}  // namespace

std::string render_report(const PatientLabelSet& truth, std::mt19937_64& rng) {
    std::string out = "Report for " + truth.patient_id + ".\n";
    static const std::vector<std::string> normal_templates = {
        "The % is normal.", "No stenosis in the %.", "% appears normal.", "The % is unremarkable."};
    static const std::vector<std::string> occlusion_templates = {
        "The % is totally occluded.", "Total occlusion of the %."};
    static const std::vector<std::string> point_templates = {
        "%B: %P% stenosis.", "The %B shows %P% stenosis.", "There is %P% narrowing of the %B.",
        "%P% stenosis of the %B."};
    static const std::vector<std::string> interval_templates = {
        "%B: %L-%H% stenosis.", "The %B shows %L-%H% stenosis."};
    static const std::vector<std::string> fillers = {
        "Image quality is good.", "No other abnormality seen.", "Calcium scoring was performed."};

    auto substitute = [](std::string tpl, const std::string& key, const std::string& value) {
        const auto pos = tpl.find(key);
        if (pos != std::string::npos) tpl.replace(pos, key.size(), value);
        return tpl;
    };

    for (const auto& f : truth.findings) {
        const std::string name = pick_synonym(f.branch.section, rng);
        std::string sentence;
        if (f.lo == 0.0 && f.hi == 0.0) {
            sentence = substitute(normal_templates[rng() % normal_templates.size()], "%", name);
        } else if (f.lo == 100.0 && f.hi == 100.0) {
            sentence = substitute(occlusion_templates[rng() % occlusion_templates.size()], "%", name);
        } else if (f.lo == f.hi) {
            sentence = point_templates[rng() % point_templates.size()];
            sentence = substitute(sentence, "%B", name);
            sentence = substitute(sentence, "%P", std::to_string(static_cast<int>(f.lo)));
        } else {
            sentence = interval_templates[rng() % interval_templates.size()];
            sentence = substitute(sentence, "%B", name);
            sentence = substitute(sentence, "%L", std::to_string(static_cast<int>(f.lo)));
            sentence = substitute(sentence, "%H", std::to_string(static_cast<int>(f.hi)));
        }
        out += sentence + "\n";
        if (rng() % 4 == 0) out += fillers[rng() % fillers.size()] + "\n";
    }
    return out;
}

DatasetSummary generate_dataset(const GenConfig& cfg, const std::string& out_dir) {
    if (cfg.patients < 1) throw ArgumentError("generate_dataset: patients must be >= 1");
    if (cfg.views_per_branch < 1) throw ArgumentError("generate_dataset: views_per_branch must be >= 1");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw FormatError("generate_dataset: cannot create " + out_dir + ": " + ec.message());

    DatasetSummary summary;
    summary.patients = cfg.patients;

    nlohmann::json manifest;
    manifest["seed"] = cfg.seed;
    manifest["config"] = cfg.to_json();
    nlohmann::json patients_json = nlohmann::json::array();

    if (cfg.emit_reports) fs::create_directories(fs::path(out_dir) / "reports");

    char idbuf[16];
    for (int p = 0; p < cfg.patients; ++p) {
        std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(p)));
        std::snprintf(idbuf, sizeof(idbuf), "patient_%03d", p);
        const std::string patient_id = idbuf;

        // sample the branch menu; a patient always has at least the LAD
        std::vector<std::string> sections;
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (const auto& entry : cfg.branch_menu) {
            if (unit(rng) < entry.presence_prob) sections.push_back(entry.section);
        }
        if (sections.empty()) sections.push_back("LAD");

        PatientLabelSet truth;
        truth.patient_id = patient_id;

        // artery -> list of branch json, grouped in lexicon order
        std::map<std::string, nlohmann::json> artery_branches;
        for (const auto& section : sections) {
            const auto branch = branch_from_token(section);
            if (!branch) throw ArgumentError("generate_dataset: unknown menu section " + section);
            const int severity = severity_from_distribution(cfg.severity, rng);
            const auto views = generate_branch_views(severity, cfg.views_per_branch, cfg, rng);

            const std::string artery = artery_name(branch->artery);
            const fs::path branch_dir = fs::path(out_dir) / patient_id / artery / section;
            fs::create_directories(branch_dir);

            nlohmann::json visible_views = nlohmann::json::array();
            char viewbuf[32];
            for (int v = 0; v < static_cast<int>(views.size()); ++v) {
                std::snprintf(viewbuf, sizeof(viewbuf), "view_%02d.pgm", v);
                write_pgm(views[static_cast<std::size_t>(v)].first, (branch_dir / viewbuf).string());
                if (cfg.emit_masks) {
                    const auto& t = views[static_cast<std::size_t>(v)].second;
                    ImageU8 vm{cfg.image_size, cfg.image_size, {}};
                    vm.px.resize(t.vessel_mask.size());
                    for (std::size_t i = 0; i < t.vessel_mask.size(); ++i) vm.px[i] = t.vessel_mask[i] ? 255 : 0;
                    std::snprintf(viewbuf, sizeof(viewbuf), "view_%02d_vessel.pgm", v);
                    write_pgm(vm, (branch_dir / viewbuf).string());
                    ImageU8 tm{cfg.image_size, cfg.image_size, {}};
                    tm.px.resize(t.text_mask.size());
                    for (std::size_t i = 0; i < t.text_mask.size(); ++i) tm.px[i] = t.text_mask[i] ? 255 : 0;
                    std::snprintf(viewbuf, sizeof(viewbuf), "view_%02d_text.pgm", v);
                    write_pgm(tm, (branch_dir / viewbuf).string());
                }
                if (views[static_cast<std::size_t>(v)].second.stenosis_visible) visible_views.push_back(v);
            }
            summary.images += static_cast<int>(views.size());
            ++summary.branches;

            // how the report will state this finding
            StenosisFinding finding;
            finding.branch = *branch;
            if (severity > 0 && severity < 100 && unit(rng) < 0.25) {
                const auto band = interval_band_of(severity);
                finding.lo = band.lo;
                finding.hi = band.hi;
            } else {
                finding.lo = finding.hi = severity;
            }
            truth.findings.push_back(finding);
            truth.classes[section] = class_of_interval(finding.lo, finding.hi);

            const int cls = static_cast<int>(class_of(severity));
            nlohmann::json branch_json{
                {"section", section},
                {"dir", (fs::path(patient_id) / artery / section).string()},
                {"severity", severity},
                {"class", cls},
                {"views", cfg.views_per_branch},
                {"report_lo", finding.lo},
                {"report_hi", finding.hi},
                {"visible_views", visible_views},
            };
            nlohmann::json truth_json = branch_json;
            std::ofstream truth_file(branch_dir / "truth.json");
            truth_file << truth_json.dump(2) << "\n";

            artery_branches[artery].push_back(std::move(branch_json));
        }

        nlohmann::json arteries_json = nlohmann::json::array();
        for (auto& [artery, branches] : artery_branches) {
            arteries_json.push_back({{"name", artery}, {"branches", std::move(branches)}});
        }
        patients_json.push_back({{"id", patient_id}, {"arteries", std::move(arteries_json)}});

        if (cfg.emit_reports) {
            std::ofstream report(fs::path(out_dir) / "reports" / (patient_id + ".txt"));
            report << render_report(truth, rng);
        }
    }
    manifest["patients"] = std::move(patients_json);
    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    if (!mf) throw FormatError("generate_dataset: cannot write manifest in " + out_dir);
    mf << manifest.dump(2) << "\n";
    return summary;
}

}  // namespace cass
