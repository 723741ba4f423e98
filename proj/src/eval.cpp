#include "cass/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cass {

StenosisClass argmax_class(const std::array<double, 3>& probs) {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
        if (probs[static_cast<std::size_t>(k)] >= probs[static_cast<std::size_t>(best)]) best = k;
    }
    return static_cast<StenosisClass>(best);
}

StenosisClass majority_vote(const std::vector<StenosisClass>& votes) {
    if (votes.empty()) throw ArgumentError("majority_vote: empty vote list");
    std::array<std::int64_t, 3> counts{0, 0, 0};
    for (StenosisClass v : votes) counts[static_cast<std::size_t>(v)]++;
    int best = 0;
    for (int k = 1; k < 3; ++k) {
        if (counts[static_cast<std::size_t>(k)] >= counts[static_cast<std::size_t>(best)]) best = k;
    }
    return static_cast<StenosisClass>(best);
}

StenosisClass majority_vote(const std::vector<ViewPrediction>& views) {
    std::vector<StenosisClass> votes;
    votes.reserve(views.size());
    for (const auto& v : views) votes.push_back(v.predicted);
    return majority_vote(votes);
}

StenosisClass max_aggregate(const std::vector<StenosisClass>& classes) {
    if (classes.empty()) throw ArgumentError("max_aggregate: empty class list");
    StenosisClass out = classes.front();
    for (StenosisClass c : classes) {
        if (static_cast<int>(c) > static_cast<int>(out)) out = c;
    }
    return out;
}

std::string level_name(Level level) {
    switch (level) {
        case Level::Segment: return "segment";
        case Level::Artery: return "artery";
        case Level::Patient: return "patient";
    }
    return "?";
}

MetricsReport compute_metrics(const std::vector<std::pair<StenosisClass, StenosisClass>>& pairs) {
    if (pairs.empty()) throw ArgumentError("compute_metrics: empty pair list");
    MetricsReport m;
    std::array<std::array<std::int64_t, 3>, 3> counts{};
    std::int64_t correct = 0;
    for (const auto& [truth, pred] : pairs) {
        counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)]++;
        if (truth == pred) ++correct;
    }
    const auto total = static_cast<double>(pairs.size());
    m.accuracy = static_cast<double>(correct) / total;

    for (int i = 0; i < 3; ++i) {
        std::int64_t support = 0;
        for (int j = 0; j < 3; ++j) support += counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        m.support[static_cast<std::size_t>(i)] = support;
        for (int j = 0; j < 3; ++j) {
            m.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                support > 0 ? static_cast<double>(counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) /
                                  static_cast<double>(support)
                            : 0.0;
        }
    }
    for (int i = 0; i < 3; ++i) {
        const auto tp = static_cast<double>(counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)]);
        double fp = 0.0, fn = 0.0;
        for (int j = 0; j < 3; ++j) {
            if (j == i) continue;
            fp += static_cast<double>(counts[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]);
            fn += static_cast<double>(counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
        }
        const double precision = (tp + fp) > 0.0 ? tp / (tp + fp) : 0.0;
        const double recall = (tp + fn) > 0.0 ? tp / (tp + fn) : 0.0;
        const double f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        m.per_class_f1[static_cast<std::size_t>(i)] = f1;
        m.weighted_f1 += f1 * (static_cast<double>(m.support[static_cast<std::size_t>(i)]) / total);
    }
    return m;
}

std::array<double, 3> per_class_f1(const std::vector<std::pair<StenosisClass, StenosisClass>>& pairs) {
    return compute_metrics(pairs).per_class_f1;
}

double weighted_f1(const std::vector<std::pair<StenosisClass, StenosisClass>>& pairs) {
    return compute_metrics(pairs).weighted_f1;
}

std::map<Level, MetricsReport> evaluate(const std::vector<ViewPrediction>& views,
                                        const TruthMap& truths,
                                        std::map<Level, LevelResult>* level_pairs) {
    if (views.empty()) throw ArgumentError("evaluate: no predictions");

    // hierarchy from the predictions: patient -> artery -> branch -> votes
    std::map<std::string, std::map<std::string, std::map<std::string, std::vector<StenosisClass>>>> tree;
    for (const auto& v : views) {
        tree[v.patient][v.artery][v.branch].push_back(v.predicted);
    }

    LevelResult segment{Level::Segment, {}};
    LevelResult artery{Level::Artery, {}};
    LevelResult patient{Level::Patient, {}};

    for (const auto& [patient_id, arteries] : tree) {
        const auto truth_patient = truths.find(patient_id);
        if (truth_patient == truths.end()) {
            throw ConsistencyError("evaluate: predictions for unknown patient '" + patient_id + "'");
        }
        std::vector<StenosisClass> artery_truths, artery_preds;
        for (const auto& [artery_id, branches] : arteries) {
            std::vector<StenosisClass> branch_truths, branch_preds;
            for (const auto& [branch_id, votes] : branches) {
                const auto truth_branch = truth_patient->second.find(branch_id);
                if (truth_branch == truth_patient->second.end()) {
                    throw ConsistencyError("evaluate: no truth for branch '" + branch_id +
                                           "' of patient '" + patient_id + "'");
                }
                const StenosisClass verdict = majority_vote(votes);
                segment.pairs.emplace_back(truth_branch->second, verdict);
                branch_truths.push_back(truth_branch->second);
                branch_preds.push_back(verdict);
            }
            artery.pairs.emplace_back(max_aggregate(branch_truths), max_aggregate(branch_preds));
            artery_truths.push_back(max_aggregate(branch_truths));
            artery_preds.push_back(max_aggregate(branch_preds));
        }
        patient.pairs.emplace_back(max_aggregate(artery_truths), max_aggregate(artery_preds));
    }

    std::map<Level, MetricsReport> out;
    out[Level::Segment] = compute_metrics(segment.pairs);
    out[Level::Artery] = compute_metrics(artery.pairs);
    out[Level::Patient] = compute_metrics(patient.pairs);
    if (level_pairs) {
        (*level_pairs)[Level::Segment] = std::move(segment);
        (*level_pairs)[Level::Artery] = std::move(artery);
        (*level_pairs)[Level::Patient] = std::move(patient);
    }
    return out;
}

nlohmann::json predictions_to_json(const std::vector<ViewPrediction>& views) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : views) {
        arr.push_back({{"patient", v.patient},
                       {"artery", v.artery},
                       {"branch", v.branch},
                       {"view", v.view},
                       {"probs", {v.probs[0], v.probs[1], v.probs[2]}}});
    }
    return arr;
}

std::vector<ViewPrediction> predictions_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw FormatError("predictions: expected a JSON array");
    std::vector<ViewPrediction> out;
    out.reserve(j.size());
    for (const auto& e : j) {
        ViewPrediction v;
        v.patient = e.at("patient").get<std::string>();
        v.artery = e.at("artery").get<std::string>();
        v.branch = e.at("branch").get<std::string>();
        v.view = e.at("view").get<int>();
        const auto& probs = e.at("probs");
        double sum = 0.0;
        for (int k = 0; k < 3; ++k) {
            v.probs[static_cast<std::size_t>(k)] = probs.at(static_cast<std::size_t>(k)).get<double>();
            sum += v.probs[static_cast<std::size_t>(k)];
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw FormatError("predictions: probabilities for " + v.patient + "/" + v.branch +
                              " view " + std::to_string(v.view) + " sum to " + std::to_string(sum));
        }
        v.predicted = argmax_class(v.probs);
        out.push_back(std::move(v));
    }
    return out;
}

nlohmann::json metrics_to_json(const MetricsReport& m) {
    return nlohmann::json{
        {"accuracy", m.accuracy},
        {"per_class_f1", {m.per_class_f1[0], m.per_class_f1[1], m.per_class_f1[2]}},
        {"weighted_f1", m.weighted_f1},
        {"support", {m.support[0], m.support[1], m.support[2]}},
        {"confusion",
         {{m.confusion[0][0], m.confusion[0][1], m.confusion[0][2]},
          {m.confusion[1][0], m.confusion[1][1], m.confusion[1][2]},
          {m.confusion[2][0], m.confusion[2][1], m.confusion[2][2]}}}};
}

std::string confusion_csv(const MetricsReport& m) {
    std::ostringstream os;
    os.precision(10);
    os << "truth\\pred,NoStenosis,NonSignificant,Significant\n";
    const char* names[3] = {"NoStenosis", "NonSignificant", "Significant"};
    for (int i = 0; i < 3; ++i) {
        os << names[i];
        for (int j = 0; j < 3; ++j) os << "," << m.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        os << "\n";
    }
    return os.str();
}

TruthMap truths_from_json(const nlohmann::json& j) {
    TruthMap out;
    if (j.is_array()) {  // array of parsed label sets
        for (const auto& entry : j) {
            const auto labels = label_set_from_json(entry);
            for (const auto& [section, cls] : labels.classes) {
                out[labels.patient_id][section] = cls;
            }
        }
        return out;
    }
    if (j.is_object() && j.contains("classes")) {  // a single parsed label set
        const auto labels = label_set_from_json(j);
        for (const auto& [section, cls] : labels.classes) out[labels.patient_id][section] = cls;
        return out;
    }
    if (j.is_object() && j.contains("patients")) {  // generator manifest
        for (const auto& p : j.at("patients")) {
            const std::string id = p.at("id").get<std::string>();
            for (const auto& a : p.at("arteries")) {
                for (const auto& b : a.at("branches")) {
                    const int cls = b.at("class").get<int>();
                    if (cls < 0 || cls > 2) throw FormatError("manifest: class out of range");
                    out[id][b.at("section").get<std::string>()] = static_cast<StenosisClass>(cls);
                }
            }
        }
        return out;
    }
    throw FormatError("labels: expected a manifest object or an array of label sets");
}

}  // namespace cass
