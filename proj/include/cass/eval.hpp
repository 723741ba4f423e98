#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "cass/common.hpp"
#include "cass/report_parser.hpp"

namespace cass {

// Per-view class probabilities plus the argmax verdict (ties toward the more
// severe class).
struct ViewPrediction {
    std::string patient;
    std::string artery;
    std::string branch;  // section token
    int view = 0;
    std::array<double, 3> probs{0.0, 0.0, 0.0};
    StenosisClass predicted = StenosisClass::NoStenosis;
};

StenosisClass argmax_class(const std::array<double, 3>& probs);

// Most frequent class among the votes; ties break toward the more severe class.
StenosisClass majority_vote(const std::vector<StenosisClass>& votes);
StenosisClass majority_vote(const std::vector<ViewPrediction>& views);

// Ordinal maximum: the most critical class wins.
StenosisClass max_aggregate(const std::vector<StenosisClass>& classes);

enum class Level { Segment = 0, Artery = 1, Patient = 2 };

std::string level_name(Level level);

struct LevelResult {
    Level level = Level::Segment;
    std::vector<std::pair<StenosisClass, StenosisClass>> pairs;  // (truth, predicted)
};

struct MetricsReport {
    double accuracy = 0.0;
    std::array<double, 3> per_class_f1{0.0, 0.0, 0.0};
    double weighted_f1 = 0.0;
    std::array<std::array<double, 3>, 3> confusion{};  // row-normalized by true class
    std::array<std::int64_t, 3> support{0, 0, 0};
};

MetricsReport compute_metrics(const std::vector<std::pair<StenosisClass, StenosisClass>>& pairs);

std::array<double, 3> per_class_f1(const std::vector<std::pair<StenosisClass, StenosisClass>>& pairs);
double weighted_f1(const std::vector<std::pair<StenosisClass, StenosisClass>>& pairs);

// truth: patient id -> section token -> class. The hierarchy itself comes
// from the predictions; artery and patient truths are the max over their
// children's truths.
using TruthMap = std::map<std::string, std::map<std::string, StenosisClass>>;

std::map<Level, MetricsReport> evaluate(const std::vector<ViewPrediction>& views,
                                        const TruthMap& truths,
                                        std::map<Level, LevelResult>* level_pairs = nullptr);

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

nlohmann::json predictions_to_json(const std::vector<ViewPrediction>& views);
std::vector<ViewPrediction> predictions_from_json(const nlohmann::json& j);

nlohmann::json metrics_to_json(const MetricsReport& m);
std::string confusion_csv(const MetricsReport& m);

// Accepts either a generator manifest or an array of parsed label sets.
TruthMap truths_from_json(const nlohmann::json& j);

}  // namespace cass
