#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "cass/eval.hpp"

using cass::ArgumentError;
using cass::ConsistencyError;
using cass::Level;
using cass::majority_vote;
using cass::max_aggregate;
using cass::MetricsReport;
using cass::StenosisClass;
using cass::TruthMap;
using cass::ViewPrediction;

namespace {

using Pair = std::pair<StenosisClass, StenosisClass>;
constexpr auto No = StenosisClass::NoStenosis;
constexpr auto NonSig = StenosisClass::NonSignificant;
constexpr auto Sig = StenosisClass::Significant;

std::vector<StenosisClass> votes_of(int no, int nonsig, int sig) {
    std::vector<StenosisClass> v;
    v.insert(v.end(), static_cast<std::size_t>(no), No);
    v.insert(v.end(), static_cast<std::size_t>(nonsig), NonSig);
    v.insert(v.end(), static_cast<std::size_t>(sig), Sig);
    return v;
}

// ---- independent brute-force oracle ------------------------------------
// Written against the definitions, not against the implementation: explicit
// per-class TP/FP/FN counting and literal "most severe among the tied
// maximal counts" vote resolution.

StenosisClass bf_majority(const std::vector<StenosisClass>& votes) {
    int counts[3] = {0, 0, 0};
    for (auto v : votes) counts[static_cast<int>(v)]++;
    int best_count = std::max({counts[0], counts[1], counts[2]});
    for (int c = 2; c >= 0; --c) {
        if (counts[c] == best_count) return static_cast<StenosisClass>(c);
    }
    return No;
}

StenosisClass bf_max(const std::vector<StenosisClass>& classes) {
    int m = 0;
    for (auto c : classes) m = std::max(m, static_cast<int>(c));
    return static_cast<StenosisClass>(m);
}

struct BfMetrics {
    double accuracy = 0.0;
    double f1[3] = {0, 0, 0};
    double weighted_f1 = 0.0;
    double confusion[3][3] = {{0}};
    long support[3] = {0, 0, 0};
};

BfMetrics bf_metrics(const std::vector<Pair>& pairs) {
    BfMetrics m;
    long correct = 0;
    for (const auto& [t, p] : pairs) {
        if (t == p) ++correct;
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(pairs.size());
    for (int c = 0; c < 3; ++c) {
        long tp = 0, fp = 0, fn = 0, sup = 0;
        for (const auto& [t, p] : pairs) {
            const int ti = static_cast<int>(t), pi = static_cast<int>(p);
            if (ti == c) ++sup;
            if (ti == c && pi == c) ++tp;
            if (ti != c && pi == c) ++fp;
            if (ti == c && pi != c) ++fn;
        }
        m.support[c] = sup;
        const double prec = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double rec = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        m.f1[c] = (prec + rec > 0) ? 2.0 * prec * rec / (prec + rec) : 0.0;
        m.weighted_f1 += m.f1[c] * static_cast<double>(sup) / static_cast<double>(pairs.size());
        for (int j = 0; j < 3; ++j) {
            long n = 0;
            for (const auto& [t, p] : pairs) {
                if (static_cast<int>(t) == c && static_cast<int>(p) == j) ++n;
            }
            m.confusion[c][j] = sup ? static_cast<double>(n) / static_cast<double>(sup) : 0.0;
        }
    }
    return m;
}

struct BfBranch {
    StenosisClass truth;
    std::vector<StenosisClass> votes;
};
using BfHierarchy =
    std::map<std::string, std::map<std::string, std::map<std::string, BfBranch>>>;

void bf_evaluate(const BfHierarchy& tree, std::vector<Pair>& seg, std::vector<Pair>& art,
                 std::vector<Pair>& pat) {
    for (const auto& [pid, arteries] : tree) {
        std::vector<StenosisClass> pat_t, pat_p;
        for (const auto& [aid, branches] : arteries) {
            std::vector<StenosisClass> art_t, art_p;
            for (const auto& [bid, br] : branches) {
                const auto verdict = bf_majority(br.votes);
                seg.emplace_back(br.truth, verdict);
                art_t.push_back(br.truth);
                art_p.push_back(verdict);
            }
            art.emplace_back(bf_max(art_t), bf_max(art_p));
            pat_t.push_back(bf_max(art_t));
            pat_p.push_back(bf_max(art_p));
        }
        pat.emplace_back(bf_max(pat_t), bf_max(pat_p));
    }
}

void check_close(const MetricsReport& got, const BfMetrics& want) {
    CHECK(std::abs(got.accuracy - want.accuracy) < 1e-9);
    CHECK(std::abs(got.weighted_f1 - want.weighted_f1) < 1e-9);
    for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(got.per_class_f1[static_cast<std::size_t>(c)] - want.f1[c]) < 1e-9);
        CHECK(got.support[static_cast<std::size_t>(c)] == want.support[c]);
        for (int j = 0; j < 3; ++j) {
            CHECK(std::abs(got.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] -
                           want.confusion[c][j]) < 1e-9);
        }
    }
}

}  // namespace

TEST_CASE("majority_vote: unanimous, tied and dominated vote sets") {
    CHECK(majority_vote(votes_of(0, 50, 0)) == NonSig);
    CHECK(majority_vote(votes_of(20, 20, 10)) == NonSig);  // tie breaks toward the severe side
    CHECK(majority_vote(votes_of(10, 15, 25)) == Sig);
    CHECK(majority_vote(votes_of(1, 1, 1)) == Sig);
    CHECK_THROWS_AS(majority_vote(std::vector<StenosisClass>{}), ArgumentError);
}

TEST_CASE("majority_vote: permutation invariance and agreement with the counting oracle") {
    std::mt19937_64 rng(3);
    for (int it = 0; it < 4000; ++it) {
        std::vector<StenosisClass> votes(1 + rng() % 50);
        for (auto& v : votes) v = static_cast<StenosisClass>(rng() % 3);
        const auto verdict = majority_vote(votes);
        CHECK(verdict == bf_majority(votes));
        auto shuffled = votes;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(majority_vote(shuffled) == verdict);
    }
}

TEST_CASE("majority_vote: monotonicity holds where plurality allows it") {
    // Plurality voting is not monotone under arbitrary single-vote raises:
    // moving a vote can strip the winner's count or reinforce a less severe
    // runner-up. Two pinned counterexamples document that.
    CHECK(majority_vote(votes_of(2, 2, 0)) == NonSig);
    CHECK(majority_vote(votes_of(2, 1, 1)) == No);  // one NonSig raised to Sig: verdict drops
    CHECK(majority_vote(votes_of(1, 2, 2)) == Sig);
    CHECK(majority_vote(votes_of(0, 3, 2)) == NonSig);  // the No raised to NonSig: verdict drops

    // What does hold: raising a vote into the winning class keeps the verdict,
    // and appending a vote at or above the verdict never lowers it.
    std::mt19937_64 rng(5);
    for (int it = 0; it < 5000; ++it) {
        std::vector<StenosisClass> votes(1 + rng() % 30);
        for (auto& v : votes) v = static_cast<StenosisClass>(rng() % 3);
        const auto before = majority_vote(votes);

        auto raised = votes;
        auto& target = raised[rng() % raised.size()];
        if (static_cast<int>(target) < static_cast<int>(before)) {
            target = before;
            CHECK(majority_vote(raised) == before);
        }

        auto appended = votes;
        const int extra = static_cast<int>(before) + static_cast<int>(rng() % (3 - static_cast<int>(before)));
        appended.push_back(static_cast<StenosisClass>(extra));
        CHECK(static_cast<int>(majority_vote(appended)) >= static_cast<int>(before));
    }
}

TEST_CASE("max_aggregate: basics and fold/idempotence/commutativity laws") {
    CHECK(max_aggregate({No, No, No}) == No);
    CHECK(max_aggregate({No, Sig, NonSig}) == Sig);
    CHECK_THROWS_AS(max_aggregate({}), ArgumentError);

    std::mt19937_64 rng(7);
    for (int it = 0; it < 3000; ++it) {
        std::vector<StenosisClass> classes(1 + rng() % 20);
        for (auto& c : classes) c = static_cast<StenosisClass>(rng() % 3);
        const auto direct = max_aggregate(classes);
        CHECK(direct == bf_max(classes));
        // fold equivalence
        StenosisClass fold = classes[0];
        for (auto c : classes) fold = max_aggregate({fold, c});
        CHECK(fold == direct);
        // idempotence and commutativity
        CHECK(max_aggregate({direct, direct}) == direct);
        auto shuffled = classes;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(max_aggregate(shuffled) == direct);
        // associativity across a random split
        if (classes.size() >= 2) {
            const std::size_t cut = 1 + rng() % (classes.size() - 1);
            std::vector<StenosisClass> left(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(cut));
            std::vector<StenosisClass> right(classes.begin() + static_cast<std::ptrdiff_t>(cut), classes.end());
            CHECK(max_aggregate({max_aggregate(left), max_aggregate(right)}) == direct);
        }
    }
}

TEST_CASE("weighted F1: the frozen hand case evaluates to exactly 0.75") {
    const std::vector<Pair> pairs{{No, No}, {No, NonSig}, {NonSig, NonSig}, {Sig, Sig}};
    auto m = cass::compute_metrics(pairs);
    CHECK(std::abs(m.per_class_f1[0] - 2.0 / 3.0) < 1e-12);
    CHECK(std::abs(m.per_class_f1[1] - 2.0 / 3.0) < 1e-12);
    CHECK(std::abs(m.per_class_f1[2] - 1.0) < 1e-12);
    CHECK(std::abs(m.weighted_f1 - 0.75) < 1e-12);
    CHECK(m.support == std::array<std::int64_t, 3>{2, 1, 1});
}

TEST_CASE("metrics: perfect predictions give identity confusion and unit scores") {
    std::vector<Pair> pairs{{No, No}, {NonSig, NonSig}, {Sig, Sig}, {Sig, Sig}, {No, No}};
    auto m = cass::compute_metrics(pairs);
    CHECK(m.accuracy == 1.0);
    CHECK(m.weighted_f1 == doctest::Approx(1.0).epsilon(1e-12));
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            CHECK(m.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ==
                  (i == j ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("metrics: absent class carries zero weight; rows sum to one; trace equals accuracy") {
    std::mt19937_64 rng(11);
    for (int it = 0; it < 500; ++it) {
        std::vector<Pair> pairs(1 + rng() % 40);
        for (auto& p : pairs) {
            p.first = static_cast<StenosisClass>(rng() % 2);  // class 2 absent from truths
            p.second = static_cast<StenosisClass>(rng() % 3);
        }
        auto m = cass::compute_metrics(pairs);
        double weighted = 0.0;
        double trace = 0.0;
        for (int i = 0; i < 3; ++i) {
            const auto sup = m.support[static_cast<std::size_t>(i)];
            double row = 0.0;
            for (int j = 0; j < 3; ++j) row += m.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            if (sup > 0) {
                CHECK(std::abs(row - 1.0) < 1e-9);
            } else {
                CHECK(row == 0.0);
            }
            weighted += m.per_class_f1[static_cast<std::size_t>(i)] *
                        static_cast<double>(sup) / static_cast<double>(pairs.size());
            trace += m.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] *
                     static_cast<double>(sup) / static_cast<double>(pairs.size());
        }
        CHECK(m.support[2] == 0);
        CHECK(std::abs(m.weighted_f1 - weighted) < 1e-12);
        CHECK(std::abs(trace - m.accuracy) < 1e-9);
    }
}

TEST_CASE("evaluate: hand-traced two-branch hierarchy") {
    TruthMap truths;
    truths["patient_000"]["LAD"] = No;
    truths["patient_000"]["D-1"] = Sig;

    std::vector<ViewPrediction> views;
    for (int v = 0; v < 50; ++v) {
        views.push_back({"patient_000", "LAD", "LAD", v, {1, 0, 0}, No});
        views.push_back({"patient_000", "LAD", "D-1", v, {0, 1, 0}, v < 30 ? NonSig : No});
    }
    std::map<Level, cass::LevelResult> pairs;
    auto metrics = cass::evaluate(views, truths, &pairs);

    // segment: (No,No) correct, (Sig,NonSig) wrong
    CHECK(metrics[Level::Segment].accuracy == doctest::Approx(0.5));
    // single artery: truth max(No,Sig)=Sig, prediction max(No,NonSig)=NonSig
    REQUIRE(pairs[Level::Artery].pairs.size() == 1);
    CHECK(pairs[Level::Artery].pairs[0] == Pair{Sig, NonSig});
    REQUIRE(pairs[Level::Patient].pairs.size() == 1);
    CHECK(pairs[Level::Patient].pairs[0] == Pair{Sig, NonSig});
    CHECK(metrics[Level::Patient].accuracy == 0.0);
}

TEST_CASE("evaluate: matches the brute-force evaluator on 1000 random hierarchies") {
    std::mt19937_64 rng(13);
    for (int it = 0; it < 1000; ++it) {
        BfHierarchy tree;
        TruthMap truths;
        std::vector<ViewPrediction> views;
        const int patients = 1 + static_cast<int>(rng() % 10);
        for (int p = 0; p < patients; ++p) {
            const std::string pid = "p" + std::to_string(p);
            const int arteries = 1 + static_cast<int>(rng() % 3);
            for (int a = 0; a < arteries; ++a) {
                const std::string aid = "A" + std::to_string(a);
                const int branches = 1 + static_cast<int>(rng() % 4);
                for (int b = 0; b < branches; ++b) {
                    const std::string bid = aid + "-b" + std::to_string(b);
                    BfBranch br;
                    br.truth = static_cast<StenosisClass>(rng() % 3);
                    const int nviews = 1 + static_cast<int>(rng() % 12);
                    for (int v = 0; v < nviews; ++v) {
                        const auto vote = static_cast<StenosisClass>(rng() % 3);
                        br.votes.push_back(vote);
                        std::array<double, 3> probs{0.1, 0.1, 0.1};
                        probs[static_cast<std::size_t>(vote)] = 0.8;
                        views.push_back({pid, aid, bid, v, probs, vote});
                    }
                    truths[pid][bid] = br.truth;
                    tree[pid][aid][bid] = std::move(br);
                }
            }
        }
        auto metrics = cass::evaluate(views, truths);
        std::vector<Pair> seg, art, pat;
        bf_evaluate(tree, seg, art, pat);
        check_close(metrics[Level::Segment], bf_metrics(seg));
        check_close(metrics[Level::Artery], bf_metrics(art));
        check_close(metrics[Level::Patient], bf_metrics(pat));
    }
}

TEST_CASE("evaluate: raising one branch verdict never lowers artery or patient verdicts") {
    std::mt19937_64 rng(17);
    for (int it = 0; it < 1000; ++it) {
        std::vector<StenosisClass> branch_preds(1 + rng() % 6);
        for (auto& c : branch_preds) c = static_cast<StenosisClass>(rng() % 3);
        const auto before = max_aggregate(branch_preds);
        auto& target = branch_preds[rng() % branch_preds.size()];
        if (static_cast<int>(target) < 2) {
            target = static_cast<StenosisClass>(static_cast<int>(target) + 1);
        }
        CHECK(static_cast<int>(max_aggregate(branch_preds)) >= static_cast<int>(before));
    }
}

TEST_CASE("evaluate: predictions without a matching truth are a consistency error") {
    TruthMap truths;
    truths["patient_000"]["LAD"] = No;
    std::vector<ViewPrediction> views{{"patient_000", "LAD", "D-1", 0, {1, 0, 0}, No}};
    CHECK_THROWS_AS(cass::evaluate(views, truths), ConsistencyError);
    CHECK_THROWS_AS(cass::evaluate({}, truths), ArgumentError);
    std::vector<ViewPrediction> unknown{{"patient_xyz", "LAD", "LAD", 0, {1, 0, 0}, No}};
    CHECK_THROWS_AS(cass::evaluate(unknown, truths), ConsistencyError);
}

TEST_CASE("predictions: JSON round trip validates probability rows") {
    std::vector<ViewPrediction> views{
        {"patient_001", "LAD", "D-1", 3, {0.2, 0.5, 0.3}, NonSig},
        {"patient_001", "RCA", "RCA", 0, {0.9, 0.05, 0.05}, No},
    };
    auto j = cass::predictions_to_json(views);
    auto back = cass::predictions_from_json(j);
    REQUIRE(back.size() == 2);
    CHECK(back[0].patient == "patient_001");
    CHECK(back[0].predicted == NonSig);
    CHECK(back[1].predicted == No);
    CHECK(back[0].probs == views[0].probs);

    j[0]["probs"] = {0.5, 0.5, 0.5};
    CHECK_THROWS_AS(cass::predictions_from_json(j), cass::FormatError);
}

TEST_CASE("argmax ties break toward the more severe class") {
    CHECK(cass::argmax_class({0.4, 0.4, 0.2}) == NonSig);
    CHECK(cass::argmax_class({1.0 / 3, 1.0 / 3, 1.0 / 3}) == Sig);
    CHECK(cass::argmax_class({0.6, 0.2, 0.2}) == No);
}

TEST_CASE("truths: manifest and label-set JSON forms both load") {
    nlohmann::json manifest = {
        {"patients",
         {{{"id", "patient_000"},
           {"arteries",
            {{{"name", "LAD"},
              {"branches",
               {{{"section", "LAD"}, {"class", 2}, {"severity", 80}},
                {{"section", "D-1"}, {"class", 0}, {"severity", 0}}}}}}}}}}};
    auto t1 = cass::truths_from_json(manifest);
    CHECK(t1.at("patient_000").at("LAD") == Sig);
    CHECK(t1.at("patient_000").at("D-1") == No);

    nlohmann::json labels = nlohmann::json::array();
    labels.push_back(cass::label_set_to_json(cass::parse_report("Report for patient_001. LAD: 30% stenosis.")));
    auto t2 = cass::truths_from_json(labels);
    CHECK(t2.at("patient_001").at("LAD") == NonSig);
}
