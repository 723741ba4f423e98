// cass — synthetic coronary MPR pipeline: dataset generation, training,
// lr search, prediction, hierarchical evaluation, attribution and report
// parsing. Every subcommand is reproducible under --seed with --threads 1
// and writes a config echo next to its outputs.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <typeinfo>

#include "CLI11.hpp"
#include "json.hpp"

#include "cass/attribution.hpp"
#include "cass/common.hpp"
#include "cass/dataset.hpp"
#include "cass/eval.hpp"
#include "cass/image_io.hpp"
#include "cass/model.hpp"
#include "cass/optimizer.hpp"
#include "cass/report_parser.hpp"
#include "cass/synthgen.hpp"
#include "cass/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw cass::FormatError("cannot open " + path.string() + " for writing");
    out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw cass::FormatError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw cass::FormatError(path + ": bad JSON: " + std::string(e.what()));
    }
    return j;
}

void echo_config(const std::string& out_dir, const std::string& command, const json& flags) {
    json echo{{"command", command}, {"flags", flags}};
    write_json(fs::path(out_dir) / "config_echo.json", echo);
}

const char* error_kind(const std::exception& e) {
    if (dynamic_cast<const cass::DimensionError*>(&e)) return "dimension";
    if (dynamic_cast<const cass::DomainError*>(&e)) return "domain";
    if (dynamic_cast<const cass::FormatError*>(&e)) return "format";
    if (dynamic_cast<const cass::ArgumentError*>(&e)) return "argument";
    if (dynamic_cast<const cass::ConsistencyError*>(&e)) return "consistency";
    if (dynamic_cast<const cass::OptimizerError*>(&e)) return "optimizer";
    if (dynamic_cast<const cass::RangeError*>(&e)) return "range";
    if (dynamic_cast<const cass::InpaintError*>(&e)) return "inpaint";
    if (dynamic_cast<const cass::ParseError*>(&e)) return "parse";
    if (dynamic_cast<const cass::Error*>(&e)) return "error";
    return "internal";
}

std::vector<cass::Sample<float>> to_samples(const std::vector<cass::DatasetImage>& images) {
    std::vector<cass::Sample<float>> samples;
    samples.reserve(images.size());
    for (const auto& img : images) {
        cass::Sample<float> s;
        s.image = cass::to_tensor(img.image);
        s.label = img.label;
        samples.push_back(std::move(s));
    }
    return samples;
}

std::vector<cass::Batch<float>> to_batches(const std::vector<cass::Sample<float>>& samples,
                                           int batch_size) {
    std::vector<cass::Batch<float>> batches;
    std::size_t pos = 0;
    while (pos < samples.size()) {
        const int take = static_cast<int>(
            std::min<std::size_t>(static_cast<std::size_t>(batch_size), samples.size() - pos));
        cass::Batch<float> b;
        const auto& shape = samples[pos].image.shape;
        b.images = cass::Tensor(take, shape[1], shape[2], shape[3]);
        for (int i = 0; i < take; ++i) {
            const auto& s = samples[pos++];
            std::copy(s.image.data.begin(), s.image.data.end(),
                      b.images.data.begin() + static_cast<std::ptrdiff_t>(b.images.index(i, 0, 0, 0)));
            b.labels.push_back(s.label);
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

// ---------------------------------------------------------------------------

int cmd_generate(const std::string& out, int patients, std::uint64_t seed, int views, int size,
                 bool no_text, bool no_masks, bool no_reports, double visible_fraction,
                 double distractor_prob, bool calcified) {
    cass::GenConfig cfg;
    cfg.patients = patients;
    cfg.seed = seed;
    cfg.views_per_branch = views;
    cfg.image_size = size;
    cfg.text_overlay = !no_text;
    cfg.emit_masks = !no_masks;
    cfg.emit_reports = !no_reports;
    cfg.visible_view_fraction = visible_fraction;
    cfg.distractor_branch_prob = distractor_prob;
    cfg.calcified_distractors = calcified;

    const auto summary = cass::generate_dataset(cfg, out);
    echo_config(out, "generate", cfg.to_json());
    std::cout << json{{"patients", summary.patients},
                      {"branches", summary.branches},
                      {"images", summary.images},
                      {"out", out}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_train(const std::string& data, const std::string& out, int epochs, double lr,
              int micro_batch, int accum, std::uint64_t seed, int threads, bool balance,
              bool no_augment, bool no_clean, bool no_transpose) {
    cass::set_max_threads(threads);
    const auto manifest = cass::load_manifest(data);
    auto images = cass::load_dataset_images(data, !no_clean);
    auto samples = to_samples(images);
    images.clear();

    cass::ModelConfig mcfg = cass::ModelConfig::desk_default();
    mcfg.in_h = manifest.image_size;
    mcfg.in_w = manifest.image_size;
    mcfg.seed = seed;
    cass::ModelT<float> model(mcfg);

    cass::TrainConfig tcfg;
    tcfg.learning_rate = lr;
    tcfg.epochs = epochs;
    tcfg.micro_batch = micro_batch;
    tcfg.accumulation_steps = accum;
    tcfg.seed = seed;
    tcfg.balance = balance;
    tcfg.augment_enabled = !no_augment;
    tcfg.augment.transpose = !no_transpose;

    const auto t0 = std::chrono::steady_clock::now();
    auto log = cass::train(model, samples, tcfg);
    const auto secs =
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::steady_clock::now() - t0);

    fs::create_directories(out);
    const std::string weights_path = (fs::path(out) / "model.cassw1").string();
    cass::save_weights(model, weights_path);
    write_text(fs::path(out) / "trainlog.jsonl", cass::to_jsonl(log));
    echo_config(out, "train",
                json{{"data", data},
                     {"epochs", epochs},
                     {"lr", lr},
                     {"micro_batch", micro_batch},
                     {"accumulation_steps", accum},
                     {"seed", seed},
                     {"threads", threads},
                     {"balance", balance},
                     {"augment", !no_augment},
                     {"clean", !no_clean},
                     {"model", mcfg.to_json()}});
    std::cout << json{{"weights", weights_path},
                      {"epochs", epochs},
                      {"final_loss", log.epochs.back().loss},
                      {"final_acc", log.epochs.back().acc},
                      {"seconds", secs.count()}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_lr_find(const std::string& data, const std::string& out, double lr_lo, double lr_hi,
                int iterations, int micro_batch, std::uint64_t seed, int threads) {
    cass::set_max_threads(threads);
    const auto manifest = cass::load_manifest(data);
    auto samples = to_samples(cass::load_dataset_images(data, true));
    std::mt19937_64 rng(seed);
    std::shuffle(samples.begin(), samples.end(), rng);
    auto batches = to_batches(samples, micro_batch);

    cass::ModelConfig mcfg = cass::ModelConfig::desk_default();
    mcfg.in_h = manifest.image_size;
    mcfg.in_w = manifest.image_size;
    mcfg.seed = seed;
    cass::ModelT<float> model(mcfg);

    cass::ModelLrProblem<float> problem(model, batches);
    auto res = cass::lr_range_test(problem, lr_lo, lr_hi, iterations);

    fs::create_directories(out);
    write_json(fs::path(out) / "lr_range.json", json{{"lrs", res.lrs},
                                                     {"losses", res.losses},
                                                     {"suggested_min", res.suggested_min},
                                                     {"suggested_max", res.suggested_max}});
    std::string csv = "lr,smoothed_loss\n";
    for (std::size_t i = 0; i < res.lrs.size(); ++i) {
        csv += std::to_string(res.lrs[i]) + "," + std::to_string(res.losses[i]) + "\n";
    }
    write_text(fs::path(out) / "lr_curve.csv", csv);
    echo_config(out, "lr-find",
                json{{"data", data},
                     {"lr_lo", lr_lo},
                     {"lr_hi", lr_hi},
                     {"iterations", iterations},
                     {"micro_batch", micro_batch},
                     {"seed", seed},
                     {"threads", threads}});
    std::cout << json{{"suggested_min", res.suggested_min}, {"suggested_max", res.suggested_max}}.dump()
              << "\n";
    return 0;
}

int cmd_predict(const std::string& weights, const std::string& data, const std::string& out,
                int batch, int threads, bool no_clean) {
    cass::set_max_threads(threads);
    auto model = cass::load_weights<float>(weights);
    const auto images = cass::load_dataset_images(data, !no_clean);
    if (images.empty()) throw cass::ArgumentError("predict: dataset has no images");
    if (images[0].image.h != model.config().in_h || images[0].image.w != model.config().in_w) {
        throw cass::DimensionError("predict: dataset images are " + std::to_string(images[0].image.h) +
                                   "x" + std::to_string(images[0].image.w) + ", model expects " +
                                   std::to_string(model.config().in_h) + "x" +
                                   std::to_string(model.config().in_w));
    }

    std::vector<cass::ViewPrediction> predictions;
    predictions.reserve(images.size());
    std::size_t pos = 0;
    while (pos < images.size()) {
        const int take = static_cast<int>(
            std::min<std::size_t>(static_cast<std::size_t>(batch), images.size() - pos));
        cass::Tensor input(take, 1, model.config().in_h, model.config().in_w);
        for (int i = 0; i < take; ++i) {
            const auto& img = images[pos + static_cast<std::size_t>(i)].image;
            std::copy(img.px.begin(), img.px.end(),
                      input.data.begin() + static_cast<std::ptrdiff_t>(input.index(i, 0, 0, 0)));
        }
        auto logits = model.forward(input, cass::ops::BnMode::Eval);
        for (int i = 0; i < take; ++i) {
            const auto& src = images[pos + static_cast<std::size_t>(i)];
            double mx = logits.at(i, 0, 0, 0);
            for (int k = 1; k < 3; ++k) mx = std::max(mx, static_cast<double>(logits.at(i, k, 0, 0)));
            double denom = 0.0;
            std::array<double, 3> probs{};
            for (int k = 0; k < 3; ++k) {
                probs[static_cast<std::size_t>(k)] =
                    std::exp(static_cast<double>(logits.at(i, k, 0, 0)) - mx);
                denom += probs[static_cast<std::size_t>(k)];
            }
            for (auto& p : probs) p /= denom;
            cass::ViewPrediction vp;
            vp.patient = src.patient;
            vp.artery = src.artery;
            vp.branch = src.section;
            vp.view = src.view;
            vp.probs = probs;
            vp.predicted = cass::argmax_class(probs);
            predictions.push_back(std::move(vp));
        }
        pos += static_cast<std::size_t>(take);
    }

    fs::create_directories(out);
    write_json(fs::path(out) / "predictions.json", cass::predictions_to_json(predictions));
    echo_config(out, "predict",
                json{{"weights", weights},
                     {"data", data},
                     {"batch", batch},
                     {"threads", threads},
                     {"clean", !no_clean}});
    std::cout << json{{"predictions", predictions.size()},
                      {"out", (fs::path(out) / "predictions.json").string()}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_evaluate(const std::string& predictions_path, const std::string& labels_path,
                 const std::string& out, bool csv) {
    const auto views = cass::predictions_from_json(read_json(predictions_path));
    const auto truths = cass::truths_from_json(read_json(labels_path));
    auto metrics = cass::evaluate(views, truths);

    json combined;
    for (const auto& [level, report] : metrics) {
        combined[cass::level_name(level)] = cass::metrics_to_json(report);
    }
    fs::create_directories(out);
    write_json(fs::path(out) / "metrics.json", combined);
    if (csv) {
        for (const auto& [level, report] : metrics) {
            write_text(fs::path(out) / ("confusion_" + cass::level_name(level) + ".csv"),
                       cass::confusion_csv(report));
        }
    }
    echo_config(out, "evaluate",
                json{{"predictions", predictions_path}, {"labels", labels_path}, {"csv", csv}});
    std::cout << combined.dump() << "\n";
    return 0;
}

int cmd_attribute(const std::string& weights, const std::string& image_path, int target,
                  const std::string& out, int steps, double baseline_value) {
    auto model = cass::load_weights<float>(weights);
    cass::RawMprImage raw;
    raw.pixels = cass::read_pgm(image_path);
    raw.branch_id = fs::path(image_path).stem().string();
    auto clean = cass::preprocess(raw);
    if (clean.h != model.config().in_h || clean.w != model.config().in_w) {
        throw cass::DimensionError("attribute: image is " + std::to_string(clean.h) + "x" +
                                   std::to_string(clean.w) + ", model expects " +
                                   std::to_string(model.config().in_h) + "x" +
                                   std::to_string(model.config().in_w));
    }
    auto input = cass::to_tensor(clean);
    cass::Tensor baseline(1, 1, clean.h, clean.w, static_cast<float>(baseline_value));
    auto target_fn = cass::logit_target(model, target);
    auto map = cass::integrated_gradients<float>(target_fn, input, baseline, target, steps);
    map.baseline_desc = baseline_value == 0.0 ? "zero" : std::to_string(baseline_value);

    fs::create_directories(out);
    auto heatmap = cass::render_heatmap(map, clean);
    cass::write_png_rgb((fs::path(out) / "heatmap.png").string(), heatmap.h, heatmap.w, heatmap.rgb);
    cass::write_attribution_binary(map, (fs::path(out) / "attribution.bin").string());
    const json info{{"target_class", map.target_class},
                    {"steps", map.steps},
                    {"baseline", map.baseline_desc},
                    {"completeness_gap", map.completeness_gap},
                    {"output_delta", map.output_delta}};
    write_json(fs::path(out) / "attribution.json", info);
    echo_config(out, "attribute",
                json{{"weights", weights},
                     {"image", image_path},
                     {"target", target},
                     {"steps", steps},
                     {"baseline_value", baseline_value}});
    std::cout << info.dump() << "\n";
    return 0;
}

int cmd_parse_report(const std::string& input, const std::string& out, bool fifty_significant,
                     bool midpoint) {
    cass::ClassifyOptions opts;
    opts.fifty_is_significant = fifty_significant;
    opts.interval_midpoint = midpoint;

    auto parse_file = [&](const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw cass::FormatError("cannot open " + path.string());
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return cass::parse_report(text, opts);
    };

    json result;
    if (fs::is_directory(input)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(input)) {
            if (e.path().extension() == ".txt") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        result = json::array();
        for (const auto& f : files) result.push_back(cass::label_set_to_json(parse_file(f)));
    } else {
        result = cass::label_set_to_json(parse_file(input));
    }
    std::cout << result.dump() << "\n";
    if (!out.empty()) {
        fs::create_directories(out);
        write_json(fs::path(out) / "labels.json", result);
        echo_config(out, "parse-report",
                    json{{"input", input},
                         {"fifty_is_significant", fifty_significant},
                         {"interval_midpoint", midpoint}});
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coronary stenosis MPR pipeline"};
    app.require_subcommand(1);

    // generate
    std::string g_out;
    int g_patients = 10, g_views = 50, g_size = 64;
    std::uint64_t g_seed = 1;
    bool g_no_text = false, g_no_masks = false, g_no_reports = false, g_calcified = false;
    double g_visible = 0.8, g_distractor = 0.0;
    auto* generate = app.add_subcommand("generate", "render a labeled synthetic dataset");
    generate->add_option("--out", g_out, "output directory")->required();
    generate->add_option("--patients", g_patients, "number of patients");
    generate->add_option("--seed", g_seed, "generator seed");
    generate->add_option("--views", g_views, "views per branch");
    generate->add_option("--size", g_size, "image size in pixels");
    generate->add_flag("--no-text", g_no_text, "skip the burned-in text overlay");
    generate->add_flag("--no-masks", g_no_masks, "skip ground-truth mask images");
    generate->add_flag("--no-reports", g_no_reports, "skip rendered text reports");
    generate->add_option("--visible-fraction", g_visible, "fraction of views showing the stenosis");
    generate->add_option("--distractor-prob", g_distractor, "chance of a second vessel per branch");
    generate->add_flag("--calcified-distractor", g_calcified, "add bright off-vessel blobs");

    // train
    std::string t_data, t_out;
    int t_epochs = 10, t_micro = 16, t_accum = 1, t_threads = 1;
    double t_lr = 1e-4;
    std::uint64_t t_seed = 1;
    bool t_balance = false, t_no_augment = false, t_no_clean = false, t_no_transpose = false;
    auto* train = app.add_subcommand("train", "train the classifier on a generated dataset");
    train->add_option("--data", t_data, "dataset directory")->required();
    train->add_option("--out", t_out, "output directory")->required();
    train->add_option("--epochs", t_epochs, "training epochs");
    train->add_option("--lr", t_lr, "learning rate");
    train->add_option("--micro-batch", t_micro, "micro-batch size");
    train->add_option("--accum", t_accum, "gradient accumulation steps");
    train->add_option("--seed", t_seed, "training seed");
    train->add_option("--threads", t_threads, "worker threads");
    train->add_flag("--balance", t_balance, "duplicate minority-class samples");
    train->add_flag("--no-augment", t_no_augment, "disable augmentation");
    train->add_flag("--no-clean-train", t_no_clean, "train on raw images without text removal");
    train->add_flag("--no-transpose", t_no_transpose, "disable the transpose augmentation");

    // lr-find
    std::string f_data, f_out;
    double f_lo = 1e-6, f_hi = 1e-1;
    int f_iters = 100, f_micro = 16, f_threads = 1;
    std::uint64_t f_seed = 1;
    auto* lrfind = app.add_subcommand("lr-find", "sweep learning rates and suggest bounds");
    lrfind->add_option("--data", f_data, "dataset directory")->required();
    lrfind->add_option("--out", f_out, "output directory")->required();
    lrfind->add_option("--lr-lo", f_lo, "sweep start");
    lrfind->add_option("--lr-hi", f_hi, "sweep end");
    lrfind->add_option("--iterations", f_iters, "sweep iterations");
    lrfind->add_option("--micro-batch", f_micro, "micro-batch size");
    lrfind->add_option("--seed", f_seed, "seed");
    lrfind->add_option("--threads", f_threads, "worker threads");

    // predict
    std::string p_weights, p_data, p_out;
    int p_batch = 64, p_threads = 1;
    bool p_no_clean = false;
    auto* predict = app.add_subcommand("predict", "per-view class probabilities for a dataset");
    predict->add_option("--weights", p_weights, "CASS-W1 weight file")->required();
    predict->add_option("--data", p_data, "dataset directory")->required();
    predict->add_option("--out", p_out, "output directory")->required();
    predict->add_option("--batch", p_batch, "inference batch size");
    predict->add_option("--threads", p_threads, "worker threads");
    predict->add_flag("--no-clean", p_no_clean, "skip text removal before inference");

    // evaluate
    std::string e_pred, e_labels, e_out;
    bool e_csv = false;
    auto* evaluate = app.add_subcommand("evaluate", "hierarchical metrics from predictions + labels");
    evaluate->add_option("--predictions", e_pred, "predictions.json")->required();
    evaluate->add_option("--labels", e_labels, "manifest.json or parsed labels JSON")->required();
    evaluate->add_option("--out", e_out, "output directory")->required();
    evaluate->add_flag("--csv", e_csv, "also write confusion matrices as CSV");

    // attribute
    std::string a_weights, a_image, a_out;
    int a_target = 2, a_steps = 50;
    double a_baseline = 0.0;
    auto* attribute = app.add_subcommand("attribute", "integrated-gradients heatmap for one image");
    attribute->add_option("--weights", a_weights, "CASS-W1 weight file")->required();
    attribute->add_option("--image", a_image, "input PGM image")->required();
    attribute->add_option("--target", a_target, "class whose logit is attributed (0|1|2)")
        ->check(CLI::Range(0, 2));
    attribute->add_option("--out", a_out, "output directory")->required();
    attribute->add_option("--steps", a_steps, "Riemann steps");
    attribute->add_option("--baseline-value", a_baseline, "constant baseline intensity in [0,1]");

    // parse-report
    std::string r_input, r_out;
    bool r_fifty = false, r_midpoint = false;
    auto* parse = app.add_subcommand("parse-report", "extract branch labels from report text");
    parse->add_option("--input", r_input, "report .txt file or directory of them")->required();
    parse->add_option("--out", r_out, "optional output directory");
    parse->add_flag("--fifty-is-significant", r_fifty, "grade exactly 50% as significant");
    parse->add_flag("--interval-midpoint", r_midpoint, "classify intervals by midpoint");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) {
            return cmd_generate(g_out, g_patients, g_seed, g_views, g_size, g_no_text, g_no_masks,
                                g_no_reports, g_visible, g_distractor, g_calcified);
        }
        if (train->parsed()) {
            return cmd_train(t_data, t_out, t_epochs, t_lr, t_micro, t_accum, t_seed, t_threads,
                             t_balance, t_no_augment, t_no_clean, t_no_transpose);
        }
        if (lrfind->parsed()) {
            return cmd_lr_find(f_data, f_out, f_lo, f_hi, f_iters, f_micro, f_seed, f_threads);
        }
        if (predict->parsed()) {
            return cmd_predict(p_weights, p_data, p_out, p_batch, p_threads, p_no_clean);
        }
        if (evaluate->parsed()) return cmd_evaluate(e_pred, e_labels, e_out, e_csv);
        if (attribute->parsed()) {
            return cmd_attribute(a_weights, a_image, a_target, a_out, a_steps, a_baseline);
        }
        if (parse->parsed()) return cmd_parse_report(r_input, r_out, r_fifty, r_midpoint);
    } catch (const std::exception& e) {
        std::cerr << json{{"error", error_kind(e)}, {"message", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}
