// maskfuse command-line interface: synthetic data generation, training,
// stratified cross-validation, checkpoint evaluation and gradient checking.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
// failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "maskfuse/maskfuse.hpp"

namespace {

using namespace maskfuse;

constexpr const char* kConfigKeys[] = {
    "epochs", "lr",         "batch_size", "seed",  "gamma",       "acb_enabled",
    "aff_enabled", "k",     "d",          "S",     "r",           "hidden",
    "separation",  "noise", "counts",     "informative",
};

nlohmann::json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("missing config file: " + path);
    }
    nlohmann::json config;
    try {
        in >> config;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed config " + path + ": " + e.what());
    }
    if (!config.is_object()) {
        throw DataError("config " + path + " must be a JSON object");
    }
    for (const auto& [key, value] : config.items()) {
        bool known = false;
        for (const char* allowed : kConfigKeys) known = known || key == allowed;
        if (!known) {
            throw DataError("config " + path + " has unknown key \"" + key + "\"");
        }
    }
    return config;
}

/// Flag > config file > built-in default.
template <typename T>
void apply(const CLI::Option* flag, const nlohmann::json& config, const char* key, T& value) {
    if (flag != nullptr && flag->count() > 0) {
        return; // CLI11 already wrote the flag value
    }
    if (config.contains(key)) {
        try {
            value = config.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("config key \"") + key + "\": " + e.what());
        }
    }
}

std::array<bool, kNumEmotions> parse_informative(const std::string& mask) {
    if (mask.size() != kNumEmotions) {
        throw DataError("informative mask must have exactly 6 characters of 0/1, got \"" + mask +
                        "\"");
    }
    std::array<bool, kNumEmotions> out{};
    for (std::size_t i = 0; i < kNumEmotions; ++i) {
        if (mask[i] != '0' && mask[i] != '1') {
            throw DataError("informative mask must contain only 0/1, got \"" + mask + "\"");
        }
        out[i] = mask[i] == '1';
    }
    return out;
}

std::size_t fold_thread_cap(std::size_t k) {
    std::size_t cap = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("MASKFUSE_THREADS")) {
        char* end = nullptr;
        const unsigned long parsed = std::strtoul(env, &end, 10);
        if (end != env && *end == '\0' && parsed >= 1) {
            cap = parsed;
        }
    }
    return std::min(cap, k);
}

/// Datasets arrive either as a manifest.json + feature files or, for S=1
/// data, as a single CSV table.
Dataset load_any_dataset(const std::string& path) {
    if (path.size() >= 4 && path.ends_with(".csv")) {
        return load_csv(path);
    }
    return load_dataset(path);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot open " + path.string() + " for writing");
    }
    out << text;
    if (!out) {
        throw DataError("I/O failure while writing " + path.string());
    }
}

std::string render_history(const TrainHistory& history) {
    // Wall time is deliberately left out so the artifact is byte-identical
    // across runs with the same seed.
    std::string out = "{\n  \"epoch_loss\": [";
    for (std::size_t i = 0; i < history.epoch_loss.size(); ++i) {
        if (i > 0) out += ", ";
        char buffer[32];
        std::snprintf(buffer, sizeof(buffer), "%.17g", history.epoch_loss[i]);
        out += buffer;
    }
    out += "],\n  \"clamp_events\": " + std::to_string(history.clamp_events) + "\n}\n";
    return out;
}

std::string render_cv_report(const CvResult& result, std::size_t k) {
    std::string out = "{\n\"k\": " + std::to_string(k) + ",\n\"folds\": [\n";
    for (std::size_t f = 0; f < result.folds.size(); ++f) {
        out += report_to_json(result.folds[f]);
        if (f + 1 < result.folds.size()) out += ",";
        out += "\n";
    }
    out += "],\n\"mean\": " + report_to_json(result.mean) + "\n}\n";
    return out;
}

struct SharedTrainFlags {
    TrainConfig train;
    std::size_t r = 16;
    std::size_t hidden = 128;
    bool no_acb = false;
    bool no_aff = false;
    CLI::Option* opt_epochs = nullptr;
    CLI::Option* opt_lr = nullptr;
    CLI::Option* opt_batch = nullptr;
    CLI::Option* opt_seed = nullptr;
    CLI::Option* opt_gamma = nullptr;
    CLI::Option* opt_r = nullptr;
    CLI::Option* opt_hidden = nullptr;
    CLI::Option* opt_no_acb = nullptr;
    CLI::Option* opt_no_aff = nullptr;

    void add_to(CLI::App* cmd) {
        opt_epochs = cmd->add_option("--epochs", train.epochs, "Training epochs");
        opt_lr = cmd->add_option("--lr", train.lr, "Adam learning rate");
        opt_batch = cmd->add_option("--batch-size", train.batch_size, "Mini-batch size");
        opt_seed = cmd->add_option("--seed", train.seed, "Run seed");
        opt_gamma = cmd->add_option("--gamma", train.gamma, "Focal focusing parameter");
        opt_r = cmd->add_option("--r", r, "Attention reduction ratio");
        opt_hidden = cmd->add_option("--hidden", hidden, "Classifier hidden width");
        opt_no_acb = cmd->add_flag("--no-acb", no_acb,
                                   "Disable adaptive class balancing (plain cross-entropy)");
        opt_no_aff = cmd->add_flag("--no-aff", no_aff,
                                   "Disable attention-based feature fusion");
    }

    void resolve(const nlohmann::json& config) {
        apply(opt_epochs, config, "epochs", train.epochs);
        apply(opt_lr, config, "lr", train.lr);
        apply(opt_batch, config, "batch_size", train.batch_size);
        apply(opt_seed, config, "seed", train.seed);
        apply(opt_gamma, config, "gamma", train.gamma);
        apply(opt_r, config, "r", r);
        apply(opt_hidden, config, "hidden", hidden);
        if (opt_no_acb->count() > 0) {
            train.acb_enabled = false;
        } else if (config.contains("acb_enabled")) {
            train.acb_enabled = config.at("acb_enabled").get<bool>();
        }
        if (opt_no_aff->count() > 0) {
            train.aff_enabled = false;
        } else if (config.contains("aff_enabled")) {
            train.aff_enabled = config.at("aff_enabled").get<bool>();
        }
    }

    ArchConfig arch_for(const Dataset& dataset) const {
        ArchConfig arch;
        arch.d = dataset.d;
        arch.S = dataset.S;
        arch.r = std::min(r, kNumEmotions * dataset.d); // keep 1 <= r <= 6d
        arch.h = hidden;
        arch.aff_enabled = train.aff_enabled;
        arch.validate();
        return arch;
    }
};

int run(int argc, char** argv) {
    CLI::App app{"PD severity diagnosis head: attention feature fusion + adaptive class "
                 "balancing"};
    app.require_subcommand(1);
    // Let --config (a parent option) appear after the subcommand name.
    app.fallthrough();
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (flags override its values)")
        ->check(CLI::ExistingFile);

    // --- synth ---------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate a synthetic imbalanced dataset");
    std::string synth_out = "dataset";
    std::vector<std::int64_t> counts = {100, 100, 100};
    SyntheticSpec spec;
    std::string informative = "111111";
    bool force = false;
    synth->add_option("--out", synth_out, "Output dataset directory");
    auto* opt_counts = synth->add_option("--counts", counts, "Per-class sample counts")
                           ->delimiter(',')
                           ->expected(3);
    auto* opt_d = synth->add_option("--d", spec.d, "Channels per expression");
    auto* opt_S = synth->add_option("--S", spec.S, "Spatial positions per channel");
    auto* opt_sep = synth->add_option("--separation", spec.separation, "Class-mean norm");
    auto* opt_noise = synth->add_option("--noise", spec.noise, "Gaussian noise scale");
    auto* opt_mask =
        synth->add_option("--informative", informative, "Six-character 0/1 emotion mask");
    auto* opt_synth_seed = synth->add_option("--seed", spec.seed, "Generator seed");
    synth->add_flag("--force", force, "Overwrite an existing dataset");

    // --- train ---------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "Train on a dataset and write a checkpoint");
    std::string train_manifest;
    std::string train_out = "model.mfus";
    SharedTrainFlags train_flags;
    train_cmd->add_option("manifest", train_manifest, "Dataset manifest.json or S=1 CSV")->required();
    train_cmd->add_option("--out", train_out, "Checkpoint output path");
    train_flags.add_to(train_cmd);
    bool train_force = false;
    train_cmd->add_flag("--force", train_force, "Overwrite an existing checkpoint");

    // --- cv ------------------------------------------------------------
    auto* cv_cmd = app.add_subcommand("cv", "Stratified k-fold cross-validation");
    std::string cv_manifest;
    std::string cv_out = "report.json";
    std::string cv_csv;
    std::size_t k = 5;
    SharedTrainFlags cv_flags;
    cv_cmd->add_option("manifest", cv_manifest, "Dataset manifest.json or S=1 CSV")->required();
    cv_cmd->add_option("--out", cv_out, "Report output path (JSON)");
    cv_cmd->add_option("--csv", cv_csv, "Also write the averaged metrics as a CSV row");
    auto* opt_k = cv_cmd->add_option("--k", k, "Number of folds");
    cv_flags.add_to(cv_cmd);

    // --- eval ----------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint against a dataset");
    std::string eval_checkpoint;
    std::string eval_manifest;
    std::string eval_out = "eval.json";
    std::string eval_csv;
    eval_cmd->add_option("checkpoint", eval_checkpoint, "Model checkpoint (.mfus)")->required();
    eval_cmd->add_option("manifest", eval_manifest, "Dataset manifest.json or S=1 CSV")->required();
    eval_cmd->add_option("--out", eval_out, "Report output path (JSON)");
    eval_cmd->add_option("--csv", eval_csv, "Also write the metrics as a CSV row");

    // --- gradcheck -----------------------------------------------------
    auto* grad_cmd =
        app.add_subcommand("gradcheck", "Compare analytic gradients to finite differences");
    ArchConfig grad_arch;
    grad_arch.d = 4;
    grad_arch.S = 2;
    grad_arch.r = 2;
    grad_arch.h = 8;
    std::size_t grad_batch = 3;
    std::uint64_t grad_seed = 0;
    double tolerance = 1e-4;
    grad_cmd->add_option("--d", grad_arch.d, "Channels per expression");
    grad_cmd->add_option("--S", grad_arch.S, "Spatial positions per channel");
    grad_cmd->add_option("--r", grad_arch.r, "Attention reduction ratio");
    grad_cmd->add_option("--hidden", grad_arch.h, "Classifier hidden width");
    grad_cmd->add_option("--batch", grad_batch, "Probe batch size");
    grad_cmd->add_option("--seed", grad_seed, "Probe seed");
    grad_cmd->add_option("--tolerance", tolerance, "Maximum allowed relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // prints the requested help, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e); // prints the usage diagnostic
        return 1;
    }

    nlohmann::json config = nlohmann::json::object();
    if (!config_path.empty()) {
        config = load_config(config_path);
    }

    if (synth->parsed()) {
        apply(opt_counts, config, "counts", counts);
        apply(opt_d, config, "d", spec.d);
        apply(opt_S, config, "S", spec.S);
        apply(opt_sep, config, "separation", spec.separation);
        apply(opt_noise, config, "noise", spec.noise);
        apply(opt_mask, config, "informative", informative);
        apply(opt_synth_seed, config, "seed", spec.seed);
        std::copy(counts.begin(), counts.end(), spec.counts.begin());
        spec.informative = parse_informative(informative);

        const Dataset dataset = synth_generate(spec);
        write_dataset(dataset, synth_out, force);
        std::cout << "wrote " << dataset.size() << " samples (d=" << spec.d << ", S=" << spec.S
                  << ") to " << synth_out << "\n";
        return 0;
    }

    if (train_cmd->parsed()) {
        train_flags.resolve(config);
        const Dataset dataset = load_any_dataset(train_manifest);
        const ArchConfig arch = train_flags.arch_for(dataset);
        const auto [params, history] = train(dataset, arch, train_flags.train);
        save_checkpoint(params, train_out, train_force);
        write_text_file(train_out + ".history.json", render_history(history));
        std::cout << "trained " << history.epoch_loss.size() << " epochs on " << dataset.size()
                  << " samples; final epoch loss " << history.epoch_loss.back() << "\n"
                  << "checkpoint: " << train_out << "\n";
        std::cerr << "wall time: " << history.wall_seconds << " s\n";
        return 0;
    }

    if (cv_cmd->parsed()) {
        cv_flags.resolve(config);
        apply(opt_k, config, "k", k);
        const Dataset dataset = load_any_dataset(cv_manifest);
        const ArchConfig arch = cv_flags.arch_for(dataset);
        const CvResult result =
            cross_validate(dataset, arch, cv_flags.train, k, fold_thread_cap(k));
        write_text_file(cv_out, render_cv_report(result, k));
        if (!cv_csv.empty()) {
            write_text_file(cv_csv,
                            std::string(kReportCsvHeader) + "\n" + report_csv_row(result.mean) +
                                "\n");
        }
        std::cout << "cv (k=" << k << "): mean auc " << result.mean.auc << ", gmean "
                  << result.mean.gmean << ", f1 " << result.mean.f1 << ", acc " << result.mean.acc
                  << "\nreport: " << cv_out << "\n";
        return 0;
    }

    if (eval_cmd->parsed()) {
        const ModelParams params = load_checkpoint(eval_checkpoint);
        const Dataset dataset = load_any_dataset(eval_manifest);
        if (dataset.d != params.arch.d || dataset.S != params.arch.S) {
            throw DataError("eval: dataset shape d=" + std::to_string(dataset.d) + ", S=" +
                            std::to_string(dataset.S) + " does not match checkpoint d=" +
                            std::to_string(params.arch.d) + ", S=" +
                            std::to_string(params.arch.S));
        }
        std::vector<ClassLabel> y_true;
        std::vector<Vector> probs;
        for (const auto& sample : dataset.samples) {
            y_true.push_back(sample.label);
            probs.push_back(forward(sample, params));
        }
        const MetricsReport report = evaluate(y_true, probs);
        write_text_file(eval_out, report_to_json(report) + "\n");
        if (!eval_csv.empty()) {
            write_text_file(eval_csv, std::string(kReportCsvHeader) + "\n" +
                                          report_csv_row(report) + "\n");
        }
        std::cout << "eval: auc " << report.auc << ", gmean " << report.gmean << ", f1 "
                  << report.f1 << ", acc " << report.acc << "\nreport: " << eval_out << "\n";
        return 0;
    }

    // gradcheck
    grad_arch.r = std::min(grad_arch.r, kNumEmotions * grad_arch.d);
    grad_arch.validate();
    if (grad_batch < 1) {
        throw DataError("gradcheck: batch must be at least 1");
    }
    SplitMix64 rng(derive_seed(grad_seed, 7));
    std::vector<SubjectSample> batch;
    for (std::size_t i = 0; i < grad_batch; ++i) {
        SubjectSample sample;
        sample.subject_id = "probe-" + std::to_string(i);
        sample.label = static_cast<ClassLabel>(rng.below(3));
        for (auto& map : sample.maps) {
            map = FeatureMap(grad_arch.d, grad_arch.S);
            for (double& v : map.values) v = rng.uniform(-1.0, 1.0);
        }
        batch.push_back(std::move(sample));
    }

    double worst = 0.0;
    for (bool aff : {true, false}) {
        for (LossMode mode : {LossMode::AdaptiveFocal, LossMode::CrossEntropy}) {
            ArchConfig arch = grad_arch;
            arch.aff_enabled = aff;
            const ModelParams params = init_params(arch, grad_seed);
            LossConfig loss_cfg;
            loss_cfg.mode = mode;
            loss_cfg.alpha = {1.0, 2.0, 10.0};

            const BackwardResult result = backward(batch, params, loss_cfg);
            auto loss_at = [&](const Vector& theta) {
                ModelParams probe = params;
                unflatten(probe, theta);
                double total = 0.0;
                for (const auto& sample : batch) {
                    total += focal_loss(forward(sample, probe), sample.label, loss_cfg);
                }
                return total / static_cast<double>(batch.size());
            };
            // Step 1e-4: at smaller steps the difference quotient of the
            // O(1) loss is dominated by f64 rounding for near-zero gradients.
            const GradCheckReport report =
                grad_check(loss_at, flatten(params), flatten(result.grads), 1e-4, tolerance);
            std::cout << (aff ? "aff=on " : "aff=off") << " "
                      << (mode == LossMode::AdaptiveFocal ? "loss=adaptive-focal" : "loss=ce")
                      << "  max rel error " << report.max_rel_error << "\n";
            worst = std::max(worst, report.max_rel_error);
        }
    }
    std::cout << "max relative error " << worst << " (tolerance " << tolerance << ")\n";
    if (worst >= tolerance) {
        std::cerr << "gradient check FAILED\n";
        return 3;
    }
    std::cout << "gradient check passed\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
