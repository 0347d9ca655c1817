// kddids: prepare KDD'99 data, train the anomaly/misuse models, evaluate
// and predict.

#include <CLI11.hpp>

#include <iostream>

#include "kddids/cli.hpp"

namespace fs = std::filesystem;
using namespace kddids;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
    cmd->add_option("--config", c.config_path, "key=value config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "root seed (overrides the config)");
    auto* out = cmd->add_option("--out", c.out, "output directory");
    if (out_required) out->required();
}

RunConfig load_config(const Common& c) {
    RunConfig config = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
    if (c.seed) config.seed = *c.seed;
    return config;
}

fs::path out_dir(const Common& c, const RunConfig& config) {
    if (!c.out.empty()) return c.out;
    if (config.out) return *config.out;
    throw Error("no output directory: pass --out or set out= in the config");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid anomaly/misuse intrusion detection on KDD'99 connection records"};
    app.require_subcommand(1);

    Common prep_c, train_c, eval_c, pred_c, report_c;

    std::string input;
    auto* prepare = app.add_subcommand("prepare", "parse, deduplicate, encode, resample and split a KDD file");
    add_common(prepare, prep_c, false);
    prepare->add_option("--input", input, "KDD file (plain or gzip); defaults to input= in the config");

    std::string which, data_dir;
    auto* train = app.add_subcommand("train", "train nn | rf | misuse | hybrid on prepared data");
    add_common(train, train_c, false);
    train->add_option("which", which, "model to train")->required()->check(CLI::IsMember({"nn", "rf", "misuse", "hybrid"}));
    train->add_option("--data", data_dir, "prepared data directory")->required()->check(CLI::ExistingDirectory);

    std::string model, test_file, eval_data;
    auto* evaluate = app.add_subcommand("evaluate", "evaluate a model on prepared test data");
    add_common(evaluate, eval_c, false);
    evaluate->add_option("--model", model, "model file or hybrid manifest")->required()->check(CLI::ExistingFile);
    auto* test_opt = evaluate->add_option("--test", test_file, "prepared test CSV")->check(CLI::ExistingFile);
    evaluate->add_option("--data", eval_data, "prepared data directory (uses its test.csv)")
        ->check(CLI::ExistingDirectory)
        ->excludes(test_opt);

    std::string pred_model, pred_input, rejects;
    auto* predict = app.add_subcommand("predict", "label raw KDD records with a hybrid model");
    predict->add_option("--config", pred_c.config_path, "accepted for symmetry; unused")->check(CLI::ExistingFile);
    predict->add_option("--seed", pred_c.seed, "accepted for symmetry; unused");
    predict->add_option("--model", pred_model, "hybrid manifest")->required()->check(CLI::ExistingFile);
    predict->add_option("--input", pred_input, "KDD records (label column required, plain or gzip)")
        ->required()
        ->check(CLI::ExistingFile);
    predict->add_option("--out", pred_c.out, "verdict file")->required();
    predict->add_option("--rejects", rejects, "malformed-line file (default: <out>.rejects)");

    std::string report_data, report_models;
    auto* report = app.add_subcommand("report", "evaluate every trained model and write the result tables");
    add_common(report, report_c, true);
    report->add_option("--data", report_data, "prepared data directory")->required()->check(CLI::ExistingDirectory);
    report->add_option("--models", report_models, "directory holding trained models")->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);

    try {
        if (prepare->parsed()) {
            const auto config = load_config(prep_c);
            fs::path in = input.empty() ? config.input.value_or(fs::path{}) : fs::path(input);
            if (in.empty()) throw Error("no input file: pass --input or set input= in the config");
            cli::cmd_prepare(config, in, out_dir(prep_c, config), std::cout);
        } else if (train->parsed()) {
            const auto config = load_config(train_c);
            const fs::path out = train_c.out.empty() && !config.out ? fs::path(data_dir) : out_dir(train_c, config);
            for (const auto& p : cli::cmd_train(config, *cli::parse_kind(which), data_dir, out, std::cout)) {
                std::cout << "wrote " << p.string() << "\n";
            }
        } else if (evaluate->parsed()) {
            const auto config = load_config(eval_c);
            fs::path test = test_file;
            if (test.empty()) {
                if (eval_data.empty()) throw Error("pass --test <file> or --data <dir>");
                test = fs::path(eval_data) / cli::kTestFile;
            }
            const fs::path out = eval_c.out.empty() && !config.out ? fs::path(model).parent_path() / "eval"
                                                                    : out_dir(eval_c, config);
            cli::cmd_evaluate(config, model, test, out, std::cout);
        } else if (predict->parsed()) {
            const fs::path out = pred_c.out;
            const fs::path rej = rejects.empty() ? fs::path(out.string() + ".rejects") : fs::path(rejects);
            const auto s = cli::cmd_predict(pred_model, pred_input, out, rej);
            std::cout << "predicted " << s.predicted << " records (routed " << s.routing.routed << ", confirmed "
                      << s.routing.confirmed << ", trimmed " << s.routing.trimmed << "), rejected " << s.rejected
                      << "\n";
            if (s.rejected > 0) {
                std::cerr << s.rejected << " malformed line(s) written to " << rej.string() << "\n";
                return 2;
            }
        } else if (report->parsed()) {
            const auto config = load_config(report_c);
            cli::cmd_report(config, report_data, report_models, out_dir(report_c, config), std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
