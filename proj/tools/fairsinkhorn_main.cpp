// Command-line surface: generate | train | probe | zeroshot | compare.
// Exit codes: 0 success, 1 usage/config/data errors, 2 numerical errors.
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fairsinkhorn/error.hpp"
#include "fairsinkhorn/harness.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    bool no_timestamps = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Path to the run config file")->required();
    cmd->add_option("--seed", [&args](const CLI::results_t& values) {
        args.seed = std::stoull(values.at(0));
        return true;
    }, "Override the config's seed");
    cmd->add_option("--out", [&args](const CLI::results_t& values) {
        args.out_dir = values.at(0);
        return true;
    }, "Override the output directory");
    cmd->add_flag("--no-timestamps", args.no_timestamps,
                  "Omit wall-clock fields from logs (byte-stable output)");
}

fairsinkhorn::CliOverrides to_overrides(const CommonArgs& args) {
    fairsinkhorn::CliOverrides overrides;
    overrides.seed = args.seed;
    if (args.out_dir) overrides.out_dir = std::filesystem::path(*args.out_dir);
    overrides.no_timestamps = args.no_timestamps;
    return overrides;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive pre-training with a transport-based fairness regularizer"};
    app.require_subcommand(1);

    CommonArgs generate_args, train_args, probe_args, zeroshot_args, compare_args;
    CLI::App* cmd_generate =
        app.add_subcommand("generate", "Generate synthetic train/val/test splits");
    add_common(cmd_generate, generate_args);
    CLI::App* cmd_train = app.add_subcommand("train", "Pre-train the dual encoders");
    add_common(cmd_train, train_args);
    CLI::App* cmd_probe =
        app.add_subcommand("probe", "Fit a linear probe on frozen embeddings and evaluate");
    add_common(cmd_probe, probe_args);
    CLI::App* cmd_zeroshot =
        app.add_subcommand("zeroshot", "Evaluate via prompt-vector similarity");
    add_common(cmd_zeroshot, zeroshot_args);
    CLI::App* cmd_compare = app.add_subcommand("compare", "Diff two report directories");
    add_common(cmd_compare, compare_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // CLI11 prints help itself; map success-ish exits (help) to 0.
        return app.exit(e) == 0 ? 0 : 1;
    }

    using fairsinkhorn::load_config;
    try {
        if (cmd_generate->parsed()) {
            const auto result =
                run_generate(load_config(generate_args.config_path), to_overrides(generate_args));
            std::cout << "wrote " << result.train_count << "/" << result.val_count << "/"
                      << result.test_count << " train/val/test samples under "
                      << result.manifest_path.parent_path().string() << "\n";
        } else if (cmd_train->parsed()) {
            const auto result =
                run_train(load_config(train_args.config_path), to_overrides(train_args));
            std::cout << "final loss " << result.final_total << " (contrastive "
                      << result.final_clip << ", fairness sum " << result.final_fairness_sum
                      << ")\ncheckpoint: " << result.checkpoint_path.string()
                      << "\nlog: " << result.log_path.string() << "\n";
        } else if (cmd_probe->parsed()) {
            const auto result =
                run_probe(load_config(probe_args.config_path), to_overrides(probe_args));
            std::cout << "auc " << result.report.auc << ", es_auc " << result.report.es_auc
                      << ", dpd " << result.report.dpd << ", deodds " << result.report.deodds
                      << "\nreport: " << result.report_json_path.string() << "\n";
        } else if (cmd_zeroshot->parsed()) {
            const auto result =
                run_zeroshot(load_config(zeroshot_args.config_path), to_overrides(zeroshot_args));
            std::cout << "auc " << result.report.auc << ", es_auc " << result.report.es_auc
                      << ", dpd " << result.report.dpd << ", deodds " << result.report.deodds
                      << "\nreport: " << result.report_json_path.string() << "\n";
        } else if (cmd_compare->parsed()) {
            const auto result =
                run_compare(load_config(compare_args.config_path), to_overrides(compare_args));
            std::cout << "comparison: " << result.csv_path.string() << "\n";
        }
    } catch (const fairsinkhorn::NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const fairsinkhorn::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
