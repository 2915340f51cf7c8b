#include <CLI11.hpp>

#include "mad/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Modality-adaptive decoding engine"};
    app.require_subcommand(1);
    app.set_version_flag("--version", mad::kVersion);

    mad::cli::RunOptions run;
    auto* run_cmd = app.add_subcommand("run", "Evaluate the configured strategy on the synthetic suite");
    run_cmd->add_option("config", run.config, "Run config file")->required();
    run_cmd->add_option("-o,--output", run.output_dir, "Output directory (overrides output_dir)");

    mad::cli::SweepOptions sweep;
    auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate Mad over a list of gamma values");
    sweep_cmd->add_option("config", sweep.config, "Run config file")->required();
    sweep_cmd->add_option("--gammas", sweep.gammas, "Comma-separated gamma values");
    sweep_cmd->add_option("-o,--output", sweep.output_dir, "Output directory (overrides output_dir)");

    mad::cli::WeightsOptions weights;
    auto* weights_cmd = app.add_subcommand("weights", "Weight distribution and prompt robustness reports");
    weights_cmd->add_option("config", weights.config, "Run config file")->required();
    weights_cmd->add_option("-o,--output", weights.output_dir, "Output directory (overrides output_dir)");

    mad::cli::ParityOptions parity;
    auto* parity_cmd = app.add_subcommand("parity", "Compare a bridge against the in-process provider");
    parity_cmd->add_option("--bridge-command", parity.command, "Command that serves the protocol on stdio");
    parity_cmd->add_option("--bridge-address", parity.address, "host:port of a TCP bridge");
    parity_cmd->add_option("-n", parity.n, "Number of (config, context) samples");
    parity_cmd->add_option("--seed", parity.seed, "Sampling seed");
    parity_cmd->add_option("--n-per-category", parity.n_per_category, "Suite size per category");
    parity_cmd->add_option("--suite-seed", parity.suite_seed, "Suite seed");
    parity_cmd->add_option("--timeout-ms", parity.timeout_ms, "Per-request timeout");

    mad::cli::SuiteCheckOptions check;
    auto* check_cmd = app.add_subcommand("suite-check", "Rebuild the suite and re-verify every certificate");
    check_cmd->add_option("config", check.config, "Run config file")->required();

    mad::cli::ReplayOptions replay;
    auto* replay_cmd = app.add_subcommand("replay", "Replay traces of a finished run");
    replay_cmd->add_option("run_dir", replay.run_dir, "Run directory")->required();
    replay_cmd->add_flag("--all", replay.all, "Replay every trace instead of a sample");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : mad::cli::kExitConfig;
    }

    if (*run_cmd) return mad::cli::cmd_run(run);
    if (*sweep_cmd) return mad::cli::cmd_sweep(sweep);
    if (*weights_cmd) return mad::cli::cmd_weights(weights);
    if (*parity_cmd) return mad::cli::cmd_parity(parity);
    if (*check_cmd) return mad::cli::cmd_suite_check(check);
    if (*replay_cmd) return mad::cli::cmd_replay(replay);
    return mad::cli::kExitConfig;
}
