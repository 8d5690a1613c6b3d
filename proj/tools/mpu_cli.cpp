#include <CLI11.hpp>

#include <string>
#include <vector>

#include "mpu/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"MPU toolchain: assembler, object VM and network simulator"};
    app.require_subcommand(1);

    // asm
    std::string asm_in, asm_out;
    CLI::App* casm = app.add_subcommand("asm", "assemble a .mpa source into a .mpo binary");
    casm->add_option("input", asm_in, ".mpa source")->required();
    casm->add_option("-o,--output", asm_out, "output .mpo path")->required();

    // disasm
    std::string dis_in;
    std::string dis_out;
    CLI::App* cdis = app.add_subcommand("disasm", "disassemble a .mpo binary");
    cdis->add_option("input", dis_in, ".mpo binary")->required();
    cdis->add_option("-o,--output", dis_out, "output path (default stdout)");

    // run
    mpu::cli::RunArgs run_args;
    std::string run_rules, run_trace, run_report;
    CLI::App* crun = app.add_subcommand("run", "run a program on one MPU");
    crun->add_option("program", run_args.program_path, ".mpo or .mpa program")->required();
    crun->add_option("-d,--data", run_args.dataset_path, "dataset file")->required();
    crun->add_option("--rules", run_rules, "extra dataset merged on top");
    crun->add_option("--max-steps", run_args.max_steps, "step budget");
    crun->add_flag("--learn", run_args.learn, "close switch S-1 (learning mode)");
    crun->add_option("--trace", run_trace, "trace output path (default stdout)");
    crun->add_option("--report", run_report, "report output path (default stdout)");

    // simnet
    mpu::cli::SimnetArgs sim_args;
    std::string sim_out, sim_results;
    CLI::App* csim = app.add_subcommand("simnet", "run a network scenario");
    csim->add_option("--topo", sim_args.topology_path, "topology file")->required();
    csim->add_option("--scenario", sim_args.scenario_path, "scenario file")->required();
    csim->add_option("--seed", sim_args.seed, "seed (recorded, policies are deterministic)");
    csim->add_option("--max-ticks", sim_args.max_ticks, "tick budget");
    csim->add_option("-o,--out", sim_out, "transcript path (default stdout)");
    csim->add_option("--results", sim_results, "accumulated results path");

    // match
    mpu::cli::MatchArgs match_args;
    CLI::App* cmatch = app.add_subcommand("match", "nearest signatures for a query vector");
    cmatch->add_option("-d,--data", match_args.dataset_path, "dataset file")->required();
    cmatch->add_option("-q,--query", match_args.query_hex, "query codes, hex, ':' separated")->required();
    cmatch->add_option("-k", match_args.k, "neighbor count");
    cmatch->add_option("--weights", match_args.weights, "per-dimension weights");

    // isa
    bool card = false;
    CLI::App* cisa = app.add_subcommand("isa", "instruction-set information");
    cisa->add_flag("--card", card, "emit the ISA reference card");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return mpu::cli::kExitUsage;
    }

    if (casm->parsed()) return mpu::cli::cmd_asm(asm_in, asm_out);
    if (cdis->parsed())
        return mpu::cli::cmd_disasm(
            dis_in, dis_out.empty() ? std::nullopt
                                    : std::optional<std::string>(dis_out));
    if (crun->parsed()) {
        if (!run_rules.empty()) run_args.rules_path = run_rules;
        if (!run_trace.empty()) run_args.trace_path = run_trace;
        if (!run_report.empty()) run_args.report_path = run_report;
        return mpu::cli::cmd_run(run_args);
    }
    if (csim->parsed()) {
        if (!sim_out.empty()) sim_args.out_path = sim_out;
        if (!sim_results.empty()) sim_args.results_path = sim_results;
        return mpu::cli::cmd_simnet(sim_args);
    }
    if (cmatch->parsed()) return mpu::cli::cmd_match(match_args);
    if (cisa->parsed()) return mpu::cli::cmd_isa_card();
    return mpu::cli::kExitUsage;
}
