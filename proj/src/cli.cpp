#include "mpu/cli.hpp"

#include <cstdio>
#include <iostream>

#include "mpu/assembler.hpp"
#include "mpu/dataset.hpp"
#include "mpu/errors.hpp"
#include "mpu/hash.hpp"
#include "mpu/io.hpp"
#include "mpu/isa.hpp"
#include "mpu/netsim.hpp"
#include "mpu/vm.hpp"

namespace mpu::cli {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void emit(const std::optional<std::string>& path, const std::string& content) {
    if (path)
        write_file(*path, content);
    else
        std::cout << content;
}

std::string with_hash_line(std::string text, const char* tag) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(text)));
    return text + tag + (" " + std::string(buf)) + "\n";
}

// .mpa sources assemble on the fly so every subcommand takes either form
std::optional<masm::Program> load_program(const std::string& path,
                                          std::string& error) {
    std::string bytes = read_file(path);
    if (ends_with(path, ".mpa")) {
        masm::AssembleResult result = masm::assemble_text(bytes);
        if (!result.ok()) {
            for (const auto& e : result.errors) error += e.str() + "\n";
            return std::nullopt;
        }
        return result.program;
    }
    return masm::from_mpo_bytes(bytes);
}

}  // namespace

int cmd_asm(const std::string& input_path, const std::string& output_path) {
    std::string text;
    try {
        text = read_file(input_path);
    } catch (const MpuError& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }
    masm::AssembleResult result = masm::assemble_text(text);
    if (!result.ok()) {
        for (const auto& e : result.errors) std::cerr << e.str() << "\n";
        return kExitContent;
    }
    try {
        write_file(output_path, masm::to_mpo_bytes(result.program));
    } catch (const MpuError& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }
    return kExitOk;
}

int cmd_disasm(const std::string& input_path,
               const std::optional<std::string>& output_path) {
    try {
        masm::Program program = masm::from_mpo_bytes(read_file(input_path));
        emit(output_path, masm::disassemble(program));
        return kExitOk;
    } catch (const MpuError& e) {
        if (e.code() == ErrCode::IoError) {
            std::cerr << e.what() << "\n";
            return kExitUsage;
        }
        std::cerr << e.what() << "\n";
        return kExitContent;
    }
}

int cmd_run(const RunArgs& args) {
    masm::Program program;
    data::Dataset dataset;
    try {
        std::string asm_errors;
        auto loaded = load_program(args.program_path, asm_errors);
        if (!loaded) {
            std::cerr << asm_errors;
            return kExitContent;
        }
        program = std::move(*loaded);
        dataset = data::load_dataset(read_file(args.dataset_path));
        if (args.rules_path)
            data::merge_dataset(dataset, read_file(*args.rules_path));
    } catch (const MpuError& e) {
        std::cerr << e.what() << "\n";
        return e.code() == ErrCode::IoError ? kExitUsage : kExitContent;
    }

    vm::VmOptions options;
    options.s1_closed = args.learn;
    vm::Vm machine(std::move(dataset), std::move(program), options);
    vm::RunOutcome outcome = machine.run(args.max_steps);

    std::string trace_text = vm::format_trace(machine.trace());
    try {
        emit(args.trace_path, trace_text);
    } catch (const MpuError& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }

    std::string report;
    report += "TRACE " + (args.trace_path ? *args.trace_path : std::string("-")) + "\n";
    report += "STEPS " + std::to_string(machine.trace().records.size()) + "\n";
    report += "OUTCOME ";
    if (outcome == vm::RunOutcome::FAULT)
        report += std::string("FAULT:") + vm::fault_name(machine.fault());
    else
        report += vm::run_outcome_name(outcome);
    report += "\n";
    report += "CONFIDENCE " + conf_str(machine.confidence_register()) + "\n";

    for (const vm::SafetyReport& sr : machine.safety_reports()) {
        for (std::size_t i = 0; i < sr.n(); ++i) {
            report += "SAFETY " + std::to_string(sr.patient) + " " +
                      std::to_string(sr.procedures[i]) + " " +
                      vm::verdict_name(sr.verdicts[i]);
            if (!sr.verdict_rules[i].empty()) {
                report += ":";
                for (std::size_t r = 0; r < sr.verdict_rules[i].size(); ++r) {
                    if (r) report += ",";
                    report += sr.verdict_rules[i][r];
                }
            }
            report += "\n";
        }
    }
    for (const vm::RxSchedule& rx : machine.rx_schedules()) {
        report += "RXPLAN " + std::to_string(rx.patient) + " scheduled=";
        for (std::size_t i = 0; i < rx.scheduled.size(); ++i) {
            if (i) report += ",";
            report += std::to_string(rx.scheduled[i]);
        }
        report += " blocked=";
        for (std::size_t i = 0; i < rx.blocked.size(); ++i) {
            if (i) report += ",";
            report += std::to_string(rx.blocked[i]);
        }
        report += "\n";
    }
    if (!machine.diag_results().empty()) {
        report += "DIAG";
        for (const auto& n : machine.diag_results())
            report += " " + std::to_string(n.record_id) + ":" +
                      std::to_string(n.distance);
        report += "\n";
    }
    report += "DIVERGENCE " + conf_str(machine.prediction_log().divergence_rate()) + "\n";

    std::vector<vm::KbProposal> proposals = machine.proposals();
    if (args.learn) {
        try {
            std::vector<vm::KbProposal> mined =
                vm::learn_from_trace(machine.trace(), vm::LearnParams{});
            for (vm::KbProposal& p : mined) {
                p.id = static_cast<std::uint32_t>(proposals.size());
                proposals.push_back(std::move(p));
            }
        } catch (const MpuError&) {
            // S-1 open: nothing mined
        }
    }
    for (const vm::KbProposal& p : proposals)
        report += "PROPOSAL " + std::to_string(p.id) + " " +
                  vm::proposal_kind_name(p.kind) + " " +
                  vm::proposal_status_name(p.status) + " " + p.payload + "\n";

    try {
        emit(args.report_path, with_hash_line(std::move(report), "REPORTHASH"));
    } catch (const MpuError& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }
    return outcome == vm::RunOutcome::STEP_LIMIT ? kExitLimit : kExitOk;
}

int cmd_simnet(const SimnetArgs& args) {
    net::Topology topo;
    std::vector<net::ScenarioEvent> scenario;
    try {
        std::string base_dir = ".";
        std::size_t slash = args.topology_path.find_last_of('/');
        if (slash != std::string::npos)
            base_dir = args.topology_path.substr(0, slash);
        topo = net::parse_topology(read_file(args.topology_path), base_dir);
        scenario = net::parse_scenario(read_file(args.scenario_path));
    } catch (const MpuError& e) {
        std::cerr << e.what() << "\n";
        return e.code() == ErrCode::IoError ? kExitUsage : kExitContent;
    }

    net::Simulation sim(std::move(topo), args.seed);
    sim.load_scenario(scenario);
    bool limit_hit = false;
    try {
        sim.run(args.max_ticks);
    } catch (const MpuError& e) {
        if (e.code() != ErrCode::MaxTicksExceeded) {
            std::cerr << e.what() << "\n";
            return kExitContent;
        }
        limit_hit = true;
    }

    try {
        emit(args.out_path, sim.transcript_text());
        if (args.results_path) {
            std::string results;
            for (const auto& [proc, log] : sim.procedures()) {
                if (!log.complete()) continue;
                for (const net::AccumEntry& entry : net::accumulate(log)) {
                    results += "ACCUM " + std::to_string(proc) + " " +
                               std::to_string(entry.sub_index) + " ";
                    if (entry.ok) {
                        std::string payload = entry.payload;
                        for (char& c : payload)
                            if (c == '\n') c = '|';
                        results += "OK " + payload;
                    } else {
                        results += "ERR " + entry.error;
                    }
                    results += "\n";
                }
            }
            write_file(*args.results_path,
                       with_hash_line(std::move(results), "RESULTSHASH"));
        }
    } catch (const MpuError& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    }
    return limit_hit ? kExitLimit : kExitOk;
}

int cmd_match(const MatchArgs& args) {
    try {
        data::Dataset dataset = data::load_dataset(read_file(args.dataset_path));
        if (!dataset.has_schema || dataset.bank.empty()) {
            std::cerr << "dataset has no signature bank\n";
            return kExitContent;
        }
        auto query = match::parse_hex(dataset.schema, args.query_hex);
        if (!query) {
            std::cerr << "query does not fit the schema\n";
            return kExitUsage;
        }
        dataset.bank.weights = args.weights;
        std::vector<match::Neighbor> neighbors =
            match::nearest_k(dataset.bank, *query, args.k);
        std::string out;
        for (const auto& n : neighbors) {
            std::string label;
            for (const auto& rec : dataset.bank.entries)
                if (rec.record_id == n.record_id) {
                    label = rec.label;
                    break;
                }
            out += std::to_string(n.record_id) + " " +
                   std::to_string(n.distance) + " " + label + "\n";
        }
        std::cout << with_hash_line(std::move(out), "MATCHHASH");
        return kExitOk;
    } catch (const MpuError& e) {
        std::cerr << e.what() << "\n";
        return e.code() == ErrCode::IoError
                   ? kExitUsage
                   : e.code() == ErrCode::SchemaMismatch ? kExitUsage
                                                         : kExitContent;
    }
}

int cmd_isa_card() {
    std::cout << isa::isa_card();
    return kExitOk;
}

}  // namespace mpu::cli
