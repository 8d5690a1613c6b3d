#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mpu::cli {

// Exit codes shared by every subcommand:
//   0 success, including in-model faults/NAKs/rejections
//   1 input content errors (syntax errors, malformed datasets)
//   2 usage / I-O errors
//   3 resource limits (step budget, tick budget)
inline constexpr int kExitOk = 0;
inline constexpr int kExitContent = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitLimit = 3;

int cmd_asm(const std::string& input_path, const std::string& output_path);

int cmd_disasm(const std::string& input_path,
               const std::optional<std::string>& output_path);

struct RunArgs {
    std::string program_path;               // .mpo, or .mpa assembled on the fly
    std::string dataset_path;
    std::optional<std::string> rules_path;  // extra dataset merged on top
    std::size_t max_steps = 10000;
    bool learn = false;                     // closes switch S-1
    std::optional<std::string> trace_path;  // default: stdout
    std::optional<std::string> report_path; // default: stdout
};

int cmd_run(const RunArgs& args);

struct SimnetArgs {
    std::string topology_path;
    std::string scenario_path;
    std::uint64_t seed = 0;
    std::uint64_t max_ticks = 100000;
    std::optional<std::string> out_path;      // transcript, default stdout
    std::optional<std::string> results_path;  // accumulated per-procedure results
};

int cmd_simnet(const SimnetArgs& args);

struct MatchArgs {
    std::string dataset_path;
    std::string query_hex;  // "0a:3f" per schema dimension
    std::size_t k = 1;
    std::vector<std::uint32_t> weights;  // empty = unit weights
};

int cmd_match(const MatchArgs& args);

int cmd_isa_card();

}  // namespace mpu::cli
