#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mpu/isa.hpp"

namespace mpu::masm {

// One parsed operand: register, numeric immediate, or label reference.
struct Operand {
    enum Kind { REG, NUM, LABEL } kind;
    std::uint32_t value = 0;  // register index or numeric value
    std::string label;
};

struct SourceLine {
    int line_no = 0;  // 1-based
    std::optional<std::string> label;
    std::string mnemonic;  // canonical upper case
    std::uint8_t exec_mode = 0;  // from the .spso/.spmo/.mpso/.mpmo suffix
    std::vector<Operand> operands;
};

struct SyntaxError {
    int line = 0;    // 1-based
    int column = 0;  // 1-based
    std::string message;

    std::string str() const;
};

struct ParseResult {
    std::vector<SourceLine> lines;
    std::vector<SyntaxError> errors;
    bool ok() const { return errors.empty(); }
};

struct Program {
    std::vector<std::uint32_t> words;
    std::map<std::string, std::uint32_t> symbols;   // label -> word index
    std::vector<int> source_map;                    // word index -> line no

    friend bool operator==(const Program& a, const Program& b) {
        return a.words == b.words;
    }
};

struct AssembleResult {
    Program program;
    std::vector<SyntaxError> errors;
    bool ok() const { return errors.empty(); }
};

// Lines are 1-based; comments run from ';' to end of line; mnemonics are
// case-insensitive. Every malformed line yields one SyntaxError, parsing
// continues.
ParseResult parse(std::string_view text);

// Two-pass assembly: labels may be referenced before definition and denote
// word indices. Addresses >= 1024 on address-taking opcodes assemble to
// memory form.
AssembleResult assemble(const std::vector<SourceLine>& lines,
                        const isa::OpcodeTable& table = isa::OpcodeTable::standard());

AssembleResult assemble_text(std::string_view text,
                             const isa::OpcodeTable& table = isa::OpcodeTable::standard());

// Canonical form: upper-case mnemonics, ".spso" omitted, decimal operands,
// LF newlines. assemble(parse(disassemble(p))) == p for canonical words.
// Throws MpuError{UndefinedOpcode} naming the offending word index.
std::string disassemble(const Program& program,
                        const isa::OpcodeTable& table = isa::OpcodeTable::standard());

// .mpo container: magic "MPU1", big-endian u32 word count, big-endian words.
std::string to_mpo_bytes(const Program& program);
Program from_mpo_bytes(std::string_view bytes);  // throws FormatError

}  // namespace mpu::masm
