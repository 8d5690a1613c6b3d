#include "mpu/assembler.hpp"

#include <array>
#include <cctype>
#include <cstdlib>

#include "mpu/errors.hpp"

namespace mpu::masm {

namespace {

bool is_ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}
bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

std::string upper(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

struct Cursor {
    std::string_view text;
    std::size_t pos = 0;

    int col() const { return static_cast<int>(pos) + 1; }
    bool done() const { return pos >= text.size(); }
    char peek() const { return text[pos]; }
    void skip_ws() {
        while (!done() && (peek() == ' ' || peek() == '\t')) ++pos;
    }
};

// Parses a line into a SourceLine; on failure reports exactly one error.
bool parse_line(std::string_view raw, int line_no, SourceLine& out,
                std::vector<SyntaxError>& errors) {
    // strip comment
    std::string_view text = raw;
    if (auto sc = text.find(';'); sc != std::string_view::npos)
        text = text.substr(0, sc);

    Cursor cur{text};
    cur.skip_ws();
    if (cur.done()) return false;  // blank or comment-only

    out.line_no = line_no;

    auto fail = [&](int col, std::string msg) {
        errors.push_back({line_no, col, std::move(msg)});
        return false;
    };

    auto read_ident = [&]() -> std::string {
        std::size_t start = cur.pos;
        while (!cur.done() && is_ident_char(cur.peek())) ++cur.pos;
        return std::string(cur.text.substr(start, cur.pos - start));
    };

    if (!is_ident_start(cur.peek()))
        return fail(cur.col(), "expected label or mnemonic");

    int ident_col = cur.col();
    std::string ident = read_ident();

    // optional "label:" prefix
    cur.skip_ws();
    if (!cur.done() && cur.peek() == ':') {
        ++cur.pos;
        out.label = ident;
        cur.skip_ws();
        if (cur.done()) return fail(cur.col(), "label without instruction");
        if (!is_ident_start(cur.peek()))
            return fail(cur.col(), "expected mnemonic after label");
        ident_col = cur.col();
        ident = read_ident();
    }

    out.mnemonic = upper(ident);

    // optional ".spso" style suffix
    if (!cur.done() && cur.peek() == '.') {
        ++cur.pos;
        int sfx_col = cur.col();
        std::string sfx = lower(read_ident());
        if (sfx == "spso") out.exec_mode = 0;
        else if (sfx == "spmo") out.exec_mode = 1;
        else if (sfx == "mpso") out.exec_mode = 2;
        else if (sfx == "mpmo") out.exec_mode = 3;
        else return fail(sfx_col, "unknown mode suffix ." + sfx);
    }
    (void)ident_col;

    // operands, comma separated
    cur.skip_ws();
    bool first = true;
    while (!cur.done()) {
        if (!first) {
            if (cur.peek() != ',')
                return fail(cur.col(), "expected ',' between operands");
            ++cur.pos;
            cur.skip_ws();
            if (cur.done()) return fail(cur.col(), "trailing comma");
        }
        first = false;

        if (out.operands.size() == 2)
            return fail(cur.col(), "more than 2 operands");

        int op_col = cur.col();
        Operand op;
        char c = cur.peek();
        if ((c == 'r' || c == 'R') && cur.pos + 1 < cur.text.size() &&
            std::isdigit(static_cast<unsigned char>(cur.text[cur.pos + 1]))) {
            ++cur.pos;
            std::size_t start = cur.pos;
            while (!cur.done() && std::isdigit(static_cast<unsigned char>(cur.peek())))
                ++cur.pos;
            long idx = std::strtol(std::string(cur.text.substr(start, cur.pos - start)).c_str(),
                                   nullptr, 10);
            if (idx >= isa::kObjectRegisterCount)
                return fail(op_col, "bad register index r" + std::to_string(idx));
            op.kind = Operand::REG;
            op.value = static_cast<std::uint32_t>(idx);
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            std::size_t start = cur.pos;
            int base = 10;
            if (c == '0' && cur.pos + 1 < cur.text.size() &&
                (cur.text[cur.pos + 1] == 'x' || cur.text[cur.pos + 1] == 'X')) {
                base = 16;
                cur.pos += 2;
                start = cur.pos;
                if (cur.done() || !std::isxdigit(static_cast<unsigned char>(cur.peek())))
                    return fail(op_col, "malformed hex literal");
            }
            while (!cur.done() &&
                   (base == 16 ? std::isxdigit(static_cast<unsigned char>(cur.peek()))
                               : std::isdigit(static_cast<unsigned char>(cur.peek()))))
                ++cur.pos;
            unsigned long v = std::strtoul(
                std::string(cur.text.substr(start, cur.pos - start)).c_str(), nullptr, base);
            if (v > 0xFFF)
                return fail(op_col, "immediate out of range (max 4095)");
            op.kind = Operand::NUM;
            op.value = static_cast<std::uint32_t>(v);
        } else if (is_ident_start(c)) {
            op.kind = Operand::LABEL;
            op.label = read_ident();
        } else {
            return fail(op_col, std::string("malformed token '") + c + "'");
        }
        out.operands.push_back(std::move(op));
        cur.skip_ws();
    }
    return true;
}

}  // namespace

std::string SyntaxError::str() const {
    return "line " + std::to_string(line) + ":" + std::to_string(column) +
           ": " + message;
}

ParseResult parse(std::string_view text) {
    ParseResult result;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view raw = eol == std::string_view::npos
                                   ? text.substr(pos)
                                   : text.substr(pos, eol - pos);
        if (pos == text.size() && raw.empty()) break;
        ++line_no;
        if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
        SourceLine line;
        if (parse_line(raw, line_no, line, result.errors))
            result.lines.push_back(std::move(line));
        if (eol == std::string_view::npos) break;
        pos = eol + 1;
    }
    return result;
}

AssembleResult assemble(const std::vector<SourceLine>& lines,
                        const isa::OpcodeTable& table) {
    AssembleResult result;
    auto err = [&](int line, std::string msg) {
        result.errors.push_back({line, 1, std::move(msg)});
    };

    if (lines.size() > isa::kObjectMemorySize) {
        err(lines.empty() ? 1 : lines[isa::kObjectMemorySize].line_no,
            "program exceeds 4096 words");
        return result;
    }

    // pass 1: label table
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (!lines[i].label) continue;
        auto [it, inserted] =
            result.program.symbols.emplace(*lines[i].label, static_cast<std::uint32_t>(i));
        if (!inserted)
            err(lines[i].line_no, "duplicate label '" + *lines[i].label + "'");
    }
    if (!result.ok()) return result;

    // pass 2: encode
    for (const SourceLine& line : lines) {
        const isa::OpcodeInfo* info = table.find_mnemonic(line.mnemonic);
        if (!info) {
            err(line.line_no, "unknown mnemonic '" + line.mnemonic + "'");
            continue;
        }
        if (static_cast<int>(line.operands.size()) != info->arity) {
            err(line.line_no, line.mnemonic + " takes " +
                                  std::to_string(info->arity) + " operand(s), got " +
                                  std::to_string(line.operands.size()));
            continue;
        }
        if (!info->allows(static_cast<isa::ExecMode>(line.exec_mode))) {
            err(line.line_no,
                "mode ." + std::string(isa::exec_mode_name(
                               static_cast<isa::ExecMode>(line.exec_mode))) +
                    " not allowed for " + line.mnemonic);
            continue;
        }

        std::array<std::uint32_t, 2> vals = {0, 0};
        std::array<isa::OperandKind, 2> kinds = {info->operand_a, info->operand_b};
        bool bad = false;
        for (std::size_t i = 0; i < line.operands.size() && !bad; ++i) {
            const Operand& op = line.operands[i];
            switch (op.kind) {
                case Operand::REG:
                    if (kinds[i] != isa::OperandKind::REG) {
                        err(line.line_no, "operand " + std::to_string(i + 1) +
                                              " of " + line.mnemonic +
                                              " is not a register");
                        bad = true;
                    }
                    vals[i] = op.value;
                    break;
                case Operand::NUM:
                    if (kinds[i] == isa::OperandKind::REG) {
                        err(line.line_no, "operand " + std::to_string(i + 1) +
                                              " of " + line.mnemonic +
                                              " must be a register");
                        bad = true;
                    }
                    vals[i] = op.value;
                    break;
                case Operand::LABEL: {
                    auto it = result.program.symbols.find(op.label);
                    if (it == result.program.symbols.end()) {
                        err(line.line_no, "undefined label '" + op.label + "'");
                        bad = true;
                        break;
                    }
                    if (kinds[i] == isa::OperandKind::REG) {
                        err(line.line_no, "operand " + std::to_string(i + 1) +
                                              " of " + line.mnemonic +
                                              " must be a register");
                        bad = true;
                        break;
                    }
                    vals[i] = it->second;
                    break;
                }
            }
        }
        if (bad) continue;

        isa::Instruction instr;
        instr.opcode = info->code;
        instr.mode = line.exec_mode;
        // non-address immediate operands are capped at the 10-bit field
        for (std::size_t i = 0; i < line.operands.size(); ++i) {
            bool is_addr = kinds[i] == isa::OperandKind::ADDR;
            if (!is_addr && vals[i] > 0x3FF) {
                err(line.line_no, "operand " + std::to_string(i + 1) +
                                      " out of range (max 1023)");
                bad = true;
            }
        }
        if (bad) continue;

        if (info->takes_address() && vals[1] > 0x3FF) {
            // memory form: 12-bit address split across the operand fields
            instr.mode |= isa::kModeMemForm;
            instr.operand_a = static_cast<std::uint16_t>((vals[0] << 2) |
                                                         (vals[1] >> 10));
            instr.operand_b = static_cast<std::uint16_t>(vals[1] & 0x3FF);
        } else {
            instr.operand_a = static_cast<std::uint16_t>(vals[0]);
            instr.operand_b = static_cast<std::uint16_t>(vals[1]);
        }

        result.program.words.push_back(isa::encode(instr, table));
        result.program.source_map.push_back(line.line_no);
    }
    return result;
}

AssembleResult assemble_text(std::string_view text, const isa::OpcodeTable& table) {
    ParseResult parsed = parse(text);
    if (!parsed.ok()) {
        AssembleResult r;
        r.errors = std::move(parsed.errors);
        return r;
    }
    return assemble(parsed.lines, table);
}

std::string disassemble(const Program& program, const isa::OpcodeTable& table) {
    std::string out;
    for (std::size_t i = 0; i < program.words.size(); ++i) {
        isa::Instruction instr;
        try {
            instr = isa::decode(program.words[i], table);
        } catch (const MpuError&) {
            throw MpuError(ErrCode::UndefinedOpcode,
                           "word " + std::to_string(i));
        }
        const isa::OpcodeInfo* info = table.find(instr.opcode);
        out += info->mnemonic;
        if (instr.exec_mode() != isa::ExecMode::SPSO) {
            out += '.';
            out += isa::exec_mode_name(instr.exec_mode());
        }
        std::array<std::uint32_t, 2> vals = {instr.reg_a(), instr.address()};
        if (!instr.mem_form()) {
            vals = {instr.operand_a, instr.operand_b};
        }
        std::array<isa::OperandKind, 2> kinds = {info->operand_a, info->operand_b};
        for (int k = 0; k < info->arity; ++k) {
            out += k == 0 ? " " : ", ";
            if (kinds[k] == isa::OperandKind::REG) out += 'r';
            out += std::to_string(vals[k]);
        }
        out += '\n';
    }
    return out;
}

std::string to_mpo_bytes(const Program& program) {
    std::string out = "MPU1";
    auto be32 = [&](std::uint32_t v) {
        out.push_back(static_cast<char>(v >> 24));
        out.push_back(static_cast<char>(v >> 16));
        out.push_back(static_cast<char>(v >> 8));
        out.push_back(static_cast<char>(v));
    };
    be32(static_cast<std::uint32_t>(program.words.size()));
    for (std::uint32_t w : program.words) be32(w);
    return out;
}

Program from_mpo_bytes(std::string_view bytes) {
    if (bytes.size() < 8 || bytes.substr(0, 4) != "MPU1")
        throw MpuError(ErrCode::FormatError, "bad .mpo magic");
    auto rd32 = [&](std::size_t off) {
        return (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off])) << 24) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 1])) << 16) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 2])) << 8) |
               static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 3]));
    };
    std::uint32_t count = rd32(4);
    if (bytes.size() != 8 + 4ull * count)
        throw MpuError(ErrCode::FormatError, ".mpo length mismatch");
    Program p;
    p.words.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) p.words.push_back(rd32(8 + 4ull * i));
    return p;
}

}  // namespace mpu::masm
