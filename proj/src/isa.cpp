#include "mpu/isa.hpp"

#include <cstdio>
#include <sstream>

#include "mpu/errors.hpp"
#include "mpu/hash.hpp"

namespace mpu::isa {

namespace {

constexpr std::uint8_t kSpso = 1 << 0;
constexpr std::uint8_t kSpmo = 1 << 1;
constexpr std::uint8_t kMpso = 1 << 2;
constexpr std::uint8_t kMpmo = 1 << 3;

}  // namespace

const char* exec_mode_name(ExecMode m) {
    switch (m) {
        case ExecMode::SPSO: return "spso";
        case ExecMode::SPMO: return "spmo";
        case ExecMode::MPSO: return "mpso";
        case ExecMode::MPMO: return "mpmo";
    }
    return "?";
}

const char* class_name(InstructionClass c) {
    switch (c) {
        case InstructionClass::SINGLE_OBJECT: return "SINGLE_OBJECT";
        case InstructionClass::MULTI_OBJECT: return "MULTI_OBJECT";
        case InstructionClass::OBJECT_MEMORY: return "OBJECT_MEMORY";
        case InstructionClass::INTERNAL_EXTERNAL: return "INTERNAL_EXTERNAL";
        case InstructionClass::OBJECT_RELATIONSHIP: return "OBJECT_RELATIONSHIP";
        case InstructionClass::MEDICAL: return "MEDICAL";
    }
    return "?";
}

OpcodeTable::OpcodeTable() {
    using IC = InstructionClass;
    using OK = OperandKind;
    auto add = [&](std::uint8_t code, std::string_view mn, IC klass, int arity,
                   std::uint8_t modes, OK a, OK b, char spmo_src,
                   std::uint32_t conf,
                   std::vector<std::string_view> chain = {"EXEC"}) {
        infos_.push_back(OpcodeInfo{code, mn, klass, arity, modes, a, b,
                                    spmo_src, conf, std::move(chain)});
    };

    add(OP_HALT, "HALT", IC::SINGLE_OBJECT, 0, kSpso, OK::NONE, OK::NONE, 0, 10000);
    add(OP_LOADO, "LOADO", IC::SINGLE_OBJECT, 2, kSpso, OK::REG, OK::ADDR, 0, 10000);
    add(OP_STOREO, "STOREO", IC::SINGLE_OBJECT, 2, kSpso, OK::REG, OK::ADDR, 0, 10000);
    add(OP_GETATTR, "GETATTR", IC::SINGLE_OBJECT, 2, kSpso | kSpmo, OK::REG,
        OK::IMM, 'A', 10000);
    add(OP_SETATTR, "SETATTR", IC::SINGLE_OBJECT, 1, kSpso | kSpmo, OK::REG,
        OK::NONE, 'A', 10000);
    add(OP_KFILTER, "KFILTER", IC::SINGLE_OBJECT, 2, kSpso, OK::REG, OK::IMM,
        0, 10000);
    add(OP_NOPO, "NOPO", IC::SINGLE_OBJECT, 0, kSpso, OK::NONE, OK::NONE, 0, 10000);

    add(OP_MERGE, "MERGE", IC::MULTI_OBJECT, 2, kSpso | kSpmo, OK::REG,
        OK::REG, 'B', 10000);
    add(OP_COMMON, "COMMON", IC::MULTI_OBJECT, 2, kSpso | kSpmo, OK::REG,
        OK::REG, 'B', 10000);
    add(OP_OVERLAP, "OVERLAP", IC::MULTI_OBJECT, 2, kSpso | kSpmo, OK::REG,
        OK::REG, 'B', 10000);
    add(OP_MATCH, "MATCH", IC::MULTI_OBJECT, 2, kSpso | kSpmo, OK::REG,
        OK::REG, 'B', 9900);

    add(OP_OMFETCH, "OMFETCH", IC::OBJECT_MEMORY, 2, kSpso, OK::REG, OK::ADDR,
        0, 10000);
    add(OP_OMSTORE, "OMSTORE", IC::OBJECT_MEMORY, 2, kSpso, OK::REG, OK::ADDR,
        0, 10000);

    add(OP_NETGET, "NETGET", IC::INTERNAL_EXTERNAL, 2, kSpso, OK::REG,
        OK::IMM, 0, 9900);
    add(OP_NETPUT, "NETPUT", IC::INTERNAL_EXTERNAL, 2, kSpso, OK::REG,
        OK::IMM, 0, 9900);

    add(OP_LINKP, "LINKP", IC::OBJECT_RELATIONSHIP, 2, kSpso | kSpmo, OK::REG,
        OK::REG, 'B', 10000);
    add(OP_LINKS, "LINKS", IC::OBJECT_RELATIONSHIP, 2, kSpso | kSpmo, OK::REG,
        OK::REG, 'B', 10000);
    add(OP_PRUNE, "PRUNE", IC::OBJECT_RELATIONSHIP, 1, kSpso, OK::IMM,
        OK::NONE, 0, 10000);
    add(OP_GRAFT, "GRAFT", IC::OBJECT_RELATIONSHIP, 2, kSpso | kSpmo, OK::REG,
        OK::IMM, 'A', 10000);

    add(OP_DIAG, "DIAG", IC::MEDICAL, 2, kSpso | kSpmo | kMpso | kMpmo,
        OK::REG, OK::IMM, 'A', 9800, {"FETCH_SIG", "RANK"});
    add(OP_RXPLAN, "RXPLAN", IC::MEDICAL, 2, kSpso | kMpso, OK::REG, OK::REG,
        0, 9700, {"SAFETY", "SCHEDULE"});
    add(OP_SAFECHK, "SAFECHK", IC::MEDICAL, 2, kSpso | kMpso, OK::REG,
        OK::REG, 0, 9900, {"BUILD_MATRIX", "APPLY_RULES"});
    add(OP_CONF, "CONF", IC::MEDICAL, 1, kSpso, OK::IMM, OK::NONE, 0, 10000);
    add(OP_PREDLOG, "PREDLOG", IC::MEDICAL, 2, kSpso, OK::IMM, OK::IMM, 0, 10000);

    by_code_.fill(-1);
    for (std::size_t i = 0; i < infos_.size(); ++i)
        by_code_[infos_[i].code] = static_cast<int>(i);
}

const OpcodeTable& OpcodeTable::standard() {
    static const OpcodeTable table;
    return table;
}

const OpcodeInfo* OpcodeTable::find(std::uint8_t code) const {
    int idx = by_code_[code];
    return idx < 0 ? nullptr : &infos_[idx];
}

const OpcodeInfo* OpcodeTable::find_mnemonic(std::string_view upper) const {
    for (const auto& info : infos_)
        if (info.mnemonic == upper) return &info;
    return nullptr;
}

namespace {

// Shared validity check for encode and decode.
const OpcodeInfo& check(std::uint8_t opcode, std::uint8_t mode,
                        const OpcodeTable& table) {
    const OpcodeInfo* info = table.find(opcode);
    if (!info)
        throw MpuError(ErrCode::UndefinedOpcode,
                       "opcode 0x" + std::to_string(opcode));
    if (mode & 0x8)
        throw MpuError(ErrCode::ModeNotAllowed, "reserved mode bit set");
    if ((mode & kModeMemForm) && !info->takes_address())
        throw MpuError(ErrCode::ModeNotAllowed,
                       std::string("memory form invalid for ") +
                           std::string(info->mnemonic));
    ExecMode em = static_cast<ExecMode>(mode & 0x3);
    if (!info->allows(em))
        throw MpuError(ErrCode::ModeNotAllowed,
                       std::string(info->mnemonic) + "." + exec_mode_name(em));
    return *info;
}

}  // namespace

std::uint32_t encode(const Instruction& instr, const OpcodeTable& table) {
    check(instr.opcode, instr.mode, table);
    return (static_cast<std::uint32_t>(instr.opcode) << 24) |
           (static_cast<std::uint32_t>(instr.mode & 0xF) << 20) |
           (static_cast<std::uint32_t>(instr.operand_a & 0x3FF) << 10) |
           (instr.operand_b & 0x3FF);
}

Instruction decode(std::uint32_t word, const OpcodeTable& table) {
    Instruction instr;
    instr.opcode = static_cast<std::uint8_t>(word >> 24);
    instr.mode = static_cast<std::uint8_t>((word >> 20) & 0xF);
    instr.operand_a = static_cast<std::uint16_t>((word >> 10) & 0x3FF);
    instr.operand_b = static_cast<std::uint16_t>(word & 0x3FF);
    check(instr.opcode, instr.mode, table);
    return instr;
}

InstructionClass class_of(std::uint8_t opcode, const OpcodeTable& table) {
    const OpcodeInfo* info = table.find(opcode);
    if (!info)
        throw MpuError(ErrCode::UndefinedOpcode,
                       "opcode 0x" + std::to_string(opcode));
    return info->klass;
}

std::string isa_card(const OpcodeTable& table) {
    std::ostringstream out;
    out << "MPU instruction set, word = opcode<<24 | mode<<20 | a<<10 | b\n";
    out << "mode: bits 1..0 exec mode, bit 2 memory form, bit 3 reserved\n";
    out << "code\tmnemonic\tclass\tarity\tmodes\toperands\tconf\tchain\n";
    char buf[8];
    for (const auto& info : table.all()) {
        std::snprintf(buf, sizeof buf, "0x%02X", info.code);
        out << buf << '\t' << info.mnemonic << '\t' << class_name(info.klass)
            << '\t' << info.arity << '\t';
        bool first = true;
        for (int m = 0; m < 4; ++m) {
            if (info.allows(static_cast<ExecMode>(m))) {
                if (!first) out << ',';
                out << exec_mode_name(static_cast<ExecMode>(m));
                first = false;
            }
        }
        out << '\t';
        auto kind = [](OperandKind k) {
            switch (k) {
                case OperandKind::NONE: return "-";
                case OperandKind::REG: return "reg";
                case OperandKind::IMM: return "imm";
                case OperandKind::ADDR: return "addr";
            }
            return "-";
        };
        out << kind(info.operand_a) << ',' << kind(info.operand_b) << '\t';
        out << info.base_confidence << '\t';
        for (std::size_t i = 0; i < info.chain.size(); ++i)
            out << (i ? "," : "") << info.chain[i];
        out << '\n';
    }
    out << "reserved\t0x00 HALT (zeroed memory), 0xFF illegal\n";
    std::string text = out.str();
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(text)));
    return text + "CARDHASH " + hash + "\n";
}

}  // namespace mpu::isa
