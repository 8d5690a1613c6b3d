#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mpu::isa {

// 32-bit instruction word:
//
//   31      24 23  20 19        10 9          0
//   [ opcode ] [mode] [ operand_a ] [ operand_b ]
//
// mode bits 1..0 select the execution mode, bit 2 flags memory form
// (12-bit effective address: operand_a bits 1..0 are address bits 11..10
// and the register index moves to operand_a bits 5..2), bit 3 is reserved
// and must be zero. Object memory holds 4096 entries.

enum class ExecMode : std::uint8_t {
    SPSO = 0,  // single process, single object
    SPMO = 1,  // single process, multiple objects
    MPSO = 2,  // multiple processes, single object
    MPMO = 3,  // multiple processes, multiple objects
};

inline constexpr std::uint8_t kModeMemForm = 0x4;
inline constexpr std::uint32_t kObjectMemorySize = 4096;
inline constexpr int kObjectRegisterCount = 16;

const char* exec_mode_name(ExecMode m);

enum class InstructionClass : std::uint8_t {
    SINGLE_OBJECT,
    MULTI_OBJECT,
    OBJECT_MEMORY,
    INTERNAL_EXTERNAL,
    OBJECT_RELATIONSHIP,
    MEDICAL,
};

const char* class_name(InstructionClass c);

struct Instruction {
    std::uint8_t opcode = 0;
    std::uint8_t mode = 0;  // 4-bit field, see layout note above
    std::uint16_t operand_a = 0;  // 10 bits
    std::uint16_t operand_b = 0;  // 10 bits

    ExecMode exec_mode() const { return static_cast<ExecMode>(mode & 0x3); }
    bool mem_form() const { return (mode & kModeMemForm) != 0; }

    // 12-bit effective object-memory address; register/immediate index.
    std::uint16_t address() const {
        return mem_form()
                   ? static_cast<std::uint16_t>(((operand_a & 0x3) << 10) | operand_b)
                   : operand_b;
    }
    std::uint16_t reg_a() const {
        return mem_form() ? static_cast<std::uint16_t>((operand_a >> 2) & 0xF)
                          : operand_a;
    }

    friend bool operator==(const Instruction&, const Instruction&) = default;
};

// Opcode numbering. 0x00 and 0xFF are reserved: HALT decodes from zeroed
// memory, 0xFF never decodes (erased memory reads as illegal).
enum Opcode : std::uint8_t {
    OP_HALT = 0x00,
    OP_LOADO = 0x01,
    OP_STOREO = 0x02,
    OP_GETATTR = 0x03,
    OP_SETATTR = 0x04,
    OP_KFILTER = 0x05,
    OP_NOPO = 0x06,
    OP_MERGE = 0x20,
    OP_COMMON = 0x21,
    OP_OVERLAP = 0x22,
    OP_MATCH = 0x23,
    OP_OMFETCH = 0x40,
    OP_OMSTORE = 0x41,
    OP_NETGET = 0x60,
    OP_NETPUT = 0x61,
    OP_LINKP = 0x80,
    OP_LINKS = 0x81,
    OP_PRUNE = 0x82,
    OP_GRAFT = 0x83,
    OP_DIAG = 0xA0,
    OP_RXPLAN = 0xA1,
    OP_SAFECHK = 0xA2,
    OP_CONF = 0xA3,
    OP_PREDLOG = 0xA4,
};

// How an operand field renders in assembly / on the ISA card.
enum class OperandKind : std::uint8_t { NONE, REG, IMM, ADDR };

struct OpcodeInfo {
    std::uint8_t code;
    std::string_view mnemonic;
    InstructionClass klass;
    int arity;  // 0..2
    std::uint8_t modes_allowed;  // bitmask indexed by ExecMode value
    OperandKind operand_a;
    OperandKind operand_b;
    // Which operand supplies the object set under SPMO/MPMO ('A', 'B', or 0).
    char spmo_source;
    // Per-opcode base step confidence, scale 1e-4.
    std::uint32_t base_confidence;
    // Sub-process chain; length > 1 enables MPSO/MPMO decomposition.
    std::vector<std::string_view> chain;

    bool allows(ExecMode m) const {
        return (modes_allowed >> static_cast<int>(m)) & 1;
    }
    bool takes_address() const {
        return operand_b == OperandKind::ADDR;
    }
};

// Immutable after construction; one shared instance for the whole process.
class OpcodeTable {
public:
    static const OpcodeTable& standard();

    const OpcodeInfo* find(std::uint8_t code) const;
    const OpcodeInfo* find_mnemonic(std::string_view upper) const;
    const std::vector<OpcodeInfo>& all() const { return infos_; }

private:
    OpcodeTable();
    std::vector<OpcodeInfo> infos_;
    std::array<int, 256> by_code_;
};

// Bit-exact encode/decode. Throws MpuError{UndefinedOpcode|ModeNotAllowed}.
std::uint32_t encode(const Instruction& instr,
                     const OpcodeTable& table = OpcodeTable::standard());
Instruction decode(std::uint32_t word,
                   const OpcodeTable& table = OpcodeTable::standard());

InstructionClass class_of(std::uint8_t opcode,
                          const OpcodeTable& table = OpcodeTable::standard());

// Human-readable ISA reference card, ends with "CARDHASH <hex>".
std::string isa_card(const OpcodeTable& table = OpcodeTable::standard());

}  // namespace mpu::isa
