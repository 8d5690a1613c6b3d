#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mpu/assembler.hpp"
#include "mpu/dataset.hpp"
#include "mpu/fixed.hpp"
#include "mpu/isa.hpp"
#include "mpu/object_store.hpp"
#include "mpu/symptom_match.hpp"

namespace mpu::vm {

using store::ObjectId;

// In-model faults: the VM halts with the code in the trace instead of
// raising -- the network layer needs a final state to report.
enum class FaultCode : std::uint8_t {
    NONE = 0,
    DECODE = 1,        // undefined opcode/mode or pc ran off the program
    OBJECT = 2,        // operand register empty / object missing / wrong shape
    BAD_ATTRIBUTE = 3,
    SCHEMA = 4,
    EMPTY_BANK = 5,
    TREE = 6,          // level violation / unknown node / cycle
    OUTCOME = 7,       // code not in the outcome table
    STORE_FULL = 8,
    RANGE = 9,
};

const char* fault_name(FaultCode f);

// result_code values above this bit carry a FaultCode in the low byte.
inline constexpr std::uint32_t kFaultResultBase = 0xF0000000u;
// NETGET/NETPUT NAK outcome (in-model, not a fault).
inline constexpr std::uint32_t kNakResult = 0xE0000001u;

struct TraceRecord {
    std::uint64_t tick = 0;
    std::uint32_t pc = 0;
    std::uint32_t word = 0;
    std::uint8_t opcode = 0;
    std::string mnemonic;
    std::uint8_t mode = 0;
    std::vector<ObjectId> resolved_operands;
    std::vector<std::uint32_t> unit_results;  // one per executed work item
    std::uint32_t result_code = 0;            // aggregate, printed in the line
    Conf4 step_confidence = kConfOne;
    Conf4 collective_confidence = kConfOne;   // register value after the step

    std::string line() const;  // tab-separated trace line, no newline
};

struct Trace {
    bool s1_closed = false;
    std::vector<TraceRecord> records;
};

// Full text, one line per record plus final "TRACEHASH <16-hex>\n".
std::string format_trace(const Trace& trace);
std::uint64_t trace_hash(const Trace& trace);

// --- execution-mode dispatch -------------------------------------------------

struct WorkItem {
    int phase = -1;  // -1 = fused op, otherwise index into the opcode chain
    std::optional<ObjectId> object;

    friend bool operator==(const WorkItem&, const WorkItem&) = default;
};

// Pure work-list builder. `source` is the operand set designated by the
// opcode's spmo_source. Ordering: SPMO ascending over the set, MPSO chain
// order, MPMO object-major. Throws ModeNotAllowed.
std::vector<WorkItem> exec_mode_dispatch(const isa::OpcodeInfo& info,
                                         isa::ExecMode mode,
                                         const std::vector<ObjectId>& source);

// --- medical reports ----------------------------------------------------------

enum class Verdict : std::uint8_t { ALLOW, WARN, BLOCK };

const char* verdict_name(Verdict v);

struct SafetyCell {
    std::vector<std::string> fired_rules;  // rule ids, soft and hard
    bool hard = false;
};

// n sub-procedures x m patient attributes.
struct SafetyReport {
    ObjectId patient = 0;
    std::vector<ObjectId> procedures;            // row order
    std::vector<std::string> attribute_names;    // column order
    std::vector<std::vector<SafetyCell>> matrix; // [procedure][attribute]
    std::vector<Verdict> verdicts;
    std::vector<std::vector<std::string>> verdict_rules;
    bool rules_loaded = true;

    std::size_t n() const { return procedures.size(); }
    std::size_t m() const { return attribute_names.size(); }
};

// Fires every rule whose predicate holds on the patient and whose tag
// matches the sub-procedure's "tag" attribute. Never mutates objects.
SafetyReport safecheck(const store::ObjectStore& objects, ObjectId patient,
                       const std::vector<ObjectId>& procedures,
                       const std::vector<data::SafetyRule>& rules);

struct PredictionEntry {
    std::uint64_t tick;
    std::uint8_t predicted;
    std::uint8_t observed;
    bool match;
};

struct PredictionLog {
    std::vector<PredictionEntry> entries;
    std::size_t mismatches = 0;

    // mismatches / entries, fixed-point 1e-4, round-half-even; 0 when empty.
    Conf4 divergence_rate() const;
};

// --- knowledge-base proposals -------------------------------------------------

enum class ProposalKind : std::uint8_t { NEW_RELATION, NEW_MACRO_OPCODE, OBJECT_UPDATE };
enum class ProposalStatus : std::uint8_t { PENDING, COMMITTED, REJECTED };

const char* proposal_kind_name(ProposalKind k);
const char* proposal_status_name(ProposalStatus s);

struct KbProposal {
    std::uint32_t id = 0;
    ProposalKind kind;
    std::string payload;  // immutable after creation
    std::set<std::string> endorsements;
    ProposalStatus status = ProposalStatus::PENDING;
};

struct LearnParams {
    int min_cooccur = 2;
    int ngram_len = 2;
    int min_ngram_count = 2;
};

// Mines a learning-mode trace into proposals: co-occurring operand pairs
// become NEW_RELATION, repeated opcode n-grams become NEW_MACRO_OPCODE.
// Deterministic: sorted by (kind, payload). Throws LearningDisabled when
// the trace ran with S-1 open.
std::vector<KbProposal> learn_from_trace(const Trace& trace,
                                         const LearnParams& params);

// Collective confidence of a chain: product with round-half-even at 1e-4.
// Empty chain -> 1.0. Throws OutOfRange above 1.0.
Conf4 collective_confidence(std::span<const Conf4> steps);

// Keep objects whose present-attribute score reaches the threshold; input
// order preserved.
std::vector<ObjectId> kfilter(const store::ObjectStore& objects,
                              const std::vector<ObjectId>& set,
                              const std::map<std::string, std::int64_t>& score_table,
                              std::int64_t threshold);

// --- network port -------------------------------------------------------------

struct NetRequest {
    std::string subject;
    std::string command;
    std::vector<std::string> burst;
};

struct NetResponse {
    bool ok = false;
    std::vector<std::string> results;
    std::string status;  // "ACK" or "NAK:<reason>"
};

// NETGET/NETPUT bind here. submit() returns the response inline for
// synchronous ports; nullopt suspends the VM until complete_net().
class NetworkPort {
public:
    virtual ~NetworkPort() = default;
    virtual std::optional<NetResponse> submit(const NetRequest& request) = 0;
};

// --- the MPU -------------------------------------------------------------------

enum class StepStatus : std::uint8_t { OK, HALTED, FAULT, NEED_NET };
enum class RunOutcome : std::uint8_t { HALTED, FAULT, STEP_LIMIT, NEED_NET };

const char* run_outcome_name(RunOutcome o);

struct VmOptions {
    bool s1_closed = false;           // learning mode switch S-1
    std::vector<std::uint32_t> match_weights;  // per-dimension, empty = 1s
};

struct RxSchedule {
    ObjectId patient;
    std::vector<ObjectId> scheduled;
    std::vector<ObjectId> blocked;
};

class Vm {
public:
    Vm(data::Dataset dataset, masm::Program program, VmOptions options = {});

    // Executes one instruction; appends exactly one TraceRecord unless the
    // instruction is a suspended network op (NEED_NET traces on resume).
    StepStatus step();

    // Runs until halt, fault, the step budget, or a suspended network op.
    RunOutcome run(std::size_t max_steps);

    const NetRequest* pending_request() const {
        return pending_ ? &pending_->request : nullptr;
    }
    StepStatus complete_net(const NetResponse& response);

    void set_port(NetworkPort* port) { port_ = port; }
    void set_tick(std::uint64_t tick) { external_clock_ = true; tick_ = tick; }

    bool halted() const { return halted_; }
    FaultCode fault() const { return fault_; }
    Conf4 confidence_register() const { return confidence_; }
    std::uint32_t pc() const { return pc_; }
    const Trace& trace() const { return trace_; }
    const data::Dataset& dataset() const { return dataset_; }
    const store::ObjectStore& objects() const { return dataset_.objects; }
    const std::vector<ObjectId>& reg(int r) const { return registers_[r]; }
    void load_register(int r, std::vector<ObjectId> ids);

    const std::vector<match::Neighbor>& diag_results() const { return diag_results_; }
    const std::vector<std::string>& last_net_results() const { return net_results_; }
    const std::vector<SafetyReport>& safety_reports() const { return safety_reports_; }
    const std::vector<RxSchedule>& rx_schedules() const { return rx_schedules_; }
    const PredictionLog& prediction_log() const { return prediction_log_; }
    const std::vector<KbProposal>& proposals() const { return proposals_; }
    const store::KnowledgeTree& knowledge_tree() const { return tree_; }

    // Work list the next instruction would dispatch; exposed for tests.
    std::vector<WorkItem> work_list(const isa::Instruction& instr) const;

private:
    struct Pending {
        NetRequest request;
        isa::Instruction instr;
        std::uint32_t word;
    };

    const std::vector<ObjectId>& source_set(const isa::Instruction& instr,
                                            const isa::OpcodeInfo& info) const;
    ObjectId single(const std::vector<ObjectId>& set) const;  // throws Fault
    const store::MedicalObject& live_object(ObjectId id) const;

    std::uint32_t run_item(const isa::Instruction& instr,
                           const isa::OpcodeInfo& info, const WorkItem& item,
                           TraceRecord& record);
    std::uint32_t exec_core(const isa::Instruction& instr,
                            const isa::OpcodeInfo& info,
                            std::optional<ObjectId> object, int phase,
                            TraceRecord& record);
    void finish_record(TraceRecord record, Conf4 step_conf);
    StepStatus fault_halt(FaultCode code, TraceRecord record);
    NetRequest build_net_request(const isa::Instruction& instr,
                                 const isa::OpcodeInfo& info);
    StepStatus apply_net_response(const isa::Instruction& instr,
                                  const isa::OpcodeInfo& info,
                                  const NetResponse& response,
                                  TraceRecord record);

    // exec helpers
    std::uint32_t do_diag(ObjectId subject, std::uint16_t k, int phase,
                          Conf4& step_conf);
    std::uint32_t do_safecheck(ObjectId patient,
                               const std::vector<ObjectId>& procedures,
                               int phase);
    std::uint32_t do_rxplan(ObjectId patient,
                            const std::vector<ObjectId>& procedures, int phase);

    // fault signalling inside exec helpers
    struct VmFault {
        FaultCode code;
    };

    data::Dataset dataset_;
    masm::Program program_;
    VmOptions options_;

    std::uint32_t pc_ = 0;
    std::array<std::vector<ObjectId>, isa::kObjectRegisterCount> registers_;
    bool halted_ = false;
    FaultCode fault_ = FaultCode::NONE;
    Conf4 confidence_ = kConfOne;
    std::uint64_t tick_ = 0;
    bool external_clock_ = false;

    Trace trace_;
    std::optional<store::AttributeValue> latch_;
    std::vector<match::Neighbor> diag_results_;
    std::vector<std::string> net_results_;
    std::vector<SafetyReport> safety_reports_;
    std::vector<RxSchedule> rx_schedules_;
    PredictionLog prediction_log_;
    std::vector<KbProposal> proposals_;
    store::KnowledgeTree tree_ = store::KnowledgeTree::with_root("root");

    NetworkPort* port_ = nullptr;
    std::optional<Pending> pending_;

    // per-instruction phase context (MPSO/MPMO staging)
    std::optional<match::SymptomVector> staged_query_;
    std::optional<SafetyReport> staged_report_;
};

}  // namespace mpu::vm
