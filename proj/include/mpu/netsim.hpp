#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "mpu/dataset.hpp"
#include "mpu/vm.hpp"

namespace mpu::net {

enum class NodeKind : std::uint8_t { MPU = 1, BANK = 2, CONTROL_POINT = 3, KMS = 4 };

struct NodeId {
    NodeKind kind;
    std::uint16_t index;

    std::uint16_t addr() const {
        return static_cast<std::uint16_t>((static_cast<int>(kind) << 12) | index);
    }
    std::string name() const;
    auto operator<=>(const NodeId&) const = default;
};

std::optional<NodeId> parse_node_name(const std::string& name);

enum class PacketKind : std::uint8_t {
    CMD = 1, DATA = 2, RESULT = 3, ACK = 4, PROPOSE = 5, ENDORSE = 6, NAK = 7,
};

const char* packet_kind_name(PacketKind k);

inline constexpr std::size_t kMaxPayload = 1024;

struct Packet {
    std::uint32_t seq = 0;  // global send order
    NodeId src, dst;
    PacketKind kind = PacketKind::CMD;
    std::uint32_t procedure_id = 0;
    std::uint16_t sub_index = 0;
    std::string payload;  // <= 1024 bytes
};

// Fixed big-endian header + payload:
// seq(4) src(2) dst(2) kind(1) procedure_id(4) sub_index(2) length(2)
std::string packet_bytes(const Packet& p);
Packet packet_from_bytes(std::string_view bytes);  // throws FormatError

// Subject-matter directory: longest prefix match over unique keys.
// Throws NoSuchSubject.
NodeId resolve(const std::map<std::string, NodeId>& directory,
               const std::string& subject);

struct Link {
    NodeId a, b;
    std::uint32_t latency = 1;  // ticks, >= 1
};

enum class KmsPolicy : std::uint8_t { ENDORSE_ALL, REJECT_ALL, ENDORSE_KIND };

struct Topology {
    std::vector<NodeId> nodes;
    std::vector<Link> links;
    std::map<std::string, NodeId> directory;  // subject prefix -> bank
    int quorum = 1;
    std::uint32_t timeout_ticks = 100;
    std::set<NodeId> protected_stores;
    std::map<NodeId, std::string> bank_data;  // dataset text per bank
    std::map<NodeId, std::pair<masm::Program, std::string>> node_programs;
    std::map<NodeId, std::pair<KmsPolicy, std::string>> kms_policies;
    // directed link -> explicit drop ticks
    std::map<std::pair<NodeId, NodeId>, std::set<std::uint64_t>> drop_schedule;
};

// Parses NODE/LINK/DIR/QUORUM/TIMEOUT/BANKDATA/NODEPROG/KMSPOLICY/DROP
// records; BANKDATA/NODEPROG paths resolve against base_dir. Validates
// node uniqueness, single control point, connectivity, quorum bounds.
Topology parse_topology(const std::string& text, const std::string& base_dir);

// One scheduled scenario action (the EVENT records).
struct ScenarioEvent {
    std::uint64_t tick = 0;
    std::vector<std::string> args;  // action name first
    int line_no = 0;
};

std::vector<ScenarioEvent> parse_scenario(const std::string& text);

// --- per-procedure view --------------------------------------------------------

enum class Terminal : std::uint8_t { OPEN, ACKED, NAKED };

struct ProcedureLog {
    std::uint32_t procedure_id = 0;
    NodeId origin;                 // the MPU that runs the procedure
    std::vector<Packet> packets;   // every packet of the procedure, seq order
    std::map<std::uint16_t, Terminal> terminals;
    std::map<std::uint16_t, std::string> nak_reasons;

    bool complete() const {
        for (const auto& [sub, t] : terminals)
            if (t == Terminal::OPEN) return false;
        return true;
    }
};

struct AccumEntry {
    std::uint16_t sub_index;
    bool ok;
    std::string payload;  // RESULT payloads joined with '\n', seq order
    std::string error;    // NAK reason when !ok
};

// Groups RESULT payloads by sub-procedure, ascending; NAKed sub-procedures
// become explicit error entries. Throws IncompleteProcedure.
std::vector<AccumEntry> accumulate(const ProcedureLog& log);

// --- the simulator --------------------------------------------------------------

struct SimStats {
    std::uint64_t sent = 0;
    std::uint64_t delivered = 0;
    std::uint64_t dropped = 0;   // firewall + link drops
    std::uint64_t cmds = 0;      // CMD packets injected
    std::uint64_t terminals = 0; // ACK/NAK terminals recorded
};

class Simulation {
public:
    Simulation(Topology topology, std::uint64_t seed = 0);

    void load_scenario(const std::vector<ScenarioEvent>& events);

    // Drains the event queue; throws MaxTicksExceeded when simulated time
    // passes the budget with work still queued.
    void run(std::uint64_t max_ticks);

    // Schedules a sub-procedure dispatch at the given tick (the
    // dispatch_subprocedure entry point; scenario events route here too).
    std::uint32_t dispatch(NodeId mpu, const std::string& subject,
                           const std::string& command,
                           const std::vector<std::string>& burst,
                           std::uint64_t at_tick,
                           std::optional<std::uint32_t> procedure = {},
                           std::uint16_t sub_index = 0);

    // Direct bank-initiated proposal (the kms_propose entry point).
    std::uint32_t propose(NodeId bank, vm::ProposalKind kind,
                          const std::string& payload, std::uint64_t at_tick);

    const std::vector<std::string>& transcript_lines() const { return transcript_; }
    std::string transcript_text() const;  // lines + "NETHASH <16-hex>\n"
    std::uint64_t transcript_hash() const;

    const SimStats& stats() const { return stats_; }
    std::uint64_t current_tick() const { return now_; }

    const std::map<std::uint32_t, ProcedureLog>& procedures() const {
        return procedures_;
    }
    const std::vector<vm::KbProposal>& proposals() const { return proposals_; }

    std::uint64_t bank_content_hash(NodeId bank) const;
    const data::Dataset& bank_dataset(NodeId bank) const;
    const vm::Vm* node_vm(NodeId mpu) const;

    // per directed link: packet seqs in enqueue order and delivery order
    struct LinkLog {
        std::vector<std::uint32_t> enqueued;
        std::vector<std::uint32_t> delivered;
    };
    const std::map<std::pair<NodeId, NodeId>, LinkLog>& link_logs() const {
        return link_logs_;
    }

private:
    struct BankState {
        data::Dataset dataset;
        std::uint32_t version = 0;
        // burst reassembly: (proc, sub) -> expected DATA count + received
        struct PendingCmd {
            Packet cmd;
            std::size_t burst_expected = 0;
            std::vector<std::string> burst;
        };
        std::map<std::pair<std::uint32_t, std::uint16_t>, PendingCmd> pending;
    };

    struct ProposalRound {
        std::uint32_t proposal_index = 0;  // into proposals_
        NodeId bank;
        int endorse = 0, reject = 0, expected = 0;
        std::optional<Packet> requester_cmd;  // reply target when set
    };

    struct MpuState {
        std::unique_ptr<vm::Vm> vm;
        bool vm_started = false;
        // procedure ids whose terminal should resume the VM
        std::set<std::uint32_t> vm_waits;
        std::optional<std::uint32_t> pending_resume;
    };

    // packets (or a proposal round) staged for a later tick; keeps seq
    // allocation in event order
    struct PendingInjection {
        std::uint64_t tick = 0;
        std::vector<Packet> packets;
        std::optional<std::tuple<NodeId, vm::ProposalKind, std::string>> proposal;
    };

    struct Event {
        std::uint64_t tick;
        std::uint64_t order;
        enum Kind { HOP, SCENARIO, TIMER, VM_RESUME, INJECT } kind;
        Packet packet;          // HOP: packet currently arriving at `at`
        NodeId at{};            // HOP: node the packet reaches this hop
        std::size_t scenario_index = 0;  // SCENARIO / INJECT index
        std::uint32_t proc = 0;       // TIMER
        std::uint16_t sub = 0;        // TIMER
        NodeId origin{};              // TIMER / VM_RESUME / HOP previous node
    };
    struct EventOrder {
        bool operator()(const Event& a, const Event& b) const {
            return a.tick != b.tick ? a.tick > b.tick : a.order > b.order;
        }
    };

    void push_event(Event ev);
    void inject(Packet packet);  // allocates seq, first hop
    void forward(const Packet& packet, NodeId from);
    void deliver(const Packet& packet);
    void log_line(std::uint64_t tick, const Packet& p, const char* kind_text);

    void handle_scenario(const ScenarioEvent& ev);
    void handle_bank(const Packet& packet);
    void bank_process(BankState& bank, const Packet& cmd,
                      const std::vector<std::string>& burst);
    void handle_kms(const Packet& packet);
    void handle_mpu(const Packet& packet);
    void record_terminal(std::uint32_t proc, std::uint16_t sub, Terminal t,
                         const std::string& reason);
    void start_proposal(NodeId bank, vm::ProposalKind kind,
                        const std::string& payload,
                        std::optional<Packet> requester);
    void finish_proposal(ProposalRound& round);
    void apply_proposal(BankState& bank, const vm::KbProposal& proposal);
    void run_vm_slice(NodeId mpu);
    NodeId route_next(NodeId from, NodeId to) const;

    Topology topo_;
    std::uint64_t seed_;
    std::vector<ScenarioEvent> scenario_;

    std::priority_queue<Event, std::vector<Event>, EventOrder> queue_;
    std::uint64_t order_counter_ = 0;
    std::uint32_t seq_counter_ = 0;
    std::uint32_t proc_counter_ = 0;
    std::uint64_t now_ = 0;

    std::map<NodeId, BankState> banks_;
    std::map<NodeId, MpuState> mpus_;
    std::map<std::uint32_t, ProposalRound> rounds_;  // key: proposal index
    std::vector<vm::KbProposal> proposals_;
    std::map<std::uint32_t, ProcedureLog> procedures_;
    std::vector<PendingInjection> pending_injections_;

    std::vector<std::string> transcript_;
    SimStats stats_;
    std::map<std::pair<NodeId, NodeId>, LinkLog> link_logs_;
    std::map<NodeId, std::map<NodeId, NodeId>> routes_;  // from -> (to -> next)
};

}  // namespace mpu::net
