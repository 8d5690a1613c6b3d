#include "mpu/netsim.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <sstream>

#include "mpu/errors.hpp"
#include "mpu/hash.hpp"
#include "mpu/io.hpp"

namespace mpu::net {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

std::uint64_t to_u64(const std::string& s, int line_no, const char* what) {
    try {
        std::size_t used = 0;
        unsigned long long v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw MpuError(ErrCode::FormatError, "line " + std::to_string(line_no) +
                                                 ": bad " + std::string(what));
    }
}

const char* kind_prefix(NodeKind k) {
    switch (k) {
        case NodeKind::MPU: return "mpu";
        case NodeKind::BANK: return "bank";
        case NodeKind::CONTROL_POINT: return "cp";
        case NodeKind::KMS: return "kms";
    }
    return "?";
}

}  // namespace

std::string NodeId::name() const {
    return kind_prefix(kind) + std::to_string(index);
}

std::optional<NodeId> parse_node_name(const std::string& name) {
    static const struct { const char* prefix; NodeKind kind; } kKinds[] = {
        {"mpu", NodeKind::MPU}, {"bank", NodeKind::BANK},
        {"cp", NodeKind::CONTROL_POINT}, {"kms", NodeKind::KMS}};
    for (const auto& [prefix, kind] : kKinds) {
        std::string p(prefix);
        if (name.rfind(p, 0) != 0 || name.size() == p.size()) continue;
        std::string digits = name.substr(p.size());
        if (digits.find_first_not_of("0123456789") != std::string::npos) continue;
        return NodeId{kind, static_cast<std::uint16_t>(std::stoul(digits))};
    }
    return std::nullopt;
}

const char* packet_kind_name(PacketKind k) {
    switch (k) {
        case PacketKind::CMD: return "CMD";
        case PacketKind::DATA: return "DATA";
        case PacketKind::RESULT: return "RESULT";
        case PacketKind::ACK: return "ACK";
        case PacketKind::PROPOSE: return "PROPOSE";
        case PacketKind::ENDORSE: return "ENDORSE";
        case PacketKind::NAK: return "NAK";
    }
    return "?";
}

std::string packet_bytes(const Packet& p) {
    std::string out;
    auto be16 = [&](std::uint16_t v) {
        out.push_back(static_cast<char>(v >> 8));
        out.push_back(static_cast<char>(v));
    };
    auto be32 = [&](std::uint32_t v) {
        out.push_back(static_cast<char>(v >> 24));
        out.push_back(static_cast<char>(v >> 16));
        out.push_back(static_cast<char>(v >> 8));
        out.push_back(static_cast<char>(v));
    };
    be32(p.seq);
    be16(p.src.addr());
    be16(p.dst.addr());
    out.push_back(static_cast<char>(p.kind));
    be32(p.procedure_id);
    be16(p.sub_index);
    be16(static_cast<std::uint16_t>(p.payload.size()));
    out += p.payload;
    return out;
}

Packet packet_from_bytes(std::string_view bytes) {
    if (bytes.size() < 17)
        throw MpuError(ErrCode::FormatError, "packet too short");
    auto u8 = [&](std::size_t i) {
        return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i]));
    };
    auto rd16 = [&](std::size_t i) {
        return static_cast<std::uint16_t>((u8(i) << 8) | u8(i + 1));
    };
    auto rd32 = [&](std::size_t i) {
        return (u8(i) << 24) | (u8(i + 1) << 16) | (u8(i + 2) << 8) | u8(i + 3);
    };
    Packet p;
    p.seq = rd32(0);
    std::uint16_t src = rd16(4), dst = rd16(6);
    p.src = NodeId{static_cast<NodeKind>(src >> 12),
                   static_cast<std::uint16_t>(src & 0xFFF)};
    p.dst = NodeId{static_cast<NodeKind>(dst >> 12),
                   static_cast<std::uint16_t>(dst & 0xFFF)};
    p.kind = static_cast<PacketKind>(u8(8));
    p.procedure_id = rd32(9);
    p.sub_index = rd16(13);
    std::uint16_t len = rd16(15);
    if (bytes.size() != 17u + len)
        throw MpuError(ErrCode::FormatError, "packet length mismatch");
    p.payload = std::string(bytes.substr(17));
    return p;
}

NodeId resolve(const std::map<std::string, NodeId>& directory,
               const std::string& subject) {
    const NodeId* best = nullptr;
    std::size_t best_len = 0;
    for (const auto& [prefix, bank] : directory) {
        if (subject.rfind(prefix, 0) != 0) continue;
        if (!best || prefix.size() > best_len) {
            best = &bank;
            best_len = prefix.size();
        }
    }
    if (!best) throw MpuError(ErrCode::NoSuchSubject, subject);
    return *best;
}

Topology parse_topology(const std::string& text, const std::string& base_dir) {
    Topology topo;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;

    auto node_ref = [&](const std::string& name) {
        auto id = parse_node_name(name);
        if (!id || std::find(topo.nodes.begin(), topo.nodes.end(), *id) ==
                       topo.nodes.end())
            throw MpuError(ErrCode::FormatError, "line " + std::to_string(line_no) +
                                                     ": unknown node " + name);
        return *id;
    };
    auto path_of = [&](const std::string& rel) {
        return rel.size() && rel[0] == '/' ? rel : base_dir + "/" + rel;
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> f = split_ws(line);
        const std::string& kind = f[0];

        if (kind == "NODE") {
            if (f.size() < 3 || f.size() > 4)
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": NODE kind index [protected]");
            NodeKind nk;
            if (f[1] == "MPU") nk = NodeKind::MPU;
            else if (f[1] == "BANK") nk = NodeKind::BANK;
            else if (f[1] == "CONTROL_POINT") nk = NodeKind::CONTROL_POINT;
            else if (f[1] == "KMS") nk = NodeKind::KMS;
            else
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": bad node kind " + f[1]);
            NodeId id{nk, static_cast<std::uint16_t>(to_u64(f[2], line_no, "node index"))};
            if (std::find(topo.nodes.begin(), topo.nodes.end(), id) != topo.nodes.end())
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": duplicate node " + id.name());
            topo.nodes.push_back(id);
            if (f.size() == 4) {
                if (f[3] != "protected")
                    throw MpuError(ErrCode::FormatError,
                                   "line " + std::to_string(line_no) + ": bad node flag " + f[3]);
                topo.protected_stores.insert(id);
            }
        } else if (kind == "LINK") {
            if (f.size() != 4)
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": LINK a b latency");
            Link link{node_ref(f[1]), node_ref(f[2]),
                      static_cast<std::uint32_t>(to_u64(f[3], line_no, "latency"))};
            if (link.latency < 1)
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": latency must be >= 1");
            topo.links.push_back(link);
        } else if (kind == "DIR") {
            if (f.size() != 3)
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": DIR subject bank");
            NodeId bank = node_ref(f[2]);
            if (bank.kind != NodeKind::BANK)
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": DIR target must be a bank");
            if (!topo.directory.emplace(f[1], bank).second)
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": duplicate subject " + f[1]);
        } else if (kind == "QUORUM") {
            if (f.size() != 2)
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": QUORUM k");
            topo.quorum = static_cast<int>(to_u64(f[1], line_no, "quorum"));
        } else if (kind == "TIMEOUT") {
            if (f.size() != 2)
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": TIMEOUT ticks");
            topo.timeout_ticks = static_cast<std::uint32_t>(to_u64(f[1], line_no, "timeout"));
        } else if (kind == "BANKDATA") {
            if (f.size() != 3)
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": BANKDATA bank path");
            topo.bank_data[node_ref(f[1])] = read_file(path_of(f[2]));
        } else if (kind == "NODEPROG") {
            if (f.size() != 4)
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": NODEPROG mpu prog.mpo dataset");
            NodeId mpu = node_ref(f[1]);
            if (mpu.kind != NodeKind::MPU)
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": NODEPROG target must be an MPU");
            masm::Program prog = masm::from_mpo_bytes(read_file(path_of(f[2])));
            topo.node_programs[mpu] = {std::move(prog), read_file(path_of(f[3]))};
        } else if (kind == "KMSPOLICY") {
            if (f.size() < 3)
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": KMSPOLICY kms policy [kind]");
            NodeId kms = node_ref(f[1]);
            if (f[2] == "endorse_all")
                topo.kms_policies[kms] = {KmsPolicy::ENDORSE_ALL, ""};
            else if (f[2] == "reject_all")
                topo.kms_policies[kms] = {KmsPolicy::REJECT_ALL, ""};
            else if (f[2] == "endorse_kind" && f.size() == 4)
                topo.kms_policies[kms] = {KmsPolicy::ENDORSE_KIND, f[3]};
            else
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": bad policy " + f[2]);
        } else if (kind == "DROP") {
            if (f.size() < 4)
                throw MpuError(ErrCode::FormatError,
                               "line " + std::to_string(line_no) + ": DROP a b tick...");
            NodeId a = node_ref(f[1]), b = node_ref(f[2]);
            for (std::size_t i = 3; i < f.size(); ++i)
                topo.drop_schedule[{a, b}].insert(to_u64(f[i], line_no, "drop tick"));
        } else {
            throw MpuError(ErrCode::FormatError, "line " + std::to_string(line_no) +
                                                     ": unknown record " + kind);
        }
    }

    int cps = 0, kms_count = 0;
    for (const NodeId& n : topo.nodes) {
        if (n.kind == NodeKind::CONTROL_POINT) ++cps;
        if (n.kind == NodeKind::KMS) ++kms_count;
    }
    if (cps != 1)
        throw MpuError(ErrCode::FormatError, "topology needs exactly one control point");
    if (topo.quorum < 1 || (kms_count > 0 && topo.quorum > kms_count))
        throw MpuError(ErrCode::FormatError, "quorum outside 1..KMS count");

    // connectivity
    std::map<NodeId, NodeId> parent;
    for (const NodeId& n : topo.nodes) parent[n] = n;
    std::function<NodeId(NodeId)> find = [&](NodeId x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const Link& l : topo.links) parent[find(l.a)] = find(l.b);
    for (const NodeId& n : topo.nodes)
        if (find(n) != find(topo.nodes.front()))
            throw MpuError(ErrCode::FormatError, "topology is not connected");

    return topo;
}

std::vector<ScenarioEvent> parse_scenario(const std::string& text) {
    std::vector<ScenarioEvent> events;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> f = split_ws(line);
        if (f[0] != "EVENT" || f.size() < 3)
            throw MpuError(ErrCode::FormatError,
                           "line " + std::to_string(line_no) + ": EVENT tick action ...");
        ScenarioEvent ev;
        ev.tick = to_u64(f[1], line_no, "tick");
        ev.args.assign(f.begin() + 2, f.end());
        ev.line_no = line_no;
        events.push_back(std::move(ev));
    }
    return events;
}

std::vector<AccumEntry> accumulate(const ProcedureLog& log) {
    if (!log.complete())
        throw MpuError(ErrCode::IncompleteProcedure,
                       "procedure " + std::to_string(log.procedure_id));
    std::vector<AccumEntry> out;
    for (const auto& [sub, terminal] : log.terminals) {
        AccumEntry entry;
        entry.sub_index = sub;
        entry.ok = terminal == Terminal::ACKED;
        if (entry.ok) {
            bool first = true;
            for (const Packet& p : log.packets) {
                if (p.kind != PacketKind::RESULT || p.sub_index != sub) continue;
                if (!first) entry.payload += '\n';
                entry.payload += p.payload;
                first = false;
            }
        } else {
            auto it = log.nak_reasons.find(sub);
            entry.error = it == log.nak_reasons.end() ? "NAK" : it->second;
        }
        out.push_back(std::move(entry));
    }
    return out;  // map iteration -> ascending sub_index
}

// --- Simulation ------------------------------------------------------------------

Simulation::Simulation(Topology topology, std::uint64_t seed)
    : topo_(std::move(topology)), seed_(seed) {
    (void)seed_;  // no randomized policy ships; identical runs stay identical
    for (const NodeId& n : topo_.nodes) {
        if (n.kind == NodeKind::BANK) {
            BankState bank;
            auto it = topo_.bank_data.find(n);
            if (it != topo_.bank_data.end())
                bank.dataset = data::load_dataset(it->second);
            banks_.emplace(n, std::move(bank));
        } else if (n.kind == NodeKind::MPU) {
            MpuState mpu;
            auto it = topo_.node_programs.find(n);
            if (it != topo_.node_programs.end()) {
                data::Dataset ds = data::load_dataset(it->second.second);
                mpu.vm = std::make_unique<vm::Vm>(std::move(ds), it->second.first);
            }
            mpus_.emplace(n, std::move(mpu));
        }
    }

    // deterministic shortest-hop routes: BFS with sorted adjacency
    std::map<NodeId, std::vector<NodeId>> adj;
    for (const Link& l : topo_.links) {
        adj[l.a].push_back(l.b);
        adj[l.b].push_back(l.a);
    }
    for (auto& [n, neighbors] : adj) std::sort(neighbors.begin(), neighbors.end());
    for (const NodeId& src : topo_.nodes) {
        std::map<NodeId, NodeId> prev;
        std::deque<NodeId> frontier = {src};
        std::set<NodeId> seen = {src};
        while (!frontier.empty()) {
            NodeId cur = frontier.front();
            frontier.pop_front();
            for (const NodeId& next : adj[cur]) {
                if (seen.count(next)) continue;
                seen.insert(next);
                prev[next] = cur;
                frontier.push_back(next);
            }
        }
        for (const NodeId& dst : topo_.nodes) {
            if (dst == src || !prev.count(dst)) continue;
            NodeId hop = dst;
            while (prev[hop] != src) hop = prev[hop];
            routes_[src][dst] = hop;
        }
    }
}

NodeId Simulation::route_next(NodeId from, NodeId to) const {
    auto it = routes_.find(from);
    if (it != routes_.end()) {
        auto jt = it->second.find(to);
        if (jt != it->second.end()) return jt->second;
    }
    throw MpuError(ErrCode::FormatError,
                   "no route " + from.name() + " -> " + to.name());
}

void Simulation::push_event(Event ev) {
    ev.order = ++order_counter_;
    queue_.push(std::move(ev));
}

void Simulation::load_scenario(const std::vector<ScenarioEvent>& events) {
    scenario_ = events;
    for (std::size_t i = 0; i < scenario_.size(); ++i) {
        Event ev;
        ev.tick = scenario_[i].tick;
        ev.kind = Event::SCENARIO;
        ev.scenario_index = i;
        push_event(std::move(ev));
    }
}

void Simulation::log_line(std::uint64_t tick, const Packet& p,
                          const char* kind_text) {
    std::string line = std::to_string(tick);
    line += '\t';
    line += std::to_string(p.seq);
    line += '\t';
    line += p.src.name();
    line += '\t';
    line += p.dst.name();
    line += '\t';
    line += kind_text;
    line += '\t';
    line += std::to_string(p.procedure_id);
    line += '\t';
    line += std::to_string(p.sub_index);
    line += '\t';
    line += std::to_string(p.payload.size());
    transcript_.push_back(std::move(line));
}

std::string Simulation::transcript_text() const {
    std::string text;
    for (const std::string& line : transcript_) {
        text += line;
        text += '\n';
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(text)));
    return text + "NETHASH " + buf + "\n";
}

std::uint64_t Simulation::transcript_hash() const {
    std::string text;
    for (const std::string& line : transcript_) {
        text += line;
        text += '\n';
    }
    return fnv1a64(text);
}

void Simulation::inject(Packet packet) {
    if (packet.payload.size() > kMaxPayload)
        throw MpuError(ErrCode::FormatError, "payload exceeds 1024 bytes");
    packet.seq = ++seq_counter_;
    ++stats_.sent;
    if (packet.kind == PacketKind::CMD) ++stats_.cmds;
    auto proc_it = procedures_.find(packet.procedure_id);
    if (proc_it != procedures_.end()) proc_it->second.packets.push_back(packet);
    if (packet.src == packet.dst) {
        // self events (timeout NAKs) deliver immediately
        Event ev;
        ev.tick = now_;
        ev.kind = Event::HOP;
        ev.packet = std::move(packet);
        ev.at = ev.packet.dst;
        ev.origin = ev.packet.src;
        push_event(std::move(ev));
        return;
    }
    forward(packet, packet.src);
}

void Simulation::forward(const Packet& packet, NodeId from) {
    NodeId next = route_next(from, packet.dst);
    auto drop_it = topo_.drop_schedule.find({from, next});
    if (drop_it != topo_.drop_schedule.end() && drop_it->second.count(now_)) {
        ++stats_.dropped;
        log_line(now_, packet, "LINKDROP");
        return;
    }
    std::uint32_t latency = 1;
    for (const Link& l : topo_.links)
        if ((l.a == from && l.b == next) || (l.a == next && l.b == from)) {
            latency = l.latency;
            break;
        }
    link_logs_[{from, next}].enqueued.push_back(packet.seq);
    Event ev;
    ev.tick = now_ + latency;
    ev.kind = Event::HOP;
    ev.packet = packet;
    ev.at = next;
    ev.origin = from;
    push_event(std::move(ev));
}

void Simulation::deliver(const Packet& packet) {
    ++stats_.delivered;
    log_line(now_, packet, packet_kind_name(packet.kind));

    // terminal tracking for the origin MPU
    if ((packet.kind == PacketKind::ACK || packet.kind == PacketKind::NAK) &&
        packet.dst.kind == NodeKind::MPU) {
        auto it = procedures_.find(packet.procedure_id);
        if (it != procedures_.end() && it->second.origin == packet.dst)
            record_terminal(packet.procedure_id, packet.sub_index,
                            packet.kind == PacketKind::ACK ? Terminal::ACKED
                                                           : Terminal::NAKED,
                            packet.payload);
    }

    switch (packet.dst.kind) {
        case NodeKind::BANK: handle_bank(packet); break;
        case NodeKind::KMS: handle_kms(packet); break;
        case NodeKind::MPU: handle_mpu(packet); break;
        case NodeKind::CONTROL_POINT: break;  // passive directory holder
    }
}

void Simulation::record_terminal(std::uint32_t proc, std::uint16_t sub,
                                 Terminal t, const std::string& reason) {
    auto it = procedures_.find(proc);
    if (it == procedures_.end()) return;
    auto term_it = it->second.terminals.find(sub);
    if (term_it == it->second.terminals.end() || term_it->second != Terminal::OPEN)
        return;  // first terminal wins
    term_it->second = t;
    if (t == Terminal::NAKED) it->second.nak_reasons[sub] = reason;
    ++stats_.terminals;

    // resume a VM waiting on this procedure
    auto mpu_it = mpus_.find(it->second.origin);
    if (mpu_it != mpus_.end() && mpu_it->second.vm_waits.count(proc)) {
        mpu_it->second.vm_waits.erase(proc);
        mpu_it->second.pending_resume = proc;
        Event ev;
        ev.tick = now_;
        ev.kind = Event::VM_RESUME;
        ev.origin = it->second.origin;
        ev.proc = proc;
        push_event(std::move(ev));
    }
}

std::uint32_t Simulation::dispatch(NodeId mpu, const std::string& subject,
                                   const std::string& command,
                                   const std::vector<std::string>& burst,
                                   std::uint64_t at_tick,
                                   std::optional<std::uint32_t> procedure,
                                   std::uint16_t sub_index) {
    std::uint32_t proc = procedure ? *procedure : ++proc_counter_;
    if (!procedure && proc_counter_ < proc) proc_counter_ = proc;
    ProcedureLog& log = procedures_[proc];
    log.procedure_id = proc;
    log.origin = mpu;
    log.terminals[sub_index] = Terminal::OPEN;

    // control-point round trip: resolution costs 2x the path latency
    NodeId cp = topo_.nodes.front();
    for (const NodeId& n : topo_.nodes)
        if (n.kind == NodeKind::CONTROL_POINT) cp = n;
    std::uint64_t rtt = 0;
    NodeId cursor = mpu;
    while (cursor != cp) {
        NodeId next = route_next(cursor, cp);
        for (const Link& l : topo_.links)
            if ((l.a == cursor && l.b == next) || (l.a == next && l.b == cursor)) {
                rtt += l.latency;
                break;
            }
        cursor = next;
    }
    rtt *= 2;

    NodeId bank{};
    bool resolved = true;
    try {
        bank = resolve(topo_.directory, subject);
    } catch (const MpuError&) {
        resolved = false;
    }

    if (!resolved) {
        // NAK from the control point after the round trip
        Packet nak;
        nak.src = cp;
        nak.dst = mpu;
        nak.kind = PacketKind::NAK;
        nak.procedure_id = proc;
        nak.sub_index = sub_index;
        nak.payload = "NOSUBJECT";
        PendingInjection pending;
        pending.tick = at_tick + rtt;
        pending.packets.push_back(std::move(nak));
        pending_injections_.push_back(std::move(pending));
        Event inj;
        inj.tick = at_tick + rtt;
        inj.kind = Event::INJECT;
        inj.scenario_index = pending_injections_.size() - 1;
        push_event(std::move(inj));
        return proc;
    }

    PendingInjection pending;
    pending.tick = at_tick + rtt;
    Packet cmd;
    cmd.src = mpu;
    cmd.dst = bank;
    cmd.kind = PacketKind::CMD;
    cmd.procedure_id = proc;
    cmd.sub_index = sub_index;
    cmd.payload = std::to_string(burst.size()) + " " + command;
    pending.packets.push_back(std::move(cmd));
    for (const std::string& data : burst) {
        Packet d;
        d.src = mpu;
        d.dst = bank;
        d.kind = PacketKind::DATA;
        d.procedure_id = proc;
        d.sub_index = sub_index;
        d.payload = data;
        pending.packets.push_back(std::move(d));
    }
    pending_injections_.push_back(std::move(pending));
    Event inj;
    inj.tick = at_tick + rtt;
    inj.kind = Event::INJECT;
    inj.scenario_index = pending_injections_.size() - 1;
    push_event(std::move(inj));

    // timeout timer counts from the moment the command hits the wire
    Event timer;
    timer.tick = at_tick + rtt + topo_.timeout_ticks;
    timer.kind = Event::TIMER;
    timer.proc = proc;
    timer.sub = sub_index;
    timer.origin = mpu;
    push_event(std::move(timer));
    return proc;
}

std::uint32_t Simulation::propose(NodeId bank, vm::ProposalKind kind,
                                  const std::string& payload,
                                  std::uint64_t at_tick) {
    PendingInjection pending;
    pending.tick = at_tick;
    pending.proposal = std::make_tuple(bank, kind, payload);
    pending_injections_.push_back(std::move(pending));
    Event inj;
    inj.tick = at_tick;
    inj.kind = Event::INJECT;
    inj.scenario_index = pending_injections_.size() - 1;
    push_event(std::move(inj));
    return static_cast<std::uint32_t>(pending_injections_.size() - 1);
}

void Simulation::run(std::uint64_t max_ticks) {
    while (!queue_.empty()) {
        Event ev = queue_.top();
        queue_.pop();
        if (ev.tick > max_ticks)
            throw MpuError(ErrCode::MaxTicksExceeded, std::to_string(ev.tick));
        now_ = ev.tick;
        switch (ev.kind) {
            case Event::HOP: {
                if (ev.origin != ev.at)
                    link_logs_[{ev.origin, ev.at}].delivered.push_back(ev.packet.seq);
                if (ev.at == ev.packet.dst) {
                    if (topo_.protected_stores.count(ev.packet.dst) &&
                        ev.packet.src.kind != NodeKind::MPU &&
                        ev.packet.src.kind != NodeKind::KMS) {
                        ++stats_.dropped;
                        log_line(now_, ev.packet, "FIREWALL");
                    } else {
                        deliver(ev.packet);
                    }
                } else {
                    forward(ev.packet, ev.at);
                }
                break;
            }
            case Event::SCENARIO:
                handle_scenario(scenario_[ev.scenario_index]);
                break;
            case Event::TIMER: {
                auto it = procedures_.find(ev.proc);
                if (it == procedures_.end()) break;
                auto term = it->second.terminals.find(ev.sub);
                if (term == it->second.terminals.end() ||
                    term->second != Terminal::OPEN)
                    break;
                Packet nak;
                nak.src = ev.origin;
                nak.dst = ev.origin;
                nak.kind = PacketKind::NAK;
                nak.procedure_id = ev.proc;
                nak.sub_index = ev.sub;
                nak.payload = "TIMEOUT";
                inject(std::move(nak));
                break;
            }
            case Event::VM_RESUME:
                run_vm_slice(ev.origin);
                break;
            case Event::INJECT: {
                PendingInjection& pending = pending_injections_[ev.scenario_index];
                if (pending.proposal) {
                    auto& [bank, kind, payload] = *pending.proposal;
                    start_proposal(bank, kind, payload, std::nullopt);
                } else {
                    for (Packet& p : pending.packets) inject(std::move(p));
                    pending.packets.clear();
                }
                break;
            }
        }
    }
}

void Simulation::handle_scenario(const ScenarioEvent& ev) {
    auto fail = [&](const std::string& msg) {
        throw MpuError(ErrCode::FormatError,
                       "scenario line " + std::to_string(ev.line_no) + ": " + msg);
    };
    auto node_of = [&](const std::string& name, NodeKind kind) {
        auto id = parse_node_name(name);
        if (!id || id->kind != kind ||
            std::find(topo_.nodes.begin(), topo_.nodes.end(), *id) == topo_.nodes.end())
            fail("bad node " + name);
        return *id;
    };
    const std::string& action = ev.args[0];

    if (action == "NETQUERY") {
        // NETQUERY mpu subject k sig [proc sub]
        if (ev.args.size() != 5 && ev.args.size() != 7) fail("NETQUERY mpu subject k sig [proc sub]");
        NodeId mpu = node_of(ev.args[1], NodeKind::MPU);
        std::optional<std::uint32_t> proc;
        std::uint16_t sub = 0;
        if (ev.args.size() == 7) {
            proc = static_cast<std::uint32_t>(to_u64(ev.args[5], ev.line_no, "proc"));
            sub = static_cast<std::uint16_t>(to_u64(ev.args[6], ev.line_no, "sub"));
        }
        dispatch(mpu, ev.args[2], "DIAG " + ev.args[3] + " " + ev.args[4], {},
                 ev.tick, proc, sub);
    } else if (action == "SEND") {
        // SEND mpu subject burst_count command...
        if (ev.args.size() < 5) fail("SEND mpu subject burst_count command...");
        NodeId mpu = node_of(ev.args[1], NodeKind::MPU);
        std::size_t burst_n = to_u64(ev.args[3], ev.line_no, "burst count");
        std::string command;
        for (std::size_t i = 4; i < ev.args.size(); ++i) {
            if (i > 4) command += ' ';
            command += ev.args[i];
        }
        std::vector<std::string> burst;
        for (std::size_t i = 0; i < burst_n; ++i)
            burst.push_back("data" + std::to_string(i));
        dispatch(mpu, ev.args[2], command, burst, ev.tick);
    } else if (action == "NETPUT") {
        // NETPUT mpu subject id class attr=value...
        if (ev.args.size() < 5) fail("NETPUT mpu subject id class [attrs]");
        NodeId mpu = node_of(ev.args[1], NodeKind::MPU);
        std::string obj_line = "OBJ\t" + ev.args[3] + "\t" + ev.args[4];
        for (std::size_t i = 5; i < ev.args.size(); ++i) obj_line += "\t" + ev.args[i];
        dispatch(mpu, ev.args[2], "PUT", {obj_line}, ev.tick);
    } else if (action == "PROPOSE") {
        // PROPOSE bank kind payload...
        if (ev.args.size() < 3) fail("PROPOSE bank kind payload...");
        NodeId bank = node_of(ev.args[1], NodeKind::BANK);
        vm::ProposalKind kind;
        if (ev.args[2] == "NEW_RELATION") kind = vm::ProposalKind::NEW_RELATION;
        else if (ev.args[2] == "NEW_MACRO_OPCODE") kind = vm::ProposalKind::NEW_MACRO_OPCODE;
        else if (ev.args[2] == "OBJECT_UPDATE") kind = vm::ProposalKind::OBJECT_UPDATE;
        else { fail("bad proposal kind " + ev.args[2]); return; }
        std::string payload;
        for (std::size_t i = 3; i < ev.args.size(); ++i) {
            if (i > 3) payload += ' ';
            payload += ev.args[i];
        }
        start_proposal(bank, kind, payload, std::nullopt);
    } else if (action == "RUNVM") {
        if (ev.args.size() != 2) fail("RUNVM mpu");
        NodeId mpu = node_of(ev.args[1], NodeKind::MPU);
        MpuState& state = mpus_.at(mpu);
        if (!state.vm) fail("node " + mpu.name() + " has no program");
        state.vm_started = true;
        run_vm_slice(mpu);
    } else if (action == "RAWSEND") {
        // RAWSEND src dst kind payload
        if (ev.args.size() != 5) fail("RAWSEND src dst kind payload");
        auto src = parse_node_name(ev.args[1]);
        auto dst = parse_node_name(ev.args[2]);
        if (!src || !dst) fail("bad RAWSEND nodes");
        Packet p;
        p.src = *src;
        p.dst = *dst;
        if (ev.args[3] == "CMD") p.kind = PacketKind::CMD;
        else if (ev.args[3] == "DATA") p.kind = PacketKind::DATA;
        else if (ev.args[3] == "RESULT") p.kind = PacketKind::RESULT;
        else { fail("bad RAWSEND kind"); return; }
        p.payload = ev.args[4];
        inject(std::move(p));
    } else {
        fail("unknown action " + action);
    }
}

void Simulation::handle_bank(const Packet& packet) {
    BankState& bank = banks_.at(packet.dst);
    if (packet.kind == PacketKind::CMD) {
        std::size_t space = packet.payload.find(' ');
        std::size_t burst_n = 0;
        std::string command = packet.payload;
        if (space != std::string::npos) {
            burst_n = std::stoul(packet.payload.substr(0, space));
            command = packet.payload.substr(space + 1);
        } else {
            burst_n = std::stoul(packet.payload);
            command.clear();
        }
        BankState::PendingCmd pending;
        pending.cmd = packet;
        pending.cmd.payload = command;
        pending.burst_expected = burst_n;
        if (burst_n == 0) {
            bank_process(bank, pending.cmd, {});
        } else {
            bank.pending[{packet.procedure_id, packet.sub_index}] = std::move(pending);
        }
    } else if (packet.kind == PacketKind::DATA) {
        auto it = bank.pending.find({packet.procedure_id, packet.sub_index});
        if (it == bank.pending.end()) return;  // stray data
        it->second.burst.push_back(packet.payload);
        if (it->second.burst.size() >= it->second.burst_expected) {
            BankState::PendingCmd pending = std::move(it->second);
            bank.pending.erase(it);
            bank_process(bank, pending.cmd, pending.burst);
        }
    } else if (packet.kind == PacketKind::ENDORSE || packet.kind == PacketKind::NAK) {
        // a consensus vote: payload is the proposal index
        std::uint32_t index = 0;
        try {
            index = static_cast<std::uint32_t>(std::stoul(packet.payload));
        } catch (const std::exception&) {
            return;
        }
        auto it = rounds_.find(index);
        if (it == rounds_.end() || it->second.bank != packet.dst) return;
        if (packet.kind == PacketKind::ENDORSE) {
            ++it->second.endorse;
            proposals_[it->second.proposal_index].endorsements.insert(
                packet.src.name());
        } else {
            ++it->second.reject;
        }
        if (it->second.endorse + it->second.reject >= it->second.expected) {
            ProposalRound round = it->second;
            rounds_.erase(it);
            finish_proposal(round);
        }
    }
}

void Simulation::bank_process(BankState& bank, const Packet& cmd,
                              const std::vector<std::string>& burst) {
    auto reply = [&](PacketKind kind, const std::string& payload) {
        Packet p;
        p.src = cmd.dst;
        p.dst = cmd.src;
        p.kind = kind;
        p.procedure_id = cmd.procedure_id;
        p.sub_index = cmd.sub_index;
        p.payload = payload;
        inject(std::move(p));
    };

    std::vector<std::string> args = split_ws(cmd.payload);
    if (args.empty()) {
        reply(PacketKind::NAK, "BADCMD");
        return;
    }
    if (args[0] == "DIAG") {
        if (args.size() != 3 || !bank.dataset.has_schema) {
            reply(PacketKind::NAK, "SCHEMA");
            return;
        }
        std::size_t k = 0;
        try {
            k = std::stoul(args[1]);
        } catch (const std::exception&) {
            reply(PacketKind::NAK, "BADCMD");
            return;
        }
        auto query = match::parse_hex(bank.dataset.schema, args[2]);
        if (!query) {
            reply(PacketKind::NAK, "SCHEMA");
            return;
        }
        if (bank.dataset.bank.empty()) {
            reply(PacketKind::NAK, "EMPTY");
            return;
        }
        auto results = match::nearest_k(bank.dataset.bank, *query, k == 0 ? 1 : k);
        for (const auto& neighbor : results) {
            std::string label;
            for (const auto& rec : bank.dataset.bank.entries)
                if (rec.record_id == neighbor.record_id) {
                    label = rec.label;
                    break;
                }
            reply(PacketKind::RESULT, std::to_string(neighbor.record_id) + " " +
                                          std::to_string(neighbor.distance) + " " +
                                          label);
        }
        reply(PacketKind::ACK, "");
    } else if (args[0] == "GET") {
        if (args.size() != 2) {
            reply(PacketKind::NAK, "BADCMD");
            return;
        }
        std::uint32_t id = 0;
        try {
            id = static_cast<std::uint32_t>(std::stoul(args[1]));
        } catch (const std::exception&) {
            reply(PacketKind::NAK, "BADCMD");
            return;
        }
        if (id >= store::kStoreCapacity ||
            !bank.dataset.objects.exists(static_cast<store::ObjectId>(id))) {
            reply(PacketKind::NAK, "NOOBJECT");
            return;
        }
        reply(PacketKind::RESULT,
              data::obj_record_line(bank.dataset.objects.get(
                  static_cast<store::ObjectId>(id))));
        reply(PacketKind::ACK, "");
    } else if (args[0] == "PUT") {
        std::string payload;
        for (std::size_t i = 0; i < burst.size(); ++i) {
            if (i) payload += '\n';
            payload += burst[i];
        }
        start_proposal(cmd.dst, vm::ProposalKind::OBJECT_UPDATE, payload, cmd);
    } else {
        reply(PacketKind::NAK, "BADCMD");
    }
}

void Simulation::handle_kms(const Packet& packet) {
    if (packet.kind != PacketKind::PROPOSE) return;
    // payload: "<index> <kind> <payload...>"
    std::size_t sp1 = packet.payload.find(' ');
    std::size_t sp2 = packet.payload.find(' ', sp1 + 1);
    if (sp1 == std::string::npos || sp2 == std::string::npos) return;
    std::string index = packet.payload.substr(0, sp1);
    std::string kind_name = packet.payload.substr(sp1 + 1, sp2 - sp1 - 1);

    KmsPolicy policy = KmsPolicy::ENDORSE_ALL;
    std::string policy_kind;
    auto it = topo_.kms_policies.find(packet.dst);
    if (it != topo_.kms_policies.end()) {
        policy = it->second.first;
        policy_kind = it->second.second;
    }
    bool endorse = policy == KmsPolicy::ENDORSE_ALL ||
                   (policy == KmsPolicy::ENDORSE_KIND && policy_kind == kind_name);

    Packet vote;
    vote.src = packet.dst;
    vote.dst = packet.src;
    vote.kind = endorse ? PacketKind::ENDORSE : PacketKind::NAK;
    vote.procedure_id = packet.procedure_id;
    vote.sub_index = packet.sub_index;
    vote.payload = index;
    inject(std::move(vote));
}

void Simulation::handle_mpu(const Packet&) {
    // RESULT payloads are read out of the procedure log; terminals are
    // recorded in deliver(). Nothing else to do per packet.
}

void Simulation::start_proposal(NodeId bank, vm::ProposalKind kind,
                                const std::string& payload,
                                std::optional<Packet> requester) {
    vm::KbProposal proposal;
    proposal.id = static_cast<std::uint32_t>(proposals_.size());
    proposal.kind = kind;
    proposal.payload = payload;
    proposals_.push_back(proposal);

    ProposalRound round;
    round.proposal_index = proposal.id;
    round.bank = bank;
    round.requester_cmd = requester;
    std::vector<NodeId> kms_nodes;
    for (const NodeId& n : topo_.nodes)
        if (n.kind == NodeKind::KMS) kms_nodes.push_back(n);
    std::sort(kms_nodes.begin(), kms_nodes.end());
    round.expected = static_cast<int>(kms_nodes.size());

    if (kms_nodes.empty()) {
        finish_proposal(round);
        return;
    }
    rounds_[proposal.id] = round;
    for (const NodeId& kms : kms_nodes) {
        Packet p;
        p.src = bank;
        p.dst = kms;
        p.kind = PacketKind::PROPOSE;
        p.procedure_id = requester ? requester->procedure_id : 0;
        p.sub_index = requester ? requester->sub_index : 0;
        p.payload = std::to_string(proposal.id) + " " +
                    vm::proposal_kind_name(kind) + " " + payload;
        inject(std::move(p));
    }
}

void Simulation::finish_proposal(ProposalRound& round) {
    vm::KbProposal& proposal = proposals_[round.proposal_index];
    bool committed = round.endorse >= topo_.quorum;
    proposal.status = committed ? vm::ProposalStatus::COMMITTED
                                : vm::ProposalStatus::REJECTED;
    if (committed) apply_proposal(banks_.at(round.bank), proposal);

    if (round.requester_cmd) {
        const Packet& cmd = *round.requester_cmd;
        Packet result;
        result.src = cmd.dst;
        result.dst = cmd.src;
        result.kind = PacketKind::RESULT;
        result.procedure_id = cmd.procedure_id;
        result.sub_index = cmd.sub_index;
        result.payload =
            std::string(committed ? "COMMITTED " : "REJECTED ") +
            std::to_string(proposal.id);
        inject(std::move(result));
        Packet ack = result;
        ack.kind = PacketKind::ACK;
        ack.payload.clear();
        inject(std::move(ack));
    }
}

void Simulation::apply_proposal(BankState& bank, const vm::KbProposal& proposal) {
    ++bank.version;
    if (proposal.kind == vm::ProposalKind::OBJECT_UPDATE) {
        std::istringstream in(proposal.payload);
        std::string line;
        while (std::getline(in, line)) {
            std::vector<std::string> f;
            std::size_t pos = 0;
            while (true) {
                std::size_t next = line.find('\t', pos);
                if (next == std::string::npos) {
                    f.push_back(line.substr(pos));
                    break;
                }
                f.push_back(line.substr(pos, next - pos));
                pos = next + 1;
            }
            if (f.size() < 3 || f[0] != "OBJ") continue;
            store::MedicalObject obj;
            try {
                obj.id = static_cast<store::ObjectId>(std::stoul(f[1]));
            } catch (const std::exception&) {
                continue;
            }
            obj.class_tag = f[2];
            bool ok = true;
            for (std::size_t i = 3; i < f.size() && ok; ++i) {
                std::size_t eq = f[i].find('=');
                if (eq == std::string::npos || eq == 0) {
                    ok = false;
                    break;
                }
                obj.attributes.push_back(
                    data::parse_value(f[i].substr(0, eq), f[i].substr(eq + 1)));
            }
            if (!ok) continue;
            try {
                bank.dataset.objects.put_object(obj, now_);
            } catch (const MpuError&) {
                // malformed update payloads leave the bank unchanged
            }
        }
    } else if (proposal.kind == vm::ProposalKind::NEW_RELATION) {
        std::vector<std::string> args = split_ws(proposal.payload);
        if (args.size() == 3 && args[0] == "REL") {
            try {
                auto a = static_cast<store::ObjectId>(std::stoul(args[1]));
                auto b = static_cast<store::ObjectId>(std::stoul(args[2]));
                bank.dataset.objects.add_relation(
                    a, b, store::RelationKind::PRIMARY, "consensus", now_);
            } catch (const MpuError&) {
            } catch (const std::exception&) {
            }
        }
    }
    // NEW_MACRO_OPCODE commits bump the version only
}

void Simulation::run_vm_slice(NodeId mpu) {
    MpuState& state = mpus_.at(mpu);
    if (!state.vm || !state.vm_started) return;
    vm::Vm& machine = *state.vm;
    machine.set_tick(now_);

    if (state.pending_resume) {
        std::uint32_t proc = *state.pending_resume;
        state.pending_resume.reset();
        const ProcedureLog& log = procedures_.at(proc);
        vm::NetResponse response;
        auto term = log.terminals.begin();
        response.ok = term != log.terminals.end() && term->second == Terminal::ACKED;
        if (response.ok) {
            for (const Packet& p : log.packets)
                if (p.kind == PacketKind::RESULT) response.results.push_back(p.payload);
            response.status = "ACK";
        } else {
            auto reason = log.nak_reasons.begin();
            response.status = "NAK:" + (reason == log.nak_reasons.end()
                                            ? std::string("UNKNOWN")
                                            : reason->second);
        }
        machine.complete_net(response);
    }

    while (!machine.halted()) {
        vm::RunOutcome outcome = machine.run(100000);
        if (outcome == vm::RunOutcome::NEED_NET) {
            const vm::NetRequest* request = machine.pending_request();
            std::uint32_t proc = dispatch(mpu, request->subject, request->command,
                                          request->burst, now_);
            state.vm_waits.insert(proc);
            return;
        }
        break;  // HALTED / FAULT / STEP_LIMIT end the slice
    }
}

std::uint64_t Simulation::bank_content_hash(NodeId bank) const {
    const BankState& state = banks_.at(bank);
    std::uint64_t h = state.dataset.objects.content_hash();
    h = fnv1a64_u32(state.version, h);
    for (const auto& rec : state.dataset.bank.entries) {
        h = fnv1a64_u32(rec.record_id, h);
        h = fnv1a64(rec.label, h);
        for (std::uint64_t d : rec.vector.dims)
            h = fnv1a64_u32(static_cast<std::uint32_t>(d ^ (d >> 32)), h);
    }
    return h;
}

const data::Dataset& Simulation::bank_dataset(NodeId bank) const {
    return banks_.at(bank).dataset;
}

const vm::Vm* Simulation::node_vm(NodeId mpu) const {
    auto it = mpus_.find(mpu);
    return it == mpus_.end() || !it->second.vm ? nullptr : it->second.vm.get();
}

}  // namespace mpu::net
