#include "mpu/vm.hpp"

#include <algorithm>
#include <cstdio>

#include "mpu/errors.hpp"
#include "mpu/hash.hpp"

namespace mpu::vm {

using isa::OpcodeInfo;

const char* fault_name(FaultCode f) {
    switch (f) {
        case FaultCode::NONE: return "NONE";
        case FaultCode::DECODE: return "DECODE";
        case FaultCode::OBJECT: return "OBJECT";
        case FaultCode::BAD_ATTRIBUTE: return "BAD_ATTRIBUTE";
        case FaultCode::SCHEMA: return "SCHEMA";
        case FaultCode::EMPTY_BANK: return "EMPTY_BANK";
        case FaultCode::TREE: return "TREE";
        case FaultCode::OUTCOME: return "OUTCOME";
        case FaultCode::STORE_FULL: return "STORE_FULL";
        case FaultCode::RANGE: return "RANGE";
    }
    return "?";
}

const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::ALLOW: return "ALLOW";
        case Verdict::WARN: return "WARN";
        case Verdict::BLOCK: return "BLOCK";
    }
    return "?";
}

const char* proposal_kind_name(ProposalKind k) {
    switch (k) {
        case ProposalKind::NEW_RELATION: return "NEW_RELATION";
        case ProposalKind::NEW_MACRO_OPCODE: return "NEW_MACRO_OPCODE";
        case ProposalKind::OBJECT_UPDATE: return "OBJECT_UPDATE";
    }
    return "?";
}

const char* proposal_status_name(ProposalStatus s) {
    switch (s) {
        case ProposalStatus::PENDING: return "PENDING";
        case ProposalStatus::COMMITTED: return "COMMITTED";
        case ProposalStatus::REJECTED: return "REJECTED";
    }
    return "?";
}

const char* run_outcome_name(RunOutcome o) {
    switch (o) {
        case RunOutcome::HALTED: return "HALTED";
        case RunOutcome::FAULT: return "FAULT";
        case RunOutcome::STEP_LIMIT: return "STEP_LIMIT";
        case RunOutcome::NEED_NET: return "NEED_NET";
    }
    return "?";
}

std::string TraceRecord::line() const {
    char buf[64];
    std::string out = std::to_string(tick);
    out += '\t';
    out += std::to_string(pc);
    std::snprintf(buf, sizeof buf, "\t%08x\t%02x\t", word, opcode);
    out += buf;
    out += mnemonic;
    out += '\t';
    out += isa::exec_mode_name(static_cast<isa::ExecMode>(mode & 0x3));
    if (mode & isa::kModeMemForm) out += ".m";
    out += '\t';
    if (resolved_operands.empty()) {
        out += '-';
    } else {
        for (std::size_t i = 0; i < resolved_operands.size(); ++i) {
            if (i) out += ',';
            out += std::to_string(resolved_operands[i]);
        }
    }
    out += '\t';
    out += std::to_string(result_code);
    out += '\t';
    out += conf_str(step_confidence);
    return out;
}

std::string format_trace(const Trace& trace) {
    std::string text;
    for (const TraceRecord& rec : trace.records) {
        text += rec.line();
        text += '\n';
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(text)));
    return text + "TRACEHASH " + buf + "\n";
}

std::uint64_t trace_hash(const Trace& trace) {
    std::string text;
    for (const TraceRecord& rec : trace.records) {
        text += rec.line();
        text += '\n';
    }
    return fnv1a64(text);
}

std::vector<WorkItem> exec_mode_dispatch(const OpcodeInfo& info,
                                         isa::ExecMode mode,
                                         const std::vector<ObjectId>& source) {
    if (!info.allows(mode))
        throw MpuError(ErrCode::ModeNotAllowed,
                       std::string(info.mnemonic) + "." + isa::exec_mode_name(mode));
    std::vector<WorkItem> items;
    const int phases = static_cast<int>(info.chain.size());
    switch (mode) {
        case isa::ExecMode::SPSO:
            items.push_back({-1, source.empty()
                                     ? std::nullopt
                                     : std::optional<ObjectId>(source.front())});
            break;
        case isa::ExecMode::SPMO:
            for (ObjectId id : source) items.push_back({-1, id});
            break;
        case isa::ExecMode::MPSO:
            for (int p = 0; p < phases; ++p)
                items.push_back({p, source.empty()
                                        ? std::nullopt
                                        : std::optional<ObjectId>(source.front())});
            break;
        case isa::ExecMode::MPMO:
            for (ObjectId id : source)  // object-major
                for (int p = 0; p < phases; ++p) items.push_back({p, id});
            break;
    }
    return items;
}

SafetyReport safecheck(const store::ObjectStore& objects, ObjectId patient,
                       const std::vector<ObjectId>& procedures,
                       const std::vector<data::SafetyRule>& rules) {
    const store::MedicalObject& pat = objects.get(patient);
    SafetyReport report;
    report.patient = patient;
    report.procedures = procedures;
    report.rules_loaded = !rules.empty();
    for (const auto& attr : pat.attributes)
        report.attribute_names.push_back(attr.name);

    report.matrix.resize(procedures.size());
    report.verdicts.assign(procedures.size(), Verdict::ALLOW);
    report.verdict_rules.resize(procedures.size());

    for (std::size_t i = 0; i < procedures.size(); ++i) {
        const store::MedicalObject& proc = objects.get(procedures[i]);
        report.matrix[i].resize(report.attribute_names.size());
        const store::AttributeValue* tag_attr = proc.find_attr("tag");
        std::string tag =
            tag_attr && std::holds_alternative<std::string>(tag_attr->value)
                ? std::get<std::string>(tag_attr->value)
                : "";
        bool hard_fired = false, soft_fired = false;
        for (const data::SafetyRule& rule : rules) {
            if (rule.procedure_tag != tag) continue;
            if (!rule.predicate.holds(pat)) continue;
            // locate the attribute column; predicate held, so it is present
            for (std::size_t j = 0; j < report.attribute_names.size(); ++j) {
                if (report.attribute_names[j] != rule.predicate.attr) continue;
                report.matrix[i][j].fired_rules.push_back(rule.rule_id);
                report.matrix[i][j].hard |= rule.hard;
                break;
            }
            report.verdict_rules[i].push_back(rule.rule_id);
            hard_fired |= rule.hard;
            soft_fired |= !rule.hard;
        }
        report.verdicts[i] = hard_fired  ? Verdict::BLOCK
                             : soft_fired ? Verdict::WARN
                                          : Verdict::ALLOW;
    }
    return report;
}

Conf4 PredictionLog::divergence_rate() const {
    if (entries.empty()) return 0;
    return static_cast<Conf4>(div_round_half_even(
        static_cast<std::uint64_t>(mismatches) * kConfOne, entries.size()));
}

std::vector<KbProposal> learn_from_trace(const Trace& trace,
                                         const LearnParams& params) {
    if (!trace.s1_closed)
        throw MpuError(ErrCode::LearningDisabled, "S-1 was open during the run");

    std::map<std::pair<ObjectId, ObjectId>, int> cooccur;
    for (const TraceRecord& rec : trace.records) {
        std::vector<ObjectId> ids = rec.resolved_operands;
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = i + 1; j < ids.size(); ++j)
                ++cooccur[{ids[i], ids[j]}];
    }

    std::map<std::vector<std::uint8_t>, int> ngrams;
    if (params.ngram_len >= 1 &&
        trace.records.size() >= static_cast<std::size_t>(params.ngram_len)) {
        std::vector<std::uint8_t> ops;
        ops.reserve(trace.records.size());
        for (const TraceRecord& rec : trace.records) ops.push_back(rec.opcode);
        for (std::size_t i = 0; i + params.ngram_len <= ops.size(); ++i)
            ++ngrams[std::vector<std::uint8_t>(
                ops.begin() + i, ops.begin() + i + params.ngram_len)];
    }

    std::vector<KbProposal> proposals;
    for (const auto& [pair, count] : cooccur) {
        if (count < params.min_cooccur) continue;
        KbProposal p;
        p.kind = ProposalKind::NEW_RELATION;
        p.payload = "REL " + std::to_string(pair.first) + " " +
                    std::to_string(pair.second);
        proposals.push_back(std::move(p));
    }
    char buf[8];
    for (const auto& [gram, count] : ngrams) {
        if (count < params.min_ngram_count) continue;
        KbProposal p;
        p.kind = ProposalKind::NEW_MACRO_OPCODE;
        p.payload = "MACRO";
        for (std::uint8_t op : gram) {
            std::snprintf(buf, sizeof buf, " %02x", op);
            p.payload += buf;
        }
        proposals.push_back(std::move(p));
    }
    // map iteration already gives (kind, payload) order; ids are assigned last
    for (std::size_t i = 0; i < proposals.size(); ++i)
        proposals[i].id = static_cast<std::uint32_t>(i);
    return proposals;
}

Conf4 collective_confidence(std::span<const Conf4> steps) {
    Conf4 acc = kConfOne;
    for (Conf4 c : steps) {
        if (c > kConfOne)
            throw MpuError(ErrCode::OutOfRange, "confidence above 1.0");
        acc = conf_mul(acc, c);
    }
    return acc;
}

std::vector<ObjectId> kfilter(const store::ObjectStore& objects,
                              const std::vector<ObjectId>& set,
                              const std::map<std::string, std::int64_t>& score_table,
                              std::int64_t threshold) {
    std::vector<ObjectId> kept;
    for (ObjectId id : set) {
        const store::MedicalObject& obj = objects.get(id);
        std::int64_t score = 0;
        for (const auto& attr : obj.attributes) {
            if (attr.absent()) continue;
            auto it = score_table.find(attr.name);
            if (it != score_table.end()) score += it->second;
        }
        if (score >= threshold) kept.push_back(id);
    }
    return kept;
}

// --- Vm ------------------------------------------------------------------------

namespace {

std::uint32_t aggregate_results(const std::vector<std::uint32_t>& units) {
    if (units.empty()) return 0;
    if (units.size() == 1) return units.front();
    std::uint64_t h = kFnv64Offset;
    for (std::uint32_t u : units) h = fnv1a64_u32(u, h);
    return static_cast<std::uint32_t>(h ^ (h >> 32));
}

}  // namespace

Vm::Vm(data::Dataset dataset, masm::Program program, VmOptions options)
    : dataset_(std::move(dataset)),
      program_(std::move(program)),
      options_(std::move(options)) {
    trace_.s1_closed = options_.s1_closed;
}

void Vm::load_register(int r, std::vector<ObjectId> ids) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    registers_[r] = std::move(ids);
}

ObjectId Vm::single(const std::vector<ObjectId>& set) const {
    if (set.size() != 1) throw VmFault{FaultCode::OBJECT};
    return set.front();
}

const store::MedicalObject& Vm::live_object(ObjectId id) const {
    try {
        return dataset_.objects.get(id);
    } catch (const MpuError&) {
        throw VmFault{FaultCode::OBJECT};
    }
}

const std::vector<ObjectId>& Vm::source_set(const isa::Instruction& instr,
                                            const OpcodeInfo& info) const {
    static const std::vector<ObjectId> kEmpty;
    int reg;
    if (info.spmo_source == 'B')
        reg = instr.operand_b;
    else if (info.spmo_source == 'A' ||
             info.operand_a == isa::OperandKind::REG)
        reg = instr.reg_a();
    else
        return kEmpty;
    if (reg >= isa::kObjectRegisterCount) throw VmFault{FaultCode::RANGE};
    return registers_[reg];
}

std::vector<WorkItem> Vm::work_list(const isa::Instruction& instr) const {
    const OpcodeInfo* info = isa::OpcodeTable::standard().find(instr.opcode);
    if (!info) throw MpuError(ErrCode::UndefinedOpcode, "work_list");
    try {
        return exec_mode_dispatch(*info, instr.exec_mode(),
                                  source_set(instr, *info));
    } catch (const VmFault&) {
        throw MpuError(ErrCode::OutOfRange, "register index");
    }
}

StepStatus Vm::fault_halt(FaultCode code, TraceRecord record) {
    record.result_code = kFaultResultBase | static_cast<std::uint32_t>(code);
    halted_ = true;
    fault_ = code;
    confidence_ = conf_mul(confidence_, record.step_confidence);
    record.collective_confidence = confidence_;
    trace_.records.push_back(std::move(record));
    if (!external_clock_) ++tick_;
    return StepStatus::FAULT;
}

void Vm::finish_record(TraceRecord record, Conf4 step_conf) {
    record.step_confidence = step_conf;
    record.result_code = record.result_code ? record.result_code
                                            : aggregate_results(record.unit_results);
    confidence_ = conf_mul(confidence_, step_conf);
    record.collective_confidence = confidence_;
    trace_.records.push_back(std::move(record));
    ++pc_;
    if (!external_clock_) ++tick_;
}

StepStatus Vm::step() {
    if (halted_) return StepStatus::HALTED;

    TraceRecord record;
    record.tick = tick_;
    record.pc = pc_;

    if (pc_ >= program_.words.size()) {
        record.mnemonic = "???";
        return fault_halt(FaultCode::DECODE, std::move(record));
    }
    const std::uint32_t word = program_.words[pc_];
    record.word = word;
    record.opcode = static_cast<std::uint8_t>(word >> 24);

    isa::Instruction instr;
    try {
        instr = isa::decode(word);
    } catch (const MpuError&) {
        record.mnemonic = "???";
        return fault_halt(FaultCode::DECODE, std::move(record));
    }
    const OpcodeInfo& info = *isa::OpcodeTable::standard().find(instr.opcode);
    record.mnemonic = std::string(info.mnemonic);
    record.mode = instr.mode;

    if (info.code == isa::OP_NETGET || info.code == isa::OP_NETPUT) {
        NetRequest request;
        try {
            request = build_net_request(instr, info);
        } catch (const VmFault& f) {
            return fault_halt(f.code, std::move(record));
        }
        if (port_) {
            std::optional<NetResponse> response = port_->submit(request);
            if (!response) {
                pending_ = Pending{std::move(request), instr, word};
                return StepStatus::NEED_NET;
            }
            return apply_net_response(instr, info, *response, std::move(record));
        }
        return apply_net_response(instr, info,
                                  NetResponse{false, {}, "NAK:NOROUTE"},
                                  std::move(record));
    }

    std::vector<WorkItem> items;
    try {
        const std::vector<ObjectId>& source = source_set(instr, info);
        // single-object modes need a single object in the iterated operand
        if (info.spmo_source != 0 &&
            (instr.exec_mode() == isa::ExecMode::SPSO ||
             instr.exec_mode() == isa::ExecMode::MPSO) &&
            source.size() != 1)
            throw VmFault{FaultCode::OBJECT};
        items = exec_mode_dispatch(info, instr.exec_mode(), source);
    } catch (const VmFault& f) {
        return fault_halt(f.code, std::move(record));
    } catch (const MpuError&) {
        return fault_halt(FaultCode::DECODE, std::move(record));
    }

    staged_query_.reset();
    staged_report_.reset();
    record.step_confidence = info.base_confidence;

    try {
        for (const WorkItem& item : items)
            record.unit_results.push_back(run_item(instr, info, item, record));
    } catch (const VmFault& f) {
        return fault_halt(f.code, std::move(record));
    }

    Conf4 step_conf = record.step_confidence;
    finish_record(std::move(record), step_conf);
    return halted_ ? StepStatus::HALTED : StepStatus::OK;
}

RunOutcome Vm::run(std::size_t max_steps) {
    std::size_t steps = 0;
    while (!halted_) {
        if (steps >= max_steps) return RunOutcome::STEP_LIMIT;
        StepStatus status = step();
        ++steps;
        if (status == StepStatus::NEED_NET) return RunOutcome::NEED_NET;
        if (status == StepStatus::FAULT) return RunOutcome::FAULT;
    }
    return fault_ == FaultCode::NONE ? RunOutcome::HALTED : RunOutcome::FAULT;
}

std::uint32_t Vm::run_item(const isa::Instruction& instr, const OpcodeInfo& info,
                           const WorkItem& item, TraceRecord& record) {
    return exec_core(instr, info, item.object, item.phase, record);
}

NetRequest Vm::build_net_request(const isa::Instruction& instr,
                                 const OpcodeInfo& info) {
    int reg = instr.operand_a;
    if (reg >= isa::kObjectRegisterCount) throw VmFault{FaultCode::RANGE};
    ObjectId id = single(registers_[reg]);
    const store::MedicalObject& obj = live_object(id);

    NetRequest request;
    request.subject = std::to_string(instr.operand_b);
    if (info.code == isa::OP_NETGET) {
        const store::AttributeValue* sig = obj.find_attr("sig");
        if (!sig || !std::holds_alternative<std::string>(sig->value))
            throw VmFault{FaultCode::BAD_ATTRIBUTE};
        request.command = "DIAG 1023 " + std::get<std::string>(sig->value);
    } else {
        request.command = "PUT";
        request.burst.push_back(data::obj_record_line(obj));
    }
    return request;
}

StepStatus Vm::apply_net_response(const isa::Instruction& instr,
                                  const OpcodeInfo& info,
                                  const NetResponse& response,
                                  TraceRecord record) {
    int reg = instr.operand_a;
    record.resolved_operands.push_back(registers_[reg].front());
    net_results_ = response.results;
    std::uint32_t result;
    if (!response.ok) {
        result = kNakResult;
    } else if (info.code == isa::OP_NETGET) {
        result = static_cast<std::uint32_t>(response.results.size());
    } else {
        result = !response.results.empty() &&
                         response.results.front().rfind("COMMITTED", 0) == 0
                     ? 1
                     : 0;
    }
    record.unit_results.push_back(result);
    finish_record(std::move(record), info.base_confidence);
    return StepStatus::OK;
}

StepStatus Vm::complete_net(const NetResponse& response) {
    if (!pending_) throw MpuError(ErrCode::OutOfRange, "no pending network op");
    Pending pending = std::move(*pending_);
    pending_.reset();
    const OpcodeInfo& info = *isa::OpcodeTable::standard().find(pending.instr.opcode);
    TraceRecord record;
    record.tick = tick_;
    record.pc = pc_;
    record.word = pending.word;
    record.opcode = pending.instr.opcode;
    record.mnemonic = std::string(info.mnemonic);
    record.mode = pending.instr.mode;
    return apply_net_response(pending.instr, info, response, std::move(record));
}

std::uint32_t Vm::do_diag(ObjectId subject, std::uint16_t k, int phase,
                          Conf4& step_conf) {
    const bool fused = phase < 0;
    if (fused || phase == 0) {
        const store::MedicalObject& obj = live_object(subject);
        const store::AttributeValue* sig = obj.find_attr("sig");
        if (!sig || !std::holds_alternative<std::string>(sig->value))
            throw VmFault{FaultCode::BAD_ATTRIBUTE};
        if (!dataset_.has_schema) throw VmFault{FaultCode::SCHEMA};
        staged_query_ =
            match::parse_hex(dataset_.schema, std::get<std::string>(sig->value));
        if (!staged_query_) throw VmFault{FaultCode::SCHEMA};
        if (!fused)
            return fnv1a32(std::get<std::string>(sig->value));
    }
    // rank
    if (!staged_query_) throw VmFault{FaultCode::SCHEMA};
    std::vector<match::Neighbor> results;
    try {
        results = match::nearest_k(dataset_.bank, *staged_query_,
                                   k == 0 ? 1 : k);
    } catch (const MpuError& e) {
        throw VmFault{e.code() == ErrCode::EmptyBank ? FaultCode::EMPTY_BANK
                                                     : FaultCode::SCHEMA};
    }
    diag_results_ = results;
    std::uint64_t max_d = dataset_.schema.max_distance(options_.match_weights);
    if (max_d > 0) {
        Conf4 factor = static_cast<Conf4>(div_round_half_even(
            (max_d - std::min(results.front().distance, max_d)) * kConfOne, max_d));
        step_conf = conf_mul(step_conf, factor);
    }
    return results.front().record_id;
}

std::uint32_t Vm::do_safecheck(ObjectId patient,
                               const std::vector<ObjectId>& procedures,
                               int phase) {
    const bool fused = phase < 0;
    if (fused || phase == 0) {
        try {
            staged_report_ = safecheck(dataset_.objects, patient, procedures,
                                       dataset_.safety_rules);
        } catch (const MpuError&) {
            throw VmFault{FaultCode::OBJECT};
        }
        if (!fused) return static_cast<std::uint32_t>(staged_report_->n());
    }
    if (!staged_report_) throw VmFault{FaultCode::OBJECT};
    safety_reports_.push_back(*staged_report_);
    std::uint32_t blocked = 0, warned = 0;
    for (Verdict v : staged_report_->verdicts) {
        if (v == Verdict::BLOCK) ++blocked;
        if (v == Verdict::WARN) ++warned;
    }
    return (blocked << 16) | warned;
}

std::uint32_t Vm::do_rxplan(ObjectId patient,
                            const std::vector<ObjectId>& procedures, int phase) {
    const bool fused = phase < 0;
    if (fused || phase == 0) {
        try {
            staged_report_ = safecheck(dataset_.objects, patient, procedures,
                                       dataset_.safety_rules);
        } catch (const MpuError&) {
            throw VmFault{FaultCode::OBJECT};
        }
        if (!fused) return static_cast<std::uint32_t>(staged_report_->n());
    }
    if (!staged_report_) throw VmFault{FaultCode::OBJECT};
    RxSchedule schedule;
    schedule.patient = patient;
    for (std::size_t i = 0; i < staged_report_->procedures.size(); ++i) {
        if (staged_report_->verdicts[i] == Verdict::BLOCK)
            schedule.blocked.push_back(staged_report_->procedures[i]);
        else
            schedule.scheduled.push_back(staged_report_->procedures[i]);
    }
    std::uint32_t count = static_cast<std::uint32_t>(schedule.scheduled.size());
    rx_schedules_.push_back(std::move(schedule));
    return count;
}

std::uint32_t Vm::exec_core(const isa::Instruction& instr, const OpcodeInfo& info,
                            std::optional<ObjectId> object, int phase,
                            TraceRecord& record) {
    auto checked_reg = [&](std::uint16_t field) -> int {
        if (field >= isa::kObjectRegisterCount) throw VmFault{FaultCode::RANGE};
        return field;
    };
    auto copy_to = [&](ObjectId src_id, ObjectId dst) {
        const store::MedicalObject& src = live_object(src_id);
        store::MedicalObject dup;
        dup.id = dst;
        dup.class_tag = src.class_tag;
        dup.attributes = src.attributes;
        try {
            dataset_.objects.put_object(dup, tick_);
        } catch (const MpuError& e) {
            throw VmFault{e.code() == ErrCode::StoreFull ? FaultCode::STORE_FULL
                                                         : FaultCode::BAD_ATTRIBUTE};
        }
    };

    switch (info.code) {
        case isa::OP_HALT:
            halted_ = true;
            return 0;
        case isa::OP_NOPO:
            return 0;

        case isa::OP_LOADO: {
            int reg = checked_reg(instr.reg_a());
            ObjectId addr = instr.address();
            if (!dataset_.objects.exists(addr)) throw VmFault{FaultCode::OBJECT};
            registers_[reg] = {addr};
            record.resolved_operands.push_back(addr);
            return addr;
        }
        case isa::OP_STOREO: {
            int reg = checked_reg(instr.reg_a());
            ObjectId addr = instr.address();
            ObjectId src = single(registers_[reg]);
            copy_to(src, addr);
            record.resolved_operands.push_back(src);
            record.resolved_operands.push_back(addr);
            return addr;
        }
        case isa::OP_GETATTR: {
            ObjectId id = object ? *object : single(registers_[checked_reg(instr.reg_a())]);
            const store::MedicalObject& obj = live_object(id);
            std::size_t idx = instr.operand_b;
            if (idx >= obj.attributes.size()) throw VmFault{FaultCode::BAD_ATTRIBUTE};
            latch_ = obj.attributes[idx];
            record.resolved_operands.push_back(id);
            return obj.attributes[idx].summary_code();
        }
        case isa::OP_SETATTR: {
            ObjectId id = object ? *object : single(registers_[checked_reg(instr.reg_a())]);
            if (!latch_) throw VmFault{FaultCode::BAD_ATTRIBUTE};
            live_object(id);
            try {
                dataset_.objects.set_attribute(id, *latch_, tick_);
            } catch (const MpuError&) {
                throw VmFault{FaultCode::BAD_ATTRIBUTE};
            }
            record.resolved_operands.push_back(id);
            return dataset_.objects.get(id).version();
        }
        case isa::OP_KFILTER: {
            int reg = checked_reg(instr.reg_a());
            std::vector<ObjectId> input = registers_[reg];
            for (ObjectId id : input) record.resolved_operands.push_back(id);
            std::vector<ObjectId> kept;
            try {
                kept = kfilter(dataset_.objects, input, dataset_.score_table,
                               instr.operand_b);
            } catch (const MpuError&) {
                throw VmFault{FaultCode::OBJECT};
            }
            registers_[reg] = kept;
            return static_cast<std::uint32_t>(kept.size());
        }

        case isa::OP_MERGE: {
            ObjectId pivot = single(registers_[checked_reg(instr.operand_a)]);
            if (record.resolved_operands.empty())
                record.resolved_operands.push_back(pivot);
            if (!object) throw VmFault{FaultCode::OBJECT};
            const store::MedicalObject& other = live_object(*object);
            live_object(pivot);
            std::uint32_t added = 0;
            for (const auto& attr : other.attributes) {
                if (dataset_.objects.get(pivot).find_attr(attr.name)) continue;
                try {
                    dataset_.objects.set_attribute(pivot, attr, tick_);
                } catch (const MpuError&) {
                    throw VmFault{FaultCode::BAD_ATTRIBUTE};
                }
                ++added;
            }
            record.resolved_operands.push_back(*object);
            return added;
        }
        case isa::OP_COMMON:
        case isa::OP_OVERLAP: {
            ObjectId pivot = single(registers_[checked_reg(instr.operand_a)]);
            if (record.resolved_operands.empty())
                record.resolved_operands.push_back(pivot);
            if (!object) throw VmFault{FaultCode::OBJECT};
            const store::MedicalObject& a = live_object(pivot);
            const store::MedicalObject& b = live_object(*object);
            record.resolved_operands.push_back(*object);
            std::uint32_t count = 0;
            for (const auto& attr : a.attributes) {
                if (attr.absent()) continue;
                const store::AttributeValue* battr = b.find_attr(attr.name);
                if (!battr || battr->absent()) continue;
                if (info.code == isa::OP_OVERLAP ||
                    store::values_equal(attr, *battr, Fixed{0, 0}))
                    ++count;
            }
            return count;
        }
        case isa::OP_MATCH: {
            ObjectId pivot = single(registers_[checked_reg(instr.operand_a)]);
            if (record.resolved_operands.empty())
                record.resolved_operands.push_back(pivot);
            if (!object) throw VmFault{FaultCode::OBJECT};
            record.resolved_operands.push_back(*object);
            auto vec_of = [&](ObjectId id) {
                const store::MedicalObject& obj = live_object(id);
                const store::AttributeValue* sig = obj.find_attr("sig");
                if (!sig || !std::holds_alternative<std::string>(sig->value))
                    throw VmFault{FaultCode::BAD_ATTRIBUTE};
                if (!dataset_.has_schema) throw VmFault{FaultCode::SCHEMA};
                auto v = match::parse_hex(dataset_.schema,
                                          std::get<std::string>(sig->value));
                if (!v) throw VmFault{FaultCode::SCHEMA};
                return *v;
            };
            match::SymptomVector x = vec_of(pivot), y = vec_of(*object);
            std::uint64_t d;
            try {
                d = match::distance(x, y, options_.match_weights);
            } catch (const MpuError&) {
                throw VmFault{FaultCode::SCHEMA};
            }
            std::uint64_t max_d = dataset_.schema.max_distance(options_.match_weights);
            if (max_d > 0) {
                Conf4 factor = static_cast<Conf4>(div_round_half_even(
                    (max_d - std::min(d, max_d)) * kConfOne, max_d));
                record.step_confidence = conf_mul(record.step_confidence, factor);
            }
            return static_cast<std::uint32_t>(d);
        }

        case isa::OP_OMFETCH: {
            int reg = checked_reg(instr.reg_a());
            ObjectId addr = instr.address();
            if (!dataset_.objects.exists(addr)) throw VmFault{FaultCode::OBJECT};
            auto& set = registers_[reg];
            auto it = std::lower_bound(set.begin(), set.end(), addr);
            if (it == set.end() || *it != addr) set.insert(it, addr);
            record.resolved_operands.push_back(addr);
            return static_cast<std::uint32_t>(set.size());
        }
        case isa::OP_OMSTORE: {
            int reg = checked_reg(instr.reg_a());
            ObjectId addr = instr.address();
            ObjectId src = single(registers_[reg]);
            copy_to(src, addr);
            registers_[reg] = {addr};
            record.resolved_operands.push_back(src);
            record.resolved_operands.push_back(addr);
            return addr;
        }

        case isa::OP_LINKP:
        case isa::OP_LINKS: {
            ObjectId pivot = single(registers_[checked_reg(instr.operand_a)]);
            if (record.resolved_operands.empty())
                record.resolved_operands.push_back(pivot);
            if (!object) throw VmFault{FaultCode::OBJECT};
            bool primary = info.code == isa::OP_LINKP;
            try {
                dataset_.objects.add_relation(
                    pivot, *object,
                    primary ? store::RelationKind::PRIMARY
                            : store::RelationKind::SECONDARY,
                    primary ? "linkp" : "links", tick_);
            } catch (const MpuError&) {
                throw VmFault{FaultCode::OBJECT};
            }
            record.resolved_operands.push_back(*object);
            return *object;
        }
        case isa::OP_PRUNE: {
            store::TreeEdit edit;
            edit.kind = store::TreeEdit::PRUNE;
            edit.node = instr.operand_a;
            try {
                tree_ = store::tree_edit(tree_, edit);
            } catch (const MpuError&) {
                throw VmFault{FaultCode::TREE};
            }
            return static_cast<std::uint32_t>(tree_.live_count());
        }
        case isa::OP_GRAFT: {
            if (!object) throw VmFault{FaultCode::OBJECT};
            live_object(*object);
            store::TreeEdit edit;
            edit.kind = store::TreeEdit::GRAFT;
            edit.parent = instr.operand_b;
            edit.fragment = {store::TreeNode{0, store::TreeLevel::TWIG,
                                             std::to_string(*object), -1, true}};
            try {
                tree_ = store::tree_edit(tree_, edit);
            } catch (const MpuError&) {
                throw VmFault{FaultCode::TREE};
            }
            record.resolved_operands.push_back(*object);
            return static_cast<std::uint32_t>(tree_.nodes.size() - 1);
        }

        case isa::OP_DIAG: {
            if (!object) throw VmFault{FaultCode::OBJECT};
            if (phase < 0 || phase == 0)
                if (record.resolved_operands.empty() ||
                    record.resolved_operands.back() != *object)
                    record.resolved_operands.push_back(*object);
            Conf4 conf = record.step_confidence;
            std::uint32_t result = do_diag(*object, instr.operand_b, phase, conf);
            record.step_confidence = conf;
            return result;
        }
        case isa::OP_RXPLAN:
        case isa::OP_SAFECHK: {
            ObjectId patient = single(registers_[checked_reg(instr.operand_a)]);
            int reg_b = checked_reg(instr.operand_b);
            const std::vector<ObjectId>& procs = registers_[reg_b];
            if (phase <= 0) {
                record.resolved_operands.push_back(patient);
                for (ObjectId id : procs) record.resolved_operands.push_back(id);
            }
            return info.code == isa::OP_SAFECHK
                       ? do_safecheck(patient, procs, phase)
                       : do_rxplan(patient, procs, phase);
        }
        case isa::OP_CONF: {
            Conf4 threshold = static_cast<Conf4>(instr.operand_a) * 10;
            return confidence_ >= threshold ? 1 : 0;
        }
        case isa::OP_PREDLOG: {
            if (instr.operand_a > 0xFF || instr.operand_b > 0xFF)
                throw VmFault{FaultCode::OUTCOME};
            std::uint8_t predicted = static_cast<std::uint8_t>(instr.operand_a);
            std::uint8_t observed = static_cast<std::uint8_t>(instr.operand_b);
            if (!dataset_.outcome_codes.count(predicted) ||
                !dataset_.outcome_codes.count(observed))
                throw VmFault{FaultCode::OUTCOME};
            bool matched = predicted == observed;
            prediction_log_.entries.push_back(
                PredictionEntry{tick_, predicted, observed, matched});
            if (!matched) {
                ++prediction_log_.mismatches;
                if (options_.s1_closed) {
                    KbProposal p;
                    p.id = static_cast<std::uint32_t>(proposals_.size());
                    p.kind = ProposalKind::OBJECT_UPDATE;
                    p.payload = "PRED " + std::to_string(predicted) + " OBS " +
                                std::to_string(observed) + " TICK " +
                                std::to_string(tick_);
                    proposals_.push_back(std::move(p));
                }
            }
            return matched ? 1 : 0;
        }
    }
    throw VmFault{FaultCode::DECODE};
}

}  // namespace mpu::vm
