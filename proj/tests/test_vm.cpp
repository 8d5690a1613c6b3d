#include <doctest.h>

#include <map>

#include "mpu/dataset.hpp"
#include "mpu/errors.hpp"
#include "mpu/io.hpp"
#include "mpu/vm.hpp"
#include "testutil.hpp"

using namespace mpu;
using namespace mpu::vm;

namespace {

data::Dataset demo_dataset() {
    static const std::string text =
        read_file(testutil::data_dir() + "/demo.dataset");
    return data::load_dataset(text);
}

Vm make_vm(const std::string& source, VmOptions options = {}) {
    masm::AssembleResult r = masm::assemble_text(source);
    REQUIRE(r.ok());
    return Vm(demo_dataset(), r.program, options);
}

Trace run_program_file(const std::string& name, VmOptions options = {}) {
    masm::AssembleResult r = masm::assemble_text(
        read_file(testutil::data_dir() + "/programs/" + name));
    REQUIRE(r.ok());
    Vm machine(demo_dataset(), r.program, options);
    machine.run(100000);
    return machine.trace();
}

}  // namespace

TEST_SUITE_BEGIN("vm");

TEST_CASE("HALT halts and traces one record") {
    Vm machine = make_vm("HALT\n");
    CHECK(machine.step() == StepStatus::HALTED);
    CHECK(machine.halted());
    CHECK(machine.trace().records.size() == 1);
    CHECK(machine.trace().records[0].result_code == 0);
}

TEST_CASE("LOADO binds the register to the object id") {
    Vm machine = make_vm("LOADO r3, 10\nHALT\n");
    CHECK(machine.step() == StepStatus::OK);
    CHECK(machine.reg(3) == std::vector<store::ObjectId>{10});
}

TEST_CASE("LOADO of a missing object faults") {
    Vm machine = make_vm("LOADO r3, 999\nHALT\n");
    CHECK(machine.step() == StepStatus::FAULT);
    CHECK(machine.fault() == FaultCode::OBJECT);
    CHECK(machine.halted());
    CHECK((machine.trace().records[0].result_code & 0xF0000000u) == kFaultResultBase);
}

TEST_CASE("undefined words fault with DECODE") {
    masm::Program p;
    p.words = {0xFF000000u};
    Vm machine(demo_dataset(), p);
    CHECK(machine.step() == StepStatus::FAULT);
    CHECK(machine.fault() == FaultCode::DECODE);
}

TEST_CASE("MERGE.spmo folds the set union into the pivot") {
    Vm machine = make_vm(
        "LOADO r1, 20\nOMFETCH r2, 21\nOMFETCH r2, 22\nOMFETCH r2, 23\n"
        "MERGE.spmo r1, r2\nHALT\n");
    CHECK(machine.run(100) == RunOutcome::HALTED);

    // hand-computed union of samples 20..23
    const store::MedicalObject& merged = machine.objects().get(20);
    std::map<std::string, bool> names;
    for (const auto& attr : merged.attributes) names[attr.name] = true;
    CHECK(names ==
          std::map<std::string, bool>{{"kind", true}, {"ph", true},
                                      {"iron", true}, {"lipase", true},
                                      {"sodium", true}});
    // pivot's own values win where both sides carry the attribute
    CHECK(std::get<Fixed>(merged.find_attr("ph")->value) == Fixed{74, 1});
    // versioned through the store
    CHECK(merged.version() == 4);
    CHECK(merged.replay_history() == merged.attributes);
}

TEST_CASE("exec_mode_dispatch work lists") {
    const auto& table = isa::OpcodeTable::standard();
    const isa::OpcodeInfo& getattr = *table.find(isa::OP_GETATTR);
    const isa::OpcodeInfo& diag = *table.find(isa::OP_DIAG);

    SUBCASE("SPMO iterates the set in ascending id order") {
        auto items = exec_mode_dispatch(getattr, isa::ExecMode::SPMO, {5, 9});
        REQUIRE(items.size() == 2);
        CHECK(items[0].object == 5);
        CHECK(items[1].object == 9);
        CHECK(items[0].phase == -1);
    }
    SUBCASE("SPMO over an empty set is zero work items") {
        CHECK(exec_mode_dispatch(getattr, isa::ExecMode::SPMO, {}).empty());
    }
    SUBCASE("MPSO walks the chain in order") {
        auto items = exec_mode_dispatch(diag, isa::ExecMode::MPSO, {7});
        REQUIRE(items.size() == 2);
        CHECK(items[0].phase == 0);
        CHECK(items[1].phase == 1);
        CHECK(items[0].object == 7);
    }
    SUBCASE("MPMO is object-major: chain of 2 over 3 objects = 6 items") {
        auto items = exec_mode_dispatch(diag, isa::ExecMode::MPMO, {1, 2, 3});
        REQUIRE(items.size() == 6);
        std::vector<std::pair<int, store::ObjectId>> got;
        for (const auto& item : items) got.push_back({item.phase, *item.object});
        std::vector<std::pair<int, store::ObjectId>> expect = {
            {0, 1}, {1, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}};
        CHECK(got == expect);
    }
    SUBCASE("disallowed modes are rejected") {
        const isa::OpcodeInfo& halt = *table.find(isa::OP_HALT);
        CHECK_THROWS_AS(exec_mode_dispatch(halt, isa::ExecMode::SPMO, {}),
                        MpuError);
    }
}

TEST_CASE("SPMO over an empty set still traces the instruction") {
    // r2 never loaded: empty set, zero work items
    Vm machine = make_vm("GETATTR.spmo r2, 0\nHALT\n");
    CHECK(machine.step() == StepStatus::OK);
    REQUIRE(machine.trace().records.size() == 1);
    CHECK(machine.trace().records[0].unit_results.empty());
    CHECK(machine.trace().records[0].result_code == 0);
}

TEST_CASE("run bounds") {
    SUBCASE("HALT-only runs one step") {
        Vm machine = make_vm("HALT\n");
        CHECK(machine.run(100) == RunOutcome::HALTED);
        CHECK(machine.trace().records.size() == 1);
    }
    SUBCASE("step budget cuts the run with records intact") {
        std::string many;
        for (int i = 0; i < 200; ++i) many += "NOPO\n";
        many += "HALT\n";
        Vm machine = make_vm(many);
        CHECK(machine.run(100) == RunOutcome::STEP_LIMIT);
        CHECK(machine.trace().records.size() == 100);
        CHECK_FALSE(machine.halted());
    }
    SUBCASE("running off the end of the program faults") {
        Vm machine = make_vm("NOPO\n");
        CHECK(machine.run(10) == RunOutcome::FAULT);
        CHECK(machine.fault() == FaultCode::DECODE);
    }
}

TEST_CASE("identical runs produce identical trace hashes") {
    Trace a = run_program_file("p20.mpa");
    Trace b = run_program_file("p20.mpa");
    REQUIRE(a.records.size() == 12);
    CHECK(trace_hash(a) == trace_hash(b));
    CHECK(format_trace(a) == format_trace(b));
}

TEST_CASE("trace format carries the hash line") {
    Trace t = run_program_file("p01.mpa");
    std::string text = format_trace(t);
    CHECK(text.find("TRACEHASH ") != std::string::npos);
    CHECK(text.back() == '\n');
}

TEST_CASE("safecheck") {
    data::Dataset ds = demo_dataset();
    SUBCASE("no matching attributes -> all ALLOW") {
        SafetyReport r = safecheck(ds.objects, 4, {100, 101}, ds.safety_rules);
        REQUIRE(r.verdicts.size() == 2);
        CHECK(r.verdicts[0] == Verdict::ALLOW);
        CHECK(r.verdicts[1] == Verdict::ALLOW);
    }
    SUBCASE("diabetes vs sugar_load -> BLOCK naming the rule") {
        SafetyReport r = safecheck(ds.objects, 1, {100}, ds.safety_rules);
        REQUIRE(r.verdicts.size() == 1);
        CHECK(r.verdicts[0] == Verdict::BLOCK);
        REQUIRE(r.verdict_rules[0].size() == 1);
        CHECK(r.verdict_rules[0][0] == "R1");
    }
    SUBCASE("soft rules only -> WARN") {
        // patient 2 drinks; sedation carries a soft rule
        SafetyReport r = safecheck(ds.objects, 2, {102}, ds.safety_rules);
        CHECK(r.verdicts[0] == Verdict::WARN);
    }
    SUBCASE("matrix dimensions are n procedures by m patient attributes") {
        SafetyReport r = safecheck(ds.objects, 1, {100, 101, 102}, ds.safety_rules);
        CHECK(r.n() == 3);
        CHECK(r.m() == ds.objects.get(1).attributes.size());
        REQUIRE(r.matrix.size() == 3);
        for (const auto& row : r.matrix) CHECK(row.size() == r.m());
    }
    SUBCASE("verdicts equal a brute-force rule enumeration") {
        testutil::SplitMix64 rng(2024);
        for (int iter = 0; iter < 100; ++iter) {
            // fuzz a patient, procedures and rules from scratch
            store::ObjectStore objects;
            store::MedicalObject patient;
            patient.id = 1;
            patient.class_tag = "patient";
            int m = 1 + rng.below(4);
            for (int a = 0; a < m; ++a)
                patient.attributes.push_back(store::AttributeValue{
                    "attr" + std::to_string(a),
                    static_cast<std::int64_t>(rng.below(3))});
            objects.put_object(patient);

            std::vector<store::ObjectId> procs;
            int n = 1 + rng.below(4);
            for (int p = 0; p < n; ++p) {
                store::MedicalObject proc;
                proc.id = static_cast<store::ObjectId>(100 + p);
                proc.class_tag = "procedure";
                proc.attributes.push_back(store::AttributeValue{
                    "tag", "tag" + std::to_string(rng.below(3))});
                objects.put_object(proc);
                procs.push_back(proc.id);
            }

            std::vector<data::SafetyRule> rules;
            int rule_count = rng.below(6);
            for (int r = 0; r < rule_count; ++r) {
                data::SafetyRule rule;
                rule.hard = rng.chance(50);
                rule.predicate = data::parse_predicate(
                    "attr" + std::to_string(rng.below(4)) + "=" +
                    std::to_string(rng.below(3)));
                rule.procedure_tag = "tag" + std::to_string(rng.below(3));
                rule.rule_id = "F" + std::to_string(r);
                rules.push_back(rule);
            }

            SafetyReport got = safecheck(objects, 1, procs, rules);
            CHECK(got.n() == static_cast<std::size_t>(n));
            CHECK(got.m() == static_cast<std::size_t>(m));
            for (int p = 0; p < n; ++p) {
                bool hard = false, soft = false;
                const store::MedicalObject& proc = objects.get(procs[p]);
                std::string tag =
                    std::get<std::string>(proc.find_attr("tag")->value);
                for (const auto& rule : rules) {
                    if (rule.procedure_tag != tag) continue;
                    if (!rule.predicate.holds(objects.get(1))) continue;
                    (rule.hard ? hard : soft) = true;
                }
                Verdict expect = hard ? Verdict::BLOCK
                                 : soft ? Verdict::WARN
                                        : Verdict::ALLOW;
                CHECK(got.verdicts[p] == expect);
            }
        }
    }
}

TEST_CASE("RXPLAN never schedules a blocked sub-procedure") {
    Vm machine = make_vm(
        "LOADO r1, 1\nOMFETCH r2, 100\nOMFETCH r2, 102\nRXPLAN r1, r2\nHALT\n");
    CHECK(machine.run(100) == RunOutcome::HALTED);
    REQUIRE(machine.rx_schedules().size() == 1);
    const RxSchedule& rx = machine.rx_schedules()[0];
    // 100 carries the hard diabetes rule for patient 1; 102 only soft ones
    CHECK(rx.blocked == std::vector<store::ObjectId>{100});
    CHECK(rx.scheduled == std::vector<store::ObjectId>{102});
}

TEST_CASE("confidence algebra") {
    CHECK(collective_confidence({}) == kConfOne);
    std::vector<Conf4> chain = {9000, 8000};
    CHECK(collective_confidence(chain) == 7200);
    chain = {9000, 0, 9999};
    CHECK(collective_confidence(chain) == 0);
    chain = {10001};
    CHECK_THROWS_AS(collective_confidence(chain), MpuError);

    testutil::SplitMix64 rng(5150);
    for (int i = 0; i < 1000; ++i) {
        std::vector<Conf4> steps;
        Conf4 min_step = kConfOne;
        std::size_t len = rng.below(6);
        for (std::size_t s = 0; s < len; ++s) {
            Conf4 c = rng.below(kConfOne + 1);
            steps.push_back(c);
            min_step = std::min(min_step, c);
        }
        Conf4 got = collective_confidence(steps);
        CHECK(got <= min_step);
        CHECK(got <= kConfOne);
        if (!steps.empty() && min_step == 0) CHECK(got == 0);
    }
}

TEST_CASE("CONF gates on the confidence register") {
    // DIAG on patient 1 hits strain 3 at distance 0: base confidence 0.98
    Vm machine = make_vm("LOADO r1, 1\nDIAG r1, 1\nCONF 900\nCONF 990\nHALT\n");
    CHECK(machine.run(100) == RunOutcome::HALTED);
    const auto& records = machine.trace().records;
    CHECK(records[2].result_code == 1);  // 0.98 >= 0.900
    CHECK(records[3].result_code == 0);  // 0.98 <  0.990
}

TEST_CASE("predlog") {
    SUBCASE("match logs without a proposal") {
        Vm machine = make_vm("PREDLOG 1, 1\nHALT\n");
        machine.run(10);
        CHECK(machine.prediction_log().entries.size() == 1);
        CHECK(machine.prediction_log().entries[0].match);
        CHECK(machine.proposals().empty());
        CHECK(machine.prediction_log().divergence_rate() == 0);
    }
    SUBCASE("mismatch with S-1 open logs only") {
        Vm machine = make_vm("PREDLOG 1, 2\nHALT\n");
        machine.run(10);
        CHECK(machine.prediction_log().mismatches == 1);
        CHECK(machine.proposals().empty());
        CHECK(machine.prediction_log().divergence_rate() == kConfOne);
    }
    SUBCASE("mismatch with S-1 closed emits one PENDING proposal") {
        VmOptions options;
        options.s1_closed = true;
        Vm machine = make_vm("PREDLOG 1, 2\nHALT\n", options);
        machine.run(10);
        REQUIRE(machine.proposals().size() == 1);
        CHECK(machine.proposals()[0].kind == ProposalKind::OBJECT_UPDATE);
        CHECK(machine.proposals()[0].status == ProposalStatus::PENDING);
    }
    SUBCASE("unknown outcome codes fault") {
        Vm machine = make_vm("PREDLOG 9, 1\nHALT\n");
        CHECK(machine.run(10) == RunOutcome::FAULT);
        CHECK(machine.fault() == FaultCode::OUTCOME);
    }
}

TEST_CASE("learn_from_trace") {
    SUBCASE("empty trace yields nothing") {
        Trace t;
        t.s1_closed = true;
        CHECK(learn_from_trace(t, {}).empty());
    }
    SUBCASE("S-1 open is an error") {
        Trace t;
        t.s1_closed = false;
        CHECK_THROWS_AS(learn_from_trace(t, {}), MpuError);
    }
    SUBCASE("co-occurrence threshold") {
        Trace t;
        t.s1_closed = true;
        for (int i = 0; i < 3; ++i) {
            TraceRecord rec;
            rec.opcode = isa::OP_MATCH;
            rec.resolved_operands = {5, 9};
            t.records.push_back(rec);
        }
        LearnParams params;
        params.min_cooccur = 3;
        params.ngram_len = 2;
        params.min_ngram_count = 99;
        auto proposals = learn_from_trace(t, params);
        REQUIRE(proposals.size() == 1);
        CHECK(proposals[0].kind == ProposalKind::NEW_RELATION);
        CHECK(proposals[0].payload == "REL 5 9");
    }
    SUBCASE("repeated opcode n-grams become macro proposals") {
        Trace t = run_program_file("p19.mpa", VmOptions{true, {}});
        REQUIRE(t.s1_closed);
        LearnParams params;
        params.min_cooccur = 1000;
        params.ngram_len = 2;
        params.min_ngram_count = 4;
        auto proposals = learn_from_trace(t, params);
        // only MATCH,DIAG repeats four times in p19
        REQUIRE(proposals.size() == 1);
        CHECK(proposals[0].kind == ProposalKind::NEW_MACRO_OPCODE);
        CHECK(proposals[0].payload == "MACRO 23 a0");
    }
    SUBCASE("counting oracle equivalence on a fuzzed trace") {
        testutil::SplitMix64 rng(31415);
        Trace t;
        t.s1_closed = true;
        for (int i = 0; i < 60; ++i) {
            TraceRecord rec;
            rec.opcode = static_cast<std::uint8_t>(rng.below(3));
            int ops = rng.below(3);
            for (int o = 0; o < ops; ++o)
                rec.resolved_operands.push_back(
                    static_cast<store::ObjectId>(rng.below(5)));
            t.records.push_back(rec);
        }
        LearnParams params{2, 2, 2};
        auto proposals = learn_from_trace(t, params);

        // independent counting oracle
        std::map<std::pair<store::ObjectId, store::ObjectId>, int> pairs;
        for (const auto& rec : t.records) {
            std::vector<store::ObjectId> ids = rec.resolved_operands;
            std::sort(ids.begin(), ids.end());
            ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = i + 1; j < ids.size(); ++j)
                    ++pairs[{ids[i], ids[j]}];
        }
        std::map<std::pair<int, int>, int> grams;
        for (std::size_t i = 0; i + 2 <= t.records.size(); ++i)
            ++grams[{t.records[i].opcode, t.records[i + 1].opcode}];

        std::size_t expect = 0;
        for (const auto& [p, c] : pairs)
            if (c >= 2) ++expect;
        for (const auto& [g, c] : grams)
            if (c >= 2) ++expect;
        CHECK(proposals.size() == expect);
        for (std::size_t i = 0; i + 1 < proposals.size(); ++i) {
            bool kind_order = static_cast<int>(proposals[i].kind) <=
                              static_cast<int>(proposals[i + 1].kind);
            CHECK(kind_order);
            if (proposals[i].kind == proposals[i + 1].kind)
                CHECK(proposals[i].payload < proposals[i + 1].payload);
        }
    }
}

TEST_CASE("kfilter") {
    data::Dataset ds = demo_dataset();
    // scores: 20 -> kind+ph = 3, 21 -> kind+iron = 2, 22 -> kind+ph+lipase = 6
    std::vector<store::ObjectId> set = {20, 21, 22};
    CHECK(kfilter(ds.objects, set, ds.score_table, 0) == set);
    CHECK(kfilter(ds.objects, set, ds.score_table, 99).empty());
    CHECK(kfilter(ds.objects, set, ds.score_table, 3) ==
          std::vector<store::ObjectId>{20, 22});
}

TEST_CASE("GETATTR/SETATTR move values through the latch") {
    Vm machine = make_vm("LOADO r1, 1\nGETATTR r1, 4\nLOADO r2, 4\nSETATTR r2\nHALT\n");
    CHECK(machine.run(100) == RunOutcome::HALTED);
    // patient 4's glucose now equals patient 1's
    const auto* glucose = machine.objects().get(4).find_attr("glucose");
    REQUIRE(glucose != nullptr);
    CHECK(std::get<std::int64_t>(glucose->value) == 140);
}

TEST_CASE("NETGET without a port answers NAK in-model") {
    Vm machine = make_vm("LOADO r1, 1\nNETGET r1, 530\nHALT\n");
    CHECK(machine.run(100) == RunOutcome::HALTED);
    CHECK(machine.trace().records[1].result_code == kNakResult);
    CHECK(machine.fault() == FaultCode::NONE);
}

TEST_CASE("a synchronous port completes NETGET inline") {
    struct FixedPort : NetworkPort {
        std::optional<NetResponse> submit(const NetRequest& request) override {
            CHECK(request.subject == "530");
            CHECK(request.command.rfind("DIAG ", 0) == 0);
            return NetResponse{true, {"3 0 kpneu_a"}, "ACK"};
        }
    };
    Vm machine = make_vm("LOADO r1, 1\nNETGET r1, 530\nHALT\n");
    FixedPort port;
    machine.set_port(&port);
    CHECK(machine.run(100) == RunOutcome::HALTED);
    CHECK(machine.trace().records[1].result_code == 1);
    CHECK(machine.last_net_results() == std::vector<std::string>{"3 0 kpneu_a"});
}

TEST_CASE("an async port suspends and resumes the instruction") {
    struct AsyncPort : NetworkPort {
        std::optional<NetResponse> submit(const NetRequest&) override {
            return std::nullopt;
        }
    };
    Vm machine = make_vm("LOADO r1, 1\nNETGET r1, 530\nHALT\n");
    AsyncPort port;
    machine.set_port(&port);
    CHECK(machine.run(100) == RunOutcome::NEED_NET);
    REQUIRE(machine.pending_request() != nullptr);
    CHECK(machine.trace().records.size() == 1);  // NETGET not yet traced
    CHECK(machine.complete_net({true, {"1 2 x", "2 3 y"}, "ACK"}) == StepStatus::OK);
    CHECK(machine.trace().records.size() == 2);
    CHECK(machine.trace().records[1].result_code == 2);
    CHECK(machine.run(100) == RunOutcome::HALTED);
}

TEST_CASE("all twenty shipped programs run to completion") {
    for (int i = 1; i <= 20; ++i) {
        char name[16];
        std::snprintf(name, sizeof name, "p%02d.mpa", i);
        Trace t = run_program_file(name);
        CHECK(t.records.size() >= 1);
        // every program ends deliberately: HALT, never a fault
        CHECK(t.records.back().mnemonic == "HALT");
    }
}

TEST_SUITE_END();
