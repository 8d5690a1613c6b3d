#include <doctest.h>

#include "mpu/dataset.hpp"
#include "mpu/errors.hpp"
#include "mpu/io.hpp"
#include "testutil.hpp"

using namespace mpu;
using namespace mpu::data;

TEST_SUITE_BEGIN("dataset");

TEST_CASE("load parses every record kind") {
    std::string text =
        "SCHEMA\t2\t8\t8\n"
        "OBJ\t1\tpatient\tname=alice\tage=64\tdiabetes=true\tglucose=90.5\n"
        "SIG\t7\tstrain_a\t1a\t2b\n"
        "RULE\thard\tdiabetes=true\tsugar_load\tR1\n"
        "RULE\tsoft\tage>60\tsedation\tR2\n"
        "RULE\thard\tanticoagulant=true\tattr:surgery_class=major\tC1\n"
        "OUTCOME\t1\timproved\n"
        "SCORE\tglucose\t2\n";
    Dataset ds = load_dataset(text);

    CHECK(ds.has_schema);
    CHECK(ds.schema.dims() == 2);
    REQUIRE(ds.objects.exists(1));
    const store::MedicalObject& obj = ds.objects.get(1);
    CHECK(obj.class_tag == "patient");
    CHECK(std::get<std::string>(obj.find_attr("name")->value) == "alice");
    CHECK(std::get<std::int64_t>(obj.find_attr("age")->value) == 64);
    CHECK(std::get<bool>(obj.find_attr("diabetes")->value) == true);
    CHECK(std::get<Fixed>(obj.find_attr("glucose")->value) == Fixed{905, 1});

    REQUIRE(ds.bank.entries.size() == 1);
    CHECK(ds.bank.entries[0].record_id == 7);
    CHECK(ds.bank.entries[0].vector.dims == std::vector<std::uint64_t>{0x1a, 0x2b});

    REQUIRE(ds.safety_rules.size() == 2);
    CHECK(ds.safety_rules[0].hard);
    CHECK(ds.safety_rules[0].procedure_tag == "sugar_load");
    CHECK(ds.safety_rules[1].predicate.op == Predicate::GT);
    REQUIRE(ds.conflict_rules.size() == 1);
    CHECK(ds.conflict_rules[0].attr_b == "surgery_class");

    CHECK(ds.outcome_codes.at(1) == "improved");
    CHECK(ds.score_table.at("glucose") == 2);
}

TEST_CASE("loader rejects malformed lines with their line number") {
    auto expect_line = [](const std::string& text, const char* needle) {
        try {
            load_dataset(text);
            FAIL_CHECK("expected FormatError");
        } catch (const MpuError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };
    expect_line("SIG\t1\tx\t1a\n", "line 1");                 // SIG before SCHEMA
    expect_line("SCHEMA\t2\t8\t8\nWHAT\t1\n", "line 2");      // unknown kind
    expect_line("OBJ\t1\tp\nOBJ\t1\tp\n", "line 2");          // duplicate id
    expect_line("OBJ\t9999\tp\n", "line 1");                  // id out of range
    expect_line("SCHEMA\t2\t8\n", "line 1");                  // width count
    expect_line("OBJ\t1\tp\tnovalue\n", "line 1");            // bad attribute
    expect_line("RULE\thard\tx=1\n", "line 1");               // missing fields
}

TEST_CASE("predicates evaluate against objects") {
    store::MedicalObject obj;
    obj.attributes = {store::AttributeValue{"age", std::int64_t{64}},
                      store::AttributeValue{"diabetes", true},
                      store::AttributeValue{"note", std::string("x")}};
    CHECK(parse_predicate("age=64").holds(obj));
    CHECK(parse_predicate("age>60").holds(obj));
    CHECK_FALSE(parse_predicate("age<60").holds(obj));
    CHECK(parse_predicate("age!=65").holds(obj));
    CHECK(parse_predicate("diabetes=true").holds(obj));
    CHECK_FALSE(parse_predicate("missing=1").holds(obj));
    CHECK_FALSE(parse_predicate("note>3").holds(obj));  // strings do not order
    CHECK_THROWS_AS(parse_predicate("bare"), MpuError);
}

TEST_CASE("dump then load reproduces the dataset") {
    std::string text =
        "SCHEMA\t2\t8\t8\n"
        "OBJ\t1\tpatient\tname=alice\tage=64\n"
        "OBJ\t2\tsample\tkind=blood\tabsent_one=absent\n"
        "SIG\t7\tstrain_a\t1a\t2b\n"
        "RULE\thard\tdiabetes=true\tsugar_load\tR1\n"
        "OUTCOME\t1\timproved\n"
        "SCORE\tkind\t3\n";
    Dataset ds = load_dataset(text);
    std::string dumped = dump_dataset(ds);
    Dataset again = load_dataset(dumped);
    CHECK(dump_dataset(again) == dumped);
    CHECK(again.objects.size() == 2);
    CHECK(again.bank.entries.size() == 1);
    CHECK(again.objects.get(2).find_attr("absent_one")->absent());
}

TEST_CASE("the shipped demo dataset loads") {
    Dataset ds = load_dataset(read_file(testutil::data_dir() + "/demo.dataset"));
    CHECK(ds.has_schema);
    CHECK(ds.schema.dims() == 4);
    CHECK(ds.bank.entries.size() == 16);
    CHECK(ds.objects.exists(1));
    CHECK(ds.objects.exists(2000));
    CHECK_FALSE(ds.safety_rules.empty());
    CHECK_FALSE(ds.conflict_rules.empty());
    CHECK_FALSE(ds.outcome_codes.empty());
    CHECK_FALSE(ds.score_table.empty());

    auto sig = ds.object_signature(ds.objects.get(1));
    REQUIRE(sig.has_value());
    CHECK(sig->dims.size() == 4);
}

TEST_SUITE_END();
