#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpu/object_store.hpp"
#include "mpu/symptom_match.hpp"

namespace mpu::data {

// One side of a safety/conflict predicate: attribute name, comparison
// operator, typed value. Grammar: name=value name!=value name<value
// name>value.
struct Predicate {
    std::string attr;
    enum Op { EQ, NE, LT, GT } op = EQ;
    store::AttributeValue value;  // name mirrors attr

    bool holds(const store::MedicalObject& obj) const;
    std::string str() const;
};

Predicate parse_predicate(const std::string& text);  // throws FormatError

// Safety rule: fires when the predicate holds on the patient and the
// sub-procedure carries the tag.
struct SafetyRule {
    bool hard = false;  // hard -> BLOCK, soft -> WARN
    Predicate predicate;
    std::string procedure_tag;
    std::string rule_id;
};

// Everything one dataset file carries. Record kinds, tab separated:
//   SCHEMA D w0 w1 ...
//   OBJ id class name=value ...
//   SIG record_id label dim0 dim1 ...        (hex codes)
//   RULE hard|soft predicate tag rule_id     (tag "attr:<pred>" = conflict)
//   OUTCOME code name
//   SCORE attr weight
struct Dataset {
    match::SymptomSchema schema;
    bool has_schema = false;
    store::ObjectStore objects;
    match::SignatureBank bank;
    std::vector<SafetyRule> safety_rules;
    std::vector<store::ConflictRule> conflict_rules;
    std::map<std::uint8_t, std::string> outcome_codes;
    std::map<std::string, std::int64_t> score_table;

    // Attribute "sig" of an object parsed against the schema; nullopt when
    // missing or malformed.
    std::optional<match::SymptomVector> object_signature(
        const store::MedicalObject& obj) const;
};

// Throws MpuError{FormatError} with "line N: ..." messages. `merge_into`
// loads on top of an existing dataset (the --rules path).
Dataset load_dataset(const std::string& text);
void merge_dataset(Dataset& dst, const std::string& text);

// Canonical dump, loadable by load_dataset; objects sorted by id, SIG
// records in insertion order.
std::string dump_dataset(const Dataset& dataset);

// One OBJ record line for an object (used as NETPUT payload).
std::string obj_record_line(const store::MedicalObject& obj);

// Parses a value token: absent | true | false | integer | fixed | string.
store::AttributeValue parse_value(const std::string& name,
                                  const std::string& token);

}  // namespace mpu::data
