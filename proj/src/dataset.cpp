#include "mpu/dataset.hpp"

#include <algorithm>
#include <sstream>

#include "mpu/errors.hpp"

namespace mpu::data {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t next = line.find('\t', pos);
        if (next == std::string::npos) {
            out.push_back(line.substr(pos));
            break;
        }
        out.push_back(line.substr(pos, next - pos));
        pos = next + 1;
    }
    return out;
}

[[noreturn]] void bad_line(int line_no, const std::string& msg) {
    throw MpuError(ErrCode::FormatError,
                   "line " + std::to_string(line_no) + ": " + msg);
}

std::int64_t to_int(const std::string& s, int line_no, const char* what) {
    try {
        std::size_t used = 0;
        long long v = std::stoll(s, &used);
        if (used != s.size()) bad_line(line_no, std::string("bad ") + what);
        return v;
    } catch (const std::exception&) {
        bad_line(line_no, std::string("bad ") + what);
    }
}

}  // namespace

store::AttributeValue parse_value(const std::string& name,
                                  const std::string& token) {
    store::AttributeValue attr;
    attr.name = name;
    if (token == "absent") return attr;
    if (token == "true") {
        attr.value = true;
        return attr;
    }
    if (token == "false") {
        attr.value = false;
        return attr;
    }
    if (auto fx = parse_fixed(token)) {
        if (fx->scale == 0)
            attr.value = fx->mantissa;
        else
            attr.value = *fx;
        return attr;
    }
    attr.value = token;  // code-string
    return attr;
}

bool Predicate::holds(const store::MedicalObject& obj) const {
    const store::AttributeValue* actual = obj.find_attr(attr);
    if (!actual || actual->absent()) return false;
    const Fixed tol{0, 0};
    bool eq = store::values_equal(*actual, value, tol);
    switch (op) {
        case EQ: return eq;
        case NE: return !eq;
        case LT:
        case GT: {
            auto as_fixed = [](const store::AttributeValue& v) -> std::optional<Fixed> {
                if (std::holds_alternative<std::int64_t>(v.value))
                    return Fixed{std::get<std::int64_t>(v.value), 0};
                if (std::holds_alternative<Fixed>(v.value))
                    return std::get<Fixed>(v.value);
                return std::nullopt;
            };
            auto lhs = as_fixed(*actual), rhs = as_fixed(value);
            if (!lhs || !rhs) return false;
            int c = Fixed::compare(*lhs, *rhs);
            return op == LT ? c < 0 : c > 0;
        }
    }
    return false;
}

std::string Predicate::str() const {
    const char* ops[] = {"=", "!=", "<", ">"};
    return attr + ops[op] + value.value_str();
}

Predicate parse_predicate(const std::string& text) {
    static const struct { const char* token; Predicate::Op op; } kOps[] = {
        {"!=", Predicate::NE}, {"<", Predicate::LT},
        {">", Predicate::GT}, {"=", Predicate::EQ}};
    for (const auto& [token, op] : kOps) {
        std::size_t pos = text.find(token);
        if (pos == std::string::npos || pos == 0) continue;
        Predicate p;
        p.attr = text.substr(0, pos);
        p.op = op;
        p.value = parse_value(p.attr, text.substr(pos + std::string(token).size()));
        if (p.value.absent())
            throw MpuError(ErrCode::FormatError, "predicate value 'absent': " + text);
        return p;
    }
    throw MpuError(ErrCode::FormatError, "bad predicate: " + text);
}

std::optional<match::SymptomVector> Dataset::object_signature(
    const store::MedicalObject& obj) const {
    if (!has_schema) return std::nullopt;
    const store::AttributeValue* sig = obj.find_attr("sig");
    if (!sig || !std::holds_alternative<std::string>(sig->value))
        return std::nullopt;
    return match::parse_hex(schema, std::get<std::string>(sig->value));
}

void merge_dataset(Dataset& dst, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> f = split_tabs(line);
        const std::string& kind = f[0];

        if (kind == "SCHEMA") {
            if (f.size() < 2) bad_line(line_no, "SCHEMA needs a dimension count");
            std::int64_t d = to_int(f[1], line_no, "dimension count");
            if (d < 1 || static_cast<std::size_t>(d) + 2 != f.size())
                bad_line(line_no, "SCHEMA width list does not match count");
            match::SymptomSchema schema;
            for (std::size_t i = 2; i < f.size(); ++i) {
                std::int64_t w = to_int(f[i], line_no, "width");
                if (w < 1 || w > 64) bad_line(line_no, "width out of range 1..64");
                schema.widths.push_back(static_cast<std::uint8_t>(w));
            }
            if (dst.has_schema && schema.id() != dst.schema.id())
                bad_line(line_no, "conflicting SCHEMA");
            dst.schema = schema;
            dst.has_schema = true;
            dst.bank.schema_id = schema.id();
        } else if (kind == "OBJ") {
            if (f.size() < 3) bad_line(line_no, "OBJ needs id and class");
            std::int64_t id = to_int(f[1], line_no, "object id");
            if (id < 0 || id >= static_cast<std::int64_t>(store::kStoreCapacity))
                bad_line(line_no, "object id out of range 0..4095");
            if (dst.objects.exists(static_cast<store::ObjectId>(id)))
                bad_line(line_no, "duplicate object id " + f[1]);
            store::MedicalObject obj;
            obj.id = static_cast<store::ObjectId>(id);
            obj.class_tag = f[2];
            for (std::size_t i = 3; i < f.size(); ++i) {
                std::size_t eq = f[i].find('=');
                if (eq == std::string::npos || eq == 0)
                    bad_line(line_no, "attribute must be name=value: " + f[i]);
                obj.attributes.push_back(
                    parse_value(f[i].substr(0, eq), f[i].substr(eq + 1)));
            }
            try {
                dst.objects.put_object(obj);
            } catch (const MpuError& e) {
                bad_line(line_no, e.what());
            }
        } else if (kind == "SIG") {
            if (!dst.has_schema) bad_line(line_no, "SIG before SCHEMA");
            if (f.size() != 3 + dst.schema.dims())
                bad_line(line_no, "SIG dimension count mismatch");
            match::SignatureRecord rec;
            std::int64_t rid = to_int(f[1], line_no, "record id");
            if (rid < 0 || rid > 0xFFFFFFFFll) bad_line(line_no, "record id out of range");
            rec.record_id = static_cast<std::uint32_t>(rid);
            rec.label = f[2];
            std::string hex;
            for (std::size_t i = 3; i < f.size(); ++i) {
                if (i > 3) hex += ':';
                hex += f[i];
            }
            auto vec = match::parse_hex(dst.schema, hex);
            if (!vec) bad_line(line_no, "bad SIG codes");
            rec.vector = *vec;
            try {
                dst.bank.add(rec);
            } catch (const MpuError& e) {
                bad_line(line_no, e.what());
            }
        } else if (kind == "RULE") {
            if (f.size() != 5) bad_line(line_no, "RULE needs 4 fields");
            bool hard;
            if (f[1] == "hard") hard = true;
            else if (f[1] == "soft") hard = false;
            else bad_line(line_no, "RULE severity must be hard|soft");
            Predicate pred;
            try {
                pred = parse_predicate(f[2]);
            } catch (const MpuError& e) {
                bad_line(line_no, e.what());
            }
            if (f[3].rfind("attr:", 0) == 0) {
                // second predicate: a cell-conflict rule
                Predicate other;
                try {
                    other = parse_predicate(f[3].substr(5));
                } catch (const MpuError& e) {
                    bad_line(line_no, e.what());
                }
                if (pred.op != Predicate::EQ || other.op != Predicate::EQ)
                    bad_line(line_no, "conflict rules use '=' predicates");
                dst.conflict_rules.push_back(store::ConflictRule{
                    pred.attr, pred.value, other.attr, other.value, f[4]});
            } else {
                dst.safety_rules.push_back(SafetyRule{hard, pred, f[3], f[4]});
            }
        } else if (kind == "OUTCOME") {
            if (f.size() != 3) bad_line(line_no, "OUTCOME needs code and name");
            std::int64_t code = to_int(f[1], line_no, "outcome code");
            if (code < 0 || code > 255) bad_line(line_no, "outcome code out of range");
            dst.outcome_codes[static_cast<std::uint8_t>(code)] = f[2];
        } else if (kind == "SCORE") {
            if (f.size() != 3) bad_line(line_no, "SCORE needs attr and weight");
            dst.score_table[f[1]] = to_int(f[2], line_no, "score weight");
        } else {
            bad_line(line_no, "unknown record kind '" + kind + "'");
        }
    }
}

Dataset load_dataset(const std::string& text) {
    Dataset dataset;
    merge_dataset(dataset, text);
    return dataset;
}

std::string obj_record_line(const store::MedicalObject& obj) {
    std::string out = "OBJ\t" + std::to_string(obj.id) + "\t" + obj.class_tag;
    for (const auto& attr : obj.attributes)
        out += "\t" + attr.name + "=" + attr.value_str();
    return out;
}

std::string dump_dataset(const Dataset& dataset) {
    std::string out;
    if (dataset.has_schema) {
        out += "SCHEMA\t" + std::to_string(dataset.schema.dims());
        for (std::uint8_t w : dataset.schema.widths)
            out += "\t" + std::to_string(w);
        out += "\n";
    }
    for (const auto& [id, obj] : dataset.objects.all())
        out += obj_record_line(obj) + "\n";
    for (const auto& rec : dataset.bank.entries) {
        out += "SIG\t" + std::to_string(rec.record_id) + "\t" + rec.label;
        for (std::size_t d = 0; d < rec.vector.dims.size(); ++d) {
            match::SymptomVector one{rec.vector.schema_id, {rec.vector.dims[d]}};
            out += "\t" + match::to_hex(one);
        }
        out += "\n";
    }
    for (const auto& rule : dataset.safety_rules)
        out += std::string("RULE\t") + (rule.hard ? "hard" : "soft") + "\t" +
               rule.predicate.str() + "\t" + rule.procedure_tag + "\t" +
               rule.rule_id + "\n";
    for (const auto& rule : dataset.conflict_rules)
        out += "RULE\thard\t" + rule.attr_a + "=" + rule.value_a.value_str() +
               "\tattr:" + rule.attr_b + "=" + rule.value_b.value_str() + "\t" +
               rule.rule_id + "\n";
    for (const auto& [code, name] : dataset.outcome_codes)
        out += "OUTCOME\t" + std::to_string(code) + "\t" + name + "\n";
    for (const auto& [attr, weight] : dataset.score_table)
        out += "SCORE\t" + attr + "\t" + std::to_string(weight) + "\n";
    return out;
}

}  // namespace mpu::data
