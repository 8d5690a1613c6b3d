#include "mpu/object_store.hpp"

#include <algorithm>

#include "mpu/errors.hpp"
#include "mpu/hash.hpp"

namespace mpu::store {

std::string AttributeValue::value_str() const {
    switch (value.index()) {
        case 0: return "absent";
        case 1: return std::to_string(std::get<std::int64_t>(value));
        case 2: return std::get<Fixed>(value).str();
        case 3: return std::get<std::string>(value);
        case 4: return std::get<bool>(value) ? "true" : "false";
    }
    return "";
}

std::uint32_t AttributeValue::summary_code() const {
    switch (value.index()) {
        case 0: return 0xFFFFFFFFu;
        case 1: return static_cast<std::uint32_t>(std::get<std::int64_t>(value));
        case 2: return static_cast<std::uint32_t>(std::get<Fixed>(value).mantissa);
        case 3: return fnv1a32(std::get<std::string>(value));
        case 4: return std::get<bool>(value) ? 1u : 0u;
    }
    return 0;
}

bool values_equal(const AttributeValue& a, const AttributeValue& b,
                  const Fixed& tol) {
    if (a.absent() || b.absent()) return false;
    // integer vs fixed compare numerically
    auto as_fixed = [](const AttributeValue& v) -> std::optional<Fixed> {
        if (std::holds_alternative<std::int64_t>(v.value))
            return Fixed{std::get<std::int64_t>(v.value), 0};
        if (std::holds_alternative<Fixed>(v.value)) return std::get<Fixed>(v.value);
        return std::nullopt;
    };
    auto fa = as_fixed(a), fb = as_fixed(b);
    if (fa && fb) return fixed_within(*fa, *fb, tol);
    return a.value == b.value;
}

const AttributeValue* MedicalObject::find_attr(std::string_view name) const {
    for (const auto& attr : attributes)
        if (attr.name == name) return &attr;
    return nullptr;
}

std::vector<AttributeValue> MedicalObject::replay_history() const {
    std::vector<AttributeValue> attrs = initial_attributes;
    for (const HistoryEntry& entry : history) {
        if (entry.attr_index < 0) continue;  // creation marker
        auto idx = static_cast<std::size_t>(entry.attr_index);
        if (idx == attrs.size())
            attrs.push_back(entry.new_value);
        else
            attrs[idx] = entry.new_value;
    }
    return attrs;
}

ObjectId ObjectStore::put_object(const MedicalObject& obj, std::uint64_t tick) {
    if (obj.attributes.size() > kMaxAttributes)
        throw MpuError(ErrCode::BadAttribute,
                       "object " + std::to_string(obj.id) + " has " +
                           std::to_string(obj.attributes.size()) + " attributes");
    for (std::size_t i = 0; i < obj.attributes.size(); ++i)
        for (std::size_t j = i + 1; j < obj.attributes.size(); ++j)
            if (obj.attributes[i].name == obj.attributes[j].name)
                throw MpuError(ErrCode::BadAttribute,
                               "duplicate attribute '" + obj.attributes[i].name + "'");

    auto it = objects_.find(obj.id);
    if (it == objects_.end()) {
        if (objects_.size() >= kStoreCapacity)
            throw MpuError(ErrCode::StoreFull, "4096 objects");
        MedicalObject stored = obj;
        stored.initial_attributes = obj.attributes;
        stored.history = {HistoryEntry{0, tick, -1, {}, {}}};
        stored.relations.clear();
        objects_.emplace(obj.id, std::move(stored));
        return obj.id;
    }

    // update: diff against current attributes, one entry per change
    MedicalObject& cur = it->second;
    if (!obj.class_tag.empty() && obj.class_tag != cur.class_tag)
        throw MpuError(ErrCode::BadAttribute,
                       "class_tag is immutable (object " + std::to_string(obj.id) + ")");
    for (const AttributeValue& attr : obj.attributes) {
        std::size_t idx = 0;
        for (; idx < cur.attributes.size(); ++idx)
            if (cur.attributes[idx].name == attr.name) break;
        if (idx == cur.attributes.size()) {
            if (cur.attributes.size() >= kMaxAttributes)
                throw MpuError(ErrCode::BadAttribute, "attribute limit reached");
            cur.history.push_back(HistoryEntry{cur.version() + 1, tick,
                                               static_cast<std::int32_t>(idx),
                                               AttributeValue{attr.name, {}}, attr});
            cur.attributes.push_back(attr);
        } else if (!(cur.attributes[idx] == attr)) {
            cur.history.push_back(HistoryEntry{cur.version() + 1, tick,
                                               static_cast<std::int32_t>(idx),
                                               cur.attributes[idx], attr});
            cur.attributes[idx] = attr;
        }
    }
    return obj.id;
}

void ObjectStore::set_attribute(ObjectId id, const AttributeValue& attr,
                                std::uint64_t tick) {
    auto it = objects_.find(id);
    if (it == objects_.end())
        throw MpuError(ErrCode::UnknownObject, std::to_string(id));
    MedicalObject& cur = it->second;
    std::size_t idx = 0;
    for (; idx < cur.attributes.size(); ++idx)
        if (cur.attributes[idx].name == attr.name) break;
    if (idx == cur.attributes.size()) {
        if (cur.attributes.size() >= kMaxAttributes)
            throw MpuError(ErrCode::BadAttribute, "attribute limit reached");
        cur.history.push_back(HistoryEntry{cur.version() + 1, tick,
                                           static_cast<std::int32_t>(idx),
                                           AttributeValue{attr.name, {}}, attr});
        cur.attributes.push_back(attr);
    } else if (!(cur.attributes[idx] == attr)) {
        cur.history.push_back(HistoryEntry{cur.version() + 1, tick,
                                           static_cast<std::int32_t>(idx),
                                           cur.attributes[idx], attr});
        cur.attributes[idx] = attr;
    }
}

void ObjectStore::add_relation(ObjectId from, ObjectId to, RelationKind kind,
                               const std::string& label, std::uint64_t) {
    auto it = objects_.find(from);
    if (it == objects_.end())
        throw MpuError(ErrCode::UnknownObject, std::to_string(from));
    if (!exists(to))
        throw MpuError(ErrCode::UnknownObject, std::to_string(to));
    Relation rel{to, kind, label};
    auto& rels = it->second.relations;
    if (std::find(rels.begin(), rels.end(), rel) == rels.end())
        rels.push_back(rel);
}

const MedicalObject& ObjectStore::get(ObjectId id) const {
    auto it = objects_.find(id);
    if (it == objects_.end())
        throw MpuError(ErrCode::UnknownObject, std::to_string(id));
    return it->second;
}

std::uint64_t ObjectStore::content_hash() const {
    std::uint64_t h = kFnv64Offset;
    for (const auto& [id, obj] : objects_) {
        h = fnv1a64_u32(id, h);
        h = fnv1a64(obj.class_tag, h);
        h = fnv1a64_u32(obj.version(), h);
        for (const auto& attr : obj.attributes) {
            h = fnv1a64(attr.name, h);
            h = fnv1a64(attr.value_str(), h);
        }
        for (const auto& rel : obj.relations) {
            h = fnv1a64_u32(rel.target, h);
            h = fnv1a64_u32(static_cast<std::uint32_t>(rel.kind), h);
            h = fnv1a64(rel.label, h);
        }
    }
    return h;
}

const char* marker_name(CellMarker m) {
    switch (m) {
        case CellMarker::NONE: return "NONE";
        case CellMarker::COMMON: return "COMMON";
        case CellMarker::CONFLICT: return "CONFLICT";
        case CellMarker::OVERLAP: return "OVERLAP";
        case CellMarker::ABSENT: return "ABSENT";
    }
    return "?";
}

AttributeMatrix build_matrix(const ObjectStore& store,
                             const std::vector<ObjectId>& ids) {
    AttributeMatrix matrix;
    matrix.rows = ids;
    for (ObjectId id : ids) {
        const MedicalObject& obj = store.get(id);
        for (const AttributeValue& attr : obj.attributes)
            if (std::find(matrix.cols.begin(), matrix.cols.end(), attr.name) ==
                matrix.cols.end())
                matrix.cols.push_back(attr.name);
    }
    matrix.cells.resize(ids.size());
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const MedicalObject& obj = store.get(ids[r]);
        matrix.cells[r].resize(matrix.cols.size());
        for (std::size_t c = 0; c < matrix.cols.size(); ++c) {
            const AttributeValue* attr = obj.find_attr(matrix.cols[c]);
            if (attr && !attr->absent()) {
                matrix.cells[r][c].value = *attr;
            } else {
                matrix.cells[r][c].value = AttributeValue{matrix.cols[c], {}};
                matrix.cells[r][c].marker = CellMarker::ABSENT;
            }
        }
    }
    return matrix;
}

AttributeMatrix classify_cells(AttributeMatrix matrix, const Fixed& tolerance,
                               const std::vector<ConflictRule>& rules) {
    const std::size_t n = matrix.n(), m = matrix.m();

    auto present = [&](std::size_t r, std::size_t c) {
        return matrix.cells[r][c].marker != CellMarker::ABSENT;
    };
    auto mark = [&](std::size_t r, std::size_t c, CellMarker mk) {
        CellMarker& cur = matrix.cells[r][c].marker;
        // precedence: CONFLICT > COMMON > OVERLAP, never touch ABSENT
        if (cur == CellMarker::ABSENT || cur == CellMarker::CONFLICT) return;
        if (cur == CellMarker::COMMON && mk == CellMarker::OVERLAP) return;
        cur = mk;
    };

    // conflict rules fire per row across two columns
    for (const ConflictRule& rule : rules) {
        auto col_a = std::find(matrix.cols.begin(), matrix.cols.end(), rule.attr_a);
        auto col_b = std::find(matrix.cols.begin(), matrix.cols.end(), rule.attr_b);
        if (col_a == matrix.cols.end() || col_b == matrix.cols.end()) continue;
        std::size_t ca = static_cast<std::size_t>(col_a - matrix.cols.begin());
        std::size_t cb = static_cast<std::size_t>(col_b - matrix.cols.begin());
        for (std::size_t r = 0; r < n; ++r) {
            if (!present(r, ca) || !present(r, cb)) continue;
            if (values_equal(matrix.cells[r][ca].value, rule.value_a, tolerance) &&
                values_equal(matrix.cells[r][cb].value, rule.value_b, tolerance)) {
                matrix.cells[r][ca].marker = CellMarker::CONFLICT;
                matrix.cells[r][cb].marker = CellMarker::CONFLICT;
            }
        }
    }

    for (std::size_t c = 0; c < m; ++c) {
        std::vector<std::size_t> rows_present;
        for (std::size_t r = 0; r < n; ++r)
            if (present(r, c)) rows_present.push_back(r);

        // value-equal groups of size >= 2 become COMMON; a fully present
        // single-valued column is COMMON even when n == 1
        std::vector<bool> grouped(rows_present.size(), false);
        for (std::size_t i = 0; i < rows_present.size(); ++i) {
            if (grouped[i]) continue;
            std::vector<std::size_t> group = {rows_present[i]};
            for (std::size_t j = i + 1; j < rows_present.size(); ++j) {
                if (grouped[j]) continue;
                if (values_equal(matrix.cells[rows_present[i]][c].value,
                                 matrix.cells[rows_present[j]][c].value, tolerance)) {
                    group.push_back(rows_present[j]);
                    grouped[j] = true;
                }
            }
            if (group.size() >= 2 ||
                (rows_present.size() == n && group.size() == rows_present.size()))
                for (std::size_t r : group) mark(r, c, CellMarker::COMMON);
        }

        // partial presence: remaining present cells are OVERLAP
        if (!rows_present.empty() && rows_present.size() < n)
            for (std::size_t r : rows_present) mark(r, c, CellMarker::OVERLAP);
    }
    return matrix;
}

std::vector<DerivedEdge> derive_relations(const ObjectStore& store,
                                          const AttributeMatrix& matrix,
                                          const Fixed& tolerance,
                                          const RelationThresholds& thresholds) {
    (void)store;
    std::vector<DerivedEdge> edges;
    const std::size_t n = matrix.n();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            int common = 0, overlap = 0;
            for (std::size_t c = 0; c < matrix.m(); ++c) {
                const MatrixCell& ci = matrix.cells[i][c];
                const MatrixCell& cj = matrix.cells[j][c];
                if (ci.marker == CellMarker::ABSENT || cj.marker == CellMarker::ABSENT)
                    continue;
                if (values_equal(ci.value, cj.value, tolerance))
                    ++common;
                else
                    ++overlap;
            }
            ObjectId a = matrix.rows[i], b = matrix.rows[j];
            if (a > b) std::swap(a, b);
            if (common >= thresholds.primary_min_common)
                edges.push_back({a, b, RelationKind::PRIMARY});
            else if (overlap >= thresholds.secondary_min_overlap)
                edges.push_back({a, b, RelationKind::SECONDARY});
        }
    }
    std::sort(edges.begin(), edges.end(), [](const DerivedEdge& x, const DerivedEdge& y) {
        return x.a != y.a ? x.a < y.a : x.b < y.b;
    });
    return edges;
}

// --- knowledge tree ----------------------------------------------------------

KnowledgeTree KnowledgeTree::with_root(const std::string& label) {
    KnowledgeTree tree;
    tree.nodes.push_back(TreeNode{0, TreeLevel::BRANCH, label, -1, true});
    tree.root = 0;
    return tree;
}

namespace {

bool level_ok(TreeLevel parent, TreeLevel child) {
    if (parent == TreeLevel::BRANCH)
        return true;  // branch parents branch, twig or leaf
    if (parent == TreeLevel::TWIG) return child == TreeLevel::LEAF;
    return false;
}

}  // namespace

int KnowledgeTree::add_node(TreeLevel level, const std::string& payload,
                            int parent) {
    TreeEdit edit;
    edit.kind = TreeEdit::GRAFT;
    edit.parent = parent;
    edit.fragment = {TreeNode{0, level, payload, -1, true}};
    *this = tree_edit(*this, edit);
    return static_cast<int>(nodes.size()) - 1;
}

const TreeNode& KnowledgeTree::node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes.size()) || !nodes[id].alive)
        throw MpuError(ErrCode::UnknownNode, std::to_string(id));
    return nodes[id];
}

bool KnowledgeTree::alive(int id) const {
    return id >= 0 && id < static_cast<int>(nodes.size()) && nodes[id].alive;
}

std::size_t KnowledgeTree::live_count() const {
    std::size_t count = 0;
    for (const TreeNode& n : nodes)
        if (n.alive) ++count;
    return count;
}

std::vector<int> KnowledgeTree::children_of(int id) const {
    std::vector<int> out;
    for (const TreeNode& n : nodes)
        if (n.alive && n.parent == id) out.push_back(n.id);
    return out;
}

std::vector<std::pair<int, int>> KnowledgeTree::edge_set() const {
    std::vector<std::pair<int, int>> out;
    for (const TreeNode& n : nodes)
        if (n.alive && n.parent >= 0) out.emplace_back(n.parent, n.id);
    std::sort(out.begin(), out.end());
    return out;
}

KnowledgeTree tree_edit(const KnowledgeTree& tree, const TreeEdit& edit) {
    KnowledgeTree out = tree;

    auto require_alive = [&](int id) -> TreeNode& {
        if (!out.alive(id))
            throw MpuError(ErrCode::UnknownNode, std::to_string(id));
        return out.nodes[id];
    };

    switch (edit.kind) {
        case TreeEdit::PRUNE: {
            require_alive(edit.node);
            if (edit.node == out.root)
                throw MpuError(ErrCode::LevelViolation, "cannot prune the root");
            // remove node and all descendants
            std::vector<int> stack = {edit.node};
            while (!stack.empty()) {
                int id = stack.back();
                stack.pop_back();
                out.nodes[id].alive = false;
                for (const TreeNode& n : out.nodes)
                    if (n.alive && n.parent == id) stack.push_back(n.id);
            }
            break;
        }
        case TreeEdit::GRAFT: {
            const TreeNode& parent = require_alive(edit.parent);
            if (edit.fragment.empty())
                throw MpuError(ErrCode::UnknownNode, "empty graft fragment");
            int base = static_cast<int>(out.nodes.size());
            for (std::size_t i = 0; i < edit.fragment.size(); ++i) {
                const TreeNode& frag = edit.fragment[i];
                int parent_id;
                TreeLevel parent_level;
                if (frag.parent < 0) {
                    parent_id = edit.parent;
                    parent_level = parent.level;
                } else {
                    if (frag.parent >= static_cast<int>(i))
                        throw MpuError(ErrCode::WouldCreateCycle,
                                       "fragment parents must precede children");
                    parent_id = base + frag.parent;
                    parent_level = edit.fragment[frag.parent].level;
                }
                if (!level_ok(parent_level, frag.level))
                    throw MpuError(ErrCode::LevelViolation,
                                   "graft inverts tree levels");
                out.nodes.push_back(TreeNode{base + static_cast<int>(i),
                                             frag.level, frag.payload,
                                             parent_id, true});
            }
            break;
        }
        case TreeEdit::RESHAPE: {
            TreeNode& moved = require_alive(edit.node);
            const TreeNode& dest = require_alive(edit.parent);
            if (edit.node == out.root)
                throw MpuError(ErrCode::LevelViolation, "cannot move the root");
            // destination under the moved subtree (or itself) would cycle
            for (int cursor = edit.parent; cursor >= 0;
                 cursor = out.nodes[cursor].parent)
                if (cursor == edit.node)
                    throw MpuError(ErrCode::WouldCreateCycle,
                                   std::to_string(edit.node));
            if (!level_ok(dest.level, moved.level))
                throw MpuError(ErrCode::LevelViolation, "reshape inverts tree levels");
            moved.parent = edit.parent;
            break;
        }
    }
    return out;
}

bool tree_valid(const KnowledgeTree& tree) {
    if (!tree.alive(tree.root) || tree.nodes[tree.root].parent != -1)
        return false;
    int live_roots = 0;
    for (const TreeNode& n : tree.nodes) {
        if (!n.alive) continue;
        if (n.id != static_cast<int>(&n - tree.nodes.data())) return false;
        if (n.parent == -1) {
            ++live_roots;
            continue;
        }
        if (!tree.alive(n.parent)) return false;
        if (!level_ok(tree.nodes[n.parent].level, n.level)) return false;
        // walk to root, bounded by node count, to prove acyclicity
        int cursor = n.parent;
        std::size_t hops = 0;
        while (cursor != -1) {
            if (++hops > tree.nodes.size()) return false;
            cursor = tree.nodes[cursor].parent;
        }
    }
    return live_roots == 1;
}

}  // namespace mpu::store
