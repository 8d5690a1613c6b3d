#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mpu/fixed.hpp"

namespace mpu::store {

using ObjectId = std::uint16_t;  // 12-bit object-memory address, 0..4095

inline constexpr std::size_t kMaxAttributes = 64;
inline constexpr std::size_t kStoreCapacity = 4096;

// Value of one attribute. `absent` (monostate) is distinct from zero.
struct AttributeValue {
    std::string name;
    std::variant<std::monostate, std::int64_t, Fixed, std::string, bool> value;

    bool absent() const { return value.index() == 0; }
    std::string value_str() const;  // dataset-file rendering
    // 32-bit summary used as a VM result code
    std::uint32_t summary_code() const;

    friend bool operator==(const AttributeValue&, const AttributeValue&) = default;
};

// Numeric-aware equality: integers and fixed-point compare within tol,
// everything else compares exactly. Absent never equals anything.
bool values_equal(const AttributeValue& a, const AttributeValue& b,
                  const Fixed& tol);

enum class RelationKind : std::uint8_t { PRIMARY, SECONDARY };

struct Relation {
    ObjectId target;
    RelationKind kind;
    std::string label;

    friend bool operator==(const Relation&, const Relation&) = default;
};

struct HistoryEntry {
    std::uint32_t version;   // strictly increasing, 0 = creation
    std::uint64_t tick;
    std::int32_t attr_index;  // -1 for the creation entry
    AttributeValue old_value;
    AttributeValue new_value;
};

struct MedicalObject {
    ObjectId id = 0;
    std::string class_tag;
    std::vector<AttributeValue> attributes;
    std::vector<HistoryEntry> history;  // entry 0 is the creation marker
    std::vector<AttributeValue> initial_attributes;  // v0 snapshot
    std::vector<Relation> relations;

    std::uint32_t version() const {
        return history.empty() ? 0 : history.back().version;
    }
    const AttributeValue* find_attr(std::string_view name) const;

    // Folds the history over the v0 snapshot; the result must equal
    // `attributes` at all times.
    std::vector<AttributeValue> replay_history() const;
};

// Flat addressed store of object operands. Single writer; reads may be
// shared once a write has completed.
class ObjectStore {
public:
    // Create or update. Updating appends one history entry per changed
    // attribute. Throws StoreFull, BadAttribute, UnknownObject (relation
    // target checks happen in add_relation).
    ObjectId put_object(const MedicalObject& obj, std::uint64_t tick = 0);

    // Single-attribute upsert, the VM's SETATTR path.
    void set_attribute(ObjectId id, const AttributeValue& attr,
                       std::uint64_t tick);

    void add_relation(ObjectId from, ObjectId to, RelationKind kind,
                      const std::string& label, std::uint64_t tick);

    bool exists(ObjectId id) const { return objects_.count(id) != 0; }
    const MedicalObject& get(ObjectId id) const;  // throws UnknownObject
    std::size_t size() const { return objects_.size(); }
    const std::map<ObjectId, MedicalObject>& all() const { return objects_; }

    // FNV-1a over a canonical dump; used by consensus-gate checks.
    std::uint64_t content_hash() const;

private:
    std::map<ObjectId, MedicalObject> objects_;
};

// --- n x m attribute matrix -------------------------------------------------

enum class CellMarker : std::uint8_t { NONE, COMMON, CONFLICT, OVERLAP, ABSENT };

const char* marker_name(CellMarker m);

struct MatrixCell {
    AttributeValue value;
    CellMarker marker = CellMarker::NONE;
};

struct AttributeMatrix {
    std::vector<ObjectId> rows;        // n object ids, input order
    std::vector<std::string> cols;     // m attribute names, first-seen order
    std::vector<std::vector<MatrixCell>> cells;  // [row][col]

    std::size_t n() const { return rows.size(); }
    std::size_t m() const { return cols.size(); }
};

// A contradiction between two attribute predicates on the same object
// (row). Both matching cells get CONFLICT.
struct ConflictRule {
    std::string attr_a;  // predicate "name=value" parsed into name + value
    AttributeValue value_a;
    std::string attr_b;
    AttributeValue value_b;
    std::string rule_id;
};

// rows = ids in the given order, cols = first-seen union of attribute
// names. Absent cells carry marker ABSENT. Throws UnknownObject.
AttributeMatrix build_matrix(const ObjectStore& store,
                             const std::vector<ObjectId>& ids);

// Marker pass. Precedence per cell: CONFLICT > COMMON > OVERLAP.
//  CONFLICT: a conflict rule matches two cells of one row.
//  COMMON:   cell belongs to a value-equal group of size >= 2 in its
//            column (or the column is fully present with one value).
//  OVERLAP:  remaining present cells of columns that are present in some
//            but not all rows.
AttributeMatrix classify_cells(AttributeMatrix matrix, const Fixed& tolerance,
                               const std::vector<ConflictRule>& rules = {});

struct RelationThresholds {
    int primary_min_common = 2;
    int secondary_min_overlap = 1;
};

struct DerivedEdge {
    ObjectId a, b;  // a < b
    RelationKind kind;

    friend bool operator==(const DerivedEdge&, const DerivedEdge&) = default;
};

// Pairwise over rows of a classified matrix: c = columns where both
// present and equal (within the tolerance baked into the markers is not
// used here -- equality is re-derived with the same tolerance), o =
// columns where both present but unequal. c >= primary_min_common gives a
// PRIMARY edge, otherwise o >= secondary_min_overlap gives SECONDARY.
// Edges come out sorted by (a, b), lower id first.
std::vector<DerivedEdge> derive_relations(const ObjectStore& store,
                                          const AttributeMatrix& matrix,
                                          const Fixed& tolerance,
                                          const RelationThresholds& thresholds);

// --- knowledge tree ----------------------------------------------------------

enum class TreeLevel : std::uint8_t { LEAF = 0, TWIG = 1, BRANCH = 2 };

struct TreeNode {
    int id = 0;
    TreeLevel level = TreeLevel::BRANCH;
    std::string payload;  // leaf: data value, twig: object id text, branch: label
    int parent = -1;      // -1 for root
    bool alive = true;
};

// Single-rooted, level-ordered: BRANCH may parent BRANCH/TWIG/LEAF, TWIG
// may parent LEAF only. Value type; edits are persistent.
struct KnowledgeTree {
    std::vector<TreeNode> nodes;  // id == index; pruned nodes stay as tombstones
    int root = 0;

    static KnowledgeTree with_root(const std::string& label);

    int add_node(TreeLevel level, const std::string& payload, int parent);
    const TreeNode& node(int id) const;
    bool alive(int id) const;
    std::size_t live_count() const;
    std::vector<int> children_of(int id) const;
    std::vector<std::pair<int, int>> edge_set() const;  // (parent, child), sorted
};

struct TreeEdit {
    enum Kind { PRUNE, GRAFT, RESHAPE } kind;
    int node = -1;        // PRUNE/RESHAPE target
    int parent = -1;      // GRAFT/RESHAPE destination parent
    // GRAFT payload: a fresh subtree, nodes in preorder with parent links
    // into the fragment (-1 = attach point).
    std::vector<TreeNode> fragment;
};

// Returns the edited copy; the input tree is unchanged. Throws
// LevelViolation, UnknownNode, WouldCreateCycle.
KnowledgeTree tree_edit(const KnowledgeTree& tree, const TreeEdit& edit);

// Standalone validity check used by fuzz tests: single live root, parents
// alive, acyclic, level order respected.
bool tree_valid(const KnowledgeTree& tree);

}  // namespace mpu::store
