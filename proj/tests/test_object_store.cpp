#include <doctest.h>

#include <set>

#include "mpu/errors.hpp"
#include "mpu/object_store.hpp"
#include "testutil.hpp"

using namespace mpu;
using namespace mpu::store;

namespace {

AttributeValue ival(const std::string& name, std::int64_t v) {
    return {name, v};
}
AttributeValue sval(const std::string& name, const std::string& v) {
    return {name, v};
}
AttributeValue bval(const std::string& name, bool v) {
    return {name, v};
}

MedicalObject make_obj(ObjectId id, const std::string& tag,
                       std::vector<AttributeValue> attrs) {
    MedicalObject obj;
    obj.id = id;
    obj.class_tag = tag;
    obj.attributes = std::move(attrs);
    return obj;
}

const Fixed kTol{0, 0};

}  // namespace

TEST_SUITE_BEGIN("store");

TEST_CASE("put_object creates with a v0 history entry") {
    ObjectStore s;
    ObjectId id = s.put_object(make_obj(7, "patient", {ival("age", 64)}));
    CHECK(id == 7);
    const MedicalObject& obj = s.get(7);
    CHECK(obj.version() == 0);
    CHECK(obj.history.size() == 1);
    CHECK(obj.history[0].version == 0);
}

TEST_CASE("updating one attribute appends one entry and bumps the version") {
    ObjectStore s;
    s.put_object(make_obj(7, "patient", {ival("age", 64)}));
    s.put_object(make_obj(7, "patient", {ival("age", 65)}), 5);
    const MedicalObject& obj = s.get(7);
    CHECK(obj.version() == 1);
    CHECK(obj.history.size() == 2);
    CHECK(obj.history[1].attr_index == 0);
    CHECK(std::get<std::int64_t>(obj.history[1].old_value.value) == 64);
    CHECK(std::get<std::int64_t>(obj.attributes[0].value) == 65);
}

TEST_CASE("too many attributes is rejected") {
    ObjectStore s;
    std::vector<AttributeValue> attrs;
    for (int i = 0; i < 65; ++i) attrs.push_back(ival("a" + std::to_string(i), i));
    CHECK_THROWS_AS(s.put_object(make_obj(1, "x", attrs)), MpuError);
}

TEST_CASE("absent is distinct from zero") {
    AttributeValue absent{"x", {}};
    AttributeValue zero{"x", std::int64_t{0}};
    CHECK_FALSE(values_equal(absent, zero, kTol));
    CHECK_FALSE(values_equal(absent, absent, kTol));
    CHECK(values_equal(zero, zero, kTol));
}

TEST_CASE("history replay reproduces current attributes after fuzzed updates") {
    testutil::SplitMix64 rng(31337);
    ObjectStore s;
    s.put_object(make_obj(1, "patient", {ival("a", 1), ival("b", 2)}));
    for (int step = 0; step < 200; ++step) {
        AttributeValue attr =
            ival(std::string(1, static_cast<char>('a' + rng.below(6))),
                 static_cast<std::int64_t>(rng.below(50)));
        s.set_attribute(1, attr, step);
        const MedicalObject& obj = s.get(1);
        CHECK(obj.replay_history() == obj.attributes);
    }
    CHECK(s.get(1).version() > 0);
}

TEST_CASE("build_matrix shapes") {
    ObjectStore s;
    s.put_object(make_obj(1, "p", {ival("a", 1), ival("b", 2), ival("c", 3)}));
    AttributeMatrix m1 = build_matrix(s, {1});
    CHECK(m1.n() == 1);
    CHECK(m1.m() == 3);
    for (const auto& cell : m1.cells[0]) CHECK(cell.marker != CellMarker::ABSENT);

    s.put_object(make_obj(2, "p", {ival("a", 1), ival("b", 2)}));
    s.put_object(make_obj(3, "p", {ival("c", 9)}));
    AttributeMatrix m2 = build_matrix(s, {2, 3});
    CHECK(m2.n() == 2);
    CHECK(m2.m() == 3);
    int absent = 0;
    for (const auto& row : m2.cells)
        for (const auto& cell : row)
            if (cell.marker == CellMarker::ABSENT) ++absent;
    CHECK(absent == 3);

    CHECK_THROWS_AS(build_matrix(s, {99}), MpuError);
}

TEST_CASE("classify_cells marker rules") {
    ObjectStore s;
    SUBCASE("all rows equal -> COMMON column") {
        s.put_object(make_obj(1, "p", {ival("x", 1)}));
        s.put_object(make_obj(2, "p", {ival("x", 1)}));
        AttributeMatrix m = classify_cells(build_matrix(s, {1, 2}), kTol);
        CHECK(m.cells[0][0].marker == CellMarker::COMMON);
        CHECK(m.cells[1][0].marker == CellMarker::COMMON);
    }
    SUBCASE("present in a strict subset -> OVERLAP") {
        s.put_object(make_obj(1, "p", {ival("x", 1)}));
        s.put_object(make_obj(2, "p", {ival("y", 5)}));
        AttributeMatrix m = classify_cells(build_matrix(s, {1, 2}), kTol);
        CHECK(m.cells[0][0].marker == CellMarker::OVERLAP);
        CHECK(m.cells[1][0].marker == CellMarker::ABSENT);
    }
    SUBCASE("equal strict subset stays COMMON, odd value untouched") {
        s.put_object(make_obj(1, "p", {ival("glucose", 90)}));
        s.put_object(make_obj(2, "p", {ival("glucose", 90)}));
        s.put_object(make_obj(3, "p", {ival("glucose", 140)}));
        AttributeMatrix m = classify_cells(build_matrix(s, {1, 2, 3}), kTol);
        CHECK(m.cells[0][0].marker == CellMarker::COMMON);
        CHECK(m.cells[1][0].marker == CellMarker::COMMON);
        CHECK(m.cells[2][0].marker == CellMarker::NONE);
    }
    SUBCASE("declared-contradictory pair -> CONFLICT on both cells") {
        s.put_object(make_obj(1, "p", {bval("anticoagulant", true),
                                       sval("surgery_class", "major")}));
        s.put_object(make_obj(2, "p", {bval("anticoagulant", true),
                                       sval("surgery_class", "minor")}));
        ConflictRule rule{"anticoagulant", bval("anticoagulant", true),
                          "surgery_class", sval("surgery_class", "major"), "C1"};
        AttributeMatrix m =
            classify_cells(build_matrix(s, {1, 2}), kTol, {rule});
        CHECK(m.cells[0][0].marker == CellMarker::CONFLICT);
        CHECK(m.cells[0][1].marker == CellMarker::CONFLICT);
        CHECK(m.cells[1][0].marker != CellMarker::CONFLICT);
    }
}

TEST_CASE("classify_cells equals a brute-force oracle on fuzzed stores") {
    // oracle: re-derive each cell marker from first principles
    testutil::SplitMix64 rng(9120);
    for (int iter = 0; iter < 60; ++iter) {
        ObjectStore s;
        std::size_t n = 1 + rng.below(5);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<AttributeValue> attrs;
            for (char c = 'a'; c < 'a' + 4; ++c)
                if (rng.chance(70))
                    attrs.push_back(ival(std::string(1, c), rng.below(3)));
            s.put_object(make_obj(static_cast<ObjectId>(i + 1), "p", attrs));
        }
        std::vector<ObjectId> ids;
        for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<ObjectId>(i + 1));
        AttributeMatrix base = build_matrix(s, ids);
        AttributeMatrix got = classify_cells(base, kTol);

        for (std::size_t c = 0; c < base.m(); ++c) {
            std::vector<std::size_t> present;
            for (std::size_t r = 0; r < base.n(); ++r)
                if (base.cells[r][c].marker != CellMarker::ABSENT) present.push_back(r);
            for (std::size_t r = 0; r < base.n(); ++r) {
                CellMarker expect;
                if (base.cells[r][c].marker == CellMarker::ABSENT) {
                    expect = CellMarker::ABSENT;
                } else {
                    int equal_count = 0;
                    for (std::size_t o : present)
                        if (o != r && values_equal(base.cells[r][c].value,
                                                   base.cells[o][c].value, kTol))
                            ++equal_count;
                    bool common = equal_count > 0 ||
                                  (present.size() == base.n() && present.size() == 1);
                    if (present.size() == base.n() && present.size() > 1) {
                        // fully present: common only via equality
                        expect = equal_count > 0 ? CellMarker::COMMON : CellMarker::NONE;
                    } else if (common) {
                        expect = CellMarker::COMMON;
                    } else {
                        expect = CellMarker::OVERLAP;
                    }
                }
                CHECK(got.cells[r][c].marker == expect);
            }
        }
    }
}

TEST_CASE("derive_relations thresholds") {
    RelationThresholds thresholds{2, 1};
    SUBCASE("identical objects, primary_min_common=1 -> one PRIMARY edge") {
        ObjectStore s;
        s.put_object(make_obj(1, "p", {ival("a", 1)}));
        s.put_object(make_obj(2, "p", {ival("a", 1)}));
        AttributeMatrix m = classify_cells(build_matrix(s, {1, 2}), kTol);
        auto edges = derive_relations(s, m, kTol, {1, 1});
        REQUIRE(edges.size() == 1);
        CHECK(edges[0] == DerivedEdge{1, 2, RelationKind::PRIMARY});
    }
    SUBCASE("attribute-disjoint objects -> no edges") {
        ObjectStore s;
        s.put_object(make_obj(1, "p", {ival("a", 1)}));
        s.put_object(make_obj(2, "p", {ival("b", 1)}));
        AttributeMatrix m = classify_cells(build_matrix(s, {1, 2}), kTol);
        CHECK(derive_relations(s, m, kTol, thresholds).empty());
    }
    SUBCASE("pairwise counts (2,1,0) give one PRIMARY and one SECONDARY") {
        ObjectStore s;
        // 1-2 share two equal attributes; 1-3 share one attribute with a
        // different value; 2-3 share nothing
        s.put_object(make_obj(1, "p", {ival("a", 1), ival("b", 2), ival("c", 5)}));
        s.put_object(make_obj(2, "p", {ival("a", 1), ival("b", 2)}));
        s.put_object(make_obj(3, "p", {ival("c", 7), ival("d", 1)}));
        AttributeMatrix m = classify_cells(build_matrix(s, {1, 2, 3}), kTol);
        auto edges = derive_relations(s, m, kTol, thresholds);
        REQUIRE(edges.size() == 2);
        CHECK(edges[0] == DerivedEdge{1, 2, RelationKind::PRIMARY});
        CHECK(edges[1] == DerivedEdge{1, 3, RelationKind::SECONDARY});
    }
    SUBCASE("deterministic output, brute-force pair enumeration") {
        testutil::SplitMix64 rng(4242);
        for (int iter = 0; iter < 40; ++iter) {
            ObjectStore s;
            std::size_t n = 2 + rng.below(4);
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<AttributeValue> attrs;
                for (char c = 'a'; c < 'a' + 5; ++c)
                    if (rng.chance(60))
                        attrs.push_back(ival(std::string(1, c), rng.below(2)));
                s.put_object(make_obj(static_cast<ObjectId>(i + 1), "p", attrs));
            }
            std::vector<ObjectId> ids;
            for (std::size_t i = 0; i < n; ++i)
                ids.push_back(static_cast<ObjectId>(i + 1));
            AttributeMatrix m = classify_cells(build_matrix(s, ids), kTol);
            auto edges = derive_relations(s, m, kTol, thresholds);
            CHECK(edges == derive_relations(s, m, kTol, thresholds));

            std::vector<DerivedEdge> expect;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) {
                    int common = 0, overlap = 0;
                    const MedicalObject& a = s.get(ids[i]);
                    const MedicalObject& b = s.get(ids[j]);
                    for (const auto& attr : a.attributes) {
                        const AttributeValue* battr = b.find_attr(attr.name);
                        if (!battr) continue;
                        if (values_equal(attr, *battr, kTol)) ++common;
                        else ++overlap;
                    }
                    if (common >= thresholds.primary_min_common)
                        expect.push_back({ids[i], ids[j], RelationKind::PRIMARY});
                    else if (overlap >= thresholds.secondary_min_overlap)
                        expect.push_back({ids[i], ids[j], RelationKind::SECONDARY});
                }
            }
            CHECK(edges == expect);
        }
    }
}

TEST_CASE("knowledge tree edits") {
    KnowledgeTree tree = KnowledgeTree::with_root("root");
    int twig = tree.add_node(TreeLevel::TWIG, "10", 0);
    int leaf = tree.add_node(TreeLevel::LEAF, "90", twig);

    SUBCASE("PRUNE removes exactly the leaf") {
        TreeEdit edit{TreeEdit::PRUNE, leaf, -1, {}};
        KnowledgeTree pruned = tree_edit(tree, edit);
        CHECK(pruned.live_count() == tree.live_count() - 1);
        CHECK(tree.alive(leaf));  // persistence: the old value is unchanged
        CHECK_FALSE(pruned.alive(leaf));
        CHECK(tree_valid(pruned));
    }
    SUBCASE("PRUNE removes descendants too") {
        TreeEdit edit{TreeEdit::PRUNE, twig, -1, {}};
        KnowledgeTree pruned = tree_edit(tree, edit);
        CHECK(pruned.live_count() == 1);
    }
    SUBCASE("grafting a twig under a leaf violates levels") {
        TreeEdit edit;
        edit.kind = TreeEdit::GRAFT;
        edit.parent = leaf;
        edit.fragment = {TreeNode{0, TreeLevel::TWIG, "11", -1, true}};
        CHECK_THROWS_AS(tree_edit(tree, edit), MpuError);
    }
    SUBCASE("RESHAPE moves a twig between branches, one edge changes") {
        // 7 live nodes: root, b1, b2, twig under b1, leaf, twig2, leaf2
        KnowledgeTree t = KnowledgeTree::with_root("root");
        int b1 = t.add_node(TreeLevel::BRANCH, "b1", 0);
        int b2 = t.add_node(TreeLevel::BRANCH, "b2", 0);
        int t1 = t.add_node(TreeLevel::TWIG, "20", b1);
        t.add_node(TreeLevel::LEAF, "v", t1);
        int t2 = t.add_node(TreeLevel::TWIG, "21", b2);
        t.add_node(TreeLevel::LEAF, "w", t2);
        REQUIRE(t.live_count() == 7);

        TreeEdit edit;
        edit.kind = TreeEdit::RESHAPE;
        edit.node = t1;
        edit.parent = b2;
        KnowledgeTree moved = tree_edit(t, edit);
        CHECK(moved.live_count() == 7);

        auto before = t.edge_set();
        auto after = moved.edge_set();
        std::set<std::pair<int, int>> removed, added;
        for (auto e : before)
            if (std::find(after.begin(), after.end(), e) == after.end())
                removed.insert(e);
        for (auto e : after)
            if (std::find(before.begin(), before.end(), e) == before.end())
                added.insert(e);
        CHECK(removed == std::set<std::pair<int, int>>{{b1, t1}});
        CHECK(added == std::set<std::pair<int, int>>{{b2, t1}});
        CHECK(tree_valid(moved));
    }
    SUBCASE("RESHAPE under a descendant cycles") {
        KnowledgeTree t = KnowledgeTree::with_root("root");
        int b1 = t.add_node(TreeLevel::BRANCH, "b1", 0);
        int b2 = t.add_node(TreeLevel::BRANCH, "b2", b1);
        TreeEdit edit;
        edit.kind = TreeEdit::RESHAPE;
        edit.node = b1;
        edit.parent = b2;
        CHECK_THROWS_AS(tree_edit(t, edit), MpuError);
    }
    SUBCASE("unknown nodes are rejected") {
        TreeEdit edit{TreeEdit::PRUNE, 99, -1, {}};
        CHECK_THROWS_AS(tree_edit(tree, edit), MpuError);
    }
}

TEST_CASE("fuzzed edit sequences keep the tree valid") {
    testutil::SplitMix64 rng(88);
    for (int iter = 0; iter < 30; ++iter) {
        KnowledgeTree tree = KnowledgeTree::with_root("root");
        for (int step = 0; step < 40; ++step) {
            int pick = static_cast<int>(rng.below(
                static_cast<std::uint32_t>(tree.nodes.size())));
            TreeEdit edit;
            switch (rng.below(3)) {
                case 0: {
                    edit.kind = TreeEdit::GRAFT;
                    edit.parent = pick;
                    TreeLevel level = static_cast<TreeLevel>(rng.below(3));
                    edit.fragment = {TreeNode{0, level, "x", -1, true}};
                    break;
                }
                case 1:
                    edit.kind = TreeEdit::PRUNE;
                    edit.node = pick;
                    break;
                default:
                    edit.kind = TreeEdit::RESHAPE;
                    edit.node = pick;
                    edit.parent = static_cast<int>(rng.below(
                        static_cast<std::uint32_t>(tree.nodes.size())));
                    break;
            }
            try {
                KnowledgeTree next = tree_edit(tree, edit);
                CHECK(tree_valid(next));
                tree = std::move(next);
            } catch (const MpuError&) {
                CHECK(tree_valid(tree));  // failed edits leave no trace
            }
        }
    }
}

TEST_SUITE_END();
